import { defineConfig } from "vite";

const service = process.env.SEMFILTER_SERVICE ?? "http://127.0.0.1:8745";

export default defineConfig({
  build: { outDir: "dist", emptyOutDir: true },
  server: {
    proxy: {
      "/scenes": service,
      "/scene": service,
      "/session": service,
      "/ws": { target: service, ws: true },
    },
  },
  test: {
    environment: "jsdom",
    exclude: ["node_modules/**", "dist/**"],
  },
});
