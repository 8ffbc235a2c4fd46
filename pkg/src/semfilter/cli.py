"""Batch entry points: fit geometry, synthesize contexts, run streams, serve.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every report embeds the fully resolved configuration, so a run is
reproducible from its own output.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .envelopes import RELATIONSHIPS, Box, build_envelope
from .kinematics import fr3_chain, load_chain
from .scene import RunReport, load_scene, load_stream, write_tick_log
from .semantics import FixtureClient, HttpClient, synthesize_context
from .simulation import GeometryCache, SimConfig, SimSession
from .superquadrics import FitDegenerate, PointCloud, sq_eval
from .scene import read_ply


def _out_path(ctx_out: str) -> Path:
    path = Path(ctx_out)
    if not path.parent.exists():
        raise click.UsageError(f"parent directory of --out does not exist: {path.parent}")
    return path


@click.group()
@click.version_option(__version__)
@click.option("--seed", type=int, default=0, show_default=True, envvar="SEMFILTER_SEED")
@click.option("--log-level", default="warning", show_default=True, envvar="SEMFILTER_LOG_LEVEL")
@click.pass_context
def main(ctx, seed, log_level):
    """Semantic safety filter tools."""
    logging.basicConfig(level=getattr(logging, log_level.upper(), logging.WARNING))
    ctx.ensure_object(dict)
    ctx.obj["seed"] = seed


@main.command("fit")
@click.option("--ply", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--relationship", type=click.Choice(RELATIONSHIPS), default=None)
@click.option("--workspace", default="-0.85,-0.85,0,0.85,0.85,1.2", show_default=True,
              help="x0,y0,z0,x1,y1,z1 axis-aligned bounds (m)")
@click.option("--margin", type=float, default=None, help="dilation margin override (m)")
@click.option("--out", required=True)
@click.pass_context
def cmd_fit(ctx, ply, relationship, workspace, margin, out):
    """Fit superquadric solids (or a relationship envelope) to a PLY cloud."""
    out_path = _out_path(out)
    try:
        bounds = [float(x) for x in workspace.split(",")]
        if len(bounds) != 6:
            raise ValueError
    except ValueError:
        raise click.UsageError("--workspace must be six comma-separated numbers")
    points = read_ply(ply)
    cloud = PointCloud(points, label=Path(ply).stem, object_id=Path(ply).stem)
    rng = np.random.default_rng(ctx.obj["seed"])
    try:
        if relationship is None:
            from .envelopes import fit_object_solids

            solids = fit_object_solids(cloud, rng=rng)
            generating = points
        else:
            ws = Box(lo=bounds[:3], hi=bounds[3:])
            solids = build_envelope(cloud, relationship, ws, rng=rng, margin=margin)
            generating = points
    except FitDegenerate as exc:
        click.echo(f"fit failed: {exc}", err=True)
        sys.exit(1)
    g = np.min([sq_eval(s, generating) for s in solids], axis=0)
    contained = float((g <= 1.1).mean())
    payload = {
        "solids": [s.to_dict() for s in solids],
        "containment_at_1.1": contained,
        "config": {"ply": str(ply), "relationship": relationship, "workspace": bounds,
                   "margin": margin, "seed": ctx.obj["seed"]},
    }
    out_path.write_text(json.dumps(payload, indent=2))
    click.echo(f"fitted {len(solids)} solid(s); raw-cloud containment at g<=1.1: {contained:.1%}")


@main.command("synth")
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--object", "held_object", required=True)
@click.option("--client", "client_kind", type=click.Choice(["fixture", "live"]), default="fixture",
              show_default=True)
@click.option("--fixture-rules", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--votes", type=int, default=5, show_default=True)
@click.option("--out", required=True)
@click.pass_context
def cmd_synth(ctx, scene_path, held_object, client_kind, fixture_rules, votes, out):
    """Synthesize a semantic context for a held object in a scene."""
    if votes < 1 or votes % 2 == 0:
        raise click.UsageError("--votes must be an odd positive integer")
    out_path = _out_path(out)
    scene = load_scene(scene_path)
    if client_kind == "fixture":
        client = FixtureClient.from_file(fixture_rules) if fixture_rules else FixtureClient.default()
    else:
        client = HttpClient.from_env()
    context = synthesize_context(scene.labels, held_object, scene.description, client, votes=votes)
    payload = {
        "context": context.to_dict(),
        "config": {"scene": str(scene_path), "object": held_object, "client": client_kind,
                   "votes": votes, "seed": ctx.obj["seed"]},
    }
    out_path.write_text(json.dumps(payload, indent=2))
    click.echo(
        f"spatial={list(map(list, context.spatial))} caution={sorted(context.caution_objects())} pose={context.pose}"
    )


@main.command("run")
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--object", "held_object", default="none", show_default=True)
@click.option("--stream", "stream_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--rate", type=float, default=45.0, show_default=True)
@click.option("--filter", "filter_mode", type=click.Choice(["on", "off"]), default="on", show_default=True)
@click.option("--fixture-rules", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--chain", "chain_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--violation-tol", type=float, default=1e-3, show_default=True)
@click.option("--out", required=True, help="output directory for report.json and ticks.jsonl")
@click.pass_context
def cmd_run(ctx, scene_path, held_object, stream_path, rate, filter_mode, fixture_rules, chain_path,
            violation_tol, out):
    """Replay a command stream through the filter and report violations."""
    if rate <= 0:
        raise click.UsageError("--rate must be positive")
    out_dir = Path(out)
    if not out_dir.parent.exists():
        raise click.UsageError(f"parent directory of --out does not exist: {out_dir.parent}")
    out_dir.mkdir(exist_ok=True)
    scene = load_scene(scene_path)
    stream = load_stream(stream_path)
    chain, state = load_chain(chain_path) if chain_path else fr3_chain()
    client = FixtureClient.from_file(fixture_rules) if fixture_rules else FixtureClient.default()
    config = SimConfig(dt=1.0 / rate, seed=ctx.obj["seed"])
    session = SimSession(
        chain, state, scene, client=client, held_object=held_object, config=config,
        filter_enabled=(filter_mode == "on"), cache=GeometryCache(),
    )
    metrics, ticks = session.run_stream(stream, violation_tol=violation_tol)
    report = RunReport(config={
        "scene": str(scene_path), "object": held_object, "stream": str(stream_path),
        "rate": rate, "filter": filter_mode, "violation_tol": violation_tol,
        "seed": ctx.obj["seed"], "sim": config.to_dict(),
    })
    report.add(Path(stream_path).stem, metrics)
    report.save(out_dir / "report.json")
    write_tick_log(out_dir / "ticks.jsonl", ticks)
    click.echo(
        f"{metrics['ticks']} ticks, violations {metrics['fraction']:.2%} "
        f"(per class: {', '.join(f'{k}={v:.2%}' for k, v in metrics['per_class'].items())})"
    )


@main.command("serve")
@click.option("--port", type=int, default=8745, show_default=True, envvar="SEMFILTER_PORT")
@click.option("--scene-dir", required=True, envvar="SEMFILTER_SCENE_DIR")
@click.option("--fixture-rules", type=click.Path(exists=True, dir_okay=False), default=None,
              envvar="SEMFILTER_FIXTURE_RULES")
@click.option("--rate", type=float, default=45.0, show_default=True)
@click.pass_context
def cmd_serve(ctx, port, scene_dir, fixture_rules, rate):
    """Run the live teleoperation service."""
    if rate <= 0:
        raise click.UsageError("--rate must be positive")
    if not Path(scene_dir).is_dir():
        raise click.UsageError(f"--scene-dir {scene_dir} is not a directory")
    from .service import run_service

    config = SimConfig(dt=1.0 / rate, seed=ctx.obj["seed"])
    run_service(scene_dir, port=port, fixture_rules=fixture_rules, config=config)


@main.command("demo-scene")
@click.option("--scene-id", type=click.Choice(["books", "laptop_books", "balloons_towel"]), required=True)
@click.option("--out", required=True, help="directory to write the manifest and PLY files into")
@click.pass_context
def cmd_demo_scene(ctx, scene_id, out):
    """Generate one of the scripted synthetic desk scenes."""
    out_dir = Path(out)
    if not out_dir.parent.exists():
        raise click.UsageError(f"parent directory of --out does not exist: {out_dir.parent}")
    from .synthetic import build_demo_scene

    manifest = build_demo_scene(scene_id, out_dir, seed=ctx.obj["seed"])
    click.echo(str(manifest))


if __name__ == "__main__":
    main()
