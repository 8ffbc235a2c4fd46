import numpy as np
import pytest

from semfilter.barriers import (
    BarrierStack,
    ClassK,
    SelfBarrier,
    SemanticBarrier,
    build_stack,
    eval_class_k,
    eval_joint_limits,
    eval_self_collision,
    eval_semantic,
    evaluate_h,
    evaluate_stack,
    inflated_by_radius,
)
from semfilter.envelopes import EnvelopeSet
from semfilter.kinematics import forward_kinematics, fr3_chain, jacobians
from semfilter.semantics import CAUTION, NO_CAUTION, CONSTRAINED_ROTATION, SemanticContext
from semfilter.superquadrics import Superquadric, sq_eval, sq_gradient


def sphere(center, radius):
    return Superquadric(np.asarray(center, dtype=float), np.eye(3), [radius] * 3, 1.0, 1.0)


@pytest.fixture(scope="module")
def fr3_stack():
    chain, state = fr3_chain()
    ee = forward_kinematics(chain, state.q).position
    obstacle = sphere(ee + np.array([0.3, 0.2, -0.1]), 0.12)
    envelope = sphere(ee + np.array([-0.2, 0.3, 0.2]), 0.25)
    envelopes = EnvelopeSet(entries=(("ball", "near", (envelope,)),))
    context = SemanticContext(
        "cup of water",
        spatial=(("ball", "near"),),
        behavioral=(("ball", NO_CAUTION),),
        pose=CONSTRAINED_ROTATION,
    )
    stack = build_stack(chain, [("obstacle", [obstacle])], envelopes, context)
    return chain, state, stack


class TestClassK:
    def test_quadratic_h_squared(self):
        assert eval_class_k(ClassK("quadratic", 1.0, 1.0), 0.2) == pytest.approx(0.04)

    def test_quadratic_quarter(self):
        assert eval_class_k(ClassK("quadratic", 1.0, 0.25), 0.2) == pytest.approx(0.01)

    def test_zero_at_origin(self):
        for family in ("linear", "quadratic"):
            assert eval_class_k(ClassK(family, 3.0, 0.5), 0.0) == 0.0

    def test_odd_extension(self):
        k = ClassK("quadratic", 2.0, 1.0)
        assert eval_class_k(k, -0.3) == pytest.approx(-eval_class_k(k, 0.3))

    def test_caution_pointwise_smaller(self):
        k1 = ClassK("quadratic", 1.0, 1.0)
        kc = ClassK("quadratic", 1.0, 0.25)
        for h in np.linspace(0.01, 5.0, 50):
            assert eval_class_k(kc, h) < eval_class_k(k1, h)

    def test_invariants(self):
        with pytest.raises(ValueError):
            ClassK("cubic", 1.0)
        with pytest.raises(ValueError):
            ClassK("linear", -1.0)
        with pytest.raises(ValueError):
            ClassK("linear", 1.0, 0.0)
        with pytest.raises(ValueError):
            ClassK("linear", 1.0, 1.5)


class TestSemanticRows:
    def test_surface_gives_zero(self, fr3_stack):
        chain, state, _ = fr3_stack
        ee = forward_kinematics(chain, state.q).position
        env = sphere(ee + np.array([0.25, 0.0, 0.0]), 0.25)  # ee exactly on surface
        stack = build_stack(
            chain, [], EnvelopeSet(entries=(("b", "near", (env,)),)),
            SemanticContext("cup", spatial=(("b", "near"),), behavioral=(("b", NO_CAUTION),)),
        )
        h, A, alpha, labels = eval_semantic(chain, state.q, stack)
        assert h[0] == pytest.approx(0.0, abs=1e-9)
        assert labels == ["sem:b"]

    def test_h_is_g_minus_one_composed_with_jacobian(self, fr3_stack):
        chain, state, _ = fr3_stack
        q = state.q
        ee = forward_kinematics(chain, q).position
        # place a sphere so that g(ee) = 4: distance = 2 * radius
        env = sphere(ee + np.array([0.5, 0.0, 0.0]), 0.25)
        stack = build_stack(
            chain, [], EnvelopeSet(entries=(("b", "near", (env,)),)),
            SemanticContext("cup", spatial=(("b", "near"),), behavioral=(("b", NO_CAUTION),)),
        )
        h, A, alpha, _ = eval_semantic(chain, q, stack)
        assert h[0] == pytest.approx(3.0, abs=1e-9)
        J_trans, _ = jacobians(chain, q)
        np.testing.assert_allclose(A[0], sq_gradient(env, ee) @ J_trans, atol=1e-9)

    def test_union_takes_min(self, fr3_stack):
        chain, state, _ = fr3_stack
        ee = forward_kinematics(chain, state.q).position
        near = sphere(ee + np.array([0.3, 0.0, 0.0]), 0.3)
        far = sphere(ee + np.array([2.0, 0.0, 0.0]), 0.1)
        stack = build_stack(
            chain, [], EnvelopeSet(entries=(("b", "near", (near, far)),)),
            SemanticContext("cup", spatial=(("b", "near"),), behavioral=(("b", NO_CAUTION),)),
        )
        h, _, _, _ = eval_semantic(chain, state.q, stack)
        assert h[0] == pytest.approx(sq_eval(near, ee) - 1.0)

    def test_empty_context_gives_zero_rows(self, fr3_stack):
        chain, state, _ = fr3_stack
        stack = build_stack(chain, [], EnvelopeSet(), None)
        h, A, alpha, labels = eval_semantic(chain, state.q, stack)
        assert len(h) == 0 and labels == []

    def test_smooth_min_close_to_hard_min(self, fr3_stack):
        chain, state, _ = fr3_stack
        ee = forward_kinematics(chain, state.q).position
        a = sphere(ee + np.array([0.4, 0.0, 0.0]), 0.3)
        b = sphere(ee + np.array([0.0, 0.45, 0.0]), 0.3)
        envs = EnvelopeSet(entries=(("b", "near", (a, b)),))
        ctx = SemanticContext("cup", spatial=(("b", "near"),), behavioral=(("b", NO_CAUTION),))
        hard = build_stack(chain, [], envs, ctx, smooth_min=False)
        soft = build_stack(chain, [], envs, ctx, smooth_min=True)
        h_hard, _, _, _ = eval_semantic(chain, state.q, hard)
        h_soft, _, _, _ = eval_semantic(chain, state.q, soft)
        assert h_soft[0] <= h_hard[0] + 1e-12
        assert abs(h_soft[0] - h_hard[0]) < 0.15


class TestEnvRows:
    def test_deep_violation_at_center(self, fr3_stack):
        chain, state, _ = fr3_stack
        P0 = forward_kinematics(chain, state.q).position
        cps = chain.control_points
        ee_cp = cps[-1]
        from semfilter.kinematics import point_kinematics

        P, _ = point_kinematics(chain, state.q, cps)
        solid = sphere(P[-1], 0.2)  # centered exactly on the last control point
        stack = build_stack(chain, [("obj", [solid])], EnvelopeSet(), None)
        h, _, _, labels = evaluate_stack(chain, state, state.q, stack).h, None, None, None
        row = [i for i, b in enumerate(stack.env) if b.cp_index == len(cps) - 1][0]
        ev = evaluate_stack(chain, state, state.q, stack)
        env_h = ev.by_class("env")
        assert env_h[row] == pytest.approx(-1.0)  # g(center) = 0 -> h = -1

    def test_far_point_positive(self, fr3_stack):
        chain, state, stack = fr3_stack
        ev = evaluate_stack(chain, state, state.q, stack)
        assert (ev.by_class("env") > 0).all()

    def test_inflation_puts_boundary_at_radius(self):
        solid = sphere([0.0, 0.0, 0.0], 0.2)
        inflated = inflated_by_radius(solid, 0.05)
        assert sq_eval(inflated, np.array([0.25, 0.0, 0.0])) == pytest.approx(1.0)


class TestSelfRows:
    def test_arithmetic(self):
        bar = SelfBarrier(pair=(0, 1), combined_radius=0.1, classk=ClassK("linear", 3.0))
        # two spheres r=0.05 at distance 0.2: h = 0.04 - 0.01
        d = 0.2
        assert d**2 - bar.combined_radius**2 == pytest.approx(0.03)

    def test_touching_gives_zero(self, fr3_stack):
        chain, state, stack = fr3_stack
        for bar in stack.self_pairs:
            i, j = bar.pair
            assert abs(chain.control_points[i].frame - chain.control_points[j].frame) > 1

    def test_gradient_matches_finite_differences(self, fr3_stack):
        chain, state, stack = fr3_stack
        rng = np.random.default_rng(0)
        for _ in range(5):
            q = state.q + rng.uniform(-0.2, 0.2, chain.n)
            h, A, _, _ = eval_self_collision(chain, q, stack)
            eps = 1e-6
            for row in range(0, len(h), 7):
                fd = np.zeros(chain.n)
                for j in range(chain.n):
                    d = np.zeros(chain.n)
                    d[j] = eps
                    ha, _, _, _ = eval_self_collision(chain, q + d, stack)
                    hb, _, _, _ = eval_self_collision(chain, q - d, stack)
                    fd[j] = (ha[row] - hb[row]) / (2 * eps)
                rel = np.linalg.norm(A[row] - fd) / max(np.linalg.norm(fd), 1e-9)
                assert rel < 1e-5


class TestJointLimitRows:
    def test_centered(self):
        state_q = np.zeros(2)
        from semfilter.kinematics import JointState

        st = JointState(q=state_q, limits_lo=[-1.0, -2.0], limits_hi=[1.0, 2.0], vel_limit=[1.0, 1.0])
        h, A, alpha, labels = eval_joint_limits(state_q, st, ClassK("linear", 3.0))
        np.testing.assert_allclose(h, [1.0, 2.0, 1.0, 2.0])
        np.testing.assert_allclose(A[0], [-1.0, 0.0])
        np.testing.assert_allclose(A[2], [1.0, 0.0])

    def test_at_upper_limit(self):
        from semfilter.kinematics import JointState

        st = JointState(q=[1.0], limits_lo=[-1.0], limits_hi=[1.0], vel_limit=[1.0])
        h, _, _, _ = eval_joint_limits(np.array([1.0]), st, ClassK("linear", 3.0))
        assert h[0] == pytest.approx(0.0)

    def test_outside_limits_negative_no_exception(self):
        from semfilter.kinematics import JointState

        st = JointState(q=[1.5], limits_lo=[-1.0], limits_hi=[1.0], vel_limit=[1.0])
        h, _, _, _ = eval_joint_limits(np.array([1.5]), st, ClassK("linear", 3.0))
        assert h[0] < 0


class TestStack:
    def test_hdot_linear_in_u(self, fr3_stack):
        chain, state, stack = fr3_stack
        ev = evaluate_stack(chain, state, state.q, stack)
        rng = np.random.default_rng(1)
        u1, u2 = rng.normal(size=chain.n), rng.normal(size=chain.n)
        a, b = 0.7, -1.3
        np.testing.assert_allclose(
            ev.A @ (a * u1 + b * u2), a * (ev.A @ u1) + b * (ev.A @ u2), atol=1e-12
        )

    def test_all_row_gradients_match_finite_differences(self, fr3_stack):
        chain, state, stack = fr3_stack
        rng = np.random.default_rng(2)
        eps = 1e-6
        for _ in range(5):
            q = state.q + rng.uniform(-0.3, 0.3, chain.n)
            ev = evaluate_stack(chain, state, q, stack)
            fd = np.zeros_like(ev.A)
            for j in range(chain.n):
                d = np.zeros(chain.n)
                d[j] = eps
                fd[:, j] = (evaluate_h(chain, state, q + d, stack) - evaluate_h(chain, state, q - d, stack)) / (2 * eps)
            for row in range(len(ev.h)):
                denom = max(np.linalg.norm(fd[row]), 1.0)
                assert np.linalg.norm(ev.A[row] - fd[row]) / denom < 1e-4

    def test_caution_scales_sem_and_env_rows(self, fr3_stack):
        chain, state, _ = fr3_stack
        ee = forward_kinematics(chain, state.q).position
        obstacle = sphere(ee + np.array([0.3, 0.2, -0.1]), 0.12)
        envelope = sphere(ee + np.array([-0.2, 0.3, 0.2]), 0.25)
        envelopes = EnvelopeSet(entries=(("ball", "near", (envelope,)),))
        base_ctx = SemanticContext("cup", spatial=(("ball", "near"),), behavioral=(("ball", NO_CAUTION),))
        caution_ctx = SemanticContext("cup", spatial=(("ball", "near"),), behavioral=(("ball", CAUTION),))
        plain = build_stack(chain, [("ball", [obstacle])], envelopes, base_ctx)
        cautious = build_stack(chain, [("ball", [obstacle])], envelopes, caution_ctx)
        ev_p = evaluate_stack(chain, state, state.q, plain)
        ev_c = evaluate_stack(chain, state, state.q, cautious)
        np.testing.assert_allclose(ev_p.h, ev_c.h)
        sem = [i for i, c in enumerate(ev_p.classes) if c == "sem"]
        env = [i for i, c in enumerate(ev_p.classes) if c == "env"]
        for i in sem + env:
            if ev_p.h[i] > 0:
                assert ev_c.alpha_h[i] == pytest.approx(0.25 * ev_p.alpha_h[i])

    def test_removing_object_removes_exactly_its_rows(self, fr3_stack):
        chain, state, _ = fr3_stack
        ee = forward_kinematics(chain, state.q).position
        s1 = sphere(ee + np.array([0.3, 0.2, -0.1]), 0.12)
        s2 = sphere(ee + np.array([0.4, -0.3, 0.0]), 0.15)
        both = build_stack(chain, [("a", [s1]), ("b", [s2])], EnvelopeSet(), None)
        only_a = build_stack(chain, [("a", [s1])], EnvelopeSet(), None)
        ev_both = evaluate_stack(chain, state, state.q, both)
        ev_a = evaluate_stack(chain, state, state.q, only_a)
        keep = [i for i, lbl in enumerate(ev_both.labels) if not lbl.startswith("env:b:")]
        np.testing.assert_allclose(ev_both.h[keep], ev_a.h)
        assert [ev_both.labels[i] for i in keep] == ev_a.labels

    def test_row_order_and_counts(self, fr3_stack):
        chain, state, stack = fr3_stack
        ev = evaluate_stack(chain, state, state.q, stack)
        n = chain.n
        expected = len(stack.sem) + len(stack.env) + len(stack.self_pairs) + 2 * n
        assert len(ev.h) == expected
        order = [c for c in ev.classes]
        assert order == sorted(order, key=["sem", "env", "self", "lim"].index)

    def test_evaluate_h_matches_stack(self, fr3_stack):
        chain, state, stack = fr3_stack
        rng = np.random.default_rng(3)
        q = state.q + rng.uniform(-0.2, 0.2, chain.n)
        np.testing.assert_allclose(
            evaluate_h(chain, state, q, stack), evaluate_stack(chain, state, q, stack).h, atol=1e-12
        )
