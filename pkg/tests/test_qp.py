import itertools

import numpy as np
import pytest

from semfilter.barriers import BarrierEval, build_stack, evaluate_stack
from semfilter.envelopes import EnvelopeSet
from semfilter.kinematics import (
    Joint,
    JointState,
    KinematicChain,
    forward_kinematics,
    fr3_chain,
    jacobians,
    rotation_exp,
    transform,
)
from semfilter.qp import (
    CertificationResult,
    InvalidState,
    QPInfeasible,
    QPProblem,
    RotationObjective,
    assemble,
    certify,
    rotation_cost_terms,
    solve,
)
from semfilter.semantics import CONSTRAINED_ROTATION, NO_CAUTION, SemanticContext
from semfilter.superquadrics import Superquadric


def brute_force_active_set(H, f, A, b):
    """Enumerate candidate active sets and solve the KKT equalities.

    Returns (objective, minimizer) or None when no subset is feasible.
    """
    n, m = len(f), len(b)
    best = None
    for k in range(0, min(m, n) + 1):
        for S in itertools.combinations(range(m), k):
            S = list(S)
            if k:
                KKT = np.block([[H, -A[S].T], [A[S], np.zeros((k, k))]])
                rhs = np.concatenate([-f, b[S]])
            else:
                KKT, rhs = H, -f
            try:
                sol = np.linalg.solve(KKT, rhs)
            except np.linalg.LinAlgError:
                continue
            u, lam = sol[:n], sol[n:]
            if k and (lam < -1e-9).any():
                continue
            if m and (A @ u - b < -1e-9).any():
                continue
            obj = 0.5 * u @ H @ u + f @ u
            if best is None or obj < best[0] - 1e-12:
                best = (obj, u)
    return best


def box_to_rows(n, lo, hi):
    return np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([lo, -hi])


def single_joint_chain():
    joints = (Joint(origin=np.eye(4), axis=np.array([0.0, 0.0, 1.0])),)
    chain = KinematicChain(joints=joints, ee_offset=transform(np.eye(3), (1.0, 0.0, 0.0)))
    state = JointState(q=[0.0], limits_lo=[-3.0], limits_hi=[3.0], vel_limit=[2.0])
    return chain, state


class TestRotationCostTerms:
    def test_zero_weights_zero_contribution(self, fr3):
        chain, state = fr3
        Hq, fq = rotation_cost_terms(chain, state.q, RotationObjective.free(1 / 45))
        assert not Hq.any() and not fq.any()

    def test_aligned_rotation_zero_linear_term(self, fr3):
        chain, state = fr3
        R_cur = forward_kinematics(chain, state.q).rotation
        rot = RotationObjective(w_rot=np.array([20.0, 2.0]), R_des=R_cur, dt=1 / 45)
        Hq, fq = rotation_cost_terms(chain, state.q, rot)
        np.testing.assert_allclose(fq, np.zeros(chain.n), atol=1e-12)
        # cost at u=0 is just w1 ||e||^2 = 0; Hq must be PSD
        eig = np.linalg.eigvalsh(Hq)
        assert eig.min() > -1e-12

    def test_single_joint_closed_form(self):
        # scalar oracle: min (u-0)^2 + w1 (e - dt j u)^2 + w2 (dt j u)^2
        chain, state = single_joint_chain()
        dt = 1.0 / 45.0
        w1, w2 = 20.0, 2.0
        angle = 0.3
        R_des = rotation_exp(np.array([0.0, 0.0, angle]))
        rot = RotationObjective(w_rot=np.array([w1, w2]), R_des=R_des, dt=dt)
        Hq, fq = rotation_cost_terms(chain, np.zeros(1), rot)
        H = 2.0 * np.eye(1) + Hq
        f = np.zeros(1) + fq
        u_star = np.linalg.solve(H, -f)[0]
        j = 1.0  # revolute about z: J_rot column = (0,0,1), scalar reduction
        expected = w1 * dt * j * angle / (1.0 + (w1 + w2) * dt * dt * j * j)
        assert u_star == pytest.approx(expected, rel=1e-9)


class TestAssemble:
    def make_eval(self, n, rows):
        A = np.array([r[0] for r in rows]).reshape(len(rows), n)
        h = np.array([r[1] for r in rows])
        alpha = np.array([r[2] for r in rows])
        return BarrierEval(h=h, A=A, alpha_h=alpha,
                           labels=[f"row{i}" for i in range(len(rows))],
                           classes=["env"] * len(rows))

    def test_no_rows_solution_clamps_to_box(self, fr3):
        chain, state = fr3
        ev = BarrierEval(h=np.zeros(0), A=np.zeros((0, chain.n)), alpha_h=np.zeros(0), labels=[], classes=[])
        u_cmd = np.array([5.0, -4.0, 0.1, 0.0, 3.0, -0.2, 1.0])
        p = assemble(chain, state.q, u_cmd, ev, RotationObjective.free(1 / 45), state.vel_limit)
        res = solve(p)
        np.testing.assert_allclose(res.u_cert, np.clip(u_cmd, -state.vel_limit, state.vel_limit), atol=1e-8)

    def test_alpha_becomes_negative_bound(self, fr3):
        chain, state = fr3
        row = np.zeros(chain.n)
        row[0] = 1.0
        h = 0.25
        alpha = h * h  # quadratic class-K, gain 1
        ev = self.make_eval(chain.n, [(row, h, alpha)])
        p = assemble(chain, state.q, np.zeros(chain.n), ev, RotationObjective.free(1 / 45), state.vel_limit)
        assert p.b_ineq[0] == pytest.approx(-0.0625)

    def test_row_count_bookkeeping(self, fr3):
        chain, state = fr3
        ee = forward_kinematics(chain, state.q).position
        env = Superquadric(ee + np.array([0.4, 0.0, 0.0]), np.eye(3), [0.2] * 3, 1.0, 1.0)
        stack = build_stack(
            chain,
            [("o", [env])],
            EnvelopeSet(entries=(("o", "near", (env,)),)),
            SemanticContext("cup", spatial=(("o", "near"),), behavioral=(("o", NO_CAUTION),)),
        )
        ev = evaluate_stack(chain, state, state.q, stack)
        expected = len(stack.sem) + len(stack.env) + len(stack.self_pairs) + 2 * chain.n
        assert len(ev.h) == expected
        p = assemble(chain, state.q, np.zeros(chain.n), ev, RotationObjective.free(1 / 45), state.vel_limit)
        assert p.A_ineq.shape == (expected, chain.n)

    def test_invariants(self, fr3):
        chain, state = fr3
        with pytest.raises(ValueError):
            QPProblem(
                H=np.eye(3), f=np.zeros(3), A_ineq=np.zeros((0, 3)), b_ineq=np.zeros(0),
                box_lo=np.array([-1.0, 1.0, -1.0]), box_hi=np.ones(3),
            )
        # H eigenvalues >= 2 from the tracking identity
        ev = BarrierEval(h=np.zeros(0), A=np.zeros((0, chain.n)), alpha_h=np.zeros(0), labels=[], classes=[])
        p = assemble(chain, state.q, np.zeros(chain.n), ev, RotationObjective.free(1 / 45), state.vel_limit)
        assert np.linalg.eigvalsh(p.H).min() >= 1.0


class TestSolve:
    def test_interior_command_untouched(self):
        n = 7
        u_cmd = np.full(n, 0.1)
        p = QPProblem(H=2 * np.eye(n), f=-2 * u_cmd, A_ineq=np.zeros((0, n)), b_ineq=np.zeros(0),
                      box_lo=-np.ones(n), box_hi=np.ones(n))
        res = solve(p)
        np.testing.assert_allclose(res.u_cert, u_cmd, atol=1e-8)
        assert res.status == "optimal" and res.kkt_residual <= 1e-6

    def test_one_dimensional_projection(self):
        # analytic projection oracle: min (u-1)^2 s.t. u <= 0.5 gives u = 0.5
        p = QPProblem(H=np.array([[2.0]]), f=np.array([-2.0]),
                      A_ineq=np.array([[-1.0]]), b_ineq=np.array([-0.5]),
                      box_lo=np.array([-3.0]), box_hi=np.array([3.0]))
        res = solve(p)
        assert res.u_cert[0] == pytest.approx(0.5, abs=1e-9)
        assert any("row0" in lbl for lbl in res.active_rows)

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(99)
        solved = 0
        for _ in range(500):
            n = int(rng.integers(2, 7))
            m = int(rng.integers(0, 7))
            L = rng.normal(size=(n, n))
            H = L @ L.T + 2.0 * np.eye(n)
            f = rng.normal(size=n)
            A = rng.normal(size=(m, n))
            b = rng.normal(size=m) - 0.5
            # wide box so the oracle enumerates exactly the m rows
            lo, hi = -np.full(n, 100.0), np.full(n, 100.0)
            oracle = brute_force_active_set(H, f, A, b)
            if oracle is not None and np.abs(oracle[1]).max() > 50.0:
                continue  # unboxed optimum escapes the box: not comparable
            p = QPProblem(H=H, f=f, A_ineq=A, b_ineq=b, box_lo=lo, box_hi=hi)
            try:
                res = solve(p)
            except QPInfeasible:
                assert oracle is None
                continue
            assert oracle is not None
            obj = 0.5 * res.u_cert @ H @ res.u_cert + f @ res.u_cert
            assert abs(obj - oracle[0]) < 1e-6
            assert res.kkt_residual <= 1e-6
            solved += 1
        assert solved > 300

    def test_matches_brute_force_with_active_box(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            n = int(rng.integers(2, 4))
            m = int(rng.integers(0, 4))
            H = 2.0 * np.eye(n)
            f = rng.normal(size=n) * 4.0
            A = rng.normal(size=(m, n))
            b = rng.normal(size=m) - 0.5
            lo, hi = -np.full(n, 0.5), np.full(n, 0.5)
            A_all = np.vstack([A, np.eye(n), -np.eye(n)])
            b_all = np.concatenate([b, lo, -hi])
            oracle = brute_force_active_set(H, f, A_all, b_all)
            p = QPProblem(H=H, f=f, A_ineq=A, b_ineq=b, box_lo=lo, box_hi=hi)
            try:
                res = solve(p)
            except QPInfeasible:
                assert oracle is None
                continue
            obj = 0.5 * res.u_cert @ H @ res.u_cert + f @ res.u_cert
            assert abs(obj - oracle[0]) < 1e-6

    def test_bit_for_bit_determinism(self):
        rng = np.random.default_rng(4)
        n, m = 7, 40
        H = 2 * np.eye(n)
        f = rng.normal(size=n)
        A = rng.normal(size=(m, n))
        b = -np.abs(rng.normal(size=m))
        p = QPProblem(H=H, f=f, A_ineq=A, b_ineq=b, box_lo=-np.ones(n), box_hi=np.ones(n))
        a = solve(p)
        b2 = solve(p)
        assert (a.u_cert == b2.u_cert).all()
        assert a.active_rows == b2.active_rows

    def test_optimal_invariant_enforced(self):
        with pytest.raises(ValueError):
            CertificationResult(
                u_cert=np.zeros(2), status="optimal", active_rows=[], kkt_residual=1e-3,
                slack_used=np.zeros(1), solve_time=0.0,
            )


@pytest.fixture()
def certify_setup(fr3):
    chain, state = fr3
    ee = forward_kinematics(chain, state.q).position
    envelope = Superquadric(ee + np.array([0.3, 0.0, 0.0]), np.eye(3), [0.25] * 3, 1.0, 1.0)
    envelopes = EnvelopeSet(entries=(("ball", "near", (envelope,)),))
    context = SemanticContext(
        "cup of water", spatial=(("ball", "near"),), behavioral=(("ball", NO_CAUTION),),
        pose=CONSTRAINED_ROTATION,
    )
    stack = build_stack(chain, [], envelopes, context)
    rot = RotationObjective.free(1 / 45)
    return chain, state, stack, rot


class TestCertify:
    def test_aggressive_command_satisfies_all_rows(self, certify_setup):
        chain, state, stack, rot = certify_setup
        ev = evaluate_stack(chain, state, state.q, stack)
        J_trans, _ = jacobians(chain, state.q)
        u_cmd = np.linalg.pinv(J_trans) @ np.array([0.5, 0.0, 0.0])  # toward the envelope
        res = certify(chain, state, state.q, u_cmd, stack, rot)
        assert res.status == "optimal"
        assert (ev.A @ res.u_cert + ev.alpha_h >= -1e-7).all()

    def test_zero_input_feasible_when_h_nonnegative(self, certify_setup):
        chain, state, stack, rot = certify_setup
        rng = np.random.default_rng(0)
        for _ in range(50):
            q = state.q + rng.uniform(-0.2, 0.2, chain.n)
            ev = evaluate_stack(chain, state, q, stack)
            if (ev.h < 0).any():
                continue
            res = certify(chain, state, q, rng.normal(size=chain.n), stack, rot)
            assert res.status in ("optimal", "relaxed")
            assert res.status == "optimal"

    def test_contradictory_semantic_rows_relax(self, fr3):
        chain, state = fr3
        ee = forward_kinematics(chain, state.q).position
        # Two envelopes overlapping the end effector: h slightly negative on
        # both, gradients opposing, so no u satisfies both hard rows.
        left = Superquadric(ee + np.array([0.19, 0.0, 0.0]), np.eye(3), [0.2] * 3, 1.0, 1.0)
        right = Superquadric(ee - np.array([0.19, 0.0, 0.0]), np.eye(3), [0.2] * 3, 1.0, 1.0)
        envelopes = EnvelopeSet(entries=(("a", "near", (left,)), ("b", "near", (right,))))
        context = SemanticContext(
            "cup", spatial=(("a", "near"), ("b", "near")),
            behavioral=(("a", NO_CAUTION), ("b", NO_CAUTION)),
        )
        stack = build_stack(chain, [], envelopes, context, sem_gain=30.0)
        ev = evaluate_stack(chain, state, state.q, stack)
        assert (ev.by_class("sem") < 0).all()
        res = certify(chain, state, state.q, np.zeros(chain.n), stack, RotationObjective.free(1 / 45))
        assert res.status == "relaxed"
        assert res.slack_used.max() > 0
        geo = [i for i, c in enumerate(ev.classes) if c != "sem"]
        assert (ev.A[geo] @ res.u_cert + ev.alpha_h[geo] >= -1e-7).all()

    def test_invalid_state_on_deep_geometric_violation(self, fr3):
        chain, state = fr3
        bad_q = state.limits_hi + 0.1  # beyond the joint limits by > h_recover
        stack = build_stack(chain, [], EnvelopeSet(), None)
        with pytest.raises(InvalidState):
            certify(chain, state, bad_q, np.zeros(chain.n), stack, RotationObjective.free(1 / 45))

    def test_minimal_invasiveness(self, certify_setup):
        chain, state, stack, rot = certify_setup
        rng = np.random.default_rng(1)
        checked = 0
        while checked < 50:
            q = state.q + rng.uniform(-0.2, 0.2, chain.n)
            u_cmd = rng.normal(size=chain.n) * 0.1
            ev = evaluate_stack(chain, state, q, stack)
            feasible = (ev.A @ u_cmd + ev.alpha_h >= 1e-6).all() and (np.abs(u_cmd) < state.vel_limit).all()
            if not feasible or (ev.h < 0).any():
                continue
            res = certify(chain, state, q, u_cmd, stack, RotationObjective.free(1 / 45))
            assert np.linalg.norm(res.u_cert - u_cmd) < 1e-6
            checked += 1
