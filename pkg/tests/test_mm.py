import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ipsac.errors import ConditioningError, DomainError, IpsacError, StageError
from ipsac.metrics import target_sinr, user_sinrs
from ipsac.mm import (
    PolarizationState,
    Problem,
    UpdateFlags,
    alternate_full,
    blocks_of,
    k_bisection,
    linearize_user_constraint,
    mse_majorizer,
    mse_objective,
    optimize_polarization,
    sinr_surrogate,
    sinr_trace_objective,
    sinr_xi,
    update_nu,
    update_pr,
    update_pu,
    user_constraint_quadratic,
)
from ipsac.polar import block_matrix
from ipsac.scene import TargetSpec, make_scene

from helpers import crandn, grid_dual_oracle, pol, random_channels, random_scene, random_waveform, unit_blocks


def perturb(rng, p, scale):
    q = p + scale * rng.standard_normal(p.size)
    return block_matrix(q.reshape(-1, 2) / np.linalg.norm(q.reshape(-1, 2), axis=1, keepdims=True))


def mm_instance(seed, n_t=3, n_r=2, cols=5):
    rng = np.random.default_rng(seed)
    sc = random_scene(rng, n_t, n_r)
    return rng, sc, pol(rng, n_t), pol(rng, n_r), random_waveform(rng, n_t, cols, 10.0)


# ---------------------------------------------------------------------------
# surrogates


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_mse_majorizer_touch_and_dominance(seed):
    rng, sc, P_t, P_r, F = mm_instance(seed)
    st_ = mse_majorizer(F, P_t, P_r, sc)
    f0 = mse_objective(F, P_t, P_r, sc)
    assert st_.objective == pytest.approx(f0, rel=1e-10)
    assert abs(st_.surrogate(P_t, P_r) - f0) <= 1e-9 * max(1.0, abs(f0))
    for scale in (1e-3, 0.1, 1.0, 10.0):
        for _ in range(25):
            Qt, Qr = perturb(rng, blocks_of(P_t), scale), perturb(rng, blocks_of(P_r), scale)
            assert st_.surrogate(Qt, Qr) >= mse_objective(F, Qt, Qr, sc) - 1e-9 * max(1.0, abs(f0))


def test_mse_majorizer_lift_vectors():
    rng, sc, P_t, P_r, F = mm_instance(1)
    st_ = mse_majorizer(F, P_t, P_r, sc)
    assert st_.lambda_Omega >= np.linalg.eigvalsh(sc.Omega)[-1] - 1e-12
    for _ in range(10):
        p_t, p_r = unit_blocks(rng, 3), unit_blocks(rng, 2)
        lin_t = np.sum(np.kron(block_matrix(p_t), P_r) * st_.Lambda)
        lin_r = np.sum(np.kron(P_t, block_matrix(p_r)) * st_.Lambda)
        assert p_t @ st_.d == pytest.approx(lin_t, rel=1e-10, abs=1e-12)
        assert p_r @ st_.q == pytest.approx(lin_r, rel=1e-10, abs=1e-12)


def test_mse_majorizer_singular():
    rng = np.random.default_rng(0)
    sc = random_scene(rng, 2, 2, sigma_s2=0.0)
    with pytest.raises(ConditioningError):
        mse_majorizer(np.zeros((2, 3)), pol(rng, 2), pol(rng, 2), sc)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.0, 5.0))
def test_sinr_surrogate_touch_and_dominance(seed, nu):
    rng, sc, P_t, P_r, F = mm_instance(seed)
    st_ = sinr_surrogate(nu, F, P_t, P_r, sc)
    Xi = sinr_xi(nu, sc)
    f0 = sinr_trace_objective(F, P_t, P_r, Xi)
    assert st_.lambda_Xi >= np.linalg.eigvalsh(Xi)[-1] - 1e-12
    scale = max(1.0, abs(f0), abs(st_.lambda_Xi) * 10.0)
    assert abs(st_.surrogate(P_t, P_r) - f0) <= 1e-9 * scale
    for s in (1e-3, 0.1, 1.0, 10.0):
        for _ in range(25):
            Qt, Qr = perturb(rng, blocks_of(P_t), s), perturb(rng, blocks_of(P_r), s)
            assert st_.surrogate(Qt, Qr) >= sinr_trace_objective(F, Qt, Qr, Xi) - 1e-9 * scale


def test_sinr_surrogate_lift_vectors_and_domain():
    rng, sc, P_t, P_r, F = mm_instance(2)
    st_ = sinr_surrogate(0.7, F, P_t, P_r, sc)
    p_t = unit_blocks(rng, 3)
    assert p_t @ st_.g == pytest.approx(np.sum(np.kron(block_matrix(p_t), P_r) * st_.Gamma), rel=1e-10)
    p_r = unit_blocks(rng, 2)
    assert p_r @ st_.v == pytest.approx(np.sum(np.kron(P_t, block_matrix(p_r)) * st_.Gamma), rel=1e-10)
    with pytest.raises(DomainError):
        sinr_surrogate(-1.0, F, P_t, P_r, sc)


def test_dinkelbach_objective_offset_is_polarization_free():
    # the identity part of Xi only adds nu sigma^2 ||F||^2, whatever the polarization
    rng, sc, P_t, P_r, F = mm_instance(3)
    nu = 0.8
    Xi = sinr_xi(nu, sc)
    for _ in range(5):
        Qt, Qr = pol(rng, 3), pol(rng, 2)
        num = sinr_trace_objective(F, Qt, Qr, sc.Omega0)
        clut = sinr_trace_objective(F, Qt, Qr, sc.OmegaC)
        offset = sinr_trace_objective(F, Qt, Qr, Xi) - (nu * clut - num)
        assert offset == pytest.approx(nu * sc.sigma_s2 * np.linalg.norm(F) ** 2, rel=1e-10)


# ---------------------------------------------------------------------------
# user constraints


def user_instance(seed, K=2, n_t=3, cols=5):
    rng = np.random.default_rng(seed)
    ch = random_channels(K, n_t, seed)
    p_u = unit_blocks(rng, K).reshape(-1, 2)
    F = random_waveform(rng, n_t, cols, 10.0)
    return rng, ch, p_u, F


def direct_quadratic(ch, p_u, F, gamma, p_t, k):
    h = ch.with_pu(p_u).channels(block_matrix(p_t))[:, k]
    g = np.abs(h.conj() @ F) ** 2
    return -g[k] + gamma * (g.sum() - g[k])


def test_user_quadratic_matches_direct_sinr():
    rng, ch, p_u, F = user_instance(0)
    gamma, s2 = 1.5, 1.0
    Psis = user_constraint_quadratic(ch.H_up, p_u, F, gamma, 3)
    for _ in range(100):
        p_t = unit_blocks(rng, 3)
        H = ch.with_pu(p_u).channels(block_matrix(p_t))
        sinr = user_sinrs(H, F, s2)
        for k, Psi in enumerate(Psis):
            ref = direct_quadratic(ch, p_u, F, gamma, p_t, k)
            assert p_t @ Psi @ p_t == pytest.approx(ref, rel=1e-9, abs=1e-12)
            assert (p_t @ Psi @ p_t + gamma * s2 <= 0) == (sinr[k] >= gamma)


def test_user_quadratic_single_user_and_zero_threshold():
    rng, ch, p_u, _ = user_instance(1, K=1)
    f = crandn(rng, 3, 1)
    Psi = user_constraint_quadratic(ch.H_up, p_u, f, 2.0, 3)[0]
    assert np.linalg.eigvalsh(Psi)[-1] <= 1e-12  # only the useful-signal term
    _, ch2, p_u2, F2 = user_instance(2)
    for Psi0 in user_constraint_quadratic(ch2.H_up, p_u2, F2, 0.0, 3):
        for _ in range(20):
            p = unit_blocks(rng, 3)
            assert p @ Psi0 @ p <= 1e-12


def test_linearization_exact_for_isotropic():
    rng = np.random.default_rng(3)
    Psi = 2.5 * np.eye(6)
    p_i = unit_blocks(rng, 3)
    lin = linearize_user_constraint(Psi, p_i, 1.0, 0.5)
    for _ in range(10):
        p = unit_blocks(rng, 3)
        assert p @ lin.u + lin.r == pytest.approx(p @ Psi @ p + 0.5, abs=1e-12)


def test_linearization_inner_approximation():
    rng, ch, p_u, F = user_instance(4)
    gamma, s2 = 1.0, 1.0
    p_i = unit_blocks(rng, 3)
    for Psi in user_constraint_quadratic(ch.H_up, p_u, F, gamma, 3):
        lin = linearize_user_constraint(Psi, p_i, gamma, s2)
        assert p_i @ lin.u + lin.r == pytest.approx(p_i @ Psi @ p_i + gamma * s2, abs=1e-10)
        for _ in range(1000):
            p = unit_blocks(rng, 3)
            quad = p @ Psi @ p + gamma * s2
            affine = p @ lin.u + lin.r
            assert affine >= quad - 1e-10 * max(1.0, abs(quad))


# ---------------------------------------------------------------------------
# K-bisection


def test_kbisection_unconstrained():
    rng = np.random.default_rng(0)
    d = rng.standard_normal(8)
    out = k_bisection(d, np.zeros((0, 8)), np.zeros(0))
    d2 = d.reshape(-1, 2)
    assert np.allclose(out.p_t.reshape(-1, 2), -d2 / np.linalg.norm(d2, axis=1, keepdims=True))
    assert out.dual_value == pytest.approx(-np.linalg.norm(d2, axis=1).sum())


def test_kbisection_inactive_constraint():
    d = np.array([1.0, 0.0, 0.0, 1.0])
    u = np.array([[1.0, 0.0, 1.0, 0.0]])
    out = k_bisection(d, u, np.array([-0.5]))
    assert out.mu[0] == 0.0 and out.converged


def test_kbisection_matches_grid_oracle():
    rng = np.random.default_rng(5)
    found = 0
    while found < 5:
        d, u = rng.standard_normal(4), rng.standard_normal(4)
        r = rng.uniform(-1.0, 1.0)
        out = k_bisection(d, u[None, :], np.array([r]), eps3=1e-9)
        if not out.feasible or out.mu[0] == 0.0:
            continue
        found += 1
        assert out.mu[0] == pytest.approx(grid_dual_oracle(d, u, r), abs=1e-4)


def relaxed_lp(d, u, r):
    """The convex relaxation with ``||p_n|| <= 1``; its dual is the one bisected."""
    p = cp.Variable(d.size)
    lin = u @ p + r <= 0
    cons = [lin] + [cp.norm(p[2 * i:2 * i + 2]) <= 1 for i in range(d.size // 2)]
    prob = cp.Problem(cp.Minimize(d @ p), cons)
    prob.solve(solver="CLARABEL")
    return prob.value, lin.dual_value, np.linalg.norm(p.value.reshape(-1, 2), axis=1)


def test_kbisection_matches_relaxation_dual():
    rng = np.random.default_rng(6)
    for _ in range(30):
        d = rng.standard_normal(8)
        u = rng.standard_normal((2, 8))
        r = -(u @ unit_blocks(rng, 4)) - rng.uniform(0.01, 0.5, 2)  # strictly feasible point exists
        out = k_bisection(d, u, r)
        value, mu, norms = relaxed_lp(d, u, r)
        assert out.feasible and np.all(out.mu >= 0)
        assert out.dual_value == pytest.approx(value, abs=1e-6)
        assert np.allclose(out.mu, mu, atol=1e-4)
        assert np.allclose(np.linalg.norm(out.p_t.reshape(-1, 2), axis=1), 1.0, atol=1e-12)
        # a unit-norm KKT point exists exactly when the relaxation is tight
        if np.all(norms >= 1 - 1e-6):
            assert out.kkt_residual <= 1e-6
        else:
            assert out.degenerate_blocks


def test_kbisection_reports_infeasible():
    d = np.array([1.0, 0.0])
    u = np.array([[1.0, 0.0]])
    out = k_bisection(d, u, np.array([2.0]))  # p^T u <= -2 is impossible on the circle
    assert not out.feasible and out.infeasible_user == 0


# ---------------------------------------------------------------------------
# closed-form updates


def test_update_pr_minimizes_and_sign_is_irrelevant():
    q = np.array([2.0, 0.0, 0.5, 0.0])
    p = update_pr(q)
    assert np.allclose(p, [-1.0, 0.0, -1.0, 0.0])
    assert np.allclose(update_pr(np.array([0.0, 0.0, 1.0, 0.0]), prev=[0.6, 0.8, 1.0, 0.0]), [0.6, 0.8, -1.0, 0.0])
    # flipping a receive block leaves both true objectives unchanged
    rng, sc, P_t, P_r, F = mm_instance(7)
    Q = P_r.copy()
    Q[:, 0] *= -1
    assert mse_objective(F, P_t, Q, sc) == pytest.approx(mse_objective(F, P_t, P_r, sc), rel=1e-12)
    assert target_sinr(P_t, Q, sc, F=F) == pytest.approx(target_sinr(P_t, P_r, sc, F=F), rel=1e-12)


def test_update_pr_blockwise():
    rng = np.random.default_rng(8)
    q = rng.standard_normal(8)
    perm = np.array([2, 0, 3, 1])
    a = update_pr(q).reshape(-1, 2)[perm]
    b = update_pr(q.reshape(-1, 2)[perm].reshape(-1)).reshape(-1, 2)
    assert np.allclose(a, b)


def test_update_pr_descends_surrogate():
    for seed in range(200):
        rng, sc, P_t, P_r, F = mm_instance(seed, n_t=2, n_r=2, cols=3)
        st_ = mse_majorizer(F, P_t, P_r, sc)
        new = block_matrix(update_pr(st_.q, blocks_of(P_r)))
        assert st_.surrogate(P_t, new) <= st_.surrogate(P_t, P_r) + 1e-12 * max(1.0, abs(st_.objective))


def test_update_pu_eigen_oracle():
    # H_up P_t F = [2, i]^T gives Re(c c^H) = diag(4, 1) and no interference
    H_up = np.array([[2.0, 0.0], [1j, 0.0]])
    P_t = np.array([[1.0], [0.0]])
    p = update_pu(H_up, P_t, np.array([[1.0]]), 1.0, 0)
    assert np.allclose(np.abs(p), [1.0, 0.0])
    c = H_up @ P_t @ np.array([[1.0]])
    assert abs(p @ c[:, 0]) ** 2 == pytest.approx(4.0)


def test_update_pu_never_lowers_sinr():
    for seed in range(30):
        rng, ch, p_u, F = user_instance(seed)
        P_t = pol(rng, 3)
        for k in range(2):
            before = user_sinrs(ch.with_pu(p_u).channels(P_t), F, 1.0)[k]
            new = p_u.copy()
            new[k] = update_pu(ch.H_up[k], P_t, F, 1.0, k)
            after = user_sinrs(ch.with_pu(new).channels(P_t), F, 1.0)[k]
            assert after >= before * (1 - 1e-12)
            assert np.linalg.norm(new[k]) == pytest.approx(1.0, abs=1e-12)


def test_update_nu():
    rng, sc, P_t, P_r, F = mm_instance(9)
    assert update_nu(np.zeros_like(F), P_t, P_r, sc) == 0.0
    assert update_nu(F, P_t, P_r, sc) == pytest.approx(target_sinr(P_t, P_r, sc, F=F), rel=1e-12)


# ---------------------------------------------------------------------------
# polarization loop and alternation


def loop_problem(seed, objective="mse", K=2, n=3, gamma=1.0):
    rng = np.random.default_rng(seed)
    sc = random_scene(rng, n, n)
    ch = random_channels(K, n, seed)
    init = PolarizationState.static(n, n, K, "alternating" if objective == "mse" else "horizontal")
    prob = Problem(objective, sc, ch.with_pu(init.p_u), gamma, 100.0, 1.0, L=8)
    return prob, init


def test_optimize_zero_iterations_returns_init():
    prob, init = loop_problem(0)
    F = random_waveform(np.random.default_rng(0), 3, 5, 100.0)
    res = optimize_polarization(prob, F, init, i_max=0)
    assert np.array_equal(res.state.P_t, init.P_t) and np.array_equal(res.state.P_r, init.P_r)
    assert np.array_equal(res.state.p_u, init.p_u)
    assert res.iterations == 0


@pytest.mark.parametrize("objective", ["mse", "sinr"])
def test_optimize_monotone_and_unit_norm(objective):
    for seed in range(3):
        prob, init = loop_problem(seed, objective)
        rep = alternate_full(prob, init, outer_iters=1)
        assert rep.F is not None
        res = optimize_polarization(prob, rep.F, init, i_max=30)
        objs = [row["objective"] for row in res.trace]
        assert all(b <= a + 1e-7 * abs(a) for a, b in zip(objs, objs[1:]))
        assert all(b >= a - 1e-8 for a, b in zip(res.nu, res.nu[1:]))
        for blocks in (res.state.p_t, res.state.p_r, res.state.p_u.reshape(-1)):
            assert np.allclose(np.linalg.norm(blocks.reshape(-1, 2), axis=1), 1.0, atol=1e-12)
        assert prob.users_ok(rep.F, res.state, 1e-6)


def test_alternate_one_outer_iteration():
    prob, init = loop_problem(1)
    rep = alternate_full(prob, init, outer_iters=1)
    stages = [row["stage"] for row in rep.trace]
    assert stages[0] == "waveform" and stages.count("waveform") == 1
    assert rep.outer_iters == 1


def test_full_pipeline_beats_waveform_only():
    for seed in range(3):
        prob, init = loop_problem(seed)
        fixed = alternate_full(prob, init, UpdateFlags(False, False, False))
        full = alternate_full(prob, init, outer_iters=5)
        assert full.mse <= fixed.mse * (1 + 1e-9)


def test_alternate_tags_failing_stage(monkeypatch):
    import ipsac.mm as mm

    prob, init = loop_problem(2)

    def boom(*a, **k):
        raise ConditioningError("singular")

    monkeypatch.setattr(mm, "solve_waveform", boom)
    with pytest.raises(StageError) as exc:
        alternate_full(prob, init)
    assert exc.value.stage == "waveform"
    assert isinstance(exc.value, IpsacError)


def test_trace_export(tmp_path):
    prob, init = loop_problem(3)
    rep = alternate_full(prob, init, outer_iters=2)
    path = tmp_path / "trace.csv"
    rep.write_trace(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "outer,iteration,stage,objective,feasible"
    assert len(lines) == len(rep.trace) + 1


def test_dual_polarized_state_is_fixed():
    st_ = PolarizationState.dual_polarized(2, 3, [[1.0, 0.0]])
    assert not st_.reconfigurable
    assert np.array_equal(st_.P_t, np.eye(4)) and np.array_equal(st_.P_r, np.eye(6))


def test_problem_rejects_unknown_objective():
    sc = make_scene(1, 1, 0.0, TargetSpec(0.0, 1.0, np.eye(4)), [], 1.0)
    with pytest.raises(DomainError):
        Problem("power", sc, random_channels(0, 1, 0), 1.0, 1.0, 1.0)
