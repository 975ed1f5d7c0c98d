import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ipsac.errors import DomainError, ShapeError
from ipsac.polar import (
    PolBlockMatrix,
    PolVector,
    block_matrix,
    build_lift_operators,
    commutation_matrix,
    net_array_response,
    normalize_blocks,
    static_pattern,
    steering_ula,
    unvec,
    vec,
    xpd_matrix,
)

from helpers import pol, unit_blocks


def test_xpd_perfect_isolation():
    assert np.array_equal(xpd_matrix(0.0).V, np.eye(2))


def test_xpd_unpolarized_is_rank_one():
    V = xpd_matrix(1.0).V
    assert np.allclose(V, np.ones((2, 2)) / np.sqrt(2))
    assert np.linalg.matrix_rank(V) == 1


def test_xpd_frozen_value():
    V = xpd_matrix(0.1).V
    assert np.allclose(V, [[0.95346, 0.30151], [0.30151, 0.95346]], atol=5e-6)


@pytest.mark.parametrize("chi", [-0.1, 1.5, np.nan])
def test_xpd_rejects_out_of_range(chi):
    with pytest.raises(DomainError):
        xpd_matrix(chi)


@given(st.floats(0.0, 1.0))
def test_xpd_eigenvalues(chi):
    w = np.sort(np.linalg.eigvalsh(xpd_matrix(chi).V))
    s = np.sqrt(chi)
    assert np.allclose(w, [(1 - s) / np.sqrt(1 + chi), (1 + s) / np.sqrt(1 + chi)], atol=1e-12)
    assert w.min() >= -1e-15


def test_steering_examples():
    assert np.allclose(steering_ula(1, 0.7), [1.0])
    assert np.allclose(steering_ula(2, 0.0, 0.5), [1.0, 1.0])
    a = steering_ula(4, np.pi / 6, 0.5)
    assert np.allclose(a, np.exp(1j * np.array([0, np.pi / 2, np.pi, 3 * np.pi / 2])))
    with pytest.raises(DomainError):
        steering_ula(0, 0.0)


def test_net_response_pass_through():
    V = xpd_matrix(0.0)
    h = net_array_response(np.array([1.0]), PolBlockMatrix((PolVector.horizontal(),)), V)
    assert np.allclose(h.A_net, [[1, 0]])
    v = net_array_response(np.array([1.0]), PolBlockMatrix((PolVector.vertical(),)), V)
    assert np.allclose(v.A_net, [[0, 1]])
    with pytest.raises(ShapeError):
        net_array_response(np.ones(2), PolBlockMatrix((PolVector.vertical(),)), V)


def test_polvector_renormalizes_near_unit_only():
    p = PolVector(np.array([1.0 + 5e-10, 0.0]))
    assert np.linalg.norm(p.p) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(DomainError):
        PolVector(np.array([1.1, 0.0]))
    with pytest.raises(DomainError):
        PolVector.from_direction([0.0, 0.0])


@pytest.mark.parametrize("n", [1, 2, 5, 16])
def test_block_matrix_orthonormal_columns(n):
    P = PolBlockMatrix.from_stacked(unit_blocks(np.random.default_rng(n), n)).P
    assert np.abs(P.T @ P - np.eye(n)).max() <= 1e-14


def test_static_patterns():
    alt = static_pattern(4, "alternating").P
    assert np.array_equal(alt, block_matrix([0, 1, 1, 0, 0, 1, 1, 0]))
    hor = static_pattern(4, "horizontal").P
    assert np.array_equal(hor, block_matrix([1, 0] * 4))
    with pytest.raises(DomainError):
        static_pattern(3, "diagonal")


def test_commutation_small():
    assert commutation_matrix(1, 1).toarray().tolist() == [[1.0]]
    K = commutation_matrix(2, 2).toarray()
    assert np.array_equal(K, np.eye(4)[[0, 2, 1, 3]])


@settings(max_examples=40)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 31))
def test_commutation_transposes(m, n, seed):
    A = np.random.default_rng(seed).standard_normal((m, n))
    assert np.array_equal(commutation_matrix(m, n) @ vec(A), vec(A.T))


def test_lift_single_antenna():
    ops = build_lift_operators(1, 1)
    P_t = pol(np.random.default_rng(0), 1)
    assert np.allclose(ops.Ibar_t @ vec(P_t), vec(P_t))


@pytest.mark.parametrize("n_t,n_r", [(2, 2), (3, 2), (1, 4)])
def test_lift_against_dense_kronecker(n_t, n_r):
    rng = np.random.default_rng(n_t * 10 + n_r)
    ops = build_lift_operators(n_t, n_r)
    p_t, p_r = unit_blocks(rng, n_t), unit_blocks(rng, n_r)
    P_t, P_r = block_matrix(p_t), block_matrix(p_r)
    assert np.array_equal(ops.Theta_t @ p_t, vec(P_t))
    assert np.array_equal(ops.Theta_r @ p_r, vec(P_r))
    assert np.array_equal(ops.Ibar_t @ (ops.Theta_t @ p_t), vec(np.kron(P_t, np.eye(n_r))))
    assert np.array_equal(ops.Ibar_r @ (ops.Theta_r @ p_r), vec(np.kron(np.eye(n_t), P_r)))


@settings(max_examples=30)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2 ** 31))
def test_trace_lift(n_t, n_r, seed):
    rng = np.random.default_rng(seed)
    ops = build_lift_operators(n_t, n_r)
    p_t, p_r = unit_blocks(rng, n_t), unit_blocks(rng, n_r)
    P_t, P_r = block_matrix(p_t), block_matrix(p_r)
    Lam = rng.standard_normal((4 * n_t * n_r, n_t * n_r))
    ref = np.trace(np.kron(P_t, P_r).T @ Lam)
    scale = np.abs(Lam).sum()
    assert abs(p_t @ ops.tx_coefficients(Lam, P_r) - ref) <= 1e-12 * scale
    assert abs(p_r @ ops.rx_coefficients(Lam, P_t) - ref) <= 1e-12 * scale


def test_vec_roundtrip():
    A = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(vec(A), [0, 3, 1, 4, 2, 5])
    assert np.array_equal(unvec(vec(A), 2, 3), A)


def test_normalize_blocks_fallback():
    p = normalize_blocks([3.0, 4.0, 0.0, 0.0], fallback=[1, 0, 0, 1])
    assert np.allclose(p, [0.6, 0.8, 0.0, 1.0])
    with pytest.raises(DomainError):
        normalize_blocks([0.0, 0.0])
