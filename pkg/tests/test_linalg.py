import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multitime_ft.linalg import (
    SupportError,
    eigh_sorted,
    hs_inner,
    matrix_log_support,
    maximally_entangled,
    partial_trace,
    permute_legs,
    psd_power,
    relative_entropy,
    swap_operator,
    tensor,
    trace_distance,
    von_neumann_entropy,
)
from multitime_ft.scenarios import make_rng, random_density_matrix

from conftest import assert_close
import oracles

seeds = st.integers(0, 2**31 - 1)
dims = st.integers(2, 4)


def test_hs_inner_is_trace_of_adjoint_product(rng):
    a = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    b = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    assert abs(hs_inner(a, b) - np.trace(a.conj().T @ b)) < 1e-12


def test_eigh_sorted_descending():
    w, v = eigh_sorted(np.diag([0.1, 0.7, 0.2]).astype(complex))
    assert_close(w, [0.7, 0.2, 0.1], 1e-15)
    assert_close(np.abs(v[:, 0]), [0, 1, 0], 1e-15)


def test_entropy_of_maximally_mixed():
    assert abs(von_neumann_entropy(np.eye(4) / 4) - np.log(4)) < 1e-12


def test_relative_entropy_diagonal_closed_form():
    p = np.array([0.6, 0.4])
    q = np.array([0.2, 0.8])
    expected = float(np.sum(p * np.log(p / q)))
    assert abs(relative_entropy(np.diag(p), np.diag(q)) - expected) < 1e-14


def test_relative_entropy_support_violation():
    rho = np.eye(2) / 2
    gamma = np.diag([1.0, 0.0])
    with pytest.raises(SupportError):
        relative_entropy(rho, gamma)


def test_relative_entropy_pure_inside_support():
    rho = np.diag([1.0, 0.0]).astype(complex)
    gamma = np.diag([0.25, 0.75]).astype(complex)
    assert abs(relative_entropy(rho, gamma) + np.log(0.25)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(seeds, dims)
def test_relative_entropy_matches_oracle(seed, d):
    rng = make_rng(seed)
    rho = random_density_matrix(d, rng)
    gamma = random_density_matrix(d, rng)
    assert abs(relative_entropy(rho, gamma) - oracles.relent(rho, gamma)) < 1e-10
    assert relative_entropy(rho, gamma) >= -1e-12


@settings(max_examples=30, deadline=None)
@given(seeds, st.floats(0.05, 0.95))
def test_relative_entropy_joint_convexity(seed, lam):
    rng = make_rng(seed)
    r1, r2, g1, g2 = (random_density_matrix(2, rng) for _ in range(4))
    lhs = relative_entropy(lam * r1 + (1 - lam) * r2, lam * g1 + (1 - lam) * g2)
    rhs = lam * relative_entropy(r1, g1) + (1 - lam) * relative_entropy(r2, g2)
    assert rhs - lhs >= -1e-10


def test_log_support_on_rank_deficient():
    rho = np.diag([0.5, 0.5, 0.0]).astype(complex)
    log, sup = matrix_log_support(rho)
    assert_close(sup, np.diag([1, 1, 0]), 1e-14)
    assert_close(log, np.diag([np.log(0.5), np.log(0.5), 0]), 1e-14)


@settings(max_examples=30, deadline=None)
@given(seeds, dims)
def test_psd_power_inverse_pair(seed, d):
    g = random_density_matrix(d, make_rng(seed))
    assert_close(psd_power(g, 0.5) @ psd_power(g, -0.5), np.eye(d), 1e-8)


@settings(max_examples=30, deadline=None)
@given(seeds, dims, dims)
def test_partial_trace_of_product(seed, d1, d2):
    rng = make_rng(seed)
    a = random_density_matrix(d1, rng)
    b = random_density_matrix(d2, rng)
    ab = tensor(a, b)
    assert_close(partial_trace(ab, [d1, d2], [1]), a, 1e-12)
    assert_close(partial_trace(ab, [d1, d2], [0]), b, 1e-12)


def test_permute_legs_matches_swap(rng):
    a = random_density_matrix(2, rng)
    b = random_density_matrix(3, rng)
    assert_close(permute_legs(np.kron(a, b), [2, 3], [1, 0]), np.kron(b, a), 1e-14)
    sw = swap_operator(2, 3)
    assert_close(sw @ np.kron(a, b) @ sw.conj().T, np.kron(b, a), 1e-14)


def test_maximally_entangled_marginals():
    phi = maximally_entangled(3)
    assert abs(np.trace(phi) - 1) < 1e-14
    assert_close(partial_trace(phi, [3, 3], [1]), np.eye(3) / 3, 1e-14)


def test_trace_distance_orthogonal_states():
    assert abs(trace_distance(np.diag([1.0, 0]), np.diag([0, 1.0])) - 1) < 1e-14
