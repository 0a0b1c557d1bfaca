import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multitime_ft import fluctuation as ft
from multitime_ft.channels import (
    amplitude_damping_channel,
    apply,
    dilation_channel,
    identity_channel,
    petz_recovery,
    unitary_channel,
)
from multitime_ft.linalg import RankDeficiencyError, matrix_exp_herm, relative_entropy, trace_distance
from multitime_ft.scenarios import haar_unitary, make_rng, random_channel, random_density_matrix, random_pure_state

from conftest import assert_close
import oracles

seeds = st.integers(0, 2**31 - 1)
dims = st.integers(2, 3)


def _grouped(recs, tol=1e-9):
    out = {}
    for w, s in recs:
        key = round(s / tol) * tol
        out[key] = out.get(key, 0) + w
    return out


def test_z_factors_maximally_mixed_identity():
    z = ft.z_factors(np.eye(2) / 2, identity_channel(2))
    assert_close(z.z_in, np.full((2, 2), 2.0), 1e-14)
    assert_close(z.z_out, np.full((2, 2), 0.5), 1e-14)


def test_z_factors_inverse_on_diagonal_for_identity(rng):
    z = ft.z_factors(random_density_matrix(3, rng), identity_channel(3))
    assert_close(np.diag(z.z_in) * np.diag(z.z_out), np.ones(3), 1e-12)


def test_rank_deficient_reference_rejected():
    with pytest.raises(RankDeficiencyError):
        ft.z_factors(np.diag([1.0, 0.0]), identity_channel(2))


def test_forward_table_matches_loop_oracle(rng):
    rho = random_density_matrix(2, rng)
    gamma = random_density_matrix(2, rng)
    ch = random_channel(2, rng)
    table = ft.tpm_forward(rho, ch, gamma)
    recs = oracles.tpm_records(rho, list(ch.ops), gamma)
    assert len(recs) == table.quasiprob.size
    assert abs(sum(w for w, _ in recs) - table.total) < 1e-12
    mean_oracle = sum((w * s).real for w, s in recs)
    assert abs(mean_oracle - table.mean()) < 1e-10
    exp_oracle = sum((w * np.exp(-s)).real for w, s in recs)
    assert abs(exp_oracle - table.exp_average()) < 1e-10


def test_identity_with_rho_equal_gamma_single_bin(rng):
    gamma = random_density_matrix(2, rng)
    a = ft.channel_ft(gamma, identity_channel(2), gamma)
    significant = [(s, w) for s, w in a.fwd_dist.bins if abs(w) > 1e-12]
    assert len(significant) == 1
    s, w = significant[0]
    assert abs(s) < 1e-9 and abs(w - 1) < 1e-12
    assert a.report.detailed_ft_max_violation < 1e-12


def test_record_iteration_and_marginals(rng):
    rho = random_density_matrix(2, rng)
    table = ft.tpm_forward(rho, random_channel(2, rng), random_density_matrix(2, rng))
    recs = list(table.records())
    assert len(recs) == table.quasiprob.size
    assert_close(table.marginal("u"), table.extra["p_in"], 1e-12)
    assert_close(table.marginal("v"), table.extra["p_out"], 1e-12)
    assert abs(sum(r.quasiprob for r in recs) - 1) < 1e-12


@settings(max_examples=40, deadline=None)
@given(seeds, dims)
def test_fluctuation_theorems_random(seed, d):
    rng = make_rng(seed)
    rho = random_density_matrix(d, rng)
    gamma = random_density_matrix(d, rng)
    ch = random_channel(d, rng)
    a = ft.channel_ft(rho, ch, gamma)
    r = a.report
    assert abs(r.integral_ft - 1) < 1e-10
    assert r.detailed_ft_max_violation < 1e-10
    assert r.second_law_gap < 1e-10
    assert r.mean_sigma >= -1e-10
    assert abs(a.backward.total - 1) < 1e-10


@settings(max_examples=25, deadline=None)
@given(seeds, dims)
def test_backward_is_conjugate_times_exp(seed, d):
    rng = make_rng(seed)
    rho = random_density_matrix(d, rng)
    gamma = random_density_matrix(d, rng)
    ch = random_channel(d, rng)
    a = ft.channel_ft(rho, ch, gamma)
    fwd = a.forward.quasiprob
    bwd = a.backward.quasiprob
    assert_close(bwd, fwd.conj() * np.exp(-a.forward.sigma), 1e-12)


def test_pure_initial_state_puts_weight_at_minus_infinity(rng):
    rho = random_pure_state(2, rng)
    a = ft.channel_ft(rho, random_channel(2, rng), random_density_matrix(2, rng))
    assert a.report.second_law_gap < 1e-10
    assert a.report.detailed_ft_max_violation < 1e-10
    # the missing mass of the integral sits on the omitted initial states
    assert a.report.integral_ft < 1
    assert abs(a.report.integral_ft + a.bwd_dist.infinite_weight.real - 1) < 1e-10


def test_group_values_conserves_weight():
    vals = np.array([0.0, 1e-12, 1.0, 1.0 + 5e-10, 2.0])
    w = np.array([0.1, 0.2, 0.3, 0.1, 0.3], dtype=complex)
    c, s = ft.group_values(vals, w, 1e-9)
    assert len(c) == 3
    assert_close(s.real, [0.3, 0.4, 0.3], 1e-15)


def test_ensemble_recovers_state(rng):
    rho = random_density_matrix(3, rng)
    e = ft.Ensemble.of(rho)
    assert_close((e.vectors * e.probs) @ e.vectors.conj().T, rho, 1e-13)


# --- bridge -----------------------------------------------------------------


def test_bridge_equals_mean_entropy_production(rng):
    u = haar_unitary(4, rng)
    rho_e = random_density_matrix(2, rng)
    rho = random_density_matrix(2, rng)
    gamma = random_density_matrix(2, rng)
    out = ft.bridge_entropy_production(u, rho, rho_e, gamma)
    ch = dilation_channel(u, rho_e, 2, 2)
    assert abs(out["relative_entropy"] - ft.second_law_value(rho, ch, gamma)) < 1e-8
    assert 0 < out["bridge"].trace <= 1 + 1e-12


def test_renyi_bracket_converges(rng):
    u = haar_unitary(6, rng)
    out = ft.bridge_entropy_production(u, random_density_matrix(2, rng), random_density_matrix(3, rng), random_density_matrix(2, rng))
    args = (out["rho_prime_s"], out["gamma_prime_se"], out["gamma_prime_s"])
    target = out["bridge"].operator
    gaps = [trace_distance(ft.renyi_bridge(1 + e, *args), target) for e in (1e-2, 1e-3)]
    assert gaps[1] < gaps[0]
    mid = 0.5 * (ft.renyi_bridge(1 - 1e-3, *args) + ft.renyi_bridge(1 + 1e-3, *args))
    assert trace_distance(mid, target) < 1e-5


# --- thermodynamic reading --------------------------------------------------


def test_thermo_trivial_identity():
    beta = 2.0
    h = np.diag([0.0, 1.0])
    gamma = matrix_exp_herm(-beta * h)
    gamma /= np.trace(gamma).real
    f = -np.log(np.trace(matrix_exp_herm(-beta * h)).real) / beta
    d = ft.thermo_decomposition(gamma, gamma, [(h, h, beta)], (f, f), beta, gamma, gamma)
    assert abs(d.work) < 1e-14 and abs(d.delta_s) < 1e-14 and abs(d.slack) < 1e-14


def test_thermo_slack_equals_mean_sigma(rng):
    beta = 1.3
    ch = amplitude_damping_channel(0.4)
    gamma = random_density_matrix(2, rng)
    rho = random_density_matrix(2, rng)
    g_out = apply(ch, gamma)
    o0, f0 = ft.gibbs_form(gamma, beta)
    ot, f1 = ft.gibbs_form(g_out, beta)
    d = ft.thermo_decomposition(rho, apply(ch, rho), [(o0, ot, beta)], (f0, f1), beta, gamma, g_out)
    sigma = ft.second_law_value(rho, ch, gamma)
    assert abs(d.slack - sigma) < 1e-8
    assert abs(d.slack_energy * beta - d.slack) < 1e-14
    assert d.slack >= -1e-10


def test_thermo_rejects_inconsistent_reference(rng):
    gamma = random_density_matrix(2, rng)
    o, f = ft.gibbs_form(gamma, 1.0)
    with pytest.raises(ValueError):
        ft.thermo_decomposition(gamma, gamma, [(o, o, 1.0)], (f + 0.1, f), 1.0, gamma, gamma)


# --- Holevo -----------------------------------------------------------------


def test_holevo_identity_channel_preserves_chi(rng):
    ens = [(0.5, random_density_matrix(2, rng)), (0.5, random_density_matrix(2, rng))]
    h = ft.holevo_decomposition(ens, identity_channel(2), random_density_matrix(2, rng))
    assert abs(h.delta_chi) < 1e-12
    assert h.residual < 1e-10


@settings(max_examples=30, deadline=None)
@given(seeds, dims, st.integers(2, 4))
def test_holevo_decomposition_random(seed, d, n):
    rng = make_rng(seed)
    w = rng.dirichlet(np.ones(n))
    ens = [(float(p), random_density_matrix(d, rng)) for p in w]
    h = ft.holevo_decomposition(ens, random_channel(d, rng), random_density_matrix(d, rng))
    assert h.residual < 1e-10
    assert h.delta_chi <= 1e-10
    assert abs(h.delta_chi - (h.chi_out - h.chi_in)) < 1e-14


def test_unitary_channel_has_zero_mean_sigma(rng):
    u = haar_unitary(3, rng)
    a = ft.channel_ft(random_density_matrix(3, rng), unitary_channel(u), random_density_matrix(3, rng))
    assert abs(a.report.mean_sigma) < 1e-10


def test_degenerate_reference_keeps_basis_free_averages(rng):
    v = haar_unitary(3, rng)
    gamma = v @ np.diag([0.4, 0.4, 0.2]) @ v.conj().T
    rho = random_density_matrix(3, rng)
    ch = random_channel(3, rng)
    a = ft.channel_ft(rho, ch, gamma)
    assert abs(a.report.integral_ft - 1) < 1e-10
    assert a.report.second_law_gap < 1e-10
