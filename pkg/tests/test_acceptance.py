"""The twelve acceptance criteria at their stated tolerances.

Each test prints one PASS/FAIL line; the lines are repeated in the terminal
summary.
"""
import time
from pathlib import Path

import numpy as np
import pytest

from multitime_ft import fluctuation as ft
from multitime_ft import multitime as mt
from multitime_ft.channels import apply, compose, dilation_channel, is_cptp, kraus_to_super, petz_recovery, unitary_channel
from multitime_ft.cli import main as cli_main
from multitime_ft.linalg import matrix_exp_herm, trace_distance
from multitime_ft.scenarios import (
    collision_scenario,
    haar_scenario,
    haar_unitary,
    identity_scenario,
    make_rng,
    random_channel,
    random_density_matrix,
    swap_scenario,
)

ROOT = Path(__file__).resolve().parents[1]
N_TRIPLES = 240


@pytest.fixture(scope="module")
def random_triples():
    rng = make_rng(1001)
    t0 = time.perf_counter()
    reports = []
    for k in range(N_TRIPLES):
        d = 2 + k % 3
        rho = random_density_matrix(d, rng)
        gamma = random_density_matrix(d, rng)
        ch = random_channel(d, rng, env_dim=2 + (k // 3) % 3)
        reports.append(ft.channel_ft(rho, ch, gamma).report)
    return reports, time.perf_counter() - t0


def test_criterion_01_integral_ft(random_triples, criterion):
    reports, seconds = random_triples
    worst = max(abs(r.integral_ft - 1) for r in reports)
    ok = worst <= 1e-10 and seconds <= 10 and len(reports) >= 200
    criterion(1, ok, f"integral FT max |<e^-s> - 1| = {worst:.2e} over {len(reports)} triples in {seconds:.2f}s")
    assert ok


def test_criterion_02_detailed_ft(random_triples, criterion):
    reports, _ = random_triples
    worst = max(r.detailed_ft_max_violation for r in reports)
    missing = sum(r.missing_partners for r in reports)
    ok = worst <= 1e-10
    criterion(2, ok, f"detailed FT max bin violation = {worst:.2e} (unpaired bins {missing})")
    assert ok


def test_criterion_03_second_law(random_triples, criterion):
    reports, _ = random_triples
    gap = max(r.second_law_gap for r in reports)
    low = min(r.mean_sigma for r in reports)
    ok = gap <= 1e-10 and low >= -1e-10
    criterion(3, ok, f"second law max gap = {gap:.2e}, min <sigma> = {low:.2e}")
    assert ok


def test_criterion_04_petz(criterion):
    rng = make_rng(2002)
    cp = tp = rec = 0.0
    for k in range(100):
        d = 2 + k % 3
        ch = random_channel(d, rng)
        gamma = random_density_matrix(d, rng)
        petz = petz_recovery(ch, gamma)
        rep = is_cptp(petz)
        cp = max(cp, -rep.cp_margin)
        tp = max(tp, rep.tp_margin)
        rec = max(rec, float(np.max(np.abs(apply(petz, apply(ch, gamma)) - gamma))))
    uni = 0.0
    for d in (2, 3, 4):
        u = haar_unitary(d, rng)
        petz = petz_recovery(unitary_channel(u), random_density_matrix(d, rng))
        uni = max(uni, float(np.max(np.abs(kraus_to_super(petz) - kraus_to_super(unitary_channel(u.conj().T))))))
    ok = cp <= 1e-10 and tp <= 1e-10 and rec <= 1e-10 and uni <= 1e-10
    criterion(4, ok, f"Petz CP {cp:.1e}, TP {tp:.1e}, recovery {rec:.1e}, unitary inverse {uni:.1e}")
    assert ok


def test_criterion_05_bridge(criterion):
    rng = make_rng(3003)
    eq = renyi = 0.0
    traces = []
    for k in range(50):
        d_e = 2 + k % 2
        u = haar_unitary(2 * d_e, rng)
        rho_e = random_density_matrix(d_e, rng)
        rho = random_density_matrix(2, rng)
        gamma = random_density_matrix(2, rng)
        out = ft.bridge_entropy_production(u, rho, rho_e, gamma)
        sigma = ft.second_law_value(rho, dilation_channel(u, rho_e, 2, d_e), gamma)
        eq = max(eq, abs(out["relative_entropy"] - sigma))
        args = (out["rho_prime_s"], out["gamma_prime_se"], out["gamma_prime_s"])
        for alpha in (1 - 1e-3, 1 + 1e-3):
            renyi = max(renyi, trace_distance(ft.renyi_bridge(alpha, *args), out["bridge"].operator))
        traces.append(out["bridge"].trace)
    ok = eq <= 1e-8 and renyi <= 1e-3
    criterion(
        5, ok, f"bridge |S - <sigma>| = {eq:.1e}, Renyi trace distance {renyi:.1e}, bridge trace in [{min(traces):.3f}, {max(traces):.3f}]"
    )
    assert ok


def test_criterion_06_three_point(criterion):
    rng = make_rng(4004)
    marg = four = red = s2 = 0.0
    t0 = time.perf_counter()
    for _ in range(20):
        n1, n2 = random_channel(2, rng), random_channel(2, rng)
        rho, g, gp = (random_density_matrix(2, rng) for _ in range(3))
        r = mt.three_point_ft_markov(n1, n2, rho, g, gp)
        assert len(r.marginal_residuals) == 8
        marg = max(marg, max(r.marginal_residuals.values()))
        four = max(four, r.report.second_law_gap)
        s2 = max(s2, r.sigma2_report.detailed_ft_max_violation)
        rr = mt.three_point_ft_markov(n1, n2, rho, g, apply(n1, g))
        red = max(red, abs(rr.report.mean_sigma - ft.second_law_value(rho, compose(n2, n1), g)))
    seconds = time.perf_counter() - t0
    ok = marg <= 1e-10 and four <= 1e-9 and red <= 1e-9 and s2 <= 1e-9 and seconds <= 60
    criterion(
        6, ok, f"8 marginals {marg:.1e}, four-term {four:.1e}, reduction {red:.1e}, sigma2 detailed {s2:.1e}, {seconds:.2f}s"
    )
    assert ok


def test_criterion_07_probe(criterion):
    rng = make_rng(5005)
    states = [random_density_matrix(2, rng) for _ in range(3)]
    swap = mt.marginality_failure_probe(swap_scenario(2, env="mixed", rng=make_rng(3)), *states)
    markov = max(
        mt.marginality_failure_probe(collision_scenario(2), *states).violation,
        mt.marginality_failure_probe(identity_scenario(2), *states).violation,
    )
    ok = swap.violation > 1e-3 and markov <= 1e-9
    criterion(
        7,
        ok,
        f"SWAP deviation {swap.violation:.4f} (mu {swap.mu_deviation:.4f}, u {swap.u_deviation:.4f}); Markov {markov:.1e}",
    )
    assert ok


def test_criterion_08_ancilla(criterion):
    rng = make_rng(6006)
    fixtures = {
        "collision": collision_scenario(2),
        "identity": identity_scenario(2),
        "swap": swap_scenario(2, env="pure"),
    }
    marg = formula = 0.0
    nm = {}
    for name, sc in fixtures.items():
        rho, gamma = random_density_matrix(2, rng), random_density_matrix(2, rng)
        a, rep = mt.ancilla_ft(sc, rho, gamma)
        marg = max(marg, max(mt.ancilla_marginal_residuals(a, rho, mt.ancilla_measurement_channel(sc)).values()))
        formula = max(formula, a.report.second_law_gap)
        nm[name] = rep.sigma_nm
    ok = (
        marg <= 1e-10
        and formula <= 1e-9
        and min(nm.values()) >= -1e-10
        and abs(nm["collision"]) <= 1e-9
        and abs(nm["identity"]) <= 1e-9
        and nm["swap"] > 0
    )
    criterion(
        8,
        ok,
        f"marginals {marg:.1e}, <sigma> formula {formula:.1e}, sigma_NM Markov "
        f"{max(abs(nm['collision']), abs(nm['identity'])):.1e}, SWAP {nm['swap']:.4f}",
    )
    assert ok


def test_criterion_09_dnm(criterion):
    markov = max(
        abs(mt.d_nm(mt.build_process_tensor(collision_scenario(2)))),
        abs(mt.d_nm(mt.build_process_tensor(collision_scenario(2, 3)))),
        abs(mt.d_nm(mt.build_process_tensor(identity_scenario(2)))),
    )
    swap = mt.d_nm(mt.build_process_tensor(swap_scenario(2, env="pure")))
    ok = markov <= 1e-10 and swap > 0.01
    criterion(9, ok, f"d_nm Markov {markov:.1e}, SWAP pure {swap:.4f}")
    assert ok


def test_criterion_10_holevo(criterion):
    rng = make_rng(7007)
    worst = 0.0
    for k in range(60):
        d = 2 + k % 3
        w = rng.dirichlet(np.ones(2 + k % 3))
        ens = [(float(p), random_density_matrix(d, rng)) for p in w]
        h = ft.holevo_decomposition(ens, random_channel(d, rng), random_density_matrix(d, rng))
        worst = max(worst, h.residual)
    ok = worst <= 1e-10
    criterion(10, ok, f"Holevo decomposition max residual {worst:.1e} over 60 ensembles")
    assert ok


def test_criterion_11_thermo(criterion):
    rng = make_rng(8008)
    low = np.inf
    consistency = 0.0
    for k in range(40):
        d = 2 + k % 2
        beta = float(rng.uniform(0.2, 3.0))
        h = np.diag(np.sort(rng.uniform(0, 2, d))).astype(complex)
        gamma = matrix_exp_herm(-beta * h)
        f0 = -np.log(np.trace(gamma).real) / beta
        gamma /= np.trace(gamma).real
        ch = random_channel(d, rng)
        g_out = apply(ch, gamma)
        h_out, f1 = ft.gibbs_form(g_out, beta)
        rho = random_density_matrix(d, rng)
        dec = ft.thermo_decomposition(rho, apply(ch, rho), [(h, h_out, beta)], (f0, f1), beta, gamma, g_out)
        low = min(low, dec.slack)
        consistency = max(consistency, abs(dec.slack_energy - ft.second_law_value(rho, ch, gamma) / beta))
    ok = low >= -1e-10 and consistency <= 1e-8
    criterion(11, ok, f"min slack {low:.2e}, |slack/beta - <sigma>/beta| {consistency:.1e}")
    assert ok


def test_criterion_12_harness(tmp_path, criterion):
    cfg = ROOT / "configs" / "default.json"
    t0 = time.perf_counter()
    codes = [cli_main(["run", str(cfg), "--out", str(tmp_path / o), "--quiet"]) for o in ("a", "b")]
    seconds = (time.perf_counter() - t0) / 2
    files = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    same = bool(files) and all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    ok = same and codes == [0, 0] and seconds <= 300
    criterion(12, ok, f"{len(files)} CSV files byte-identical: {same}; exit codes {codes}; default suite {seconds:.2f}s")
    assert ok
