"""Config-driven runner for the FT suites with JSON and CSV reporting."""
from __future__ import annotations

import json
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import fluctuation as ft
from . import multitime as mt
from .channels import apply, is_cptp, kraus_to_choi, petz_recovery
from .linalg import (
    SupportError,
    RankDeficiencyError,
    is_hermitian,
    partial_trace,
    relative_entropy,
    trace_distance,
)
from .scenarios import GENERATORS, generate_scenario, random_density_matrix, random_pure_state

SUITES = ("tpm", "manybody", "threepoint", "ancilla", "bridge", "holevo", "nonmarkov-probe", "dnm")
THREADS_ENV = "MULTITIME_FT_THREADS"
FLOAT_FMT = "{:.15e}"

DEFAULT_TOLERANCES = {"rank_tol": 1e-10, "grouping_tol": 1e-9, "assert_tol": None}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


# ---------------------------------------------------------------------------
# config


@dataclass
class RunSpec:
    name: str
    scenario: dict
    suites: list
    seed: int | None = None
    states: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    runs: list
    tolerances: dict
    output_dir: str = "out"
    source: str = ""

    def echo(self) -> dict:
        return {
            "runs": [
                {"name": r.name, "scenario": _jsonable(r.scenario), "suites": list(r.suites), "seed": r.seed}
                for r in self.runs
            ],
            "tolerances": dict(self.tolerances),
            "output_dir": self.output_dir,
        }


def parse_matrix(value, field_name: str) -> np.ndarray:
    """Decode nested ``[re, im]`` pairs (row-major) into a complex matrix."""
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{field_name}: not a numeric nested array ({exc})") from None
    if arr.ndim != 3 or arr.shape[-1] != 2 or arr.shape[0] != arr.shape[1]:
        raise ConfigError(f"{field_name}: expected a square matrix of [re, im] pairs, got shape {arr.shape}")
    return arr[..., 0] + 1j * arr[..., 1]


def encode_matrix(m: np.ndarray) -> list:
    m = np.asarray(m, dtype=complex)
    return [[[float(x.real), float(x.imag)] for x in row] for row in m]


def _check_state(m: np.ndarray, field_name: str) -> np.ndarray:
    if not is_hermitian(m, 1e-10):
        raise ConfigError(f"{field_name}: matrix is not Hermitian")
    tr = np.trace(m).real
    if abs(tr - 1) > 1e-10:
        raise ConfigError(f"{field_name}: trace {tr!r} differs from 1")
    lam = np.linalg.eigvalsh(m)[0]
    if lam < -1e-10:
        raise ConfigError(f"{field_name}: negative eigenvalue {lam:.3e}")
    return m


def _explicit_scenario(spec: dict, where: str) -> mt.MultitimeScenario:
    for key in ("unitaries", "env_initial", "d_s", "d_e"):
        if key not in spec:
            raise ConfigError(f"{where}.{key}: missing")
    us = []
    for k, raw in enumerate(spec["unitaries"]):
        u = parse_matrix(raw, f"{where}.unitaries[{k}]")
        n = u.shape[0]
        margin = float(np.linalg.norm(u.conj().T @ u - np.eye(n), 2))
        if margin > 1e-10:
            raise ConfigError(f"{where}.unitaries[{k}]: not unitary (margin {margin:.3e})")
        us.append(u)
    env = _check_state(parse_matrix(spec["env_initial"], f"{where}.env_initial"), f"{where}.env_initial")
    try:
        return mt.MultitimeScenario(tuple(us), env, int(spec["d_s"]), int(spec["d_e"]), name="explicit")
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _validate_run(raw: dict, idx: int) -> RunSpec:
    where = f"runs[{idx}]"
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    scen = raw.get("scenario")
    if not isinstance(scen, dict):
        raise ConfigError(f"{where}.scenario: missing or not an object")
    suites = raw.get("suites", raw.get("suite"))
    if isinstance(suites, str):
        suites = [suites]
    if not suites:
        raise ConfigError(f"{where}.suite: missing")
    for s in suites:
        if s not in SUITES:
            raise ConfigError(f"{where}.suite: unknown suite {s!r}; expected one of {SUITES}")
    if "unitaries" not in scen:
        gen = scen.get("generator")
        if gen not in GENERATORS:
            raise ConfigError(f"{where}.scenario.generator: unknown generator {gen!r}")
        if gen == "haar" and scen.get("seed", raw.get("seed")) is None:
            raise ConfigError(f"{where}.scenario.seed: required for generator 'haar'")
    else:
        _explicit_scenario(scen, f"{where}.scenario")
    states = raw.get("states", {})
    for key, val in states.items():
        _check_state(parse_matrix(val, f"{where}.states.{key}"), f"{where}.states.{key}")
    seed = raw.get("seed", scen.get("seed"))
    return RunSpec(raw.get("name", f"run{idx}"), scen, list(suites), seed, states)


def validate_config(data: dict, source: str = "") -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("top level: expected a JSON object")
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(data.get("tolerances", {}))
    for key in ("rank_tol", "grouping_tol"):
        if not (isinstance(tol[key], (int, float)) and tol[key] > 0):
            raise ConfigError(f"tolerances.{key}: must be a positive number")
    if tol["assert_tol"] is not None and not (isinstance(tol["assert_tol"], (int, float)) and tol["assert_tol"] >= 0):
        raise ConfigError("tolerances.assert_tol: must be a non-negative number")
    if "runs" in data:
        raw_runs = data["runs"]
        if not isinstance(raw_runs, list) or not raw_runs:
            raise ConfigError("runs: expected a non-empty list")
    else:
        raw_runs = [{k: v for k, v in data.items() if k not in ("tolerances", "output")}]
    runs = [_validate_run(r, k) for k, r in enumerate(raw_runs)]
    names = [r.name for r in runs]
    if len(set(names)) != len(names):
        raise ConfigError("runs: names must be unique")
    out = data.get("output", {}).get("dir", "out") if isinstance(data.get("output"), dict) else "out"
    return ExperimentConfig(runs, tol, out, source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        line = text.splitlines()[exc.lineno - 1] if exc.lineno - 1 < len(text.splitlines()) else ""
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}\n    {line}") from None
    return validate_config(data, str(path))


# ---------------------------------------------------------------------------
# reporting helpers


@dataclass
class Assertion:
    name: str
    ok: bool
    margin: float
    tol: float
    kind: str = "le"

    def as_dict(self) -> dict:
        return {"name": self.name, "ok": bool(self.ok), "margin": self.margin, "tol": self.tol, "kind": self.kind}


class SuiteResult:
    def __init__(self, name: str, assert_tol: float | None):
        self.name = name
        self.assert_tol = assert_tol
        self.assertions: list[Assertion] = []
        self.metrics: dict = {}
        self.table: list | None = None
        self.error: str | None = None
        self.seconds = 0.0

    def le(self, name: str, margin: float, tol: float):
        """Record ``margin <= tol`` (``tol`` replaced by ``assert_tol`` when set)."""
        t = tol if self.assert_tol is None else self.assert_tol
        margin = float(margin)
        self.assertions.append(Assertion(name, bool(np.isfinite(margin) and margin <= t), margin, t))

    def gt(self, name: str, value: float, threshold: float):
        """Record ``value > threshold``; unaffected by ``assert_tol``."""
        value = float(value)
        self.assertions.append(Assertion(name, bool(value > threshold), value, threshold, "gt"))

    @property
    def ok(self) -> bool:
        return self.error is None and all(a.ok for a in self.assertions)

    def as_dict(self) -> dict:
        out = {
            "ok": self.ok,
            "assertions": [a.as_dict() for a in self.assertions],
            "metrics": _jsonable(self.metrics),
            "seconds": self.seconds,
        }
        if self.error:
            out["error"] = self.error
        return out


def _jsonable(x: Any):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        if np.iscomplexobj(x):
            return [_jsonable(complex(v)) for v in x.ravel()]
        return [_jsonable(float(v)) for v in x.ravel()]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, complex):
        return [_jsonable(x.real), _jsonable(x.imag)]
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return v if np.isfinite(v) else str(v)
    return x


def distribution_rows(
    fwd: ft.SigmaDistribution,
    bwd: ft.SigmaDistribution,
    weight_floor: float = 1e-14,
    zero_tol: float = 1e-9,
) -> list:
    """Rows ``(sigma, P_->(sigma), P_<-(-sigma), |P_-> - e^sigma P_<-|)``.

    Rows whose two weights are both below ``weight_floor`` in magnitude are
    rounding residue and are dropped; ``|sigma| < zero_tol`` prints as 0.
    """
    sigmas = list(fwd.sigmas)
    for s in bwd.sigmas:
        _, found = fwd.lookup(-s)
        if not found:
            sigmas.append(-s)
    rows = []
    for s in sorted(sigmas):
        wf, _ = fwd.lookup(s)
        wb, _ = bwd.lookup(-s)
        if abs(wf) < weight_floor and abs(wb) < weight_floor:
            continue
        rows.append((0.0 if abs(s) < zero_tol else float(s), wf, wb, abs(wf - np.exp(s) * wb)))
    return rows


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(rows: list) -> str:
    lines = ["sigma,weight_forward,weight_backward,detailed_ft_residual"]
    for row in rows:
        lines.append(",".join(FLOAT_FMT.format(0.0 if v == 0 else v) for v in row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# suites


@dataclass
class RunContext:
    spec: RunSpec
    scenario: mt.MultitimeScenario
    tol: dict
    rng_seed: int

    def rng(self, stream: int) -> np.random.Generator:
        seq = np.random.SeedSequence([self.rng_seed, stream])
        return np.random.Generator(np.random.Philox(seq))

    def state(self, key: str, dim: int, stream: int, pure: bool = False) -> np.ndarray:
        if key in self.spec.states:
            m = parse_matrix(self.spec.states[key], f"states.{key}")
            if m.shape != (dim, dim):
                raise ConfigError(f"states.{key}: expected dimension {dim}")
            return m
        rng = self.rng(stream)
        return random_pure_state(dim, rng) if pure else random_density_matrix(dim, rng)

    @property
    def is_markov(self) -> bool:
        return mt.factorization_residual(self.scenario) <= 1e-10


def _ft_assertions(res: SuiteResult, analysis: ft.FTAnalysis, tol_eq: float = 1e-10, zero_tol: float = 1e-9):
    rep = analysis.report
    res.le("integral_ft", abs(rep.integral_ft - 1.0), tol_eq)
    res.le("detailed_ft", rep.detailed_ft_max_violation, tol_eq)
    res.le("second_law_formula", rep.second_law_gap, tol_eq)
    res.le("second_law_sign", max(0.0, -rep.mean_sigma), 1e-10)
    res.le("normalisation", abs(analysis.forward.total - 1.0), 1e-10)
    res.le("backward_normalisation", abs(analysis.backward.total - 1.0), 1e-10)
    res.metrics.update(rep.as_dict())
    res.table = distribution_rows(analysis.fwd_dist, analysis.bwd_dist, zero_tol=zero_tol)


def suite_tpm(ctx: RunContext, res: SuiteResult):
    sc = ctx.scenario
    ch = mt.step_channel(sc, 0)
    rho = ctx.state("rho", sc.d_s, 1)
    gamma = ctx.state("gamma", sc.d_s, 2)
    a = ft.channel_ft(rho, ch, gamma, ctx.tol["rank_tol"], ctx.tol["grouping_tol"])
    _ft_assertions(res, a, 1e-10, ctx.tol["grouping_tol"])
    petz = a.petz
    res.le("petz_cptp", max(is_cptp(petz).tp_margin, -is_cptp(petz).cp_margin, 0.0), 1e-10)
    res.le("petz_recovers_reference", float(np.max(np.abs(apply(petz, apply(ch, gamma)) - gamma))), 1e-10)


def suite_manybody(ctx: RunContext, res: SuiteResult):
    sc = ctx.scenario
    rhos = [ctx.state(f"rho{i + 1}", sc.d_s, 10 + i) for i in range(sc.n_steps)]
    gammas = [ctx.state(f"gamma{i + 1}", sc.d_s, 20 + i) for i in range(sc.n_steps)]
    a = mt.manybody_ft(sc, rhos, gammas, ctx.tol["rank_tol"], ctx.tol["grouping_tol"])
    _ft_assertions(res, a, 1e-9, ctx.tol["grouping_tol"])
    tensor_ = mt.build_process_tensor(sc)
    res.le("choi_consistency", float(np.max(np.abs(tensor_.choi - mt.manybody_choi(sc)))), 1e-10)
    res.le("time_ordering", mt.check_time_ordering(tensor_, rhos), 1e-10)
    linked = kraus_to_choi(mt.linked_channel(sc))
    res.le("link_identity", float(np.max(np.abs(mt.link_identity(tensor_) - linked))), 1e-10)
    if ctx.is_markov:
        per_step = sum(
            ft.second_law_value(r, mt.step_channel(sc, i), g, ctx.tol["rank_tol"])
            for i, (r, g) in enumerate(zip(rhos, gammas))
        )
        res.le("markov_additivity", abs(a.report.mean_sigma - per_step), 1e-9)


def suite_threepoint(ctx: RunContext, res: SuiteResult):
    sc = ctx.scenario
    if sc.n_steps != 2:
        raise ConfigError("threepoint suite needs a two-step scenario")
    n1, n2 = mt.default_markov_pair(sc)
    rho = ctx.state("rho", sc.d_s, 1)
    gamma = ctx.state("gamma", sc.d_s, 2)
    gamma_p = ctx.state("gamma_prime", sc.d_s, 3)
    r = mt.three_point_ft_markov(n1, n2, rho, gamma, gamma_p, None, ctx.tol["rank_tol"], ctx.tol["grouping_tol"])
    for key, val in r.marginal_residuals.items():
        res.le(f"marginal_{key}", val, 1e-10)
    for key, val in r.backward_marginal_residuals.items():
        res.le(f"backward_marginal_{key}", val, 1e-10)
    res.le("integral_ft", abs(r.report.integral_ft - 1), 1e-9)
    res.le("four_term_formula", r.report.second_law_gap, 1e-9)
    res.le("detailed_ft", r.report.detailed_ft_max_violation, 1e-9)
    res.le("sigma2_detailed_ft", r.sigma2_report.detailed_ft_max_violation, 1e-9)
    res.le("sigma2_mean", r.sigma2_report.second_law_gap, 1e-9)
    reduced = mt.three_point_ft_markov(n1, n2, rho, gamma, apply(n1, gamma), None, ctx.tol["rank_tol"])
    target = relative_entropy(rho, gamma) - relative_entropy(apply(n2, apply(n1, rho)), apply(n2, apply(n1, gamma)))
    res.le("reduction_to_two_point", abs(reduced.report.mean_sigma - target), 1e-9)
    res.metrics.update(r.report.as_dict())
    res.metrics["sigma2"] = r.sigma2_report.as_dict()
    res.table = distribution_rows(r.fwd_dist, r.bwd_dist, zero_tol=ctx.tol["grouping_tol"])


def suite_ancilla(ctx: RunContext, res: SuiteResult):
    sc = ctx.scenario
    rho = ctx.state("rho", sc.d_s, 1)
    gamma = ctx.state("gamma", sc.d_s, 2)
    a, rep = mt.ancilla_ft(sc, rho, gamma, None, None, ctx.tol["rank_tol"], ctx.tol["grouping_tol"])
    ch = mt.ancilla_measurement_channel(sc)
    for key, val in mt.ancilla_marginal_residuals(a, rho, ch).items():
        res.le(f"marginal_{key}", val, 1e-10)
    res.le("integral_ft", abs(a.report.integral_ft - 1), 1e-9)
    res.le("detailed_ft", a.report.detailed_ft_max_violation, 1e-9)
    res.le("second_law_formula", a.report.second_law_gap, 1e-9)
    res.le("decomposition", rep.decomposition_terms["dconm_residual"], 1e-9)
    res.le("channel_cptp", max(is_cptp(ch).tp_margin, -is_cptp(ch).cp_margin, 0.0), 1e-10)
    # sign claims are established only for the Markov and SWAP fixtures
    if ctx.is_markov:
        res.le("sigma_nm_zero_markov", abs(rep.sigma_nm), 1e-9)
    if sc.name == "swap":
        res.gt("sigma_nm_positive_swap", rep.sigma_nm, 0.0)
    if ctx.is_markov or sc.name == "swap":
        res.le("sigma_nm_nonnegative", max(0.0, -rep.sigma_nm), 1e-10)
    res.metrics.update(a.report.as_dict())
    res.metrics.update(rep.as_dict())
    res.table = distribution_rows(a.fwd_dist, a.bwd_dist, zero_tol=ctx.tol["grouping_tol"])


def suite_bridge(ctx: RunContext, res: SuiteResult):
    sc = ctx.scenario
    rho = ctx.state("rho", sc.d_s, 1)
    gamma = ctx.state("gamma", sc.d_s, 2)
    u = sc.unitaries[0]
    out = ft.bridge_entropy_production(u, rho, sc.env_initial, gamma, ctx.tol["rank_tol"])
    mean_sigma = ft.second_law_value(rho, mt.step_channel(sc, 0), gamma, ctx.tol["rank_tol"])
    res.le("bridge_equality", abs(out["relative_entropy"] - mean_sigma), 1e-8)
    args = (out["rho_prime_s"], out["gamma_prime_se"], out["gamma_prime_s"], ctx.tol["rank_tol"])
    lo = ft.renyi_bridge(1 - 1e-3, *args)
    hi = ft.renyi_bridge(1 + 1e-3, *args)
    target = out["bridge"].operator
    res.le("renyi_lower", trace_distance(lo, target), 1e-3)
    res.le("renyi_upper", trace_distance(hi, target), 1e-3)
    res.le("renyi_bracket_midpoint", trace_distance(0.5 * (lo + hi), target), 1e-4)
    res.metrics.update(
        {"bridge_trace": out["bridge"].trace, "relative_entropy": out["relative_entropy"], "mean_sigma": mean_sigma}
    )


def suite_holevo(ctx: RunContext, res: SuiteResult):
    sc = ctx.scenario
    ch = mt.step_channel(sc, 0)
    gamma = ctx.state("gamma", sc.d_s, 2)
    rng = ctx.rng(30)
    w = rng.dirichlet(np.ones(3))
    ens = [(float(p), random_density_matrix(sc.d_s, rng)) for p in w]
    h = ft.holevo_decomposition(ens, ch, gamma, ctx.tol["rank_tol"])
    res.le("holevo_identity", h.residual, 1e-10)
    res.le("delta_chi_nonpositive", max(0.0, h.delta_chi), 1e-10)
    res.metrics.update(
        {
            "mean_sigma_total": h.mean_sigma_total,
            "mean_sigma_components": list(h.mean_sigma_components),
            "weights": list(h.weights),
            "delta_chi": h.delta_chi,
            "chi_in": h.chi_in,
            "chi_out": h.chi_out,
        }
    )


def suite_probe(ctx: RunContext, res: SuiteResult):
    sc = ctx.scenario
    rho = ctx.state("rho", sc.d_s, 1)
    gamma = ctx.state("gamma", sc.d_s, 2)
    gamma_p = ctx.state("gamma_prime", sc.d_s, 3)
    p = mt.marginality_failure_probe(sc, rho, gamma, gamma_p, None, None, ctx.tol["rank_tol"])
    markov = ctx.is_markov
    if markov:
        res.le("markov_marginals_hold", p.violation, 1e-9)
    else:
        res.gt("nonmarkov_marginals_fail", p.violation, 1e-3)
    res.metrics.update(
        {
            "violation": p.violation,
            "mu_deviation": p.mu_deviation,
            "u_deviation": p.u_deviation,
            "deviation_from_p_mu": p.deviation_from_p_mu,
            "deviation_from_p_u": p.deviation_from_p_u,
            "factorization_residual": mt.factorization_residual(sc),
        }
    )


def suite_dnm(ctx: RunContext, res: SuiteResult):
    sc = ctx.scenario
    t = mt.build_process_tensor(sc)
    value = mt.d_nm(t, ctx.tol["rank_tol"])
    approx = mt.markov_approximation(t)
    worst = 0.0
    for i in range(t.n_steps):
        others = [k for k in range(2 * t.n_steps) if k not in (2 * i, 2 * i + 1)]
        worst = max(
            worst,
            float(np.max(np.abs(partial_trace(t.choi, t.leg_dims, others) - partial_trace(approx.choi, t.leg_dims, others)))),
        )
    res.le("approximation_marginals", worst, 1e-12)
    res.le("d_nm_nonnegative", max(0.0, -value), 1e-10)
    if ctx.is_markov:
        res.le("d_nm_zero_markov", abs(value), 1e-10)
    if sc.name == "swap" and np.linalg.matrix_rank(sc.env_initial, 1e-10) == 1:
        res.gt("d_nm_positive_swap", value, 0.01)
    res.metrics.update({"d_nm": value, "d_nm_is_upper_bound": True})
    if t.n_steps >= 3:
        # discard the last step; monotonicity is reported only
        coarse = mt.ProcessTensor(
            partial_trace(t.choi, t.leg_dims, [2 * t.n_steps - 2, 2 * t.n_steps - 1]), t.leg_dims[:-2], t.n_steps - 1
        )
        coarse_value = mt.d_nm(coarse, ctx.tol["rank_tol"])
        res.metrics["coarse_d_nm"] = coarse_value
        res.metrics["coarse_monotone"] = bool(coarse_value <= value + 1e-8)


SUITE_FUNCS: dict[str, Callable] = {
    "tpm": suite_tpm,
    "manybody": suite_manybody,
    "threepoint": suite_threepoint,
    "ancilla": suite_ancilla,
    "bridge": suite_bridge,
    "holevo": suite_holevo,
    "nonmarkov-probe": suite_probe,
    "dnm": suite_dnm,
}


# ---------------------------------------------------------------------------
# runner


@dataclass
class RunReport:
    config: dict
    results: dict
    ok: bool
    failures: list

    def as_dict(self) -> dict:
        return {
            "config": self.config,
            "ok": self.ok,
            "failures": self.failures,
            "runs": {name: {s: r.as_dict() for s, r in suites.items()} for name, suites in self.results.items()},
        }


def _build_scenario(spec: RunSpec, seed_override: int | None) -> tuple[mt.MultitimeScenario, int]:
    scen = dict(spec.scenario)
    seed = seed_override if seed_override is not None else spec.seed
    if "unitaries" in scen:
        return _explicit_scenario(scen, f"runs.{spec.name}.scenario"), int(seed or 0)
    try:
        return generate_scenario(scen, seed), int(seed if seed is not None else 0)
    except ValueError as exc:
        raise ConfigError(f"runs.{spec.name}.scenario: {exc}") from None


def _run_suite(ctx: RunContext, suite: str) -> SuiteResult:
    res = SuiteResult(suite, ctx.tol.get("assert_tol"))
    t0 = time.perf_counter()
    try:
        SUITE_FUNCS[suite](ctx, res)
    except ConfigError:
        raise
    except (RankDeficiencyError, SupportError, ValueError) as exc:
        res.error = f"{type(exc).__name__}: {exc}"
    res.seconds = time.perf_counter() - t0
    return res


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV}: expected a positive integer, got {raw!r}") from None


def run(
    config: ExperimentConfig,
    out_dir: str | os.PathLike | None = None,
    seed: int | None = None,
    suite: str | None = None,
    assert_tol: float | None = None,
) -> RunReport:
    """Execute the configured suites and write report JSON plus CSV tables."""
    tol = dict(config.tolerances)
    if assert_tol is not None:
        if assert_tol < 0:
            raise ConfigError("assert_tol: must be non-negative")
        tol["assert_tol"] = assert_tol
    if suite is not None and suite not in SUITES:
        raise ConfigError(f"suite: unknown suite {suite!r}")
    out = Path(out_dir if out_dir is not None else config.output_dir)
    results: dict = {}
    failures: list = []
    workers = thread_count()
    for spec in config.runs:
        scenario, rng_seed = _build_scenario(spec, seed)
        ctx = RunContext(spec, scenario, tol, rng_seed)
        suites = [suite] if suite is not None else spec.suites
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                done = list(pool.map(lambda s: _run_suite(ctx, s), suites))
        else:
            done = [_run_suite(ctx, s) for s in suites]
        results[spec.name] = {}
        for res in done:
            results[spec.name][res.name] = res
            for a in res.assertions:
                if not a.ok:
                    failures.append(f"{spec.name}/{res.name}/{a.name}")
            if res.error:
                failures.append(f"{spec.name}/{res.name}/error")
            if res.table is not None:
                write_atomic(out / f"{spec.name}_{res.name}.csv", csv_text(res.table))
    echo = config.echo()
    echo["tolerances"] = tol
    if seed is not None:
        echo["seed_override"] = seed
    if suite is not None:
        echo["suite_override"] = suite
    report = RunReport(echo, results, not failures, failures)
    write_atomic(out / "report.json", json.dumps(_jsonable(report.as_dict()), indent=2, sort_keys=True) + "\n")
    return report
