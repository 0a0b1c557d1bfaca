"""Single-step fluctuation theorems for a quantum channel.

The forward two-point measurement (TPM) quasiprobability is enumerated
exactly over every index tuple ``(u, v', i, j, k', l')``; the backward one is
built from the Petz recovery map and the reference-rescaled operators.
Tables are kept dense so that marginals are plain axis sums.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .channels import KrausChannel, RescalingMap, apply, petz_recovery, rescale
from .linalg import (
    DEFAULT_RANK_TOL,
    RankDeficiencyError,
    SupportError,
    dagger,
    eigh_sorted,
    matrix_exp_herm,
    matrix_log_support,
    partial_trace,
    psd_power,
    relative_entropy,
    trace_distance,
    validate_density_matrix,
    von_neumann_entropy,
    _threshold,
)

DEFAULT_GROUPING_TOL = 1e-9
IMAG_TOL = 1e-10


class TPMRecord(NamedTuple):
    u: int
    v: int
    i: int
    j: int
    k: int
    l: int
    quasiprob: complex
    sigma: float


class ThreePointRecord(NamedTuple):
    u: int
    mu: int
    w: int
    i: int
    j: int
    kp: int
    lp: int
    k: int
    l: int
    mp: int
    np: int
    quasiprob: complex
    sigma1: float
    sigma2: float


@dataclass(frozen=True)
class Ensemble:
    """Spectral ensemble ``rho = sum_u p_u |psi_u><psi_u|``."""

    probs: np.ndarray
    vectors: np.ndarray

    @classmethod
    def of(cls, rho: np.ndarray) -> "Ensemble":
        vals, vecs = eigh_sorted(rho)
        return cls(np.clip(vals, 0.0, None), vecs)

    def support(self, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
        return np.flatnonzero(self.probs > _threshold(self.probs, rank_tol))


@dataclass(frozen=True)
class ZFactors:
    """Norms of the reference-rescaled matrix units.

    ``z_in[i, j] = (g_i g_j)^(-1/2)`` over the eigenbasis of ``gamma`` and
    ``z_out[k, l] = (lam_k lam_l)^(1/2)`` over the eigenbasis of ``N(gamma)``
    (restricted to its support when the output reference is singular).
    """

    z_in: np.ndarray
    z_out: np.ndarray
    in_basis: np.ndarray
    out_basis: np.ndarray
    in_eigs: np.ndarray
    out_eigs: np.ndarray
    gamma: np.ndarray
    gamma_out: np.ndarray
    output_support: bool = False

    @property
    def log_z_in(self) -> np.ndarray:
        lg = np.log(self.in_eigs)
        return -0.5 * (lg[:, None] + lg[None, :])

    @property
    def log_z_out(self) -> np.ndarray:
        lg = np.log(self.out_eigs)
        return 0.5 * (lg[:, None] + lg[None, :])


def z_factors(
    gamma: np.ndarray,
    ch: KrausChannel,
    rank_tol: float = DEFAULT_RANK_TOL,
    output_support: bool = False,
) -> ZFactors:
    gamma = validate_density_matrix(gamma, tol=1e-10, name="gamma")
    g, w = eigh_sorted(gamma)
    if np.any(g <= _threshold(g, rank_tol)):
        raise RankDeficiencyError("reference state gamma must be full rank")
    gamma_out = apply(ch, gamma)
    lam, v = eigh_sorted(gamma_out)
    keep = lam > _threshold(lam, rank_tol)
    if not output_support and not np.all(keep):
        raise RankDeficiencyError("evolved reference N(gamma) must be full rank")
    lam, v = lam[keep], v[:, keep]
    z_in = 1.0 / np.sqrt(np.outer(g, g))
    z_out = np.sqrt(np.outer(lam, lam))
    return ZFactors(z_in, z_out, w, v, g, lam, gamma, gamma_out, output_support)


@dataclass(frozen=True)
class QuasiTable:
    """Dense quasiprobability table with per-entry entropy production.

    ``sigma`` may hold ``+inf``/``-inf`` where an eigenvalue of the initial
    or final state vanishes.  ``sigma_regular`` replaces those divergent
    logarithms by zero; the affected groups of entries carry zero total
    weight, so averages taken with it are the limits of the regular case.
    """

    axes: tuple
    quasiprob: np.ndarray
    sigma: np.ndarray
    sigma_regular: np.ndarray
    labels: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def total(self) -> complex:
        return complex(self.quasiprob.sum())

    def marginal(self, *keep: str) -> np.ndarray:
        drop = tuple(k for k, a in enumerate(self.axes) if a not in keep)
        m = self.quasiprob.sum(axis=drop)
        kept = [a for a in self.axes if a in keep]
        return np.transpose(m, [kept.index(a) for a in keep])

    def mean(self, key: str = "sigma") -> float:
        s = self.sigma_regular if key == "sigma" else self.extra[key + "_regular"]
        return float(np.sum(self.quasiprob * s).real)

    def exp_average(self, key: str = "sigma") -> float:
        s = self.sigma if key == "sigma" else self.extra[key]
        with np.errstate(over="ignore", invalid="ignore"):
            f = np.where(np.isposinf(s), 0.0, np.exp(-s))
        return float(np.sum(self.quasiprob * f).real)

    def records(self) -> Iterator[tuple]:
        """Iterate entries as named records, labelled by eigen-indices."""
        named = [self.labels.get(a, np.arange(n)) for a, n in zip(self.axes, self.quasiprob.shape)]
        three = len(self.axes) == 11
        for idx in np.ndindex(self.quasiprob.shape):
            lab = [int(named[k][i]) for k, i in enumerate(idx)]
            q = complex(self.quasiprob[idx])
            if three:
                yield ThreePointRecord(
                    *lab, q, float(self.extra["sigma1"][idx]), float(self.extra["sigma2"][idx])
                )
            else:
                yield TPMRecord(*lab, q, float(self.sigma[idx]))


def _state_unit_overlaps(vectors: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """``a[u, i, j] = (Pi_ij | Pi_psi_u) = <i|psi_u><psi_u|j>``."""
    c = dagger(basis) @ vectors
    return np.einsum("iu,ju->uij", c, c.conj())


def _safe_log(p: np.ndarray, rank_tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Return (log with -inf on null entries, log with 0 on null entries)."""
    thr = _threshold(p, rank_tol)
    null = p <= thr
    lg = np.log(np.where(null, 1.0, p))
    return np.where(null, -np.inf, lg), lg


def transition_tensor(ch: KrausChannel, in_basis: np.ndarray, out_basis: np.ndarray) -> np.ndarray:
    """``T[i, j, k, l] = (Pi_kl | N | Pi_ij)`` in the given bases."""
    b = np.einsum("ak,mab,bi->mki", out_basis.conj(), ch.ops, in_basis)
    return np.einsum("mki,mlj->ijkl", b, b.conj())


def tpm_forward(
    rho: np.ndarray,
    ch: KrausChannel,
    gamma: np.ndarray,
    rank_tol: float = DEFAULT_RANK_TOL,
    output_support: bool = False,
    z: ZFactors | None = None,
) -> QuasiTable:
    """Forward TPM quasiprobability and entropy production for one channel.

    Initial eigenstates with zero weight are omitted (their entries vanish).
    """
    rho = validate_density_matrix(rho, tol=1e-10)
    if z is None:
        z = z_factors(gamma, ch, rank_tol, output_support)
    init = Ensemble.of(rho)
    sup = init.support(rank_tol)
    p = init.probs[sup]
    final = Ensemble.of(apply(ch, rho))
    a = _state_unit_overlaps(init.vectors[:, sup], z.in_basis)
    b = _state_unit_overlaps(final.vectors, z.out_basis).transpose(0, 2, 1)
    t = transition_tensor(ch, z.in_basis, z.out_basis)
    quasi = np.einsum("u,uij,vkl,ijkl->uvijkl", p, a, b, t)
    log_out, log_out_reg = _safe_log(final.probs, rank_tol)
    sig, sig_reg = _sigma_tensor(np.log(p), log_out, log_out_reg, z)
    return QuasiTable(
        ("u", "v", "i", "j", "k", "l"),
        quasi,
        sig,
        sig_reg,
        labels={"u": sup},
        extra={"p_in": p, "p_out": final.probs, "init": init, "final": final},
    )


def _sigma_tensor(log_in, log_out, log_out_reg, z: ZFactors):
    lz_in = z.log_z_in
    lz_out = z.log_z_out
    dq = lz_in[:, :, None, None] + lz_out[None, None, :, :]
    base = log_in[:, None, None, None, None, None] + dq[None, None]
    sig = base - log_out[None, :, None, None, None, None]
    sig_reg = base - log_out_reg[None, :, None, None, None, None]
    return sig, sig_reg


def rescaled_units(z: ZFactors) -> tuple[np.ndarray, np.ndarray]:
    """Reference-rescaled operators ``Pi'_ij`` and ``Pi'_k'l'`` as arrays.

    ``Pi'_ij = J_gamma^{-1/2}(Pi_ij) / Z_ij`` and
    ``Pi'_kl = J_{N(gamma)}^{1/2}(Pi_kl) / Z'_kl``.
    """
    d_in = z.in_basis.shape[1]
    d_out = z.out_basis.shape[1]
    j_in = RescalingMap(z.gamma, -0.5)
    j_out = RescalingMap(z.gamma_out, 0.5, on_support=z.output_support)
    pin = np.empty((d_in, d_in) + z.gamma.shape, dtype=complex)
    pout = np.empty((d_out, d_out) + z.gamma_out.shape, dtype=complex)
    for i in range(d_in):
        for j in range(d_in):
            unit = np.outer(z.in_basis[:, i], z.in_basis[:, j].conj())
            pin[i, j] = rescale(j_in, unit) / z.z_in[i, j]
    for k in range(d_out):
        for l in range(d_out):
            unit = np.outer(z.out_basis[:, k], z.out_basis[:, l].conj())
            pout[k, l] = rescale(j_out, unit) / z.z_out[k, l]
    return pin, pout


def backward_transition_tensor(petz: KrausChannel, z: ZFactors) -> np.ndarray:
    """``Ttilde[i, j, k, l] = (Pi'_ij | R | Pi'_kl)``."""
    pin, pout = rescaled_units(z)
    recovered = np.einsum("mab,klbc,mdc->klad", petz.ops, pout, petz.ops.conj())
    return np.einsum("ijab,klab->ijkl", pin.conj(), recovered)


def backward_start_overlaps(vectors: np.ndarray, pin: np.ndarray) -> np.ndarray:
    """``(Pi_psi_u | Pi'_ij) = <psi_u|Pi'_ij|psi_u>``."""
    return np.einsum("au,ijab,bu->uij", vectors.conj(), pin, vectors)


def backward_end_overlaps(vectors: np.ndarray, pout: np.ndarray) -> np.ndarray:
    """``(Pi'_kl | Pi_phi_v) = <phi_v|Pi'_kl^dagger|phi_v>``."""
    return np.einsum("av,klba,bv->vkl", vectors.conj(), pout.conj(), vectors)


def tpm_backward(
    rho_prime: np.ndarray,
    petz: KrausChannel,
    z: ZFactors,
    rho: np.ndarray,
    rank_tol: float = DEFAULT_RANK_TOL,
    initial: Ensemble | None = None,
) -> QuasiTable:
    """Backward TPM quasiprobability under the recovery map.

    The backward process starts from ``rho_prime`` and ends by measuring the
    initial eigenstates of ``rho`` (all of them, including zero-weight ones,
    whose entries carry ``sigma = -inf``).  Entropy production is stored with
    the forward sign convention, so the backward distribution lives at
    ``-sigma``.
    """
    init = initial if initial is not None else Ensemble.of(rho)
    final = Ensemble.of(rho_prime)
    pin, pout = rescaled_units(z)
    t_back = backward_transition_tensor(petz, z)
    start = backward_start_overlaps(init.vectors, pin)
    end = backward_end_overlaps(final.vectors, pout)
    quasi = np.einsum("v,uij,ijkl,vkl->uvijkl", final.probs, start, t_back, end)
    log_in, _ = _safe_log(init.probs, rank_tol)
    log_in_reg = np.where(np.isfinite(log_in), log_in, 0.0)
    log_out, log_out_reg = _safe_log(final.probs, rank_tol)
    sig, _ = _sigma_tensor(log_in, log_out, log_out_reg, z)
    sig_reg, _ = _sigma_tensor(log_in_reg, log_out_reg, log_out_reg, z)
    return QuasiTable(
        ("u", "v", "i", "j", "k", "l"),
        quasi,
        sig,
        sig_reg,
        extra={"p_in": init.probs, "p_out": final.probs},
    )


@dataclass(frozen=True)
class SigmaDistribution:
    """Binned real distribution of entropy production."""

    sigmas: np.ndarray
    weights: np.ndarray
    grouping_tol: float
    infinite_weight: complex = 0j
    imag_residual_max: float = 0.0

    @property
    def bins(self) -> list[tuple[float, float]]:
        return list(zip(self.sigmas.tolist(), self.weights.tolist()))

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def lookup(self, sigma: float) -> tuple[float, bool]:
        """Weight of the bin at ``sigma`` (within the grouping tolerance)."""
        if self.sigmas.size == 0:
            return 0.0, False
        k = int(np.argmin(np.abs(self.sigmas - sigma)))
        if abs(self.sigmas[k] - sigma) <= max(self.grouping_tol, 1e-12) * 2:
            return float(self.weights[k]), True
        return 0.0, False


def group_values(
    values: np.ndarray, weights: np.ndarray, grouping_tol: float
) -> tuple[np.ndarray, np.ndarray]:
    """Merge values closer than ``grouping_tol`` (chained) and sum weights."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    w = weights[order]
    if v.size == 0:
        return v, w
    starts = np.concatenate([[0], np.flatnonzero(np.diff(v) > grouping_tol) + 1])
    sums = np.add.reduceat(w, starts)
    counts = np.diff(np.concatenate([starts, [v.size]]))
    centers = np.add.reduceat(v, starts) / counts
    return centers, sums


def sigma_distribution(
    table: QuasiTable,
    grouping_tol: float = DEFAULT_GROUPING_TOL,
    backward: bool = False,
    key: str = "sigma",
    imag_tol: float = IMAG_TOL,
) -> SigmaDistribution:
    """Group entries by entropy production and collapse to real weights.

    With ``backward=True`` the bins are placed at ``-sigma`` so that the
    distribution reads as ``P_<-``.  A bin whose summed quasiprobability has
    an imaginary part above ``imag_tol`` signals a computation error.
    """
    s = table.sigma if key == "sigma" else table.extra[key]
    s = s.ravel()
    q = table.quasiprob.ravel()
    finite = np.isfinite(s)
    vals = -s[finite] if backward else s[finite]
    centers, sums = group_values(vals, q[finite], grouping_tol)
    imag = float(np.max(np.abs(sums.imag))) if sums.size else 0.0
    if imag > imag_tol:
        raise ValueError(f"sigma bin has imaginary weight {imag:.3e}")
    return SigmaDistribution(
        centers, sums.real.copy(), grouping_tol, complex(q[~finite].sum()), imag
    )


@dataclass(frozen=True)
class FTReport:
    integral_ft: float
    mean_sigma: float
    relent_formula_value: float
    detailed_ft_max_violation: float
    imag_residual_max: float
    missing_partners: int = 0
    n_bins: int = 0

    @property
    def second_law_gap(self) -> float:
        return abs(self.mean_sigma - self.relent_formula_value)

    def as_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["second_law_gap"] = self.second_law_gap
        return out


def detailed_ft_violation(
    fwd: SigmaDistribution, bwd: SigmaDistribution, weight_floor: float = 1e-12
) -> tuple[float, int]:
    """Max of ``|P_->(s) - e^s P_<-(-s)|`` over significant bins."""
    worst = 0.0
    missing = 0
    for s, w in zip(fwd.sigmas, fwd.weights):
        wb, found = bwd.lookup(-s)
        if abs(w) <= weight_floor and not found:
            continue
        if not found:
            missing += 1
        worst = max(worst, abs(w - np.exp(s) * wb))
    for s, wb in zip(bwd.sigmas, bwd.weights):
        # backward bins at s pair with forward bins at -s
        if abs(wb) <= weight_floor:
            continue
        w, found = fwd.lookup(-s)
        if not found:
            missing += 1
            worst = max(worst, abs(np.exp(-s) * wb))
    return worst, missing


def verify_ft(
    fwd: SigmaDistribution,
    bwd: SigmaDistribution,
    table: QuasiTable,
    relent_value: float = float("nan"),
    key: str = "sigma",
) -> FTReport:
    worst, missing = detailed_ft_violation(fwd, bwd)
    return FTReport(
        integral_ft=table.exp_average(key),
        mean_sigma=table.mean(key),
        relent_formula_value=float(relent_value),
        detailed_ft_max_violation=float(worst),
        imag_residual_max=max(fwd.imag_residual_max, bwd.imag_residual_max),
        missing_partners=missing,
        n_bins=len(fwd.sigmas),
    )


@dataclass(frozen=True)
class FTAnalysis:
    """Everything produced by one forward/backward TPM run."""

    forward: QuasiTable
    backward: QuasiTable
    fwd_dist: SigmaDistribution
    bwd_dist: SigmaDistribution
    report: FTReport
    petz: KrausChannel
    z: ZFactors


def second_law_value(rho, ch: KrausChannel, gamma, rank_tol: float = DEFAULT_RANK_TOL) -> float:
    """``S(rho||gamma) - S(N(rho)||N(gamma))``."""
    return relative_entropy(rho, gamma, rank_tol) - relative_entropy(
        apply(ch, rho), apply(ch, gamma), rank_tol
    )


def channel_ft(
    rho: np.ndarray,
    ch: KrausChannel,
    gamma: np.ndarray,
    rank_tol: float = DEFAULT_RANK_TOL,
    grouping_tol: float = DEFAULT_GROUPING_TOL,
    output_support: bool = False,
) -> FTAnalysis:
    """Run the full single-channel FT pipeline and check it."""
    z = z_factors(gamma, ch, rank_tol, output_support)
    petz = petz_recovery(ch, gamma, rank_tol, output_support=output_support)
    fwd = tpm_forward(rho, ch, gamma, rank_tol, output_support, z=z)
    bwd = tpm_backward(apply(ch, rho), petz, z, rho, rank_tol)
    fd = sigma_distribution(fwd, grouping_tol)
    bd = sigma_distribution(bwd, grouping_tol, backward=True)
    report = verify_ft(fd, bd, fwd, second_law_value(rho, ch, gamma, rank_tol))
    return FTAnalysis(fwd, bwd, fd, bd, report, petz, z)


# ---------------------------------------------------------------------------
# closed system-environment bridge


@dataclass(frozen=True)
class BridgeState:
    operator: np.ndarray
    trace: float


def _lift(op_s: np.ndarray, dim_e: int) -> np.ndarray:
    return np.kron(op_s, np.eye(dim_e))


def bridge_state(
    rho_prime_s: np.ndarray,
    gamma_prime_se: np.ndarray,
    gamma_prime_s: np.ndarray,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> BridgeState:
    """``exp(ln rho'_S + ln gamma'_SE - ln gamma'_S)`` with S the slow leg.

    The trace is reported, not normalised away.
    """
    d_s = rho_prime_s.shape[0]
    d_e = gamma_prime_se.shape[0] // d_s
    for name, op in (("gamma'_SE", gamma_prime_se), ("gamma'_S", gamma_prime_s), ("rho'_S", rho_prime_s)):
        vals = np.linalg.eigvalsh(op)
        if vals[0] <= _threshold(vals, rank_tol):
            raise SupportError(f"{name} must be full rank for the bridge state")
    h = (
        _lift(matrix_log_support(rho_prime_s, rank_tol).log, d_e)
        + matrix_log_support(gamma_prime_se, rank_tol).log
        - _lift(matrix_log_support(gamma_prime_s, rank_tol).log, d_e)
    )
    op = matrix_exp_herm(h)
    return BridgeState(op, float(np.trace(op).real))


def renyi_bridge(
    alpha: float,
    rho_prime_s: np.ndarray,
    gamma_prime_se: np.ndarray,
    gamma_prime_s: np.ndarray,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> np.ndarray:
    """Literal evaluation of the sandwiched-Renyi system-to-SE map.

    ``J_{g_SE}^{-b}[J_{g_SE}^{-b} o J_{g_S}^{b}((J_{g_S}^{b} rho'_S)^{a-1})]^{1/(a-1)}``
    with ``b = (1 - a) / (2 a)``.
    """
    if alpha <= 0 or alpha == 1:
        raise ValueError("alpha must be positive and different from 1")
    beta = (1 - alpha) / (2 * alpha)
    d_s = rho_prime_s.shape[0]
    d_e = gamma_prime_se.shape[0] // d_s
    j_s = RescalingMap(gamma_prime_s, beta, rank_tol)
    j_se_inv = RescalingMap(gamma_prime_se, -beta, rank_tol)
    inner = psd_power(rescale(j_s, rho_prime_s), alpha - 1, rank_tol)
    middle = rescale(j_se_inv, _lift(rescale(j_s, inner), d_e))
    outer = psd_power(middle, 1.0 / (alpha - 1), rank_tol)
    return rescale(j_se_inv, outer)


def bridge_entropy_production(
    u_se: np.ndarray,
    rho_s: np.ndarray,
    rho_e: np.ndarray,
    gamma_s: np.ndarray,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> dict:
    """``S(rho'_SE || rho~_SE)`` for a dilation, with ``gamma'_SE = U(gamma (x) rho_E)U^dagger``."""
    d_s = rho_s.shape[0]
    d_e = rho_e.shape[0]
    rho_se = u_se @ np.kron(rho_s, rho_e) @ dagger(u_se)
    gamma_se = u_se @ np.kron(gamma_s, rho_e) @ dagger(u_se)
    rho_p = partial_trace(rho_se, [d_s, d_e], [1])
    gamma_p = partial_trace(gamma_se, [d_s, d_e], [1])
    bridge = bridge_state(rho_p, gamma_se, gamma_p, rank_tol)
    return {
        "rho_prime_se": rho_se,
        "gamma_prime_se": gamma_se,
        "rho_prime_s": rho_p,
        "gamma_prime_s": gamma_p,
        "bridge": bridge,
        "relative_entropy": relative_entropy(rho_se, bridge.operator, rank_tol),
    }


# ---------------------------------------------------------------------------
# thermodynamic reading and Holevo decomposition


@dataclass(frozen=True)
class ThermoDecomposition:
    """Second-law bookkeeping; ``slack = beta dF - beta <w> + dS`` is dimensionless."""

    work: float
    delta_s: float
    delta_f: float
    slack: float
    beta: float

    @property
    def beta_work(self) -> float:
        return self.beta * self.work

    @property
    def slack_energy(self) -> float:
        return self.slack / self.beta


def gibbs_form(state: np.ndarray, beta: float) -> tuple[np.ndarray, float]:
    """Write a full-rank ``state`` as ``exp(-beta O + beta F)``.

    ``O`` is shifted so that its smallest eigenvalue is zero.
    """
    log_state = matrix_log_support(state).log
    o = -log_state / beta
    shift = np.linalg.eigvalsh(o)[0]
    o = o - shift * np.eye(o.shape[0])
    return o, -shift


def _gibbs_log(observables, which: int, beta: float, free_energy: float) -> np.ndarray:
    log = -sum(b_i * obs[which] for *obs, b_i in observables)
    return log + beta * free_energy * np.eye(log.shape[0])


def thermo_decomposition(
    rho: np.ndarray,
    rho_prime: np.ndarray,
    observables: Sequence[tuple[np.ndarray, np.ndarray, float]],
    free_energies: tuple[float, float],
    beta: float,
    gamma: np.ndarray | None = None,
    gamma_prime: np.ndarray | None = None,
    consistency_tol: float = 1e-8,
) -> ThermoDecomposition:
    """Work, entropy change and free-energy change for Gibbs-like references.

    ``observables`` holds ``(O_i(0), O_i(t), beta_i)``.  The references are
    ``exp(-sum beta_i O_i + beta F)``; when ``gamma``/``gamma_prime`` are
    given their logarithms must match that form, otherwise the reconstructed
    references must have unit trace.  ``work`` is ``<w>`` in energy units.
    """
    f0, ft = free_energies
    for which, f, ref in ((0, f0, gamma), (1, ft, gamma_prime)):
        log_ref = _gibbs_log(observables, which, beta, f)
        if ref is not None:
            gap = np.max(np.abs(log_ref - matrix_log_support(ref).log))
        else:
            gap = abs(np.trace(matrix_exp_herm(log_ref)).real - 1.0)
        if gap > consistency_tol:
            raise ValueError(f"inconsistent Gibbs decomposition (gap {gap:.3e})")
    beta_work = sum(
        b_i * (np.trace(o_t @ rho_prime).real - np.trace(o_0 @ rho).real)
        for o_0, o_t, b_i in observables
    )
    ds = von_neumann_entropy(rho_prime) - von_neumann_entropy(rho)
    df = ft - f0
    work = beta_work / beta
    return ThermoDecomposition(work, ds, df, beta * df - beta_work + ds, beta)


def holevo_information(ensemble: Sequence[tuple[float, np.ndarray]]) -> float:
    avg = sum(p * r for p, r in ensemble)
    return von_neumann_entropy(avg) - sum(p * von_neumann_entropy(r) for p, r in ensemble)


@dataclass(frozen=True)
class HolevoDecomposition:
    mean_sigma_total: float
    mean_sigma_components: tuple
    delta_chi: float
    chi_in: float
    chi_out: float
    weights: tuple = ()

    @property
    def residual(self) -> float:
        mixed = sum(p * s for p, s in zip(self.weights, self.mean_sigma_components))
        return abs(self.mean_sigma_total - mixed - self.delta_chi)


def holevo_decomposition(
    ensemble: Sequence[tuple[float, np.ndarray]],
    ch: KrausChannel,
    gamma: np.ndarray,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> HolevoDecomposition:
    """Split ``<sigma>`` of a mixture into member averages plus a Holevo term.

    ``delta_chi = chi_out - chi_in`` (non-positive), which is the sign that
    makes ``<sigma> = sum p_a <sigma_a> + delta_chi`` hold.
    """
    probs = np.array([p for p, _ in ensemble], dtype=float)
    if np.any(probs < 0) or abs(probs.sum() - 1) > 1e-10:
        raise ValueError("ensemble weights must be a probability vector")
    states = [validate_density_matrix(r, tol=1e-10) for _, r in ensemble]
    rho = sum(p * r for p, r in zip(probs, states))
    total = second_law_value(rho, ch, gamma, rank_tol)
    parts = tuple(second_law_value(r, ch, gamma, rank_tol) for r in states)
    chi_in = holevo_information(list(zip(probs, states)))
    chi_out = holevo_information([(p, apply(ch, r)) for p, r in zip(probs, states)])
    return HolevoDecomposition(total, parts, chi_out - chi_in, chi_in, chi_out, tuple(probs))


__all__ = [
    "BridgeState",
    "Ensemble",
    "FTAnalysis",
    "FTReport",
    "HolevoDecomposition",
    "QuasiTable",
    "SigmaDistribution",
    "TPMRecord",
    "ThermoDecomposition",
    "ThreePointRecord",
    "ZFactors",
    "bridge_entropy_production",
    "bridge_state",
    "channel_ft",
    "gibbs_form",
    "holevo_decomposition",
    "holevo_information",
    "renyi_bridge",
    "second_law_value",
    "sigma_distribution",
    "thermo_decomposition",
    "tpm_backward",
    "tpm_forward",
    "trace_distance",
    "verify_ft",
    "z_factors",
]
