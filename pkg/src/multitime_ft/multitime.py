"""Multitime processes: process tensors, many-body and derived channels,
three-point measurement FTs for Markov processes, the non-Markov marginality
probe, the ancilla-measurement FT and non-Markovianity quantities.

Leg conventions
---------------
* System-environment operators have ``S`` as the slow leg, then ``E``.
* Process tensors carry legs ``(A1, S1, ..., An, Sn)``; ``Ai`` is the input
  copy of step ``i`` and ``Si`` its output.
* Many-body channels act on ``S1 (x) ... (x) Sn``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channels import (
    KrausChannel,
    apply,
    compose,
    dilation_channel,
    identity_channel,
    is_cptp,
    isometry_channel,
    kraus_to_choi,
    petz_recovery,
    tensor_channels,
    unitary_channel,
)
from .fluctuation import (
    DEFAULT_GROUPING_TOL,
    Ensemble,
    FTAnalysis,
    FTReport,
    QuasiTable,
    SigmaDistribution,
    _safe_log,
    _state_unit_overlaps,
    backward_end_overlaps,
    backward_start_overlaps,
    backward_transition_tensor,
    channel_ft,
    rescaled_units,
    sigma_distribution,
    tpm_backward,
    transition_tensor,
    verify_ft,
    z_factors,
)
from .linalg import (
    DEFAULT_RANK_TOL,
    SupportError,
    dagger,
    embed_operator,
    maximally_entangled,
    partial_trace,
    permute_legs,
    relative_entropy,
    tensor,
    trace_distance,
    validate_density_matrix,
)


@dataclass(frozen=True)
class MultitimeScenario:
    """Stepwise system-environment unitaries ``U^i`` on ``S (x) E`` and ``rho_E^0``."""

    unitaries: tuple
    env_initial: np.ndarray
    d_s: int
    d_e: int
    name: str = ""

    def __post_init__(self):
        n = self.d_s * self.d_e
        us = tuple(np.asarray(u, dtype=complex) for u in self.unitaries)
        if not us:
            raise ValueError("a scenario needs at least one step")
        for k, u in enumerate(us):
            if u.shape != (n, n):
                raise ValueError(f"U^{k + 1} has shape {u.shape}, expected {(n, n)}")
            err = np.linalg.norm(u.conj().T @ u - np.eye(n), 2)
            if err > 1e-10:
                raise ValueError(f"U^{k + 1} is not unitary (margin {err:.3e})")
        env = validate_density_matrix(self.env_initial, tol=1e-10, name="rho_E")
        if env.shape != (self.d_e, self.d_e):
            raise ValueError("environment state dimension mismatch")
        object.__setattr__(self, "unitaries", us)
        object.__setattr__(self, "env_initial", env)

    @property
    def n_steps(self) -> int:
        return len(self.unitaries)


@dataclass(frozen=True)
class ProcessTensor:
    choi: np.ndarray
    leg_dims: tuple
    n_steps: int

    def step_legs(self, i: int) -> tuple[int, int]:
        return 2 * i, 2 * i + 1


def step_channel(sc: MultitimeScenario, i: int, env: np.ndarray | None = None) -> KrausChannel:
    """Step ``i`` (0-based) acting on a fresh copy of the environment."""
    env = sc.env_initial if env is None else env
    return dilation_channel(sc.unitaries[i], env, sc.d_s, sc.d_e)


def default_markov_pair(sc: MultitimeScenario) -> tuple[KrausChannel, KrausChannel]:
    """Per-step maps with the environment reset to ``rho_E^0`` before each step."""
    if sc.n_steps != 2:
        raise ValueError("the Markov pair is defined for two-step scenarios")
    return step_channel(sc, 0), step_channel(sc, 1)


def build_process_tensor(sc: MultitimeScenario) -> ProcessTensor:
    """Contract ``(x)_i Phi^{AiSi} (x) rho_E`` through ``U^1 ... U^n`` and trace ``E``."""
    n, d, de = sc.n_steps, sc.d_s, sc.d_e
    legs = [d] * (2 * n) + [de]
    state = tensor(*([maximally_entangled(d)] * n), sc.env_initial)
    for i, u in enumerate(sc.unitaries):
        big = embed_operator(u, [2 * i + 1, 2 * n], legs)
        state = big @ state @ dagger(big)
    choi = partial_trace(state, legs, [2 * n])
    return ProcessTensor(choi, tuple([d] * (2 * n)), n)


def manybody_channel(sc: MultitimeScenario) -> KrausChannel:
    """``Tr_E U^n_{SnE} ... U^1_{S1E}`` on ``S1 ... Sn`` with ``rho_E^0`` attached."""
    n, d, de = sc.n_steps, sc.d_s, sc.d_e
    legs = [d] * n + [de]
    total = np.eye(d**n * de, dtype=complex)
    for i, u in enumerate(sc.unitaries):
        total = embed_operator(u, [i, n], legs) @ total
    return dilation_channel(total, sc.env_initial, d**n, de)


def choi_leg_order(n: int) -> list[int]:
    """Permutation taking ``(A1..An, S1..Sn)`` to ``(A1, S1, ..., An, Sn)``."""
    perm = []
    for i in range(n):
        perm += [i, n + i]
    return perm


def manybody_choi(sc: MultitimeScenario) -> np.ndarray:
    """Choi state of :func:`manybody_channel` with legs reordered to tensor order."""
    n, d = sc.n_steps, sc.d_s
    choi = kraus_to_choi(manybody_channel(sc))
    return permute_legs(choi, [d] * (2 * n), choi_leg_order(n))


def contract_preparations(
    choi: np.ndarray, leg_dims: Sequence[int], preparations: dict
) -> np.ndarray:
    """Feed states into input legs: ``prod(d) Tr_A[(rho^T (x) I) C]``.

    ``preparations`` maps leg index to a density matrix; those legs are
    removed from the result.
    """
    leg_dims = list(leg_dims)
    ops = []
    scale = 1.0
    for k, d in enumerate(leg_dims):
        if k in preparations:
            ops.append(np.asarray(preparations[k]).T)
            scale *= d
        else:
            ops.append(np.eye(d))
    full = scale * (tensor(*ops) @ choi)
    return partial_trace(full, leg_dims, sorted(preparations))


def check_time_ordering(T: ProcessTensor, preparations: Sequence[np.ndarray]) -> float:
    """Largest trace distance between causal marginals and prefix channels.

    For each prefix length ``i`` the tensor is traced over ``S_{>i}`` and fed
    all preparations; that must match the prefix tensor (also traced over
    ``A_{>i}``) fed only the first ``i`` preparations.
    """
    n = T.n_steps
    if len(preparations) != n:
        raise ValueError("need one preparation per step")
    worst = 0.0
    for i in range(1, n):
        future_s = [2 * j + 1 for j in range(i, n)]
        future_a = [2 * j for j in range(i, n)]
        traced = partial_trace(T.choi, T.leg_dims, future_s)
        dims_t = [d for k, d in enumerate(T.leg_dims) if k not in future_s]
        # remaining legs: A1,S1,...,Ai,Si,A_{i+1},...,An
        prep_idx = {}
        pos = 0
        for k in range(2 * n):
            if k in future_s:
                continue
            if k % 2 == 0:
                prep_idx[pos] = preparations[k // 2]
            pos += 1
        lhs = contract_preparations(traced, dims_t, prep_idx)
        prefix = partial_trace(T.choi, T.leg_dims, sorted(future_s + future_a))
        dims_p = list(T.leg_dims[: 2 * i])
        rhs = contract_preparations(prefix, dims_p, {2 * j: preparations[j] for j in range(i)})
        worst = max(worst, trace_distance(lhs, rhs))
    return worst


def link_identity(T: ProcessTensor) -> np.ndarray:
    """``N^{2n-2} ((x)_i Phi^{A_{i+1} S_i} | T)``: Choi state on ``(A1, Sn)``."""
    n = T.n_steps
    dims = T.leg_dims
    for i in range(n - 1):
        if dims[2 * i + 1] != dims[2 * i + 2]:
            raise ValueError("linked legs must have equal dimensions")
    order = []
    for i in range(n - 1):
        order += [2 * i + 1, 2 * i + 2]
    order += [0, 2 * n - 1]
    t = permute_legs(T.choi, dims, order)
    link_dim = int(np.prod([dims[k] for k in order[:-2]])) if n > 1 else 1
    rest = dims[0] * dims[-1]
    phi = np.ones(1, dtype=complex)
    for i in range(n - 1):
        d = dims[2 * i + 1]
        phi = np.kron(phi, np.eye(d, dtype=complex).reshape(d * d) / np.sqrt(d))
    t = t.reshape(link_dim, rest, link_dim, rest)
    return link_dim * np.einsum("a,arbs,b->rs", phi.conj(), t, phi)


def derived_channel(sc: MultitimeScenario, inserted_ops: Sequence[KrausChannel] = ()) -> KrausChannel:
    """``Tr_E U^n (A_{n-1} U^{n-1}) ... (A_1 U^1)`` with ``rho_E^0`` attached.

    Inserted maps act on the system and may append ancilla legs after it;
    later unitaries act on the leading system leg and the environment.
    """
    n = sc.n_steps
    if len(inserted_ops) not in (0, n - 1):
        raise ValueError(f"expected {n - 1} inserted operations, got {len(inserted_ops)}")
    inserts = list(inserted_ops) or [identity_channel(sc.d_s) for _ in range(n - 1)]
    for k, op in enumerate(inserts):
        rep = is_cptp(op)
        if not rep.ok:
            raise ValueError(f"inserted operation {k + 1} is not CPTP (margins {rep.cp_margin:.2e}, {rep.tp_margin:.2e})")
        if op.dim_in % sc.d_s:
            raise ValueError("inserted operation dimension does not match the system")
    d, de = sc.d_s, sc.d_e
    # attach the environment: X -> X (x) rho_E
    q, vecs = np.linalg.eigh(sc.env_initial)
    attach = [np.sqrt(max(qb, 0.0)) * np.kron(np.eye(d), vecs[:, [b]]) for b, qb in enumerate(q) if qb > 1e-14]
    ch = KrausChannel(np.array(attach))
    extra = 1  # product of ancilla dimensions sitting between S and E
    for i, u in enumerate(sc.unitaries):
        legs = [d, extra, de]
        ch = compose(unitary_channel(embed_operator(u, [0, 2], legs)), ch)
        if i < n - 1:
            op = inserts[i]
            grow = op.dim_out // op.dim_in
            # op acts on (S, ancillas so far): reorder so new ancilla lands after old ones
            local = tensor_channels(op, identity_channel(de)) if extra == 1 else _insert_with_ancillas(op, d, extra, de)
            ch = compose(local, ch)
            extra *= grow
    # trace the environment
    dim_sys = d * extra
    tr_ops = [np.kron(np.eye(dim_sys), np.eye(de)[[e]]) for e in range(de)]
    return compose(KrausChannel(np.array(tr_ops)), ch)


def _insert_with_ancillas(op: KrausChannel, d: int, extra: int, de: int) -> KrausChannel:
    """Lift ``op`` on ``S`` (output ``S S'_new``) to ``S S'_old E``."""
    grow = op.dim_out // op.dim_in
    if op.dim_in != d:
        raise ValueError("inserted operations after the first must act on the system only")
    out_legs = [d, grow, extra, de]
    # op (x) id on (S', E) gives legs (S, S'_new, S'_old, E); move S'_new after S'_old
    lifted = tensor_channels(op, identity_channel(extra * de))
    perm = [0, 2, 1, 3]
    ops = np.array([
        permute_out(k, out_legs, perm) for k in lifted.ops
    ])
    return KrausChannel(ops)


def permute_out(k: np.ndarray, out_legs: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    out_legs = list(out_legs)
    t = k.reshape(out_legs + [k.shape[1]])
    t = t.transpose(list(perm) + [len(out_legs)])
    return t.reshape(k.shape)


def factorization_residual(sc: MultitimeScenario) -> float:
    """Distance of the many-body channel from ``(x)_i`` of its refreshed step maps."""
    from .channels import channels_close

    product = tensor_channels(*[step_channel(sc, i) for i in range(sc.n_steps)])
    return channels_close(manybody_channel(sc), product)


def markov_approximation(T: ProcessTensor) -> ProcessTensor:
    """Product of single-step marginals of ``T``."""
    if T.n_steps < 2:
        raise ValueError("markov_approximation needs at least two steps")
    n = T.n_steps
    parts = []
    for i in range(n):
        keep = {2 * i, 2 * i + 1}
        parts.append(partial_trace(T.choi, T.leg_dims, [k for k in range(2 * n) if k not in keep]))
    return ProcessTensor(tensor(*parts), T.leg_dims, n)


def d_nm(T: ProcessTensor, rank_tol: float = DEFAULT_RANK_TOL) -> float:
    """Relative entropy of ``T`` to its product-of-marginals Markov surrogate.

    This upper-bounds the minimum over all Markov processes.  Returns
    ``inf`` when the supports are incompatible.
    """
    try:
        return relative_entropy(T.choi, markov_approximation(T).choi, rank_tol)
    except SupportError:
        return float("inf")


# ---------------------------------------------------------------------------
# many-body and linked channel FTs


def _product_state(states) -> np.ndarray:
    if isinstance(states, np.ndarray) and states.ndim == 2:
        return states
    return tensor(*states)


def manybody_ft(
    sc: MultitimeScenario,
    product_rho_I,
    product_gamma,
    rank_tol: float = DEFAULT_RANK_TOL,
    grouping_tol: float = DEFAULT_GROUPING_TOL,
) -> FTAnalysis:
    """Single-channel FT for the many-body channel on ``S1 ... Sn``.

    Inputs are per-step state lists (their tensor product is used).
    """
    rho = _product_state(product_rho_I)
    gamma = _product_state(product_gamma)
    return channel_ft(rho, manybody_channel(sc), gamma, rank_tol, grouping_tol)


@dataclass(frozen=True)
class NonMarkovReport:
    sigma_nm: float
    d_nm: float
    marginality_violation: float = float("nan")
    decomposition_terms: dict = field(default_factory=dict)
    d_nm_is_upper_bound: bool = True

    def as_dict(self) -> dict:
        return {
            "sigma_nm": self.sigma_nm,
            "d_nm": self.d_nm,
            "d_nm_is_upper_bound": self.d_nm_is_upper_bound,
            "marginality_violation": self.marginality_violation,
            "decomposition_terms": dict(self.decomposition_terms),
        }


def linked_channel(sc: MultitimeScenario) -> KrausChannel:
    return derived_channel(sc)


def linked_ft_with_sigma_nm(
    sc: MultitimeScenario,
    rho_I: np.ndarray,
    gamma: np.ndarray,
    markov_pair: tuple[KrausChannel, KrausChannel] | None = None,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> tuple[FTAnalysis, NonMarkovReport]:
    """FT of the linked two-step channel and its memory decomposition.

    ``<sigma> = [S(rho_I||g) - S(N1 rho_I||N1 g)] + [S(rho_M||g_M) -
    S(N2 rho_M||N2 g_M)] - sigma_NM`` with ``rho_M = N1(rho_I)``,
    ``g_M = N1(g)`` and ``sigma_NM = S(rho_F||g_F) - S(N2 rho_M||N2 g_M)``.
    """
    n1, n2 = markov_pair if markov_pair is not None else default_markov_pair(sc)
    ch = linked_channel(sc)
    ft = channel_ft(rho_I, ch, gamma, rank_tol)
    rho_m, g_m = apply(n1, rho_I), apply(n1, gamma)
    rho_f, g_f = apply(ch, rho_I), apply(ch, gamma)
    s_i = relative_entropy(rho_I, gamma, rank_tol)
    s_m = relative_entropy(rho_m, g_m, rank_tol)
    s_m2 = relative_entropy(apply(n2, rho_m), apply(n2, g_m), rank_tol)
    s_f = relative_entropy(rho_f, g_f, rank_tol)
    sigma_nm = s_f - s_m2
    terms = {
        "first_step": s_i - s_m,
        "second_step_markov": s_m - s_m2,
        "sigma_nm": sigma_nm,
        "total": s_i - s_f,
    }
    terms["decomposition_residual"] = abs(terms["first_step"] + terms["second_step_markov"] - sigma_nm - terms["total"])
    report = NonMarkovReport(sigma_nm, d_nm(build_process_tensor(sc), rank_tol), decomposition_terms=terms)
    return ft, report


# ---------------------------------------------------------------------------
# three-point measurement for Markov two-step processes

THREE_POINT_AXES = ("u", "mu", "w", "i", "j", "kp", "lp", "k", "l", "mp", "np")


@dataclass(frozen=True)
class ThreePointResult:
    forward: QuasiTable
    backward: QuasiTable
    fwd_dist: SigmaDistribution
    bwd_dist: SigmaDistribution
    report: FTReport
    sigma2_report: FTReport
    marginal_residuals: dict
    backward_marginal_residuals: dict
    four_term: float
    sigma2_formula: float


def _mid_tensor(mid: np.ndarray, out1: np.ndarray, in2: np.ndarray) -> np.ndarray:
    """``m[mu, k', l', k, l] = <mu|k'> <k|mu> <l'|l>``: ``X -> Pi_mu X`` between bases."""
    c1 = dagger(mid) @ out1  # <mu|k'>
    c2 = dagger(in2) @ mid  # <k|mu>
    ov = dagger(out1) @ in2  # <l'|l>
    return np.einsum("ma,km,bl->mabkl", c1, c2, ov)


def _sigma_parts(log_a, log_b, log_b_reg, lz_in, lz_out):
    """``log_a[x] - log_b[y] + lz_in[i,j] + lz_out[k,l]`` over ``(x, y, i, j, k, l)``."""
    dq = lz_in[:, :, None, None] + lz_out[None, None]
    base = dq[None, None]
    sig = log_a[:, None, None, None, None, None] - log_b[None, :, None, None, None, None] + base
    reg = np.where(np.isfinite(log_a), log_a, 0.0)[:, None, None, None, None, None] - log_b_reg[None, :, None, None, None, None] + base
    return sig, reg


def _expand(arr: np.ndarray, axes_in: str) -> np.ndarray:
    """Place a six-axis array on the eleven three-point axes (others broadcast)."""
    names = axes_in.split(",")
    order = [names.index(a) for a in THREE_POINT_AXES if a in names]
    shape = [arr.shape[names.index(a)] if a in names else 1 for a in THREE_POINT_AXES]
    return np.transpose(arr, order).reshape(shape)


def three_point_ft_markov(
    n1: KrausChannel,
    n2: KrausChannel,
    rho_I: np.ndarray,
    gamma: np.ndarray,
    gamma_prime: np.ndarray,
    mid_basis: np.ndarray | None = None,
    rank_tol: float = DEFAULT_RANK_TOL,
    grouping_tol: float = DEFAULT_GROUPING_TOL,
) -> ThreePointResult:
    """Three-point measurement quasiprobabilities for ``N2 o N1``.

    The intermediate measurement acts as ``X -> Pi_mu X`` in the
    superoperator picture (the index sum over ``nu`` is done internally).
    ``mid_basis`` holds the basis vectors as columns and defaults to the
    eigenbasis of ``rho_M = N1(rho_I)``.
    """
    rho_I = validate_density_matrix(rho_I, tol=1e-10)
    if n1.dim_out != n2.dim_in:
        raise ValueError("channels do not compose")
    z1 = z_factors(gamma, n1, rank_tol)
    z2 = z_factors(gamma_prime, n2, rank_tol)
    rho_m = apply(n1, rho_I)
    rho_f = apply(n2, rho_m)
    mid = Ensemble.of(rho_m).vectors if mid_basis is None else np.asarray(mid_basis, dtype=complex)
    if np.linalg.norm(dagger(mid) @ mid - np.eye(mid.shape[1])) > 1e-10:
        raise ValueError("mid_basis must be orthonormal")
    p_mu = np.clip(np.einsum("am,ab,bm->m", mid.conj(), rho_m, mid).real, 0.0, None)

    init = Ensemble.of(rho_I)
    sup = init.support(rank_tol)
    final = Ensemble.of(rho_f)
    t1 = transition_tensor(n1, z1.in_basis, z1.out_basis)
    t2 = transition_tensor(n2, z2.in_basis, z2.out_basis)
    mt = _mid_tensor(mid, z1.out_basis, z2.in_basis)

    def assemble(first, t_a, mid_t, t_b, last):
        return np.einsum("uij,ijab,mabkl,klcd,wcd->umwijabklcd", first, t_a, mid_t, t_b, last, optimize=True)

    a = _state_unit_overlaps(init.vectors[:, sup], z1.in_basis)
    b = _state_unit_overlaps(final.vectors, z2.out_basis).transpose(0, 2, 1)
    quasi = init.probs[sup][:, None, None, None, None, None, None, None, None, None, None] * assemble(a, t1, mt, t2, b)

    log_u = np.log(init.probs[sup])
    log_mu, log_mu_reg = _safe_log(p_mu, rank_tol)
    log_w, log_w_reg = _safe_log(final.probs, rank_tol)
    s1, s1r = _sigma_parts(log_u, log_mu, log_mu_reg, z1.log_z_in, z1.log_z_out)
    s2, s2r = _sigma_parts(log_mu, log_w, log_w_reg, z2.log_z_in, z2.log_z_out)
    sig1 = _expand(s1, "u,mu,i,j,kp,lp")
    sig2 = _expand(s2, "mu,w,k,l,mp,np")
    sig1r = _expand(s1r, "u,mu,i,j,kp,lp")
    sig2r = _expand(s2r, "mu,w,k,l,mp,np")
    shape = quasi.shape
    # ln p'_mu cancels between sigma_1 and sigma_2; only a null p''_w diverges
    w_inf = np.where(np.isneginf(log_w), np.inf, 0.0)[None, None, :, None, None, None, None, None, None, None, None]
    reg = np.broadcast_to(sig1r + sig2r, shape)
    total = reg + w_inf
    forward = QuasiTable(
        THREE_POINT_AXES,
        quasi,
        np.array(total),
        np.array(reg),
        labels={"u": sup},
        extra={
            "sigma1": np.array(np.broadcast_to(sig1, shape)),
            "sigma2": np.array(np.broadcast_to(sig2, shape)),
            "sigma1_regular": np.array(np.broadcast_to(sig1r, shape)),
            "sigma2_regular": np.array(np.broadcast_to(sig2r, shape)),
            "p_mu": p_mu,
            "mid_basis": mid,
        },
    )

    # backward process: R1 o R2 starting from rho_F
    r1 = petz_recovery(n1, gamma, rank_tol)
    r2 = petz_recovery(n2, gamma_prime, rank_tol)
    pin1, _ = rescaled_units(z1)
    _, pout2 = rescaled_units(z2)
    tb1 = backward_transition_tensor(r1, z1)
    tb2 = backward_transition_tensor(r2, z2)
    start = backward_start_overlaps(init.vectors, pin1)
    end = backward_end_overlaps(final.vectors, pout2)
    back = final.probs[None, None, :, None, None, None, None, None, None, None, None] * assemble(
        start, tb1, mt.conj(), tb2, end
    )
    log_u_all, _ = _safe_log(init.probs, rank_tol)
    b1, _ = _sigma_parts(log_u_all, log_mu_reg, log_mu_reg, z1.log_z_in, z1.log_z_out)
    b2, _ = _sigma_parts(log_mu_reg, log_w, log_w_reg, z2.log_z_in, z2.log_z_out)
    bsig = np.array(np.broadcast_to(_expand(b1, "u,mu,i,j,kp,lp") + _expand(b2, "mu,w,k,l,mp,np"), back.shape))
    backward = QuasiTable(THREE_POINT_AXES, back, bsig, np.where(np.isfinite(bsig), bsig, 0.0))

    fd = sigma_distribution(forward, grouping_tol)
    bd = sigma_distribution(backward, grouping_tol, backward=True)
    four = (
        relative_entropy(rho_I, gamma, rank_tol)
        - relative_entropy(rho_m, apply(n1, gamma), rank_tol)
        + relative_entropy(rho_m, gamma_prime, rank_tol)
        - relative_entropy(rho_f, apply(n2, gamma_prime), rank_tol)
    )
    report = verify_ft(fd, bd, forward, four)

    # sigma_2 alone: marginal table against the single-step backward of N2
    sig2_formula = relative_entropy(rho_m, gamma_prime, rank_tol) - relative_entropy(
        rho_f, apply(n2, gamma_prime), rank_tol
    )
    marg = forward.marginal("mu", "w", "k", "l", "mp", "np")
    s2_table = QuasiTable(("u", "v", "i", "j", "k", "l"), marg, s2, s2r)
    mid_ens = Ensemble(p_mu, mid)
    b2_table = tpm_backward(rho_f, r2, z2, rho_m, rank_tol, initial=mid_ens)
    fd2 = sigma_distribution(s2_table, grouping_tol)
    bd2 = sigma_distribution(b2_table, grouping_tol, backward=True)
    sigma2_report = verify_ft(fd2, bd2, s2_table, sig2_formula)

    residuals = three_point_marginal_residuals(forward, init.probs[sup], p_mu, final.probs, rho_I, rho_m, rho_f, z1, z2)
    back_res = {
        "w": float(np.max(np.abs(backward.marginal("w") - final.probs))),
        "mu": float(np.max(np.abs(backward.marginal("mu") - np.einsum("am,ab,bm->m", mid.conj(), apply(r2, rho_f), mid)))),
        "u": float(np.max(np.abs(backward.marginal("u") - np.einsum("au,ab,bu->u", init.vectors.conj(), apply(r1, apply(r2, rho_f)), init.vectors)))),
    }
    return ThreePointResult(forward, backward, fd, bd, report, sigma2_report, residuals, back_res, four, sig2_formula)


def _diag_in(basis: np.ndarray, rho: np.ndarray) -> np.ndarray:
    return np.diag(np.diag(dagger(basis) @ rho @ basis))


def three_point_marginal_residuals(
    table: QuasiTable, p_u, p_mu, p_w, rho_I, rho_m, rho_f, z1, z2
) -> dict:
    """Normalisation plus the seven single-index marginals."""
    q = table
    return {
        "total": abs(q.total - 1.0),
        "u": float(np.max(np.abs(q.marginal("u") - p_u))),
        "mu": float(np.max(np.abs(q.marginal("mu") - p_mu))),
        "w": float(np.max(np.abs(q.marginal("w") - p_w))),
        "ij": float(np.max(np.abs(q.marginal("i", "j") - _diag_in(z1.in_basis, rho_I)))),
        "kplp": float(np.max(np.abs(q.marginal("kp", "lp") - _diag_in(z1.out_basis, rho_m)))),
        "kl": float(np.max(np.abs(q.marginal("k", "l") - _diag_in(z2.in_basis, rho_m)))),
        "mpnp": float(np.max(np.abs(q.marginal("mp", "np") - _diag_in(z2.out_basis, rho_f)))),
    }


# ---------------------------------------------------------------------------
# non-Markov marginality probe


@dataclass(frozen=True)
class ProbeReport:
    violation: float
    mu_deviation: float
    u_deviation: float
    deviation_from_p_mu: float
    deviation_from_p_u: float
    joint_marginal_mu: np.ndarray
    joint_marginal_u: np.ndarray


def marginality_failure_probe(
    sc: MultitimeScenario,
    rho_I: np.ndarray,
    gamma: np.ndarray,
    gamma_prime: np.ndarray,
    mid_basis: np.ndarray | None = None,
    markov_pair: tuple[KrausChannel, KrausChannel] | None = None,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> ProbeReport:
    """Backward marginals under the joint Petz map of the two-body channel.

    Computes ``M_mu = sum_nu (I (x) Pi_mu_nu | R(Pi_mu_nu (x) rho_F))`` and
    ``M_u = sum_{mu nu} (Pi_psi_u (x) Pi_mu_nu | R(Pi_mu_nu (x) rho_F))`` with
    ``R`` the Petz map of the many-body channel for ``gamma (x) gamma'``.  For
    a divisible process these equal ``<mu|R2(rho_F)|mu>`` and
    ``<psi_u|R1 R2(rho_F)|psi_u>``; ``violation`` is the larger deviation.
    """
    if sc.n_steps != 2:
        raise ValueError("the probe is defined for two-step scenarios")
    d = sc.d_s
    n1, n2 = markov_pair if markov_pair is not None else default_markov_pair(sc)
    joint = manybody_channel(sc)
    r = petz_recovery(joint, np.kron(gamma, gamma_prime), rank_tol)
    rho_f = apply(linked_channel(sc), rho_I)
    rho_m = apply(n1, rho_I)
    mid = Ensemble.of(rho_m).vectors if mid_basis is None else np.asarray(mid_basis, dtype=complex)
    psi = Ensemble.of(rho_I).vectors
    m_mu = np.zeros(d, dtype=complex)
    m_u = np.zeros(d, dtype=complex)
    for mu in range(d):
        for nu in range(d):
            unit = np.outer(mid[:, mu], mid[:, nu].conj())
            out = apply(r, np.kron(unit, rho_f))
            # (I (x) Pi_mu_nu | Y) = Tr_2[ (I (x) Pi_nu_mu) Y ]
            reduced = partial_trace(np.kron(np.eye(d), dagger(unit)) @ out, [d, d], [1])
            m_mu[mu] += np.trace(reduced)
            m_u += np.einsum("au,ab,bu->u", psi.conj(), reduced, psi)
    r1 = petz_recovery(n1, gamma, rank_tol)
    r2 = petz_recovery(n2, gamma_prime, rank_tol)
    r2f = apply(r2, rho_f)
    ref_mu = np.einsum("am,ab,bm->m", mid.conj(), r2f, mid)
    ref_u = np.einsum("au,ab,bu->u", psi.conj(), apply(r1, r2f), psi)
    p_mu = np.einsum("am,ab,bm->m", mid.conj(), rho_m, mid).real
    p_u = Ensemble.of(rho_I).probs
    dev_mu = float(np.max(np.abs(m_mu - ref_mu)))
    dev_u = float(np.max(np.abs(m_u - ref_u)))
    return ProbeReport(
        max(dev_mu, dev_u),
        dev_mu,
        dev_u,
        float(np.max(np.abs(m_mu - p_mu))),
        float(np.max(np.abs(m_u - p_u))),
        m_mu,
        m_u,
    )


# ---------------------------------------------------------------------------
# ancilla measurement FT


def measurement_isometry(meas_basis: np.ndarray) -> np.ndarray:
    """``V = sum_k |e_k><e_k| (x) |k>``: ``S -> S S'`` with ``S'`` after ``S``."""
    basis = np.asarray(meas_basis, dtype=complex)
    d = basis.shape[0]
    if basis.shape != (d, d) or np.linalg.norm(dagger(basis) @ basis - np.eye(d)) > 1e-10:
        raise ValueError("meas_basis must be a complete orthonormal basis (columns)")
    v = np.zeros((d * d, d), dtype=complex)
    for k in range(d):
        proj = np.outer(basis[:, k], basis[:, k].conj())
        v += np.kron(proj, np.eye(d)[:, [k]])
    return v


def ancilla_measurement_channel(sc: MultitimeScenario, meas_basis: np.ndarray | None = None) -> KrausChannel:
    """``N_SS' = Tr_E U^2 o A_SS' o U^1 o A`` for a two-step scenario."""
    if sc.n_steps != 2:
        raise ValueError("ancilla measurement channel is defined for two-step scenarios")
    basis = np.eye(sc.d_s, dtype=complex) if meas_basis is None else meas_basis
    return derived_channel(sc, [isometry_channel(measurement_isometry(basis))])


def ancilla_ft(
    sc: MultitimeScenario,
    rho_I: np.ndarray,
    gamma: np.ndarray,
    meas_basis: np.ndarray | None = None,
    markov_pair: tuple[KrausChannel, KrausChannel] | None = None,
    rank_tol: float = DEFAULT_RANK_TOL,
    grouping_tol: float = DEFAULT_GROUPING_TOL,
) -> tuple[FTAnalysis, NonMarkovReport]:
    """TPM FT for the ancilla-measured channel and the memory decomposition.

    The ``SS'`` output reference ``N_SS'(gamma)`` is singular, so Z factors
    and the Petz inverse are taken on its support.
    """
    basis = np.eye(sc.d_s, dtype=complex) if meas_basis is None else meas_basis
    n1, n2 = markov_pair if markov_pair is not None else default_markov_pair(sc)
    a_ch = isometry_channel(measurement_isometry(basis))
    ch = ancilla_measurement_channel(sc, basis)
    ft = channel_ft(rho_I, ch, gamma, rank_tol, grouping_tol, output_support=True)
    d = sc.d_s
    n2_ext = tensor_channels(n2, identity_channel(d))
    rho_m, g_m = apply(n1, rho_I), apply(n1, gamma)
    rho_m2, g_m2 = apply(a_ch, rho_m), apply(a_ch, g_m)
    rho_f, g_f = apply(ch, rho_I), apply(ch, gamma)
    s_i = relative_entropy(rho_I, gamma, rank_tol)
    s_m = relative_entropy(rho_m, g_m, rank_tol)
    s_m2 = relative_entropy(rho_m2, g_m2, rank_tol)
    s_mk = relative_entropy(apply(n2_ext, rho_m2), apply(n2_ext, g_m2), rank_tol)
    s_f = relative_entropy(rho_f, g_f, rank_tol)
    sigma_nm = s_f - s_mk
    terms = {
        "first_step": s_i - s_m,
        "measured_second_step": s_m2 - s_f,
        "measured_second_step_markov": s_m2 - s_mk,
        "sigma_nm": sigma_nm,
        "total": s_i - s_f,
        "measurement_invariance": abs(s_m2 - s_m),
    }
    terms["efuma_residual"] = abs(terms["first_step"] + terms["measured_second_step"] - terms["total"])
    terms["dconm_residual"] = abs(
        terms["first_step"] + terms["measured_second_step_markov"] - sigma_nm - terms["total"]
    )
    report = NonMarkovReport(sigma_nm, d_nm(build_process_tensor(sc), rank_tol), decomposition_terms=terms)
    return ft, report


def ancilla_marginal_residuals(ft: FTAnalysis, rho_I: np.ndarray, ch: KrausChannel) -> dict:
    """The four marginals of the ancilla TPM table."""
    t = ft.forward
    z = ft.z
    rho_f = apply(ch, rho_I)
    return {
        "u": float(np.max(np.abs(t.marginal("u") - t.extra["p_in"]))),
        "v": float(np.max(np.abs(t.marginal("v") - t.extra["p_out"]))),
        "ij": float(np.max(np.abs(t.marginal("i", "j") - _diag_in(z.in_basis, rho_I)))),
        "kl": float(np.max(np.abs(t.marginal("k", "l") - _diag_in(z.out_basis, rho_f)))),
    }


def markov_ancilla_channel(n1: KrausChannel, n2: KrausChannel, meas_basis: np.ndarray) -> KrausChannel:
    """``(N2 (x) id_S') o A_SS' o N1``."""
    d = n1.dim_out
    a_ch = isometry_channel(measurement_isometry(meas_basis))
    return compose(tensor_channels(n2, identity_channel(d)), a_ch, n1)
