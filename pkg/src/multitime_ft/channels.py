"""Quantum channels: Kraus, superoperator and Choi forms, and the Petz map.

Conventions
-----------
* Superoperators use column stacking: the entry at row ``(k', l')`` and
  column ``(i, j)`` is ``(Pi_{k'l'} | N(Pi_{ij}))``; flat index of ``(a, b)``
  is ``a + b * dim``.
* Choi states carry the unit-trace maximally entangled state,
  ``C = (1/N) sum_ij Pi_ij (x) N(Pi_ij)`` with the input copy as the slow leg.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .linalg import (
    DEFAULT_RANK_TOL,
    NotPositiveError,
    dagger,
    eigh_sorted,
    hermitian_part,
    psd_power,
    validate_density_matrix,
)


@dataclass(frozen=True)
class KrausChannel:
    """A completely positive map ``X -> sum_m K_m X K_m^dagger``.

    ``ops`` has shape ``(n_kraus, dim_out, dim_in)``.  Trace preservation is
    not enforced here so that adjoints and unnormalised maps can share the
    type; use :func:`is_cptp` to check.
    """

    ops: np.ndarray

    def __post_init__(self):
        ops = np.asarray(self.ops, dtype=complex)
        if ops.ndim == 2:
            ops = ops[None]
        if ops.ndim != 3 or ops.shape[0] == 0:
            raise ValueError(f"Kraus operators must have shape (k, out, in), got {ops.shape}")
        ops.setflags(write=False)
        object.__setattr__(self, "ops", ops)

    @property
    def dim_in(self) -> int:
        return self.ops.shape[2]

    @property
    def dim_out(self) -> int:
        return self.ops.shape[1]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return apply(self, x)

    def __len__(self) -> int:
        return self.ops.shape[0]


class CPTPReport(NamedTuple):
    ok: bool
    cp_margin: float
    tp_margin: float


@dataclass(frozen=True)
class RescalingMap:
    """``X -> O^alpha X (O^alpha)^dagger``."""

    base: np.ndarray
    exponent: float
    rank_tol: float = DEFAULT_RANK_TOL
    on_support: bool = False

    def power(self) -> np.ndarray:
        return psd_power(self.base, self.exponent, self.rank_tol, self.on_support)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return rescale(self, x)


def rescale(rmap: RescalingMap, x: np.ndarray) -> np.ndarray:
    op = rmap.power()
    return op @ np.asarray(x) @ dagger(op)


def identity_channel(dim: int) -> KrausChannel:
    return KrausChannel(np.eye(dim, dtype=complex)[None])


def unitary_channel(u: np.ndarray) -> KrausChannel:
    return KrausChannel(np.asarray(u, dtype=complex)[None])


def apply(ch: KrausChannel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape != (ch.dim_in, ch.dim_in):
        raise ValueError(f"input of shape {x.shape} does not match channel input dim {ch.dim_in}")
    return np.einsum("kab,bc,kdc->ad", ch.ops, x, ch.ops.conj())


def adjoint(ch: KrausChannel) -> KrausChannel:
    """Heisenberg-picture dual ``X -> sum K^dagger X K``."""
    return KrausChannel(dagger(ch.ops))


def compose(*channels: KrausChannel) -> KrausChannel:
    """``compose(N2, N1)`` is ``N2 o N1`` (rightmost acts first)."""
    out = channels[-1]
    for ch in reversed(channels[:-1]):
        if ch.dim_in != out.dim_out:
            raise ValueError("dimension mismatch in composition")
        ops = np.einsum("aij,bjk->abik", ch.ops, out.ops)
        out = KrausChannel(ops.reshape(-1, ch.dim_out, out.dim_in))
    return compress(out)


def tensor_channels(*channels: KrausChannel) -> KrausChannel:
    ops = channels[0].ops
    for ch in channels[1:]:
        k = np.einsum("aij,bkl->abikjl", ops, ch.ops)
        d_out = ops.shape[1] * ch.dim_out
        d_in = ops.shape[2] * ch.dim_in
        ops = k.reshape(-1, d_out, d_in)
    return KrausChannel(ops)


def kraus_to_super(ch: KrausChannel) -> np.ndarray:
    # column stacking: vec(K X K^dagger) = (conj(K) (x) K) vec(X)
    return sum(np.kron(k.conj(), k) for k in ch.ops)


def super_to_choi(sup: np.ndarray, dim_in: int, dim_out: int) -> np.ndarray:
    """Unit-trace Choi matrix on ``input (x) output`` from a superoperator."""
    sup = np.asarray(sup)
    if sup.shape != (dim_out**2, dim_in**2):
        raise ValueError(f"superoperator shape {sup.shape} inconsistent with dims")
    # sup[(k + l*do), (i + j*di)] -> t[l, k, j, i]
    t = sup.reshape(dim_out, dim_out, dim_in, dim_in)
    choi = t.transpose(3, 1, 2, 0)  # (i, k, j, l)
    return choi.reshape(dim_in * dim_out, dim_in * dim_out) / dim_in


def choi_to_super(choi: np.ndarray, dim_in: int, dim_out: int) -> np.ndarray:
    t = np.asarray(choi).reshape(dim_in, dim_out, dim_in, dim_out) * dim_in
    return t.transpose(3, 1, 2, 0).reshape(dim_out**2, dim_in**2)


def kraus_to_choi(ch: KrausChannel) -> np.ndarray:
    # vec over (i, k'): K[k', i]
    vecs = ch.ops.transpose(0, 2, 1).reshape(len(ch), -1)
    return np.einsum("ka,kb->ab", vecs, vecs.conj()) / ch.dim_in


def choi_to_kraus(
    choi: np.ndarray, dim_in: int, dim_out: int, cutoff: float = 1e-12, psd_tol: float = 1e-10
) -> KrausChannel:
    """Canonical Kraus form from the Choi eigendecomposition.

    Eigenvalues of ``dim_in * C`` at or below ``cutoff`` are dropped; a
    negative eigenvalue beyond ``psd_tol`` means the map is not CP.
    """
    choi = np.asarray(choi, dtype=complex)
    if choi.shape != (dim_in * dim_out, dim_in * dim_out):
        raise ValueError("Choi shape inconsistent with dims")
    vals, vecs = eigh_sorted(hermitian_part(choi) * dim_in)
    if vals.size and vals[-1] < -psd_tol:
        raise NotPositiveError(f"Choi matrix has eigenvalue {vals[-1]:.3e}: map is not CP")
    keep = vals > cutoff
    if not np.any(keep):
        raise ValueError("Choi matrix is numerically zero")
    ops = (vecs[:, keep] * np.sqrt(vals[keep])).T.reshape(-1, dim_in, dim_out)
    return KrausChannel(ops.transpose(0, 2, 1))


def compress(ch: KrausChannel) -> KrausChannel:
    """Re-express a channel with the minimal number of Kraus operators."""
    if len(ch) <= ch.dim_in * ch.dim_out:
        return ch
    return choi_to_kraus(kraus_to_choi(ch), ch.dim_in, ch.dim_out)


def super_apply(sup: np.ndarray, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    d_out = int(round(np.sqrt(sup.shape[0])))
    return (sup @ x.reshape(-1, order="F")).reshape(d_out, d_out, order="F")


def is_cptp(ch: KrausChannel, tol: float = 1e-10) -> CPTPReport:
    """Check complete positivity (Choi PSD) and trace preservation.

    ``cp_margin`` is the smallest Choi eigenvalue (scaled by ``dim_in``) and
    ``tp_margin`` the spectral-norm distance of ``sum K^dagger K`` from I.
    """
    choi = kraus_to_choi(ch) * ch.dim_in
    cp_margin = float(np.linalg.eigvalsh(hermitian_part(choi))[0])
    gram = np.einsum("kab,kac->bc", ch.ops.conj(), ch.ops)
    tp_margin = float(np.linalg.norm(gram - np.eye(ch.dim_in), 2))
    return CPTPReport(cp_margin >= -tol and tp_margin <= tol, cp_margin, tp_margin)


def petz_recovery(
    ch: KrausChannel,
    gamma: np.ndarray,
    rank_tol: float = DEFAULT_RANK_TOL,
    output_support: bool = False,
) -> KrausChannel:
    """Petz recovery map ``J_gamma^{1/2} o N^dagger o J_{N(gamma)}^{-1/2}``.

    Kraus form ``gamma^{1/2} M^dagger N(gamma)^{-1/2}``.  With
    ``output_support`` the inverse square root is taken on the support of
    ``N(gamma)`` only; the map is then trace preserving on operators
    supported there.
    """
    gamma = validate_density_matrix(gamma, tol=1e-10, name="gamma")
    g_half = psd_power(gamma, 0.5, rank_tol)
    psd_power(gamma, -0.5, rank_tol)  # full rank check on the reference
    out_ref = apply(ch, gamma)
    out_inv_half = psd_power(out_ref, -0.5, rank_tol, on_support=output_support)
    ops = np.einsum("ab,kcb,cd->kad", g_half, ch.ops.conj(), out_inv_half)
    return KrausChannel(ops)


def dilation_channel(
    u_se: np.ndarray,
    rho_e: np.ndarray,
    dim_s: int,
    dim_e: int,
    unitary_tol: float = 1e-10,
    weight_cutoff: float = 1e-14,
) -> KrausChannel:
    """``rho -> Tr_E[U (rho (x) rho_E) U^dagger]`` with ``S`` the slow leg."""
    u_se = np.asarray(u_se, dtype=complex)
    n = dim_s * dim_e
    if u_se.shape != (n, n):
        raise ValueError(f"U_SE has shape {u_se.shape}, expected {(n, n)}")
    err = np.linalg.norm(u_se.conj().T @ u_se - np.eye(n), 2)
    if err > unitary_tol:
        raise ValueError(f"U_SE is not unitary (margin {err:.3e})")
    rho_e = validate_density_matrix(rho_e, tol=1e-10, name="rho_E")
    if rho_e.shape != (dim_e, dim_e):
        raise ValueError("rho_E dimension mismatch")
    q, vecs = eigh_sorted(rho_e)
    keep = q > weight_cutoff
    t = u_se.reshape(dim_s, dim_e, dim_s, dim_e)
    # K_{a,b}[s', s] = sqrt(q_b) sum_e U[s', a, s, e] vec_b[e]
    ops = np.einsum("xayz,zb->abxy", t, vecs[:, keep] * np.sqrt(q[keep]))
    return compress(KrausChannel(ops.reshape(-1, dim_s, dim_s)))


def depolarizing_channel(dim: int, p: float = 1.0) -> KrausChannel:
    """``rho -> (1 - p) rho + p Tr(rho) I/d`` as Kraus operators."""
    units = []
    for i in range(dim):
        for j in range(dim):
            m = np.zeros((dim, dim), dtype=complex)
            m[i, j] = 1.0
            units.append(np.sqrt(p / dim) * m)
    ops = [np.sqrt(1 - p) * np.eye(dim)] if p < 1 else []
    return KrausChannel(np.array(ops + units))


def amplitude_damping_channel(p: float) -> KrausChannel:
    k0 = np.array([[1, 0], [0, np.sqrt(1 - p)]], dtype=complex)
    k1 = np.array([[0, np.sqrt(p)], [0, 0]], dtype=complex)
    return KrausChannel(np.array([k0, k1]))


def dephasing_channel(p: float) -> KrausChannel:
    z = np.diag([1.0, -1.0]).astype(complex)
    return KrausChannel(np.array([np.sqrt(1 - p / 2) * np.eye(2), np.sqrt(p / 2) * z]))


def isometry_channel(v: np.ndarray) -> KrausChannel:
    return KrausChannel(np.asarray(v, dtype=complex)[None])


def channels_close(a: KrausChannel, b: KrausChannel) -> float:
    """Largest entry difference between superoperators (basis independent test)."""
    if (a.dim_in, a.dim_out) != (b.dim_in, b.dim_out):
        return float("inf")
    return float(np.max(np.abs(kraus_to_super(a) - kraus_to_super(b))))


def constant_channel(state: np.ndarray, dim_in: int) -> KrausChannel:
    """``X -> Tr(X) state``."""
    q, vecs = eigh_sorted(state)
    ops = []
    for val, vec in zip(q, vecs.T):
        if val > 1e-14:
            for i in range(dim_in):
                e = np.zeros(dim_in)
                e[i] = 1.0
                ops.append(np.sqrt(val) * np.outer(vec, e))
    return KrausChannel(np.array(ops))


def kraus_list(ch: KrausChannel) -> Sequence[np.ndarray]:
    return list(ch.ops)
