"""Dense operator algebra on the Hilbert-Schmidt space of small matrices.

Everything here works on plain ``numpy`` arrays.  Operators are treated as
vectors with the inner product ``(A|B) = Tr(A^dagger B)``; matrix functions
of positive operators go through a deterministic eigendecomposition so that
basis labels are reproducible between runs.
"""
from __future__ import annotations

from functools import reduce
from typing import NamedTuple, Sequence

import numpy as np

DEFAULT_RANK_TOL = 1e-10


class RankDeficiencyError(ValueError):
    """A negative power or an inverse was requested of a singular operator."""


class SupportError(ValueError):
    """Relative entropy is infinite because the supports are incompatible."""


class NotPositiveError(ValueError):
    """An operator that must be positive semidefinite has a negative eigenvalue."""


class EigenSystem(NamedTuple):
    """Eigenvalues in descending order with phase-fixed eigenvector columns."""

    values: np.ndarray
    vectors: np.ndarray


def hs_inner(a: np.ndarray, b: np.ndarray) -> complex:
    """Hilbert-Schmidt inner product ``Tr(a^dagger b)``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return complex(np.vdot(a, b))


def matrix_unit(i: int, j: int, dim: int) -> np.ndarray:
    """The matrix unit ``|i><j|`` of dimension ``dim``."""
    out = np.zeros((dim, dim), dtype=complex)
    out[i, j] = 1.0
    return out


def tensor(*ops: np.ndarray) -> np.ndarray:
    """Kronecker product; the leftmost factor owns the slowest index."""
    if not ops:
        raise ValueError("tensor() needs at least one operand")
    return reduce(np.kron, (np.asarray(op) for op in ops))


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def is_hermitian(a: np.ndarray, tol: float = 1e-12) -> bool:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    scale = max(np.linalg.norm(a, 2), 1.0)
    return bool(np.linalg.norm(a - dagger(a), 2) <= tol * scale)


def hermitian_part(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + dagger(a))


def validate_density_matrix(rho, tol: float = 1e-12, name: str = "rho") -> np.ndarray:
    """Return ``rho`` as a complex array after checking it is a state."""
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {rho.shape}")
    if not is_hermitian(rho, tol=max(tol, 1e-12)):
        raise ValueError(f"{name} is not Hermitian")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > max(tol, 1e-12) * 10:
        raise ValueError(f"{name} has trace {tr!r}, expected 1")
    lam_min = np.linalg.eigvalsh(hermitian_part(rho))[0]
    if lam_min < -max(tol, 1e-12) * 10:
        raise NotPositiveError(f"{name} has negative eigenvalue {lam_min:.3e}")
    return rho


def _fix_phases(vectors: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    vectors = vectors.copy()
    for col in range(vectors.shape[1]):
        v = vectors[:, col]
        nz = np.flatnonzero(np.abs(v) > tol)
        if nz.size:
            pivot = v[nz[0]]
            vectors[:, col] = v * (abs(pivot) / pivot)
    return vectors


def eigh_sorted(h: np.ndarray) -> EigenSystem:
    """Eigendecomposition with descending eigenvalues.

    Each eigenvector is rotated so that its first component of magnitude
    above ``1e-10`` is real and positive.  Inside degenerate eigenspaces the
    basis is whatever LAPACK returns, after the same phase fix.
    """
    h = hermitian_part(np.asarray(h, dtype=complex))
    vals, vecs = np.linalg.eigh(h)
    order = np.argsort(-vals, kind="stable")
    return EigenSystem(vals[order], _fix_phases(vecs[:, order]))


def _threshold(values: np.ndarray, rank_tol: float) -> float:
    scale = float(np.max(np.abs(values))) if values.size else 0.0
    return rank_tol * max(scale, np.finfo(float).tiny)


def support_projector(p: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    vals, vecs = eigh_sorted(p)
    keep = vals > _threshold(vals, rank_tol)
    return vecs[:, keep] @ dagger(vecs[:, keep])


def psd_power(
    p: np.ndarray,
    alpha: float,
    rank_tol: float = DEFAULT_RANK_TOL,
    on_support: bool = False,
) -> np.ndarray:
    """``p ** alpha`` for a positive semidefinite ``p``.

    Negative powers require full rank unless ``on_support`` is set, in which
    case the power is taken on the support and the kernel maps to zero.
    """
    vals, vecs = eigh_sorted(p)
    thr = _threshold(vals, rank_tol)
    if vals.size and vals[-1] < -thr:
        raise NotPositiveError(f"negative eigenvalue {vals[-1]:.3e} below tolerance")
    keep = vals > thr
    if alpha < 0 and not on_support and not np.all(keep):
        raise RankDeficiencyError(
            f"power {alpha} of a rank-deficient operator "
            f"(smallest eigenvalue {vals[-1]:.3e})"
        )
    powered = np.zeros_like(vals)
    powered[keep] = vals[keep] ** alpha
    if alpha == 0 and not on_support:
        powered[:] = 1.0
    return (vecs * powered) @ dagger(vecs)


class SupportLog(NamedTuple):
    log: np.ndarray
    support: np.ndarray


def matrix_log_support(p: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> SupportLog:
    """Natural logarithm restricted to the support of ``p``.

    Kernel directions contribute zero to the logarithm; the projector onto
    the support is returned alongside.
    """
    vals, vecs = eigh_sorted(p)
    thr = _threshold(vals, rank_tol)
    if vals.size and vals[-1] < -thr:
        raise NotPositiveError(f"negative eigenvalue {vals[-1]:.3e} below tolerance")
    keep = vals > thr
    logs = np.zeros_like(vals)
    logs[keep] = np.log(vals[keep])
    sup = vecs[:, keep] @ dagger(vecs[:, keep])
    return SupportLog((vecs * logs) @ dagger(vecs), sup)


def matrix_exp_herm(h: np.ndarray) -> np.ndarray:
    vals, vecs = eigh_sorted(h)
    return (vecs * np.exp(vals)) @ dagger(vecs)


def von_neumann_entropy(rho: np.ndarray) -> float:
    vals = np.linalg.eigvalsh(hermitian_part(np.asarray(rho, dtype=complex)))
    vals = vals[vals > 0]
    return float(-np.sum(vals * np.log(vals)))


def relative_entropy(
    rho: np.ndarray, gamma: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL
) -> float:
    """Umegaki relative entropy ``Tr rho (ln rho - ln gamma)`` in nats.

    ``gamma`` only needs to be positive; it is not renormalised.  Raises
    :class:`SupportError` when ``rho`` has weight outside the support of
    ``gamma`` (the divergence is infinite there).
    """
    rho = np.asarray(rho, dtype=complex)
    gamma = np.asarray(gamma, dtype=complex)
    if rho.shape != gamma.shape:
        raise ValueError(f"shape mismatch: {rho.shape} vs {gamma.shape}")
    log_rho, _ = matrix_log_support(rho, rank_tol)
    log_gamma, sup_gamma = matrix_log_support(gamma, rank_tol)
    outside = np.trace(rho).real - np.trace(sup_gamma @ rho).real
    if outside > max(rank_tol, 1e-12) * 10:
        raise SupportError(f"rho has weight {outside:.3e} outside supp(gamma)")
    return float(np.trace(rho @ (log_rho - log_gamma)).real)


def trace_norm(a: np.ndarray) -> float:
    return float(np.sum(np.linalg.svd(np.asarray(a), compute_uv=False)))


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    return 0.5 * trace_norm(np.asarray(a) - np.asarray(b))


def _check_legs(dim: int, leg_dims: Sequence[int]) -> tuple[int, ...]:
    leg_dims = tuple(int(d) for d in leg_dims)
    if any(d <= 0 for d in leg_dims) or int(np.prod(leg_dims)) != dim:
        raise ValueError(f"leg dimensions {leg_dims} inconsistent with matrix size {dim}")
    return leg_dims


def partial_trace(m: np.ndarray, leg_dims: Sequence[int], traced_legs) -> np.ndarray:
    """Trace out ``traced_legs`` of an operator on ``leg_dims``."""
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("partial_trace expects a square matrix")
    leg_dims = _check_legs(m.shape[0], leg_dims)
    traced = sorted(set(int(t) for t in traced_legs))
    if any(t < 0 or t >= len(leg_dims) for t in traced):
        raise ValueError(f"traced legs {traced} out of range for {len(leg_dims)} legs")
    n = len(leg_dims)
    t = m.reshape(leg_dims + leg_dims)
    # trace from the highest leg down so remaining axis numbers stay valid
    for count, leg in enumerate(reversed(traced)):
        live = n - count
        t = np.trace(t, axis1=leg, axis2=leg + live)
    kept = [d for k, d in enumerate(leg_dims) if k not in traced]
    size = int(np.prod(kept)) if kept else 1
    return t.reshape(size, size)


def permute_legs(m: np.ndarray, leg_dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    """Reorder tensor legs: new leg ``k`` is old leg ``perm[k]``."""
    m = np.asarray(m)
    leg_dims = _check_legs(m.shape[0], leg_dims)
    n = len(leg_dims)
    perm = list(perm)
    if sorted(perm) != list(range(n)):
        raise ValueError(f"{perm} is not a permutation of {n} legs")
    t = m.reshape(leg_dims + leg_dims)
    t = t.transpose(perm + [p + n for p in perm])
    return t.reshape(m.shape)


def embed_operator(
    op: np.ndarray, legs: Sequence[int], leg_dims: Sequence[int]
) -> np.ndarray:
    """Lift ``op`` acting on ``legs`` (in that order) to the full leg space."""
    leg_dims = tuple(int(d) for d in leg_dims)
    legs = list(legs)
    rest = [k for k in range(len(leg_dims)) if k not in legs]
    rest_dim = int(np.prod([leg_dims[k] for k in rest])) if rest else 1
    full = np.kron(op, np.eye(rest_dim))
    order = legs + rest
    inverse = [order.index(k) for k in range(len(leg_dims))]
    return permute_legs(full, [leg_dims[k] for k in order], inverse)


def swap_operator(d1: int, d2: int) -> np.ndarray:
    """Unitary mapping ``|a>|b>`` on ``d1 x d2`` to ``|b>|a>`` on ``d2 x d1``."""
    out = np.zeros((d1 * d2, d1 * d2), dtype=complex)
    for a in range(d1):
        for b in range(d2):
            out[b * d1 + a, a * d2 + b] = 1.0
    return out


def maximally_entangled(dim: int) -> np.ndarray:
    """Unit-trace ``Phi = (1/N) sum_ij |i><j| (x) |i><j|``."""
    vec = np.eye(dim, dtype=complex).reshape(dim * dim) / np.sqrt(dim)
    return np.outer(vec, vec.conj())
