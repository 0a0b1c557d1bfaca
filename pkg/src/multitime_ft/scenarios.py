"""Seeded fixtures: Haar unitaries, random states and channels, and named
system-environment scenarios.

Randomness comes from ``numpy.random.Generator`` driven by the counter-based
Philox bit generator, so a given seed yields the same stream on every
platform numpy supports.
"""
from __future__ import annotations

import numpy as np

from .channels import KrausChannel, dilation_channel
from .linalg import embed_operator, swap_operator
from .multitime import MultitimeScenario

GENERATORS = ("haar", "swap", "collision-ad", "dephase", "identity")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def _as_rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else make_rng(rng)


def haar_unitary(dim: int, rng) -> np.ndarray:
    """Haar-random unitary from the QR decomposition of a Ginibre matrix.

    The phases of ``diag(R)`` are folded into ``Q`` so the distribution is
    exactly Haar.
    """
    rng = _as_rng(rng)
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def random_density_matrix(dim: int, rng, rank: int | None = None) -> np.ndarray:
    """Ginibre-ensemble state; full rank unless ``rank`` is given."""
    rng = _as_rng(rng)
    rank = dim if rank is None else rank
    g = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_pure_state(dim: int, rng) -> np.ndarray:
    return random_density_matrix(dim, rng, rank=1)


def random_channel(dim: int, rng, env_dim: int = 2) -> KrausChannel:
    """Random CPTP map from a Haar dilation with a random environment state."""
    rng = _as_rng(rng)
    u = haar_unitary(dim * env_dim, rng)
    return dilation_channel(u, random_density_matrix(env_dim, rng), dim, env_dim)


def basis_state(dim: int, k: int = 0) -> np.ndarray:
    out = np.zeros((dim, dim), dtype=complex)
    out[k, k] = 1.0
    return out


def _env_state(kind: str, dim: int, rng) -> np.ndarray:
    if kind == "pure":
        return basis_state(dim)
    if kind == "mixed":
        return random_density_matrix(dim, rng)
    if kind == "maximally-mixed":
        return np.eye(dim, dtype=complex) / dim
    raise ValueError(f"unknown environment kind {kind!r}")


def exchange_unitary(dim: int, theta: float) -> np.ndarray:
    """``exp(-i theta H)`` with ``H = sum_k (|0,k><k,0| + h.c.)`` on ``dim x dim``.

    With the second factor in ``|0>`` this is amplitude damping with
    ``p = sin(theta)^2`` for every excited level.
    """
    u = np.eye(dim * dim, dtype=complex)
    c, s = np.cos(theta), np.sin(theta)
    for k in range(1, dim):
        a = k * dim  # |k, 0>
        b = k  # |0, k>
        u[a, a] = c
        u[b, b] = c
        u[a, b] = -1j * s
        u[b, a] = -1j * s
    return u


def swap_scenario(d_s: int, n_steps: int = 2, env: str = "pure", rng=None) -> MultitimeScenario:
    sw = swap_operator(d_s, d_s)
    rho_e = _env_state(env, d_s, rng if rng is not None else make_rng(0))
    return MultitimeScenario(tuple(sw for _ in range(n_steps)), rho_e, d_s, d_s, name="swap")


def collision_scenario(d_s: int, n_steps: int = 2, theta: float = 0.6) -> MultitimeScenario:
    """One fresh ancilla per step, excitation exchange with ancilla ``i`` at step ``i``."""
    legs = [d_s] * (n_steps + 1)
    d_e = d_s**n_steps
    ex = exchange_unitary(d_s, theta)
    us = tuple(
        embed_operator(ex, [0, i + 1], legs) for i in range(n_steps)
    )
    rho_e = basis_state(d_e)
    return MultitimeScenario(us, rho_e, d_s, d_e, name="collision-ad")


def dephase_scenario(d_s: int, d_e: int, n_steps: int = 2, theta: float = 0.7) -> MultitimeScenario:
    """Controlled-phase coupling ``exp(-i theta n_S (x) n_E)`` with ``|+>`` environment."""
    n_s = np.arange(d_s)
    n_e = np.arange(d_e)
    u = np.diag(np.exp(-1j * theta * np.kron(n_s, n_e)))
    plus = np.full(d_e, 1 / np.sqrt(d_e), dtype=complex)
    return MultitimeScenario(tuple(u for _ in range(n_steps)), np.outer(plus, plus), d_s, d_e, name="dephase")


def haar_scenario(d_s: int, d_e: int, n_steps: int, rng, env: str = "mixed") -> MultitimeScenario:
    rng = _as_rng(rng)
    us = tuple(haar_unitary(d_s * d_e, rng) for _ in range(n_steps))
    return MultitimeScenario(us, _env_state(env, d_e, rng), d_s, d_e, name="haar")


def identity_scenario(d_s: int, d_e: int = 2, n_steps: int = 2) -> MultitimeScenario:
    eye = np.eye(d_s * d_e, dtype=complex)
    return MultitimeScenario(tuple(eye for _ in range(n_steps)), basis_state(d_e), d_s, d_e, name="identity")


def generate_scenario(spec: dict, seed: int | None = None) -> MultitimeScenario:
    """Build a scenario from a config mapping with a ``generator`` key."""
    name = spec.get("generator")
    if name not in GENERATORS:
        raise ValueError(f"unknown generator {name!r}; expected one of {GENERATORS}")
    d_s = int(spec.get("d_s", 2))
    n = int(spec.get("n_steps", 2))
    seed = spec.get("seed") if seed is None else seed
    if name == "haar":
        if seed is None:
            raise ValueError("generator 'haar' needs a seed")
        return haar_scenario(d_s, int(spec.get("d_e", 2)), n, make_rng(seed), spec.get("env", "mixed"))
    if name == "swap":
        rng = make_rng(seed if seed is not None else 0)
        return swap_scenario(d_s, n, spec.get("env", "pure"), rng)
    if name == "collision-ad":
        return collision_scenario(d_s, n, float(spec.get("theta", 0.6)))
    if name == "dephase":
        return dephase_scenario(d_s, int(spec.get("d_e", 2)), n, float(spec.get("theta", 0.7)))
    return identity_scenario(d_s, int(spec.get("d_e", 2)), n)
