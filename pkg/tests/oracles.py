"""Independent loop-based reference implementations used by the tests.

Nothing here calls into the package except for plain data containers, so a
mismatch points at the vectorised code.
"""
import numpy as np


def eig(h):
    w, v = np.linalg.eigh((h + h.conj().T) / 2)
    return w[::-1], v[:, ::-1]


def mfunc(h, f):
    w, v = eig(h)
    return (v * f(w)) @ v.conj().T


def entropy(rho):
    w, _ = eig(rho)
    w = w[w > 1e-15]
    return float(-np.sum(w * np.log(w)))


def relent(rho, gamma):
    """Sum over eigenpairs: sum p_i ln p_i - sum_ij p_i |<a_i|b_j>|^2 ln q_j."""
    p, a = eig(rho)
    q, b = eig(gamma)
    out = 0.0
    for i in range(len(p)):
        if p[i] <= 1e-15:
            continue
        out += p[i] * np.log(p[i])
        for j in range(len(q)):
            out -= p[i] * abs(a[:, i].conj() @ b[:, j]) ** 2 * np.log(q[j])
    return float(out)


def apply_kraus(ops, x):
    return sum(k @ x @ k.conj().T for k in ops)


def choi(ops, d_in):
    """Unit-trace Choi with the input as the slow leg."""
    d_out = ops[0].shape[0]
    out = np.zeros((d_in * d_out, d_in * d_out), dtype=complex)
    for i in range(d_in):
        for j in range(d_in):
            unit = np.zeros((d_in, d_in), dtype=complex)
            unit[i, j] = 1
            out += np.kron(unit, apply_kraus(ops, unit))
    return out / d_in


def petz_apply(ops, gamma, x):
    """``gamma^1/2 N^dag( N(gamma)^-1/2 x N(gamma)^-1/2 ) gamma^1/2``."""
    ng = apply_kraus(ops, gamma)
    inv = mfunc(ng, lambda w: w**-0.5)
    half = mfunc(gamma, np.sqrt)
    y = inv @ x @ inv
    return half @ sum(k.conj().T @ y @ k for k in ops) @ half


def tpm_records(rho, ops, gamma):
    """Forward quasiprobabilities and sigma as a list of (weight, sigma)."""
    p, psi = eig(rho)
    rho_out = apply_kraus(ops, rho)
    q, phi = eig(rho_out)
    g, e_in = eig(gamma)
    lam, e_out = eig(apply_kraus(ops, gamma))
    recs = []
    for u in range(len(p)):
        if p[u] <= 1e-14:
            continue
        for v in range(len(q)):
            for i in range(len(g)):
                for j in range(len(g)):
                    unit = np.outer(e_in[:, i], e_in[:, j].conj())
                    img = apply_kraus(ops, unit)
                    a = (e_in[:, i].conj() @ psi[:, u]) * (psi[:, u].conj() @ e_in[:, j])
                    for k in range(len(lam)):
                        for l in range(len(lam)):
                            t = e_out[:, k].conj() @ img @ e_out[:, l]
                            b = (e_out[:, l].conj() @ phi[:, v]) * (phi[:, v].conj() @ e_out[:, k])
                            w = p[u] * a * t * b
                            s = (
                                np.log(p[u])
                                - np.log(q[v])
                                - 0.5 * np.log(g[i] * g[j])
                                + 0.5 * np.log(lam[k] * lam[l])
                            )
                            recs.append((complex(w), float(s)))
    return recs
