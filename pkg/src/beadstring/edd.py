"""Exponential divided differences over frequency clusters and Gram studies.

Member k of a cluster mu_1..mu_n is the divided difference of
mu -> exp(i mu t) over mu_1..mu_k; sine and cosine members take the
imaginary and real parts (the nodes are real).
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson
from scipy.linalg import eigh, expm

from .model import PreconditionError

CONFLUENT_REL = 1e-6


def _min_gap(mus) -> float:
    mus = np.sort(np.asarray(mus, float))
    return float(np.min(np.diff(mus))) if len(mus) > 1 else math.inf


def _dd_recursive(mus, t):
    """Divided-difference table of exp(i mu t); returns the n leading entries."""
    n = len(mus)
    col = [np.exp(1j * m * t) for m in mus]
    out = [col[0]]
    for k in range(1, n):
        col = [(col[i] - col[i + 1]) / (mus[i] - mus[i + k]) for i in range(n - k)]
        out.append(col[0])
    return np.array(out)


def _dd_matrix(mus, t):
    """Same quantities as the first row of exp(i t J), J bidiagonal with the
    nodes on the diagonal; valid for coincident nodes."""
    mus = np.asarray(mus, float)
    n = len(mus)
    centre = float(np.mean(mus))
    # shifting by the mean keeps the exponent small; the phase is restored exactly
    J = np.diag(mus - centre) + np.diag(np.ones(n - 1), 1)
    t = np.asarray(t, float)
    E = expm(1j * t[:, None, None] * J[None])
    # entry (0, k) of f(J) is the k-th divided difference of f
    return np.transpose(E[:, 0, :]) * np.exp(1j * centre * t)[None, :]


def edd_evaluate(mus, t, kind: str = "exp", confluent: bool = True) -> np.ndarray:
    """Members of orders 0..n-1 sampled on t; shape (n, len(t))."""
    mus = np.asarray(mus, float)
    t = np.asarray(t, float)
    if kind not in ("exp", "sin", "cos"):
        raise ValueError(f"unknown kind {kind!r}")
    if len(mus) == 0:
        return np.zeros((0, len(t)))
    scale = max(1.0, float(np.max(np.abs(mus))))
    gap = _min_gap(mus)
    if gap < CONFLUENT_REL * scale:
        if not confluent:
            raise PreconditionError("repeated frequency and confluent evaluation disabled")
        vals = _dd_matrix(mus, t)
    else:
        vals = _dd_recursive(mus, t)
    if kind == "exp":
        return vals
    return vals.imag if kind == "sin" else vals.real


def dd_numbers(lams, a) -> np.ndarray:
    """[a_1]', [a_1, a_2]', ..., [a_1..a_n]' by the recursive table."""
    lams = np.asarray(lams, float)
    a = np.asarray(a)
    if len(lams) != len(a):
        raise PreconditionError("length mismatch")
    if len(lams) > 1 and _min_gap(lams) == 0.0:
        raise PreconditionError("repeated frequency")
    n = len(a)
    col = list(a)
    out = [col[0]] if n else []
    for k in range(1, n):
        col = [(col[i] - col[i + 1]) / (lams[i] - lams[i + k]) for i in range(n - k)]
        out.append(col[0])
    return np.array(out)


def dd_product(lams, a) -> np.ndarray:
    """Same numbers from the explicit sum over products of node differences."""
    lams = np.asarray(lams, float)
    out = []
    for n in range(1, len(a) + 1):
        tot = 0.0
        for k in range(n):
            den = np.prod([lams[k] - lams[l] for l in range(n) if l != k])
            tot = tot + a[k] / den
        out.append(tot)
    return np.array(out)


def dd_reconstruct(lams, dds) -> np.ndarray:
    """Inverse of dd_numbers: a_n = sum_k [a_1..a_k]' prod_{l<k} (lam_n - lam_l)."""
    lams = np.asarray(lams, float)
    dds = np.asarray(dds)
    if len(lams) != len(dds):
        raise PreconditionError("length mismatch")
    out = []
    for n in range(len(dds)):
        # Horner evaluation of the Newton form at lam_n
        acc = dds[n]
        for k in range(n - 1, -1, -1):
            acc = dds[k] + (lams[n] - lams[k]) * acc
        out.append(acc)
    return np.array(out)


# ------------------------------------------------------------- families

@dataclass
class DDFamily:
    """Sampled members on [0, T]; labels are (p, k) with p the signed cluster label."""

    T: float
    t: np.ndarray
    kind: str
    members: np.ndarray
    labels: list

    def __len__(self):
        return len(self.labels)

    def truncated(self, n: int) -> "DDFamily":
        return DDFamily(self.T, self.t, self.kind, self.members[:n], self.labels[:n])


def time_grid(T: float, lam_max: float, per_period: int = 40) -> np.ndarray:
    """Odd number of points with at least per_period samples per shortest period."""
    period = 2 * math.pi / max(lam_max, 1e-12)
    n = max(64, int(math.ceil(per_period * T / period)))
    n += n % 2
    return np.linspace(0.0, T, n + 1)


def edd_family(clusters, T: float, kind: str = "exp", mirror: bool = True, t=None) -> DDFamily:
    """E.D.D. family over a list of positive clusters.

    Members are ordered by cluster, with the mirrored cluster -Lambda^p right
    after Lambda^p when mirror is set (exponential kind only).
    """
    lam_max = max((float(np.max(np.abs(c))) for c in clusters), default=1.0)
    if t is None:
        t = time_grid(T, lam_max)
    mem, lab = [], []
    for p, c in enumerate(clusters, start=1):
        c = np.asarray(c, float)
        vals = edd_evaluate(c, t, kind)
        for k in range(len(c)):
            mem.append(vals[k])
            lab.append((p, k + 1))
        if mirror and kind == "exp":
            vals = edd_evaluate(-c, t, kind)
            for k in range(len(c)):
                mem.append(vals[k])
                lab.append((-p, k + 1))
    return DDFamily(T, t, kind, np.array(mem), lab)


def raw_family(freqs, T: float, mirror: bool = True, t=None) -> DDFamily:
    """Plain exponentials exp(i lam t), no differencing."""
    freqs = np.asarray(freqs, float)
    if t is None:
        t = time_grid(T, float(np.max(np.abs(freqs))))
    mem, lab = [], []
    for n, lam in enumerate(freqs, start=1):
        mem.append(np.exp(1j * lam * t))
        lab.append((n, 1))
        if mirror:
            mem.append(np.exp(-1j * lam * t))
            lab.append((-n, 1))
    return DDFamily(T, t, "exp", np.array(mem), lab)


def gram(family: DDFamily) -> np.ndarray:
    F = family.members
    prod = F[:, None, :] * np.conj(F[None, :, :])
    G = simpson(prod, x=family.t, axis=-1)
    return 0.5 * (G + np.conj(G.T))


def riesz_diagnostics(family: DDFamily, truncations, ell: float | None = None) -> list:
    """Extreme Gram eigenvalues and condition number for each leading truncation."""
    if ell is not None:
        need = 2 * ell if family.kind == "exp" else ell
        if family.T <= need:
            warnings.warn(f"interval length {family.T} does not exceed {need}; no Riesz bound expected",
                          stacklevel=2)
    G = gram(family)
    rows = []
    for n in truncations:
        n = min(int(n), len(family))
        ev = eigh(G[:n, :n], eigvals_only=True)
        lo, hi = float(ev[0]), float(ev[-1])
        rows.append({"truncation": n, "lambda_min": lo, "lambda_max": hi,
                     "cond": hi / lo if lo > 0 else math.inf})
    return rows


def write_riesz_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["truncation", "lambda_min", "lambda_max", "cond"])
        for r in rows:
            w.writerow([r["truncation"], f"{r['lambda_min']:.16e}", f"{r['lambda_max']:.16e}",
                        f"{r['cond']:.16e}"])
