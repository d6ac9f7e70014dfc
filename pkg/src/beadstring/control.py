"""Boundary-control synthesis: shape, velocity and full terminal-state control.

Targets are per-segment samples on the grid of a given step (see
model.segment_grids) or callables fn(x, j).  Controls are SampledFunction
objects on [0, T].
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh

from . import edd
from .dynamics import invert_chain, march, simulate_characteristics
from .fd import compare_states, make_grid, resample, simulate_fd
from .goursat import build_kernel
from .model import (NumericalFailure, PreconditionError, SampledFunction, StateSnapshot, StringSystem,
                    grid_points, sample_segments, segment_grids)
from .spaces import check_compatibility, features_W0, features_Wm1, norm_W0, norm_Wm1
from .spectral import cluster, eigenfunction, find_frequencies


# ------------------------------------------------------------- helpers

def _as_samples(system, target, step):
    if target is None:
        return tuple(np.zeros(len(x)) for x in segment_grids(system, step))
    if callable(target):
        return sample_segments(system, step, target)[1]
    vals = tuple(np.asarray(v, float) for v in target)
    for x, v in zip(segment_grids(system, step), vals):
        if len(x) != len(v):
            raise PreconditionError("target samples do not match the grid of the requested step")
    return vals


def _node_index(system, step):
    return [grid_points(a, step) if a > 0 else 0 for a in system.nodes]


def write_control_csv(path, f: SampledFunction) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "f"])
        for t, v in zip(f.grid, f.values):
            w.writerow([f"{t:.16e}", f"{v:.16e}"])


def read_control_csv(path) -> SampledFunction:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t = data[:, 0]
    if len(t) < 2:
        raise PreconditionError("control needs at least two samples")
    return SampledFunction(float(t[0]), float(t[1] - t[0]), data[:, 1], "control")


# ------------------------------------------------------ front Volterra

def _front_solve(system, rem, j, Tp_idx, c_idx, h, nodes_idx):
    """h_j(tau), tau in [0, c], from rem(x) = h(T'-x) + int k(x-a_j, s) h(T'-a_j-s) ds."""
    nL = Tp_idx - nodes_idx[j]
    x_loc = nL - np.arange(c_idx + 1)             # local index of x_m inside segment j
    rhs = rem[j][x_loc]
    pot = system.potentials[j]
    if pot.is_zero:
        return rhs.copy()
    kern = build_kernel(system, j, 1, nL * h, h)
    V = kern.values
    out = np.zeros(c_idx + 1)
    for m in range(c_idx + 1):
        ym = nL - m
        if m == 0:
            out[0] = rhs[0]
            continue
        # sigma_i = i h, s = L - sigma_i, trapezoid over i = 0..m
        line = V[ym, nL - np.arange(m + 1)]
        acc = 0.5 * line[0] * out[0] + float(line[1:m] @ out[1:m])
        out[m] = (rhs[m] - h * acc) / (1.0 + 0.5 * h * line[m])
    return out


def _segment_at(nodes_idx, Tp_idx):
    """Segment j with a_j < T' <= a_{j+1} (indices)."""
    j = 0
    while j + 1 < len(nodes_idx) - 1 and nodes_idx[j + 1] < Tp_idx:
        j += 1
    return j


def _march_front(system, target, T, h, which, max_stage=None, budget=None):
    """Right-to-left stages for T <= ell; returns control samples on [0, T]."""
    nodes_idx = _node_index(system, h)
    nT = grid_points(T, h)
    lam_idx = 2 * min(nodes_idx[i + 1] - nodes_idx[i] for i in range(len(nodes_idx) - 1))
    if max_stage is not None:
        lam_idx = min(lam_idx, max(1, grid_points(max_stage, h)))
    F = np.zeros(nT + 1)
    C = 0
    stages = 0
    cap = budget if budget is not None else 2 * math.ceil(nT / lam_idx) + system.N + 2
    while C < nT:
        stages += 1
        if stages > cap:
            raise NumericalFailure("front march exceeded its stage budget")
        Tp_idx = nT - C
        j = _segment_at(nodes_idx, Tp_idx)
        prev = F[C]
        if C > 0:
            # continue the control at its join value while the residual is
            # formed; zero beyond C would read as a drop within one step
            F[C:] = prev
        if C == 0:
            rem = target
        else:
            snap = simulate_characteristics(system, F, T, h)
            got = snap.u if which == "u" else snap.ut
            rem = tuple(a - b for a, b in zip(target, got))
        c_idx = Tp_idx if j == 0 else min(lam_idx, Tp_idx - nodes_idx[j])
        hv = _front_solve(system, rem, j, Tp_idx, c_idx, h, nodes_idx)
        if which == "ut":
            # the trace starts from rest at the arrival time
            hv = np.concatenate([[0.0], np.cumsum(0.5 * h * (hv[1:] + hv[:-1]))])
        if j > 0:
            hv = hv.copy()
            hv[0] = 0.0
            piece = invert_chain(system, hv, j, h).values
        else:
            piece = hv
        F[C:C + c_idx + 1] += piece[:c_idx + 1]
        F[C + c_idx + 1:] = 0.0
        if C > 0:
            # the control may jump where stages meet; the join sample holds the mean
            # of both one-sided values, which keeps the trapezoid mass law second order
            F[C] = prev + 0.5 * piece[0]
        C += c_idx
    return F


def _check_support(system, target, T, h, what):
    nodes_idx = _node_index(system, h)
    nT = grid_points(T, h)
    scale = max(1e-300, max(float(np.max(np.abs(v))) for v in target))
    for j, v in enumerate(target):
        gidx = nodes_idx[j] + np.arange(len(v))
        beyond = gidx > nT
        if np.any(beyond) and np.max(np.abs(v[beyond])) > 1e-8 * scale:
            raise PreconditionError(f"{what} must vanish beyond x = T when T <= ell")


# ------------------------------------------------- endpoint targeting

def _taylor_L(system, n: int):
    """Coefficients c_k with (L^n phi)(ell) = sum_k c_k phi^(k)(ell)."""
    pot = system.potentials[-1]
    D = 2 * n + 2
    qd = np.array([pot.derivative(system.ell, m) for m in range(D + 1)])
    # expression: {k: derivative values of the coefficient function at ell}
    expr = {0: np.eye(1, D + 1, 0).ravel()}

    def dshift(c):
        return np.concatenate([c[1:], [0.0]])

    def times_q(c):
        return np.array([sum(comb(m, i) * qd[i] * c[m - i] for i in range(m + 1)) for m in range(D + 1)])

    for _ in range(n):
        new = {}
        for k, c in expr.items():
            c1 = dshift(c)
            c2 = dshift(c1)
            for kk, cc in ((k, -c2 + times_q(c)), (k + 1, -2 * c1), (k + 2, -c)):
                new[kk] = new.get(kk, np.zeros(D + 1)) + cc
        expr = new
    size = max(expr) + 1
    out = np.zeros(size)
    for k, c in expr.items():
        out[k] = c[0]
    return out


def endpoint_relations(system, d, tol=1e-6):
    """Residuals of L^n phi(ell) = 0, n <= ceil(N/2) - 1, for derivative data d."""
    N = system.N
    d = np.asarray(d, float)
    res = []
    for n in range(max(0, math.ceil(N / 2))):
        c = _taylor_L(system, n)
        res.append(float(c @ d[:len(c)]))
    scale = 1.0 + float(np.max(np.abs(d))) if len(d) else 1.0
    ok = all(abs(r) <= tol * scale for r in res)
    return ok, res


def _bump(k, delta, N):
    def g(t):
        t = np.asarray(t, float)
        b = np.where((t > 0) & (t < 2 * delta), np.sin(np.pi * t / (2 * delta)) ** (2 * N + 2), 0.0)
        return b * (t - delta) ** (2 * k - 1)
    return g


def _end_derivative(u, h, order, npts=None):
    """order-th derivative at the right end by a local polynomial fit."""
    deg = order + 3
    npts = npts or deg + 4
    y = u[-npts:]
    x = -h * np.arange(npts)[::-1]
    c = np.polynomial.polynomial.polyfit(x, y, deg)
    return float(math.factorial(order) * c[order])


def endpoint_targeting(system: StringSystem, d, delta: float, step: float, tol: float = 1e-4):
    """Trace g on (0, 2 delta) at the last mass whose wave has odd derivatives d_1, d_3, ... at ell."""
    N = system.N
    d = np.asarray(d, float)
    if len(d) < N:
        raise PreconditionError(f"need {N} derivative values")
    ok, res = endpoint_relations(system, d, tol)
    if not ok:
        raise PreconditionError(f"derivative data violate the endpoint relations: residuals {res}")
    r = N // 2
    nD = grid_points(2 * delta, step)
    g = np.zeros(nD + 1)
    if r == 0 or not np.any(d[1:2 * r:2]):
        return SampledFunction(0.0, step, g, "trace")
    if delta >= system.step_length / 4:
        raise PreconditionError("time slack must be below a quarter of the step length")
    h = step
    nt = grid_points(system.seg_lengths[-1] + delta, h)
    tgrid = h * np.arange(nD + 1)
    A = np.zeros((r, r))
    basis = []
    for i in range(1, r + 1):
        gi = _bump(i, delta, N)(tgrid)
        basis.append(gi)
        tr = march(system, gi, nt + 1, h, first=N, last=N)
        u = tr.segs[0].field(nt)
        for k in range(1, r + 1):
            A[k - 1, i - 1] = _end_derivative(u, h, 2 * k - 1)
    if abs(np.linalg.det(A)) < 1e-14 * max(1.0, np.max(np.abs(A))) ** r:
        raise NumericalFailure("endpoint map is singular for the chosen bumps")
    b = np.linalg.solve(A, d[1:2 * r:2])
    for bi, gi in zip(b, basis):
        g = g + bi * gi
    return SampledFunction(0.0, step, g, "trace")


def _end_data(system, vals, h):
    """phi^(k)(ell), k < N, from the last-segment samples."""
    return np.array([_end_derivative(vals[-1], h, k) for k in range(system.N)])


# --------------------------------------------------- shape / velocity

def _need_check(system, vals, h, which):
    xs = segment_grids(system, h)
    if which == "u":
        rep = check_compatibility(system, xs, vals)
    else:
        rep = check_compatibility(system, xs, [np.zeros_like(v) for v in vals], vals)
        rep.entries = [e for e in rep.entries if e["field"] == "ut"]
    return rep


def shape_control(system: StringSystem, phi, T: float, step: float, check: bool = True,
                  max_stage: float | None = None) -> SampledFunction:
    """Control f on [0, T] with u^f(., T) = phi."""
    h = step
    target = _as_samples(system, phi, h)
    if check:
        rep = _need_check(system, target, h, "u")
        if not rep.passed:
            raise PreconditionError("target fails compatibility: " + rep.to_json())
    nT = grid_points(T, h)
    if not any(np.any(v) for v in target):
        return SampledFunction(0.0, h, np.zeros(nT + 1), "control")
    if T <= system.ell + 1e-12:
        _check_support(system, target, T, h, "target")
        return SampledFunction(0.0, h, _march_front(system, target, T, h, "u", max_stage), "control")
    # T > ell: endpoint targeting, then the front march started at ell
    nl = grid_points(system.ell, h)
    lam = system.step_length
    d_idx = min(nT - nl, max(1, int(math.floor(0.99 * lam / 4 / h))))
    delta = d_idx * h
    s0 = nT - nl - d_idx                      # silent lead-in
    F = np.zeros(nT + 1)
    if system.N >= 1:
        d = _end_data(system, target, h)
        if system.N >= 2:
            g = endpoint_targeting(system, d, delta, h)
            if np.any(g.values):
                fg = invert_chain(system, g.values, system.N, h).values
                F[s0:s0 + len(fg)] += fg[: nT + 1 - s0]
        elif abs(d[0]) > 1e-6 * (1 + max(float(np.max(np.abs(v))) for v in target)):
            raise PreconditionError("target must vanish at ell")
    snap = simulate_characteristics(system, F, T, h) if np.any(F) else None
    rem = target if snap is None else tuple(a - b for a, b in zip(target, snap.u))
    fr = _march_front(system, rem, system.ell, h, "u", max_stage)
    F[nT - nl:] += fr
    return SampledFunction(0.0, h, F, "control")


def velocity_control(system: StringSystem, psi, T: float, step: float, check: bool = True,
                     max_stage: float | None = None) -> SampledFunction:
    """Control f on [0, T] with u^f_t(., T) = psi (T <= ell)."""
    h = step
    target = _as_samples(system, psi, h)
    if check:
        rep = _need_check(system, target, h, "ut")
        if not rep.passed:
            raise PreconditionError("velocity target fails compatibility: " + rep.to_json())
    nT = grid_points(T, h)
    if not any(np.any(v) for v in target):
        return SampledFunction(0.0, h, np.zeros(nT + 1), "control")
    if T > system.ell + 1e-12:
        raise PreconditionError("velocity synthesis by front marching needs T <= ell; use full_control")
    _check_support(system, target, T, h, "velocity target")
    return SampledFunction(0.0, h, _march_front(system, target, T, h, "ut", max_stage), "control")


# ------------------------------------------------------ Riesz bases

@dataclass
class SpectralData:
    system: StringSystem
    dx: float
    clusters: list                 # list of arrays of frequencies
    eig: list                      # list of lists of EigenData, aligned with clusters

    @property
    def P(self) -> int:
        return len(self.clusters)

    def flat(self):
        return [e for c in self.eig for e in c]


def spectral_data(system: StringSystem, P: int, dx: float) -> SpectralData:
    """First P clusters of the spectrum with eigenfunctions on the dx grid."""
    count = P * (system.N + 1) + 2 * system.N + 4
    while True:
        freqs = find_frequencies(system, count=count)
        cs = cluster(freqs, system)
        # the last component may be cut by the count; keep complete ones only
        if len(cs.clusters) > P:
            break
        count *= 2
    clusters = cs.clusters[:P]
    eig = []
    n = 0
    for c in clusters:
        row = []
        for lam in c:
            n += 1
            row.append(eigenfunction(system, float(lam), dx, n))
        eig.append(row)
    return SpectralData(system, dx, clusters, eig)


@dataclass
class RieszBasisW:
    which: str
    P: int
    labels: list                 # (p, k)
    funcs: list                  # per-segment sample tuples
    features: np.ndarray         # rows: feature vectors in the discrete W inner product
    gram: np.ndarray
    spec: SpectralData

    def cond(self) -> float:
        ev = eigh(self.gram, eigvals_only=True)
        return float(ev[-1] / ev[0]) if ev[0] > 0 else math.inf


def build_riesz_basis(spec: SpectralData, which: str = "W0") -> RieszBasisW:
    system = spec.system
    xs = spec.eig[0][0].xs
    funcs, labels, feats = [], [], []
    for p, (lams, eigs) in enumerate(zip(spec.clusters, spec.eig), start=1):
        for e in eigs:
            if abs(e.dphi0) < 1e-12:
                raise NumericalFailure(f"mode {e.n} has vanishing boundary slope")
        n = len(eigs)
        for k in range(n):
            acc = [np.zeros_like(v) for v in eigs[0].phis]
            for j in range(k, n):
                prod = np.prod([lams[j] - lams[l] for l in range(k)]) if k else 1.0
                if which == "W0":
                    w = prod / eigs[j].eta
                else:
                    # printed weight: slope of the k-th member of the cluster
                    w = prod * eigs[k].dphi0
                acc = [a + w * v for a, v in zip(acc, eigs[j].phis)]
            funcs.append(tuple(acc))
            labels.append((p, k + 1))
            feats.append(features_W0(xs, acc, system) if which == "W0" else features_Wm1(xs, acc, system))
    F = np.array(feats)
    return RieszBasisW(which, spec.P, labels, funcs, F, F @ F.T, spec)


def expand_target(y, basis: RieszBasisW):
    """Least-squares coefficients of y in the basis; returns (coeffs, relative residual)."""
    system = basis.spec.system
    xs = basis.spec.eig[0][0].xs
    fy = features_W0(xs, y, system) if basis.which == "W0" else features_Wm1(xs, y, system)
    rhs = basis.features @ fy
    try:
        c = cho_solve(cho_factor(basis.gram), rhs)
    except np.linalg.LinAlgError:
        c = np.linalg.lstsq(basis.gram, rhs, rcond=None)[0]
    resid = fy - basis.features.T @ c
    ny = float(np.linalg.norm(fy))
    return c, (float(np.linalg.norm(resid)) / ny if ny > 0 else 0.0)


def _mode_coefficients(spec: SpectralData, c0, c1):
    """Undo the basis mixing: alpha_j, beta_j per mode from basis coefficients."""
    alpha, beta = [], []
    pos = 0
    for lams, eigs in zip(spec.clusters, spec.eig):
        n = len(lams)
        d0 = np.asarray(c0[pos:pos + n])
        d1 = np.asarray(c1[pos:pos + n])
        pos += n
        # W0 coefficients are divided differences of alpha
        alpha.append(edd.dd_reconstruct(lams, d0))
        b = np.array([sum(d1[k] * eigs[k].dphi0 * np.prod([lams[j] - lams[l] for l in range(k)])
                          for k in range(j + 1)) for j in range(n)])
        beta.append(b / np.array([e.dphi0 for e in eigs]))
    return alpha, beta


# ---------------------------------------------------------- moments

@dataclass
class MomentData:
    P: int
    clusters: list
    alpha: list
    beta: list
    gamma: dict = field(default_factory=dict)       # signed p -> gamma_k^p
    gamma_dd: dict = field(default_factory=dict)    # signed p -> [gamma_1..gamma_k]'
    gamma_hat: dict = field(default_factory=dict)   # signed p -> y0 + i y1, parity extended

    @classmethod
    def build(cls, clusters, alpha, beta, y0c=None, y1c=None):
        md = cls(len(clusters), clusters, alpha, beta)
        for p, (lams, a, b) in enumerate(zip(clusters, alpha, beta), start=1):
            for sgn in (1, -1):
                g = -1j * sgn * np.asarray(a) + np.asarray(b)
                md.gamma[sgn * p] = g
                md.gamma_dd[sgn * p] = edd.dd_numbers(sgn * np.asarray(lams), g)
        if y0c is not None:
            pos = 0
            for p, lams in enumerate(clusters, start=1):
                n = len(lams)
                a0 = np.asarray(y0c[pos:pos + n])
                a1 = np.asarray(y1c[pos:pos + n])
                pos += n
                md.gamma_hat[p] = a0 + 1j * a1
                md.gamma_hat[-p] = a0 - 1j * a1
        return md

    def dd_alpha(self):
        return [edd.dd_numbers(l, a) for l, a in zip(self.clusters, self.alpha)]

    def dd_beta(self):
        return [edd.dd_numbers(l, b) for l, b in zip(self.clusters, self.beta)]

    def l2_identity_gap(self) -> float:
        lhs = sum(float(np.sum(np.abs(self.gamma_dd[p]) ** 2)) for p in range(1, self.P + 1))
        rhs = sum(float(np.sum(np.abs(x) ** 2)) for x in self.dd_alpha()) + \
            sum(float(np.sum(np.abs(x) ** 2)) for x in self.dd_beta())
        return abs(lhs - rhs) / max(rhs, 1e-300)


def moment_coefficients(spec: SpectralData, f, T: float, nt: int | None = None):
    """alpha, beta of a control by time quadrature."""
    lam_max = max(float(np.max(c)) for c in spec.clusters)
    t = edd.time_grid(T, lam_max, 80) if nt is None else np.linspace(0, T, nt + 1)
    fT = np.asarray(f(T - t), float)
    from scipy.integrate import simpson
    alpha = [np.array([simpson(fT * np.sin(l * t), x=t) for l in c]) for c in spec.clusters]
    beta = [np.array([simpson(fT * np.cos(l * t), x=t) for l in c]) for c in spec.clusters]
    return alpha, beta


def solve_moments(spec: SpectralData, md: MomentData, T: float, t=None):
    """Minimal-norm real g with <g, S_k^p> = [alpha]', <g, C_k^p> = [beta]' on [0, T]."""
    lam_max = max(float(np.max(c)) for c in spec.clusters)
    if t is None:
        t = edd.time_grid(T, lam_max, 60)
    S = edd.edd_family(spec.clusters, T, "sin", mirror=False, t=t)
    Cf = edd.edd_family(spec.clusters, T, "cos", mirror=False, t=t)
    fam = edd.DDFamily(T, t, "real", np.vstack([S.members, Cf.members]), S.labels + Cf.labels)
    G = edd.gram(fam).real
    rhs = np.concatenate([np.concatenate(md.dd_alpha()), np.concatenate(md.dd_beta())]).real
    ev = eigh(G, eigvals_only=True)
    cond = float(ev[-1] / ev[0]) if ev[0] > 0 else math.inf
    if cond > 1e12:
        warnings.warn(f"moment Gram condition {cond:.3e}; reduce P or lengthen T", stacklevel=2)
    z = np.linalg.lstsq(G, rhs, rcond=1e-14)[0]
    g = z @ fam.members.real
    return t, g, cond


@dataclass
class FullControlResult:
    control: SampledFunction
    T: float
    P: int
    moments: MomentData
    energy_ratio: float
    gram_cond: float
    expansion_residual: tuple
    coefficient_energy: float


def full_control(system: StringSystem, y0, y1, T: float, P: int, dx: float,
                 spec: SpectralData | None = None, bases=None, check: bool = True) -> FullControlResult:
    """Control on [0, T] steering the string from rest to (y0, y1).

    check=False skips the compatibility gate; the synthesis then acts on the
    basis projection of the targets.
    """
    if not T > 2 * system.ell:
        raise PreconditionError(f"full control needs T > 2 ell = {2 * system.ell}")
    if check:
        u0 = _as_samples(system, y0, dx)
        u1 = _as_samples(system, y1, dx)
        rep = check_compatibility(system, segment_grids(system, dx), u0, u1)
        if not rep.passed:
            raise PreconditionError("targets fail compatibility: " + rep.to_json())
    if spec is None:
        spec = spectral_data(system, P, dx)
    if bases is None:
        bases = (build_riesz_basis(spec, "W0"), build_riesz_basis(spec, "Wm1"))
    b0, b1 = bases
    y0 = _as_samples(system, y0, dx)
    y1 = _as_samples(system, y1, dx)
    c0, r0 = expand_target(y0, b0)
    c1, r1 = expand_target(y1, b1)
    alpha, beta = _mode_coefficients(spec, c0, c1)
    md = MomentData.build(spec.clusters, alpha, beta, c0, c1)
    t, g, cond = solve_moments(spec, md, T)
    # f(t) = g(T - t)
    f_vals = g[::-1].copy()
    ctrl = SampledFunction(0.0, float(t[1] - t[0]), f_vals, "control")
    xs = spec.eig[0][0].xs
    n0 = norm_W0(xs, y0, system) ** 2
    n1 = norm_Wm1(xs, y1, system) ** 2
    from scipy.integrate import simpson
    fn = float(simpson(f_vals ** 2, x=t))
    ratio = fn / (n0 + n1) if n0 + n1 > 0 else 0.0
    coef = sum(float(np.sum(np.abs(md.gamma_dd[p]) ** 2)) for p in range(1, md.P + 1))
    return FullControlResult(ctrl, T, spec.P, md, ratio, cond, (r0, r1), coef)


# ------------------------------------------------------- verification

def verify_control(system: StringSystem, f, y0, y1, T: float, dx: float, cfl: float = 0.9,
                   target_step: float | None = None) -> dict:
    """Run the FD oracle with control f and compare the terminal state to (y0, y1)."""
    grid = make_grid(system, dx, T, cfl)
    fn = f if callable(f) else (lambda t: 0.0)
    snap = simulate_fd(system, fn, T, grid)
    ts = target_step or dx
    xt = segment_grids(system, ts)
    u0 = _as_samples(system, y0, ts)
    u1 = _as_samples(system, y1, ts) if y1 is not None else None
    tgt = StateSnapshot(T, tuple(xt), u0, u1 if u1 is not None else tuple(np.zeros_like(v) for v in u0),
                        np.array([u0[j][0] for j in range(1, system.N + 1)]),
                        np.zeros(system.N))
    # compare on the FD grid
    tg = resample(tgt, snap.x)
    rep = compare_states(snap, tg, system, norms=("L2", "W0", "Wm1"))
    out = {"W0_err": rep["W0"], "W0_ref": rep["W0_ref"],
           "W0_rel": rep["W0"] / rep["W0_ref"] if rep["W0_ref"] > 0 else rep["W0"],
           "L2_err": rep["L2"], "L2_ut_err": rep["L2_ut"]}
    if y1 is not None:
        out["Wm1_err"] = rep["Wm1"]
        out["Wm1_ref"] = rep["Wm1_ref"]
        out["Wm1_rel"] = rep["Wm1"] / rep["Wm1_ref"] if rep["Wm1_ref"] > 0 else rep["Wm1"]
        den = rep["W0_ref"] ** 2 + rep["Wm1_ref"] ** 2
        num = rep["W0"] ** 2 + rep["Wm1"] ** 2
        out["combined_rel"] = math.sqrt(num / den) if den > 0 else math.sqrt(num)
    comp = check_compatibility(system, snap.x, snap.u, snap.ut, dt=grid.dt)
    out["compatibility_passed"] = comp.passed
    out["snapshot"] = snap
    return out
