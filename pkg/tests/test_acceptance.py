"""Acceptance criteria 1-9, each at its stated tolerance.

Every test records a PASS/FAIL line (printed in the terminal summary) and
then asserts, so a failing criterion is both reported and counted.
"""
import math
import time
import warnings

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.special import j1

from beadstring import control as C
from beadstring import edd
from beadstring.dynamics import TransmissionOperator, simulate_characteristics
from beadstring.fd import compare_states, make_grid, simulate_fd
from beadstring.goursat import KernelTable, interior_residual, solve_goursat
from beadstring.model import PreconditionError, uniform_system
from beadstring.spaces import check_compatibility
from beadstring.spectral import asymptotics_report, cluster, eigen_system, find_frequencies, inner_M


def _record(log, k, ok, detail):
    log[k] = (bool(ok), detail)
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def _ratios(v):
    return [v[i] / v[i + 1] for i in range(len(v) - 1)]


# ---------------------------------------------------------------- 1

def _bessel_kernel(y, s):
    # q = 1: k(y, s) = -y J1(z)/z with z = sqrt(s^2 - y^2)
    z = np.sqrt(np.maximum(s * s - y * y, 0.0))
    safe = np.where(z > 1e-12, z, 1.0)
    return -y * np.where(z > 1e-12, j1(safe) / safe, 0.5)


def test_criterion_1_goursat_convergence(acceptance_log):
    t0 = time.time()
    q1 = lambda y: 1.0 + 0.0 * np.asarray(y, float)
    errs, res, diag = [], [], []
    for h in (0.05, 0.025, 0.0125):
        v, _ = solve_goursat(q1, 1.0, h)
        n = v.shape[0]
        Y, S = np.meshgrid(h * np.arange(n), h * np.arange(v.shape[1]), indexing="ij")
        inside = S >= Y - 1e-12
        errs.append(float(np.max(np.abs(v - _bessel_kernel(Y, S))[inside])))
        tab = KernelTable(0.0, 1, 1.0, h, v, q1)
        res.append(float(np.max(np.abs(interior_residual(tab)))))
        diag.append(float(np.max(np.abs(tab.diag() + 0.5 * h * np.arange(n)))))
    v0, _ = solve_goursat(lambda y: 0.0 * np.asarray(y, float), 1.0, 0.05)
    zero_ok = float(np.max(np.abs(v0))) == 0.0
    r_err, r_res = _ratios(errs), _ratios(res)
    ok = (all(3.5 < r < 4.5 for r in r_err) and all(3.3 < r < 4.5 for r in r_res)
          and max(diag) < 1e-14 and zero_ok and time.time() - t0 < 10)
    _record(acceptance_log, 1, ok, f"error ratios {np.round(r_err, 2).tolist()}, residual ratios "
            f"{np.round(r_res, 2).tolist()}, diagonal error {max(diag):.1e}, q=0 kernel zero {zero_ok}, "
            f"{time.time() - t0:.1f}s")


# ---------------------------------------------------------------- 2

def test_criterion_2_transmission(acceptance_log):
    t0 = time.time()
    h = 1e-3
    s = uniform_system(1.0, [0.4], [1.0])
    S = TransmissionOperator(s, 1, h)
    t = h * np.arange(1001)
    f = np.sin(3 * t) ** 2 * np.exp(-t)
    rt = float(np.max(np.abs(S.inverse(S.apply(f)).values - f)))
    ramp = t - 0.5 * (1 - np.exp(-2 * t))
    ramp_err = float(np.max(np.abs(S.apply(t).values - ramp)))
    step = S.apply(np.ones_like(t)).values
    # continuity: increments shrink with the step (a jump would not)
    S2 = TransmissionOperator(s, 1, h / 2)
    step2 = S2.apply(np.ones(2001)).values
    jump1, jump2 = float(np.max(np.abs(np.diff(step)))), float(np.max(np.abs(np.diff(step2))))
    ok = rt < 1e-6 and ramp_err < 1e-6 and jump2 < 0.6 * jump1 and jump1 < 1e-2 and time.time() - t0 < 10
    _record(acceptance_log, 2, ok, f"round trip {rt:.1e}, ramp {ramp_err:.1e}, step-response increments "
            f"{jump1:.1e} -> {jump2:.1e}, {time.time() - t0:.1f}s")


# ---------------------------------------------------------------- 3

def test_criterion_3_solver_cross_validation(acceptance_log):
    t0 = time.time()
    s = uniform_system(1.0, [0.4], [1.0])
    f = lambda t: np.sin(2 * np.asarray(t, float)) ** 3
    gaps = []
    for dx in (0.02, 0.01, 0.005):
        a = simulate_characteristics(s, f, 1.2, dx)
        b = simulate_fd(s, f, 1.2, make_grid(s, dx, 1.2, 0.9))
        gaps.append(compare_states(a, b, s, norms=("L2",))["L2"])
    r = _ratios(gaps)
    ok = all(3.5 < x < 4.5 for x in r) and time.time() - t0 < 60
    _record(acceptance_log, 3, ok, f"L2 gaps {[f'{g:.2e}' for g in gaps]}, ratios {np.round(r, 2).tolist()}, "
            f"{time.time() - t0:.1f}s")


# ---------------------------------------------------------------- 4

def _half_mass_oracle(count):
    """Roots of lam*sin(lam/2) - 2*cos(lam/2) (one per (2 pi k, 2 pi k + pi)) and 2 pi m."""
    g = lambda x: x * math.sin(x / 2) - 2 * math.cos(x / 2)
    tan_roots = [brentq(g, 2 * math.pi * k + 1e-12, 2 * math.pi * k + math.pi - 1e-12, xtol=1e-15, rtol=1e-15)
                 for k in range(count)]
    two_pi = [2 * math.pi * m for m in range(1, count + 1)]
    return np.sort(np.array(tan_roots + two_pi))[:count], np.array(tan_roots)


def test_criterion_4_spectrum(acceptance_log):
    t0 = time.time()
    s = uniform_system(1.0, [0.5], [1.0])
    freqs = find_frequencies(s, count=40)
    oracle, tan_roots = _half_mass_oracle(40)
    err = float(np.max(np.abs(freqs - oracle)))
    near_2pi = [abs(l - 2 * math.pi * round(l / (2 * math.pi))) for l in freqs
                if abs(l / (2 * math.pi) - round(l / (2 * math.pi))) < 1e-6]
    err_2pi = max(near_2pi)
    err_tan = max(float(np.min(np.abs(tan_roots - l))) for l in freqs if
                  abs(l / (2 * math.pi) - round(l / (2 * math.pi))) >= 1e-6)
    sizes = cluster(freqs, s).sizes()
    rep = asymptotics_report(freqs, s)
    devs = [rep["families"][j]["max_scaled_dev"] for j in rep["families"]]
    s1 = uniform_system(1.0, [0.5], [1.0], q=1.0)
    rep1 = asymptotics_report(find_frequencies(s1, count=40), s1)
    pert = rep1["perturbation"]["scaled_dev"]
    # bounded: m|dev| -> 2/pi for the tangent family, n|lam - gamma| stays O(1)
    bounded = max(devs) < 1.0 and max(pert) < 0.5 and max(pert[20:]) <= 1.2 * max(pert[:20])
    ok = (err_2pi < 1e-10 and err_tan < 1e-10 and err < 1e-10 and max(sizes) <= 2 and bounded
          and time.time() - t0 < 30)
    _record(acceptance_log, 4, ok, f"2 pi m error {err_2pi:.1e}, tangent-family error {err_tan:.1e}, "
            f"max cluster {max(sizes)}, family m|dev| max {np.round(devs, 3).tolist()}, "
            f"q=1 n|lam-gamma| max {max(pert):.3f}, {time.time() - t0:.1f}s")


# ---------------------------------------------------------------- 5

def test_criterion_5_eigenfunctions(acceptance_log):
    t0 = time.time()
    s = uniform_system(1.0, [0.4], [1.0])
    dx = 0.001
    eig = eigen_system(s, 20, dx)
    G = np.array([[inner_M(s, a.xs, a.phis, b.phis) for b in eig] for a in eig])
    orth = float(np.max(np.abs(G - np.eye(20))))
    comp = all(check_compatibility(s, e.xs, e.phis, extra=2).passed for e in eig)
    freqs = find_frequencies(s, count=60)
    eig60 = eigen_system(s, 60, 0.005)
    rep = asymptotics_report(freqs, s, eig60)
    d0 = np.abs(rep["families"][0]["dphi0"])
    # slots m pi/0.6 that coincide with some m' pi/0.4 (m divisible by 3) host a
    # mixed pair; the separated second-family slots are the ones that stay bounded
    fam1 = rep["families"][1]
    d1 = np.array([abs(d) for m, d in zip(fam1["m"], fam1["dphi0"]) if m % 3])
    # second family: slopes stay bounded while the first family's grow like lam
    bounded = float(np.max(d1)) < 5.0 and float(np.max(d0)) > 10 * float(np.max(d1[len(d1) // 2:]))
    ok = orth < 1e-8 and comp and bounded and time.time() - t0 < 30
    _record(acceptance_log, 5, ok, f"orthonormality {orth:.1e}, compatibility {comp}, second-family "
            f"|phi'(0)| max {np.max(d1):.2f} vs first-family {np.max(d0):.1f}, {time.time() - t0:.1f}s")


# ---------------------------------------------------------------- 6

def test_criterion_6_edd(acceptance_log):
    t0 = time.time()
    rng = np.random.default_rng(6)
    # the round trip runs on the clusters full_control actually uses
    s2 = uniform_system(1.0, [0.3, 0.6], [1.0, 0.5])
    rt, perm_err = 0.0, 0.0
    for c in cluster(find_frequencies(s2, count=60), s2).clusters:
        a = rng.normal(size=len(c))
        rt = max(rt, float(np.max(np.abs(edd.dd_reconstruct(c, edd.dd_numbers(c, a)) - a))))
        perm = rng.permutation(len(c))
        top = edd.dd_numbers(c, a)[-1]
        top_p = edd.dd_numbers(c[perm], a[perm])[-1]
        perm_err = max(perm_err, abs(top - top_p) / max(1.0, abs(top)))
    s = uniform_system(1.0, [0.5], [1.0])
    freqs = find_frequencies(s, count=40)
    cs = cluster(freqs, s)
    T = 2.2
    t = edd.time_grid(T, float(np.max(freqs)))
    truncs = [10, 20, 30, 40, 50, 60]
    rows_e = edd.riesz_diagnostics(edd.edd_family(cs.clusters, T, t=t), truncs, s.ell)
    rows_r = edd.riesz_diagnostics(edd.raw_family(freqs, T, t=t), truncs)
    le = [r["lambda_min"] for r in rows_e]
    lr = [r["lambda_min"] for r in rows_r]
    plateau = min(le) > 0.1 and le[-1] > 0.5 * le[0]
    decays = lr[-1] < 0.1 * lr[0]
    ok = rt < 1e-12 and perm_err < 1e-12 and plateau and decays and time.time() - t0 < 60
    _record(acceptance_log, 6, ok, f"round trip {rt:.1e}, permutation {perm_err:.1e}, divided-difference "
            f"lambda_min {np.round(le, 3).tolist()}, raw {[f'{x:.1e}' for x in lr]}, {time.time() - t0:.1f}s")


# ---------------------------------------------------------------- 7

def _bump(lo, hi):
    def p(x, j):
        z = np.clip((x - lo) / (hi - lo), 0, 1)
        return np.where((x > lo) & (x < hi), np.sin(np.pi * z) ** 4, 0.0)
    return p


def test_criterion_7_shape_control(acceptance_log):
    t0 = time.time()
    s1 = uniform_system(1.0, [0.4], [1.0])
    phi = _bump(0.5, 0.9)
    e1 = []
    for h in (0.01, 0.005, 0.0025):
        f = C.shape_control(s1, phi, 0.9, h)
        e1.append(C.verify_control(s1, f, phi, None, 0.9, h)["W0_rel"])
    s2 = uniform_system(1.0, [0.3, 0.6], [1.0, 0.5])
    phi2 = lambda x, j: np.sin(np.pi * x) * (1 + x)
    h2 = 0.00125
    f2 = C.shape_control(s2, phi2, 1.1, h2)
    # unit Courant number: the control has cusps of slope ~2e3 where stages
    # meet, which leapfrog carries without dispersion only at dt = dx
    e2 = C.verify_control(s2, f2, phi2, None, 1.1, h2, cfl=1.0)["W0_rel"]
    ok = e1[-1] < 0.03 and all(b < a for a, b in zip(e1, e1[1:])) and e2 < 0.05 and time.time() - t0 < 120
    _record(acceptance_log, 7, ok, f"N=1 T=0.9 W0 errors {[f'{e:.2%}' for e in e1]}, N=2 T=1.1 "
            f"(phi'(ell) = {-2 * math.pi:.2f}) W0 error {e2:.2%}, {time.time() - t0:.1f}s")


# ---------------------------------------------------------------- 8

T_FULL = 2.2


def _reachable(system, k, dx):
    g = lambda t: np.sin(np.pi * t / T_FULL) ** 2 * np.cos((k + 1) * 1.3 * t + 0.4 * k) * (1 + 0.3 * k * t)
    sn = simulate_characteristics(system, g, T_FULL, dx)
    return sn.u, sn.ut


def test_criterion_8_full_control(acceptance_log):
    t0 = time.time()
    parts, ok = [], True
    for name, s in (("N=1", uniform_system(1.0, [0.4], [1.0])),
                    ("N=2", uniform_system(1.0, [0.3, 0.6], [1.0, 0.5]))):
        byP, byGrid = [], []
        for dx in (0.01, 0.005):
            y0, y1 = _reachable(s, 0, dx)
            spec = C.spectral_data(s, 20, dx)
            for P in (10, 15, 20):
                sp = C.SpectralData(s, dx, spec.clusters[:P], spec.eig[:P])
                r = C.full_control(s, y0, y1, T_FULL, P, dx, spec=sp)
                err = C.verify_control(s, r.control, y0, y1, T_FULL, dx)["combined_rel"]
                if dx == 0.005:
                    byP.append(err)
                if P == 20:
                    byGrid.append(err)
        ratios = []
        spec = C.spectral_data(s, 20, 0.005)
        for k in range(5):
            y0, y1 = _reachable(s, k, 0.005)
            ratios.append(C.full_control(s, y0, y1, T_FULL, 20, 0.005, spec=spec).energy_ratio)
        band = max(ratios) / min(ratios)
        mono_p = all(b < a for a, b in zip(byP, byP[1:]))
        mono_g = byGrid[1] < byGrid[0]
        ok = ok and byP[-1] < 0.10 and mono_p and mono_g and band < 10
        parts.append(f"{name}: errors in P {[f'{e:.1%}' for e in byP]}, grid 0.01->0.005 "
                     f"{[f'{e:.1%}' for e in byGrid]}, energy band x{band:.2f}")
    ok = ok and time.time() - t0 < 600
    _record(acceptance_log, 8, ok, "; ".join(parts) + f", {time.time() - t0:.1f}s")


# ---------------------------------------------------------------- 9

def test_criterion_9_reachability_negative(acceptance_log):
    t0 = time.time()
    s = uniform_system(1.0, [0.3, 0.6], [1.0, 0.5])
    refused, resid = [], []
    for dx in (0.005, 0.0025):
        y0, y1 = _reachable(s, 0, dx)
        x2 = s.nodes[2]
        y0 = [v.copy() for v in y0]
        seg = np.linspace(x2, 1.0, len(y0[2]))
        # jump of 0.3 at a_2, still zero at ell
        y0[2] = y0[2] + 0.3 * np.cos(0.5 * np.pi * (seg - x2) / (1.0 - x2))
        try:
            C.full_control(s, y0, y1, T_FULL, 20, dx)
            refused.append(False)
        except PreconditionError:
            refused.append(True)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            r = C.full_control(s, y0, y1, T_FULL, 20, dx, check=False)
        snap = C.verify_control(s, r.control, y0, y1, T_FULL, dx)["snapshot"]
        # achieved state is continuous at a_2, so one side misses its target
        resid.append(max(abs(snap.u[2][0] - y0[2][0]), abs(snap.u[1][-1] - y0[1][-1])))
    ok = all(refused) and min(resid) > 0.05 and resid[-1] > 0.5 * resid[0] and time.time() - t0 < 60
    _record(acceptance_log, 9, ok, f"refused {refused}, residual at a_2 {np.round(resid, 3).tolist()} "
            f"(jump 0.3), {time.time() - t0:.1f}s")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
