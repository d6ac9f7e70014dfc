"""System description for a string carrying interior point masses.

Positions are measured from the controlled end x = 0.  Segment j runs from
node j to node j+1, where the node list is (0, a_1, ..., a_N, ell).
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class ConfigError(ValueError):
    """Raised for configurations that violate the system invariants."""


class PreconditionError(ValueError):
    """Raised when an operation's input does not meet its stated precondition."""


class NumericalFailure(RuntimeError):
    """Raised when an iterative or marching scheme fails to converge."""


_KINDS = ("poly", "samples")


@dataclass(frozen=True)
class Potential:
    """Potential q on one closed segment [lo, hi].

    kind "poly": coefficients c_0, c_1, ... of q(x) = sum c_k x^k in the global
    coordinate.  kind "samples": uniform samples over [lo, hi], linearly
    interpolated and held constant outside the segment.
    """

    kind: str
    data: tuple
    lo: float
    hi: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "poly":
            return np.polynomial.polynomial.polyval(x, np.asarray(self.data, float)) + 0.0 * x
        grid = np.linspace(self.lo, self.hi, len(self.data))
        return np.interp(x, grid, np.asarray(self.data, float))

    @property
    def is_zero(self) -> bool:
        return all(float(c) == 0.0 for c in self.data)

    @property
    def smoothness(self) -> float:
        """Number of continuous derivatives available on the segment."""
        if self.kind == "poly" or self.is_zero:
            return math.inf
        return 0

    def sup(self) -> float:
        xs = np.linspace(self.lo, self.hi, 257)
        return float(np.max(np.abs(self(xs))))

    def derivative(self, x: float, order: int) -> float:
        if order == 0:
            return float(self(x))
        if self.kind == "poly":
            c = np.polynomial.polynomial.polyder(np.asarray(self.data, float), order)
            return float(np.polynomial.polynomial.polyval(x, c))
        # local quartic fit; linear interpolation has no usable higher derivatives
        n = len(self.data)
        grid = np.linspace(self.lo, self.hi, n)
        idx = np.argsort(np.abs(grid - x))[: min(n, 7)]
        deg = min(4, len(idx) - 1)
        if order > deg:
            return 0.0
        p = np.polynomial.Polynomial.fit(grid[idx], np.asarray(self.data, float)[idx], deg)
        return float(p.deriv(order)(x))


def zero_potential(lo: float, hi: float) -> Potential:
    return Potential("poly", (0.0,), float(lo), float(hi))


@dataclass(frozen=True)
class StringSystem:
    ell: float
    positions: tuple
    masses: tuple
    potentials: tuple

    @property
    def N(self) -> int:
        return len(self.positions)

    @property
    def nodes(self) -> tuple:
        return (0.0, *self.positions, self.ell)

    @property
    def seg_lengths(self) -> tuple:
        nd = self.nodes
        return tuple(nd[j + 1] - nd[j] for j in range(len(nd) - 1))

    @property
    def step_length(self) -> float:
        """Marching step 2 * (shortest gap between consecutive nodes)."""
        return 2.0 * min(self.seg_lengths)

    @property
    def q_is_zero(self) -> bool:
        return all(p.is_zero for p in self.potentials)

    def q(self, x):
        """Global potential; at a mass point the right-hand segment wins."""
        x = np.asarray(x, dtype=float)
        seg = np.clip(np.searchsorted(np.asarray(self.positions), x, side="right"), 0, self.N)
        out = np.zeros_like(x)
        for j, pot in enumerate(self.potentials):
            sel = seg == j
            if np.any(sel):
                out[sel] = pot(x[sel])
        return out

    def segment_of(self, x: float) -> int:
        return int(np.searchsorted(np.asarray(self.positions), x, side="right"))

    def to_config(self) -> dict:
        return {
            "ell": self.ell,
            "masses": [{"a": a, "M": m} for a, m in zip(self.positions, self.masses)],
            "potentials": [{"kind": p.kind, "data": list(p.data)} for p in self.potentials],
        }

    def with_masses(self, positions, masses, potentials=None) -> "StringSystem":
        cfg = {"ell": self.ell, "masses": [{"a": a, "M": m} for a, m in zip(positions, masses)]}
        if potentials is not None:
            cfg["potentials"] = potentials
        return validate_system(cfg)


def _build_potential(entry, lo, hi) -> Potential:
    if not isinstance(entry, dict) or set(entry) - {"kind", "data"}:
        raise ConfigError("unevaluable potential: expected {kind, data}")
    kind = entry.get("kind")
    data = entry.get("data")
    if kind not in _KINDS:
        raise ConfigError(f"unevaluable potential: unknown kind {kind!r}")
    try:
        vals = tuple(float(v) for v in data)
    except (TypeError, ValueError) as exc:
        raise ConfigError("unevaluable potential: non-numeric data") from exc
    if not vals or not all(math.isfinite(v) for v in vals):
        raise ConfigError("unevaluable potential: empty or non-finite data")
    if kind == "samples" and len(vals) < 2:
        raise ConfigError("unevaluable potential: need at least two samples")
    return Potential(kind, vals, float(lo), float(hi))


def validate_system(raw) -> StringSystem:
    """Validate a parsed configuration (or an existing system) and freeze it."""
    if isinstance(raw, StringSystem):
        return raw
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    unknown = set(raw) - {"ell", "masses", "potentials"}
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    try:
        ell = float(raw["ell"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("missing or non-numeric ell") from exc
    if not ell > 0 or not math.isfinite(ell):
        raise ConfigError("nonpositive length")
    positions, masses = [], []
    for m in raw.get("masses", []) or []:
        if not isinstance(m, dict) or set(m) - {"a", "M"} or not {"a", "M"} <= set(m):
            raise ConfigError("each mass needs exactly the keys a and M")
        positions.append(float(m["a"]))
        masses.append(float(m["M"]))
    if any(not M > 0 for M in masses):
        raise ConfigError("nonpositive mass")
    nodes = [0.0, *positions, ell]
    if any(nodes[i + 1] <= nodes[i] for i in range(len(nodes) - 1)):
        if positions and (positions[0] <= 0 or positions[-1] >= ell):
            raise ConfigError("non-monotone positions: masses must lie strictly inside (0, ell)")
        raise ConfigError("non-monotone positions")
    pots_raw = raw.get("potentials")
    if pots_raw is None:
        pots = tuple(zero_potential(nodes[j], nodes[j + 1]) for j in range(len(nodes) - 1))
    else:
        if len(pots_raw) != len(nodes) - 1:
            raise ConfigError(f"expected {len(nodes) - 1} potentials, got {len(pots_raw)}")
        pots = tuple(_build_potential(p, nodes[j], nodes[j + 1]) for j, p in enumerate(pots_raw))
    for j, p in enumerate(pots):
        need = max(0, j - 2)
        if p.smoothness < need:
            warnings.warn(
                f"potential on segment {j} has {p.smoothness} continuous derivatives; {need} expected",
                stacklevel=2,
            )
    return StringSystem(ell, tuple(positions), tuple(masses), pots)


def load_system(path) -> StringSystem:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return validate_system(raw)


def uniform_system(ell: float, positions: Sequence[float], masses: Sequence[float], q: float = 0.0):
    """Convenience constructor with a constant potential on every segment."""
    cfg = {
        "ell": ell,
        "masses": [{"a": a, "M": m} for a, m in zip(positions, masses)],
        "potentials": [{"kind": "poly", "data": [q]} for _ in range(len(positions) + 1)],
    }
    return validate_system(cfg)


# ---------------------------------------------------------------- sampling

@dataclass(frozen=True, eq=False)
class SampledFunction:
    """Uniform samples start + k*step, k = 0..len(values)-1."""

    start: float
    step: float
    values: np.ndarray
    tag: str = "time"

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if not self.step > 0:
            raise ValueError("grid must be strictly increasing")

    @property
    def grid(self) -> np.ndarray:
        return self.start + self.step * np.arange(len(self.values))

    @property
    def end(self) -> float:
        return self.start + self.step * (len(self.values) - 1)

    def __call__(self, x):
        """Linear interpolation, zero outside the sampled range."""
        x = np.asarray(x, dtype=float)
        # abscissae produced as k * dt may overshoot the ends by rounding
        eps = 1e-9 * self.step
        x = np.where(np.abs(x - self.end) < eps, self.end, x)
        x = np.where(np.abs(x - self.start) < eps, self.start, x)
        return np.interp(x, self.grid, self.values, left=0.0, right=0.0)

    def __len__(self):
        return len(self.values)

    @classmethod
    def from_callable(cls, fn, start, stop, step, tag="time"):
        n = int(round((stop - start) / step))
        grid = start + step * np.arange(n + 1)
        return cls(start, step, np.asarray(fn(grid), dtype=float), tag)


def grid_points(length: float, step: float) -> int:
    """Number of steps of size `step` in `length`; raises if not commensurate."""
    n = int(round(length / step))
    if n < 1 or abs(n * step - length) > 1e-9 * max(1.0, length):
        raise PreconditionError(f"step {step} does not divide length {length}")
    return n


def commensurate_step(system: StringSystem, target: float, max_den: int = 100000) -> float:
    """Largest step <= target that places every node on the grid."""
    nodes = np.asarray(system.nodes)
    n0 = max(1, int(math.ceil(system.ell / target - 1e-12)))
    for n in range(n0, n0 + max_den):
        h = system.ell / n
        k = nodes / h
        if np.all(np.abs(k - np.round(k)) < 1e-8):
            return h
    raise PreconditionError("no commensurate grid step found for the mass positions")


def segment_grids(system: StringSystem, step: float) -> list:
    """Closed per-segment sample abscissae with spacing `step`."""
    out = []
    nd = system.nodes
    for j in range(len(nd) - 1):
        n = grid_points(nd[j + 1] - nd[j], step)
        out.append(nd[j] + step * np.arange(n + 1))
    return out


@dataclass(frozen=True, eq=False)
class StateSnapshot:
    """Terminal state sampled segmentwise on closed segments.

    u[j][0] is the right limit at node j and u[j][-1] the left limit at node
    j+1, so jumps at the masses are representable.
    """

    time: float
    x: tuple
    u: tuple
    ut: tuple
    h: np.ndarray = field(default_factory=lambda: np.zeros(0))
    hdot: np.ndarray | None = None

    @property
    def step(self) -> float:
        return float(self.x[0][1] - self.x[0][0])

    def flat(self, which: str = "u"):
        arrs = self.u if which == "u" else self.ut
        return np.concatenate(self.x), np.concatenate(arrs)

    def scaled(self, alpha: float) -> "StateSnapshot":
        return StateSnapshot(
            self.time,
            self.x,
            tuple(alpha * v for v in self.u),
            tuple(alpha * v for v in self.ut),
            alpha * np.asarray(self.h),
            None if self.hdot is None else alpha * np.asarray(self.hdot),
        )

    def mass_consistency(self) -> float:
        """max_j |h_j - u(a_j^+)|."""
        if len(self.h) == 0:
            return 0.0
        return float(max(abs(self.h[j] - self.u[j + 1][0]) for j in range(len(self.h))))


def sample_segments(system: StringSystem, step: float, fn) -> tuple:
    """Evaluate fn(x, j) on each closed segment grid."""
    grids = segment_grids(system, step)
    return tuple(grids), tuple(np.asarray(fn(x, j), dtype=float) + 0.0 * x for j, x in enumerate(grids))


def snapshot_from_functions(system, step, u_fn, ut_fn=None, time=0.0) -> StateSnapshot:
    xs, us = sample_segments(system, step, u_fn)
    if ut_fn is None:
        uts = tuple(np.zeros_like(x) for x in xs)
    else:
        _, uts = sample_segments(system, step, ut_fn)
    h = np.array([us[j + 1][0] for j in range(system.N)])
    return StateSnapshot(time, xs, us, uts, h, None)
