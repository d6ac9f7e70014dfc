"""Command-line front end.  Every command writes CSV/JSON artifacts plus manifest.json."""
from __future__ import annotations

import csv
import hashlib
import json
import sys
import warnings
from pathlib import Path

import click
import numpy as np

from . import control, edd, spectral
from .dynamics import simulate_characteristics
from .fd import make_grid, simulate_fd
from .model import (ConfigError, NumericalFailure, PreconditionError, StateSnapshot, commensurate_step,
                    load_system, sample_segments, segment_grids)
from .spaces import norms_report

EXIT_CONFIG, EXIT_PRECONDITION, EXIT_NUMERICAL = 1, 2, 3


# ------------------------------------------------------------------ output

def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest(out: Path, command: str, config, params: dict, artifacts: list) -> None:
    _write_json(out / "manifest.json", {
        "command": command,
        "config": None if config is None else str(config),
        "parameters": params,
        "output_dir": str(out),
        "checksums": {name: _sha256(out / name) for name in sorted(artifacts)},
    })


def write_snapshot_csv(path, snap: StateSnapshot) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment", "x", "u", "ut"])
        for j, (x, u, ut) in enumerate(zip(snap.x, snap.u, snap.ut)):
            for row in zip(x, u, ut):
                w.writerow([j, *(f"{v:.16e}" for v in row)])


def read_snapshot_csv(path, system) -> StateSnapshot:
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read state file: {exc}") from exc
    if data.shape[1] != 4:
        raise ConfigError("state file needs columns segment,x,u,ut")
    seg = data[:, 0].astype(int)
    xs, us, uts = [], [], []
    for j in range(system.N + 1):
        sel = seg == j
        if not np.any(sel):
            raise ConfigError(f"state file has no samples for segment {j}")
        xs.append(data[sel, 1])
        us.append(data[sel, 2])
        uts.append(data[sel, 3])
    h = np.array([us[j + 1][0] for j in range(system.N)])
    return StateSnapshot(0.0, tuple(xs), tuple(us), tuple(uts), h, None)


# ----------------------------------------------------------------- targets

def _field(spec, system, dx):
    """Per-segment samples of one target field from its JSON description."""
    if spec is None:
        spec = {"kind": "zero"}
    kind = spec.get("kind")
    grids = segment_grids(system, dx)
    if kind == "zero":
        return tuple(np.zeros_like(x) for x in grids)
    if kind == "bump":
        lo, hi, pw = float(spec["lo"]), float(spec["hi"]), int(spec.get("power", 4))
        if not 0 <= lo < hi <= system.ell:
            raise ConfigError("bump support must lie inside [0, ell]")

        def fn(x, j):
            z = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
            return float(spec.get("amplitude", 1.0)) * np.sin(np.pi * z) ** pw

        return sample_segments(system, dx, fn)[1]
    if kind == "sine":
        c = np.asarray(spec["coeffs"], float)

        def fn(x, j):
            k = np.arange(1, len(c) + 1)
            return np.sin(np.pi * np.outer(x, k) / system.ell) @ c

        return sample_segments(system, dx, fn)[1]
    if kind == "samples":
        vals = tuple(np.asarray(v, float) for v in spec["segments"])
        if len(vals) != len(grids) or any(len(v) != len(x) for v, x in zip(vals, grids)):
            raise ConfigError("sample target does not match the grid for --dx")
        return vals
    raise ConfigError(f"unknown target kind {kind!r}")


def reachable_state(system, T0: float, amps, freqs, dx):
    """Terminal state of g(t) = sin^2(pi t/T0) sum_k a_k cos(w_k t); compatible by construction."""
    amps = np.asarray(amps, float)
    freqs = np.asarray(freqs, float)

    def g(t):
        t = np.asarray(t, float)
        return np.sin(np.pi * t / T0) ** 2 * (np.cos(np.outer(t, freqs)) @ amps)

    snap = simulate_characteristics(system, g, T0, dx)
    return snap.u, snap.ut


def load_targets(path, system, dx):
    if path is None:
        raise ConfigError("a target file is required (--target)")
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read target file: {exc}") from exc
    if "reachable" in raw:
        r = raw["reachable"]
        return reachable_state(system, float(r["T0"]), r["amps"], r["freqs"], dx)
    return _field(raw.get("y0"), system, dx), _field(raw.get("y1"), system, dx)


# ------------------------------------------------------------------ driver

def _run(ctx, command, body):
    """Run body() -> (params, artifacts) and map failures to exit codes."""
    out = Path(ctx.obj["out"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            params, artifacts = body(out)
        if caught:
            _write_json(out / "warnings.json", [str(w.message) for w in caught])
            artifacts = [*artifacts, "warnings.json"]
        _manifest(out, command, ctx.obj.get("config"), params, artifacts)
    except (ConfigError, PreconditionError, NumericalFailure) as exc:
        code = {ConfigError: EXIT_CONFIG, PreconditionError: EXIT_PRECONDITION,
                NumericalFailure: EXIT_NUMERICAL}[type(exc)]
        reason = {"command": command, "error": type(exc).__name__, "exit_code": code, "reason": str(exc)}
        _write_json(out / "error.json", reason)
        click.echo(json.dumps(reason, sort_keys=True), err=True)
        ctx.exit(code)


def _system(ctx):
    cfg = ctx.obj.get("config")
    if cfg is None:
        raise ConfigError("--config is required")
    return load_system(cfg)


def _step(system, dx):
    return commensurate_step(system, dx)


def _store(key):
    def cb(ctx, param, value):
        root = ctx.find_root()
        root.ensure_object(dict)
        if value is not None or key not in root.obj:
            root.obj[key] = value if value is not None else ("out" if key == "out" else None)
        ctx.obj = root.obj
        return value
    return cb


def _common(fn):
    """--config and --out are accepted before or after the subcommand name."""
    fn = click.option("--out", type=click.Path(file_okay=False), default=None, expose_value=False,
                      callback=_store("out"), help="Output directory [default: out].")(fn)
    fn = click.option("--config", type=click.Path(dir_okay=False), default=None, expose_value=False,
                      callback=_store("config"), help="System JSON.")(fn)
    return fn


@click.group()
@_common
@click.pass_context
def main(ctx):
    """Simulation and boundary-control synthesis for a string with point masses."""
    ctx.ensure_object(dict)


@main.command()
@_common
@click.option("--count", type=int, default=40, show_default=True)
@click.option("--dx", type=float, default=0.005, show_default=True)
@click.pass_context
def spectrum(ctx, count, dx):
    """Frequencies, families and the asymptotics report."""
    def body(out):
        system = _system(ctx)
        h = _step(system, dx)
        freqs = spectral.find_frequencies(system, count=count)
        eig = [spectral.eigenfunction(system, float(lam), h, i + 1) for i, lam in enumerate(freqs)]
        spectral.write_spectrum_csv(out / "spectrum.csv", freqs, system, eig)
        arts = ["spectrum.csv"]
        if count >= 30:
            _write_json(out / "asymptotics.json", spectral.asymptotics_report(freqs, system, eig))
            arts.append("asymptotics.json")
        cs = spectral.cluster(freqs, system)
        _write_json(out / "clusters.json", {"radius": cs.radius, "clusters": [list(map(float, c)) for c in cs.clusters]})
        arts.append("clusters.json")
        return {"count": count, "dx": h}, arts
    _run(ctx, "spectrum", body)


@main.command()
@_common
@click.option("--T", "T", type=float, required=True)
@click.option("--dx", type=float, default=0.005, show_default=True)
@click.option("--control", "control_path", type=click.Path(dir_okay=False), required=True, help="CSV t,f.")
@click.option("--method", type=click.Choice(["fd", "characteristics"]), default="characteristics",
              show_default=True)
@click.option("--cfl", type=float, default=0.9, show_default=True)
@click.pass_context
def simulate(ctx, T, dx, control_path, method, cfl):
    """Terminal snapshot for a sampled control."""
    def body(out):
        system = _system(ctx)
        h = _step(system, dx)
        try:
            f = control.read_control_csv(control_path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read control: {exc}") from exc
        if method == "fd":
            snap = simulate_fd(system, f, T, make_grid(system, h, T, cfl))
        else:
            snap = simulate_characteristics(system, f, T, h)
        write_snapshot_csv(out / "snapshot.csv", snap)
        return {"T": T, "dx": h, "method": method, "cfl": cfl if method == "fd" else None}, ["snapshot.csv"]
    _run(ctx, "simulate", body)


def _steer(ctx, which, T, dx, target, tol, cfl):
    def body(out):
        system = _system(ctx)
        h = _step(system, dx)
        y0, y1 = load_targets(target, system, h)
        if which == "shape":
            f = control.shape_control(system, y0, T, h)
            rep = control.verify_control(system, f, y0, None, T, h, cfl=cfl)
            err = rep["W0_rel"]
        else:
            f = control.velocity_control(system, y1, T, h)
            rep = control.verify_control(system, f, None, y1, T, h, cfl=cfl)
            err = rep["Wm1_rel"]
        control.write_control_csv(out / "control.csv", f)
        rep.pop("snapshot")
        rep["relative_error"] = err
        rep["within_tol"] = bool(err <= tol)
        _write_json(out / "verification.json", rep)
        return {"T": T, "dx": h, "tol": tol, "cfl": cfl, "target": str(target)}, ["control.csv", "verification.json"]
    _run(ctx, which, body)


@main.command()
@_common
@click.option("--T", "T", type=float, required=True)
@click.option("--dx", type=float, default=0.005, show_default=True)
@click.option("--target", type=click.Path(dir_okay=False), required=True)
@click.option("--tol", type=float, default=0.05, show_default=True)
@click.option("--cfl", type=float, default=0.9, show_default=True)
@click.pass_context
def shape(ctx, T, dx, target, tol, cfl):
    """Control reaching a terminal displacement (uses y0 of the target file)."""
    _steer(ctx, "shape", T, dx, target, tol, cfl)


@main.command()
@_common
@click.option("--T", "T", type=float, required=True)
@click.option("--dx", type=float, default=0.005, show_default=True)
@click.option("--target", type=click.Path(dir_okay=False), required=True)
@click.option("--tol", type=float, default=0.05, show_default=True)
@click.option("--cfl", type=float, default=0.9, show_default=True)
@click.pass_context
def velocity(ctx, T, dx, target, tol, cfl):
    """Control reaching a terminal velocity (uses y1 of the target file)."""
    _steer(ctx, "velocity", T, dx, target, tol, cfl)


@main.command()
@_common
@click.option("--T", "T", type=float, required=True)
@click.option("--P", "P", type=int, default=20, show_default=True)
@click.option("--dx", type=float, default=0.005, show_default=True)
@click.option("--target", type=click.Path(dir_okay=False), required=True)
@click.option("--tol", type=float, default=0.1, show_default=True)
@click.pass_context
def synthesize(ctx, T, P, dx, target, tol):
    """Full terminal-state control from rest."""
    def body(out):
        system = _system(ctx)
        h = _step(system, dx)
        y0, y1 = load_targets(target, system, h)
        res = control.full_control(system, y0, y1, T, P, h)
        rep = control.verify_control(system, res.control, y0, y1, T, h)
        rep.pop("snapshot")
        rep.update(energy_ratio=res.energy_ratio, gram_cond=res.gram_cond,
                   expansion_residual=list(res.expansion_residual),
                   within_tol=bool(rep["combined_rel"] <= tol))
        control.write_control_csv(out / "control.csv", res.control)
        _write_json(out / "verification.json", rep)
        return {"T": T, "P": P, "dx": h, "tol": tol, "target": str(target)}, ["control.csv", "verification.json"]
    _run(ctx, "synthesize", body)


@main.command()
@_common
@click.option("--state", type=click.Path(dir_okay=False), required=True, help="CSV segment,x,u,ut.")
@click.option("--tol", type=float, default=10.0, show_default=True, help="Compatibility tolerance constant.")
@click.pass_context
def verify(ctx, state, tol):
    """Compatibility conditions and norms of a supplied state."""
    def body(out):
        system = _system(ctx)
        snap = read_snapshot_csv(state, system)
        rep = norms_report(system, snap.x, snap.u, snap.ut, C=tol)
        _write_json(out / "verify.json", rep)
        return {"state": str(state), "tol": tol}, ["verify.json"]
    _run(ctx, "verify", body)


@main.command("diagnose-riesz")
@_common
@click.option("--T", "T", type=float, default=None, help="Interval length; default 2.2 ell.")
@click.option("--P", "P", type=int, default=40, show_default=True, help="Number of frequencies.")
@click.pass_context
def diagnose_riesz(ctx, T, P):
    """Gram eigenvalues of the divided-difference family against plain exponentials."""
    def body(out):
        system = _system(ctx)
        TT = 2.2 * system.ell if T is None else T
        freqs = spectral.find_frequencies(system, count=P)
        cs = spectral.cluster(freqs, system)
        t = edd.time_grid(TT, float(np.max(freqs)))
        fam = edd.edd_family(cs.clusters, TT, t=t)
        raw = edd.raw_family(freqs, TT, t=t)
        truncs = list(range(10, 2 * P + 1, 10))
        edd.write_riesz_csv(out / "riesz_edd.csv", edd.riesz_diagnostics(fam, truncs, system.ell))
        edd.write_riesz_csv(out / "riesz_raw.csv", edd.riesz_diagnostics(raw, truncs))
        return {"T": TT, "P": P}, ["riesz_edd.csv", "riesz_raw.csv"]
    _run(ctx, "diagnose-riesz", body)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
