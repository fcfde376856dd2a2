"""Command-line front end: reproducible runs, recorded frames, certificates.

Subcommands: `simulate` (run a preset and write one CSV per snapshot plus a
manifest), `check` (evaluate named certificates against a recorded run),
`distance` (compare two measure files), `volume` (per-step clipped volume
reports).  Exit codes: 0 all requested checks pass, 1 any check fails or a
run aborts, 2 usage or configuration error.

All numerical work is deterministic for a fixed configuration and seed; the
only environment knob is VARIMCF_THREADS, which caps the linear-algebra
thread pools and never changes results.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

from .errors import (ConfigError, GateViolated, MassBoundExceeded,
                     MissingFrames, VarimcfError)

THREAD_ENV = "VARIMCF_THREADS"
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS")


def _apply_thread_env() -> None:
    """Propagate VARIMCF_THREADS to the math libraries before numpy loads."""
    raw = os.environ.get(THREAD_ENV)
    if raw is None:
        return
    if "numpy" in sys.modules:  # too late to matter, but harmless
        pass
    try:
        k = int(raw)
        if k < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"{THREAD_ENV} must be a positive integer, got {raw!r}")
    for var in _THREAD_VARS:
        os.environ[var] = str(k)


def _fmt(v) -> str:
    return "%.17g" % float(v)


# ---------------------------------------------------------------------------
# settings


@dataclasses.dataclass
class Settings:
    """Everything configurable, with package defaults.

    Values come from an INI file (sections [run], [constants],
    [certificates]) overridden by command-line flags.
    """

    # [run]
    preset: str = "circle"
    out: str = "runs/run"
    seed: int = 0
    eps: float | None = None
    dt: float | None = None
    end_time: float | None = None
    # [constants]
    gate_constant: float = 1.0          # proportionality inside the step gate
    enforce_gate: bool | None = None    # None -> keep the preset's choice
    certificate_step_constant: float = 1e-9  # admissibility constant in the
    #                                    smoothing-scale certificate
    scale_ceiling: float = 1.0          # largest admissible smoothing scale
    isoperimetric_constant: float | None = None  # None -> sharp value
    mc_samples: int = 100_000           # Monte Carlo points per volume report
    technical_samples: int = 20_000     # random tuples in the inequality sweep
    defect_samples: int = 2_000         # sample points in the defect sweep
    lp_support_cap: int = 2_000         # max LP support for distances
    budget_rtol: float = 0.02           # dissipation-vs-mass-drop tolerance
    slack_factor: float = 2.0           # support-monitor slack, in units of eps
    # [certificates]
    certificates: tuple[str, ...] = ("mass-decay",)
    ball_center: tuple[float, ...] = (0.0, 0.0)
    ball_radius: float = 0.8
    enclosing_radius: float = 1.05
    barrier_center: tuple[float, ...] = (0.0, 0.0)
    barrier_radius: float = 0.3
    barrier_exponent: float = 4.0
    weight_center: tuple[float, ...] = (0.0, 0.0)
    weight_width: float = 2.0


def _parse_vector(raw: str) -> tuple[float, ...]:
    parts = [p for p in raw.replace(",", " ").split() if p]
    return tuple(float(p) for p in parts)


def _parse_cert_list(raw: str) -> tuple[str, ...]:
    names = [p.strip() for p in raw.replace(",", " ").split() if p.strip()]
    if names == ["all"]:
        return tuple(CERTIFICATES)
    for nm in names:
        if nm not in CERTIFICATES:
            raise ConfigError(
                f"unknown certificate {nm!r}; known: {', '.join(CERTIFICATES)}")
    return tuple(names)


_INI_PARSERS = {
    "run": {
        "preset": ("preset", str),
        "out": ("out", str),
        "seed": ("seed", int),
        "eps": ("eps", float),
        "dt": ("dt", float),
        "end_time": ("end_time", float),
    },
    "constants": {
        "gate_constant": ("gate_constant", float),
        "enforce_gate": ("enforce_gate", lambda s: s.strip().lower() in
                         ("1", "true", "yes", "on")),
        "certificate_step_constant": ("certificate_step_constant", float),
        "scale_ceiling": ("scale_ceiling", float),
        "isoperimetric_constant": ("isoperimetric_constant", float),
        "mc_samples": ("mc_samples", int),
        "technical_samples": ("technical_samples", int),
        "defect_samples": ("defect_samples", int),
        "lp_support_cap": ("lp_support_cap", int),
        "budget_rtol": ("budget_rtol", float),
        "slack_factor": ("slack_factor", float),
    },
    "certificates": {
        "list": ("certificates", _parse_cert_list),
        "ball_center": ("ball_center", _parse_vector),
        "ball_radius": ("ball_radius", float),
        "enclosing_radius": ("enclosing_radius", float),
        "barrier_center": ("barrier_center", _parse_vector),
        "barrier_radius": ("barrier_radius", float),
        "barrier_exponent": ("barrier_exponent", float),
        "weight_center": ("weight_center", _parse_vector),
        "weight_width": ("weight_width", float),
    },
}


def load_settings(config_path: str | None, args: argparse.Namespace) -> Settings:
    st = Settings()
    if config_path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(config_path)
        if not read:
            raise ConfigError(f"cannot read config file {config_path}")
        for section in parser.sections():
            if section not in _INI_PARSERS:
                raise ConfigError(f"[{section}]: unknown section")
            for key, raw in parser[section].items():
                if key not in _INI_PARSERS[section]:
                    raise ConfigError(f"[{section}] {key}: unknown key")
                attr, conv = _INI_PARSERS[section][key]
                try:
                    setattr(st, attr, conv(raw))
                except (ValueError, TypeError) as e:
                    raise ConfigError(f"[{section}] {key}: bad value {raw!r} "
                                      f"({e})") from None
    for attr in ("preset", "out", "seed", "eps", "dt", "end_time",
                 "support_cap", "samples", "radius", "center",
                 "certificates"):
        val = getattr(args, attr, None)
        if val is None:
            continue
        if attr == "support_cap":
            st.lp_support_cap = val
        elif attr == "samples":
            st.mc_samples = val
        elif attr == "radius":
            st.ball_radius = val
        elif attr == "center":
            st.ball_center = _parse_vector(val)
        elif attr == "certificates":
            st.certificates = _parse_cert_list(val)
        else:
            setattr(st, attr, val)
    return st


# ---------------------------------------------------------------------------
# frame IO


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _write_trace(outdir: Path, name: str, trace) -> dict:
    import numpy as np

    n = trace.snapshots[0].varifold.n
    d = trace.snapshots[0].varifold.d
    header = ([f"x{i + 1}" for i in range(n)]
              + [f"p{i + 1}{j + 1}" for i in range(n) for j in range(n)]
              + ["m"] + [f"h{i + 1}" for i in range(n)])
    frames, mesh_frames = [], []
    for i, snap in enumerate(trace.snapshots):
        V = snap.varifold
        h = snap.curvature
        if h is None:
            h = np.full((len(V), n), np.nan)
        rows = []
        for a in range(len(V)):
            rows.append([_fmt(v) for v in V.positions[a]]
                        + [_fmt(v) for v in V.planes[a].ravel()]
                        + [_fmt(V.masses[a])]
                        + [_fmt(v) for v in h[a]])
        fname = f"frame_{name}_{i:04d}.csv"
        _write_csv(outdir / fname, header, rows)
        frames.append(fname)
        if snap.mesh_vertices is not None:
            mname = f"mesh_{name}_{i:04d}.csv"
            _write_csv(outdir / mname, [f"v{i + 1}" for i in range(n)],
                       [[_fmt(v) for v in row] for row in snap.mesh_vertices])
            mesh_frames.append(mname)
    record = {
        "name": name,
        "ambient_dimension": n,
        "surface_dimension": d,
        "mass_bound": trace.mass_bound,
        "frames": frames,
        "mesh_frames": mesh_frames or None,
        "simplices": None,
        "times": [float(t) for t in trace.times],
        "masses": [float(m) for m in trace.masses],
        "curvature_max": [s.curvature_max for s in trace.snapshots],
        "dissipation": [s.dissipation for s in trace.snapshots],
        "step_delta": [s.step_delta for s in trace.snapshots],
    }
    if trace.mesh_simplices is not None:
        sname = f"simplices_{name}.csv"
        k = trace.mesh_simplices.shape[1]
        _write_csv(outdir / sname, [f"s{i + 1}" for i in range(k)],
                   [[str(int(v)) for v in row] for row in trace.mesh_simplices])
        record["simplices"] = sname
    return record


def _read_frame(path: Path, n: int):
    import numpy as np

    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        want = 2 * n + n * n + 1
        if len(header) != want:
            raise ConfigError(f"{path}: {len(header)} columns, want {want}")
        data = [[float(v) for v in row] for row in reader if row]
    arr = np.array(data, dtype=float).reshape(len(data), want)
    pos = arr[:, :n]
    planes = arr[:, n:n + n * n].reshape(-1, n, n)
    masses = arr[:, n + n * n]
    h = arr[:, n + n * n + 1:]
    if np.all(np.isnan(h)):
        h = None
    return pos, planes, masses, h


def load_trace(manifest: dict, base: Path, record: dict):
    """Rebuild a FlowTrace from one manifest trace record."""
    import numpy as np

    from .flow import FlowConfig, FlowTrace, Snapshot

    cfg = FlowConfig(**manifest["config"])
    n = record["ambient_dimension"]
    d = record["surface_dimension"]
    simp = None
    if record.get("simplices"):
        spath = base / record["simplices"]
        if not spath.exists():
            raise MissingFrames(f"missing simplex file {spath}")
        with spath.open(newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            simp = np.array([[int(v) for v in row] for row in reader if row])
    mesh_frames = record.get("mesh_frames") or [None] * len(record["frames"])
    snaps = []
    for i, fname in enumerate(record["frames"]):
        fpath = base / fname
        if not fpath.exists():
            raise MissingFrames(f"missing frame file {fpath}")
        pos, planes, masses, h = _read_frame(fpath, n)
        from .varifold import DiscreteVarifold
        V = DiscreteVarifold.from_arrays(pos, planes, masses, d=d)
        verts = None
        if mesh_frames[i] is not None:
            mpath = base / mesh_frames[i]
            if not mpath.exists():
                raise MissingFrames(f"missing mesh file {mpath}")
            with mpath.open(newline="") as fh:
                reader = csv.reader(fh)
                next(reader)
                verts = np.array([[float(v) for v in row]
                                  for row in reader if row])
        snaps.append(Snapshot(
            time=float(record["times"][i]),
            varifold=V,
            mass=float(record["masses"][i]),
            curvature=h,
            curvature_jacobian=None,
            curvature_max=record["curvature_max"][i],
            dissipation=record["dissipation"][i],
            mesh_vertices=verts,
            step_delta=record["step_delta"][i],
        ))
    return FlowTrace(cfg, float(record["mass_bound"]), tuple(snaps), simp)


def load_manifest(path: str):
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    if not p.exists():
        raise MissingFrames(f"no manifest at {p}")
    try:
        manifest = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: not valid JSON ({e})") from None
    traces = {}
    for record in manifest["traces"]:
        traces[record["name"]] = load_trace(manifest, p.parent, record)
    return p, manifest, traces


# ---------------------------------------------------------------------------
# verdicts


@dataclasses.dataclass
class Verdict:
    """Outcome of one certificate on one run (or pair of runs)."""

    name: str
    trace: str
    statement: str
    measured: float
    bound: float
    relation: str           # "<=" or ">=" : how measured compares when passing
    passed: bool
    details: dict

    def as_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["passed"] = bool(self.passed)
        return out


def _fail_verdict(name: str, trace: str, statement: str, exc: Exception) -> Verdict:
    return Verdict(name, trace, statement, float("nan"), float("nan"),
                   "<=", False, {"error": f"{type(exc).__name__}: {exc}"})


_SOFT_ERRORS: tuple[type, ...] = ()  # filled lazily to avoid numpy import


def _soft_errors():
    global _SOFT_ERRORS
    if not _SOFT_ERRORS:
        from .errors import (BallNotInterior, DeltaTooLarge, GridMismatch,
                             NonpositiveWeight, OutOfSpan,
                             PreconditionViolated, SolverFailure, ZeroBarrier)
        _SOFT_ERRORS = (PreconditionViolated, BallNotInterior, ZeroBarrier,
                        NonpositiveWeight, DeltaTooLarge, GridMismatch,
                        OutOfSpan, SolverFailure, MassBoundExceeded,
                        GateViolated)
    return _SOFT_ERRORS


def _center(st_vec, n: int, what: str):
    import numpy as np
    c = np.asarray(st_vec, dtype=float)
    if c.shape != (n,):
        raise ConfigError(f"{what} has dimension {len(c)}, run is in R^{n}")
    return c


def _cert_mass_decay(traces, st, manifest, rng):
    out = []
    stmt = ("every recorded step raises total mass by at most the step "
            "length, up to roundoff")
    for name, tr in traces.items():
        t, m = tr.times, tr.masses
        if len(t) < 2:
            out.append(Verdict("mass-decay", name, stmt, 0.0, 0.0, "<=",
                               True, {"steps": 0}))
            continue
        excess = [float(m[i + 1] - m[i] - (t[i + 1] - t[i]))
                  for i in range(len(t) - 1)]
        worst = max(range(len(excess)), key=lambda i: excess[i])
        tol = 1e-9 * (1.0 + float(m[0]))
        out.append(Verdict("mass-decay", name, stmt, excess[worst], tol, "<=",
                           excess[worst] <= tol,
                           {"worst_step": worst, "steps": len(excess)}))
    return out


def _cert_dissipation_budget(traces, st, manifest, rng):
    from .flow import dissipation_budget
    out = []
    stmt = ("the time-integrated dissipation accounts for the recorded "
            "drop in total mass")
    for name, tr in traces.items():
        if len(tr.times) < 2:
            out.append(Verdict("dissipation-budget", name, stmt, 0.0, 0.0,
                               "<=", True, {"steps": 0}))
            continue
        budget = dissipation_budget(tr)
        drop = float(tr.masses[0] - tr.masses[-1])
        measured = abs(budget - drop)
        bound = st.budget_rtol * max(drop, 1e-9)
        out.append(Verdict("dissipation-budget", name, stmt, measured, bound,
                           "<=", measured <= bound,
                           {"budget": budget, "mass_drop": drop}))
    return out


def _cert_technical_lemma(traces, st, manifest, rng):
    import numpy as np

    from .barriers import technical_gap
    from .varifold import grassmann_from_basis

    stmt = ("the completed-square inequality linking curvature, a positive "
            "weight and its gradient holds on random samples")
    n = next(iter(traces.values())).snapshots[0].varifold.n
    worst = np.inf
    for _ in range(st.technical_samples):
        h = rng.normal(size=n)
        grad = rng.normal(size=n)
        phi = float(rng.uniform(0.05, 3.0))
        dd = int(rng.integers(1, n))
        S = grassmann_from_basis(rng.normal(size=(dd, n)))
        worst = min(worst, technical_gap(h, phi, grad, S))
    return [Verdict("technical-lemma", "-", stmt, float(worst), -1e-12, ">=",
                    worst >= -1e-12, {"samples": st.technical_samples})]


def _cert_barrier_defect(traces, st, manifest, rng):
    import numpy as np

    from .barriers import BarrierFunction, barrier_defect
    from .varifold import grassmann_from_basis

    stmt = ("the radial comparison weight has nonpositive flow defect "
            "throughout its support window")
    tr = next(iter(traces.values()))
    n = tr.snapshots[0].varifold.n
    d = tr.snapshots[0].varifold.d
    psi = BarrierFunction(center=_center(st.barrier_center, n, "barrier_center"),
                          radius=st.barrier_radius, beta=st.barrier_exponent,
                          d=d, orientation="external")
    R2 = st.barrier_radius**2
    horizon = 0.8 * R2 / (2.0 * d)
    worst = -np.inf
    times = np.linspace(0.0, horizon, 5)
    per_t = max(1, st.defect_samples // len(times))
    for t in times:
        live = max(R2 - 2.0 * d * t, 0.0) * 0.95
        if live <= 0.0:
            continue
        for _ in range(per_t):
            direction = rng.normal(size=n)
            direction /= np.linalg.norm(direction)
            r = np.sqrt(float(rng.uniform(0.0, live)))
            x = psi.center + r * direction
            dd = int(rng.integers(1, n))
            S = grassmann_from_basis(rng.normal(size=(dd, n)))
            worst = max(worst, barrier_defect(psi, x, S, float(t)))
    return [Verdict("barrier-defect", "-", stmt, float(worst), 1e-10, "<=",
                    worst <= 1e-10, {"samples": st.defect_samples,
                                     "exponent": st.barrier_exponent})]


def _cert_eps_sphere_barrier(traces, st, manifest, rng):
    from .barriers import BarrierFunction, epsilon_barrier_certificate
    out = []
    stmt = ("mass weighted by the guarded-ball barrier increases by at most "
            "the smoothing-scale allowance")
    for name, tr in traces.items():
        n = tr.snapshots[0].varifold.n
        d = tr.snapshots[0].varifold.d
        psi = BarrierFunction(
            center=_center(st.barrier_center, n, "barrier_center"),
            radius=st.barrier_radius, beta=st.barrier_exponent,
            d=d, orientation="external")
        try:
            rep = epsilon_barrier_certificate(
                tr, psi, c5_cfg=st.certificate_step_constant,
                scale_ceiling=st.scale_ceiling)
        except _soft_errors() as e:
            out.append(_fail_verdict("eps-sphere-barrier", name, stmt, e))
            continue
        out.append(Verdict("eps-sphere-barrier", name, stmt,
                           rep.max_increase, rep.bound, "<=", rep.passed,
                           {"norm_constant": rep.norm_constant,
                            "notes": list(rep.notes)}))
    return out


def _cert_external_sphere(traces, st, manifest, rng):
    from .barriers import external_sphere_monitor
    out = []
    stmt = "no mass enters the shrinking comparison ball"
    for name, tr in traces.items():
        n = tr.snapshots[0].varifold.n
        c = _center(st.ball_center, n, "ball_center")
        try:
            series = external_sphere_monitor(tr, c, st.ball_radius)
        except _soft_errors() as e:
            out.append(_fail_verdict("external-sphere", name, stmt, e))
            continue
        tol = 1e-9 * (1.0 + tr.masses[0])
        out.append(Verdict("external-sphere", name, stmt, series.peak(), tol,
                           "<=", series.peak() <= tol,
                           {"window_end": float(series.times[-1])}))
    return out


def _cert_internal_sphere(traces, st, manifest, rng):
    from .barriers import internal_sphere_monitor
    out = []
    stmt = ("the support stays inside the shrinking comparison ball, up to "
            "a smoothing-scale slack")
    for name, tr in traces.items():
        n = tr.snapshots[0].varifold.n
        c = _center(st.ball_center, n, "ball_center")
        try:
            series = internal_sphere_monitor(tr, c, st.enclosing_radius)
        except _soft_errors() as e:
            out.append(_fail_verdict("internal-sphere", name, stmt, e))
            continue
        slack = st.slack_factor * tr.config.eps
        out.append(Verdict("internal-sphere", name, stmt, series.peak(),
                           slack, "<=", series.peak() <= slack,
                           {"window_end": float(series.times[-1])}))
    return out


def _cert_convex_hull(traces, st, manifest, rng):
    from .barriers import convex_hull_monitor
    out = []
    stmt = "the support never leaves the convex hull of the initial support"
    for name, tr in traces.items():
        try:
            series = convex_hull_monitor(tr)
        except _soft_errors() as e:
            out.append(_fail_verdict("convex-hull", name, stmt, e))
            continue
        peak = float(max(series))
        out.append(Verdict("convex-hull", name, stmt, peak, 1e-8, "<=",
                           peak <= 1e-8, {"snapshots": len(series)}))
    return out


def _cert_avoidance(traces, st, manifest, rng):
    import numpy as np

    from .barriers import avoidance_distance
    stmt = ("the gap between the two flows never drops below its running "
            "peak by more than the smoothing slack")
    if len(traces) != 2:
        raise ConfigError("avoidance needs a run with exactly two flows "
                          f"(manifest has {len(traces)})")
    (na, ta), (nb, tb) = traces.items()
    gaps = avoidance_distance(ta, tb)
    running = np.maximum.accumulate(gaps)
    measured = float(np.max(running - gaps))
    slack = st.slack_factor * ta.config.eps
    return [Verdict("avoidance", f"{na}+{nb}", stmt, measured, slack, "<=",
                    measured <= slack,
                    {"initial_gap": float(gaps[0]),
                     "final_gap": float(gaps[-1])})]


def _cert_lsc(traces, st, manifest, rng):
    from .barriers import lsc_monitor
    from .varifold import ScalarField
    out = []
    stmt = ("weighted mass, after subtracting the hessian-rate ramp, is "
            "nonincreasing up to per-step slack")
    for name, tr in traces.items():
        n = tr.snapshots[0].varifold.n
        bump = ScalarField.bump(_center(st.weight_center, n, "weight_center"),
                                st.weight_width, 1.0)
        try:
            rep = lsc_monitor(tr, bump)
        except _soft_errors() as e:
            out.append(_fail_verdict("lsc", name, stmt, e))
            continue
        out.append(Verdict("lsc", name, stmt, rep.max_uptick, rep.slack, "<=",
                           rep.passed, {"ramp_constant": rep.constant}))
    return out


def _cert_volume_change(traces, st, manifest, rng):
    from .geometry import volume_change_series
    out = []
    stmt = ("per-step change of enclosed volume inside the window stays "
            "within the perturbation bound plus Monte Carlo error")
    seed = int(manifest.get("seed", 0))
    any_mesh = False
    for name, tr in traces.items():
        if tr.mesh_simplices is None:
            continue
        any_mesh = True
        n = tr.snapshots[0].varifold.n
        c = _center(st.ball_center, n, "ball_center")
        try:
            reports = volume_change_series(tr, c, st.ball_radius,
                                           samples=st.mc_samples, seed=seed)
        except _soft_errors() as e:
            out.append(_fail_verdict("volume-change", name, stmt, e))
            continue
        margins = [r.measured - (r.bound + 3.0 * r.standard_error)
                   for r in reports]
        worst = max(range(len(margins)), key=lambda i: margins[i])
        r = reports[worst]
        out.append(Verdict("volume-change", name, stmt, r.measured,
                           r.bound + 3.0 * r.standard_error, "<=",
                           all(rep.passed for rep in reports),
                           {"steps": len(reports), "worst_step": worst,
                            "samples": st.mc_samples}))
    if not any_mesh:
        raise ConfigError("volume-change needs a run that tracked a mesh")
    return out


def _cert_nontriviality(traces, st, manifest, rng):
    from .geometry import nontriviality_certificate
    out = []
    stmt = ("total mass stays above the isoperimetric floor of the enclosed "
            "ball throughout the guaranteed horizon")
    any_mesh = False
    for name, tr in traces.items():
        if tr.mesh_simplices is None:
            continue
        any_mesh = True
        n = tr.snapshots[0].varifold.n
        c = _center(st.ball_center, n, "ball_center")
        try:
            rep = nontriviality_certificate(tr, c, st.ball_radius,
                                            constant=st.isoperimetric_constant)
        except _soft_errors() as e:
            out.append(_fail_verdict("nontriviality", name, stmt, e))
            continue
        out.append(Verdict("nontriviality", name, stmt, rep.min_mass,
                           rep.mass_floor, ">=", rep.passed,
                           {"horizon": rep.horizon,
                            "isoperimetric_constant": rep.constant}))
    if not any_mesh:
        raise ConfigError("nontriviality needs a run that tracked a mesh")
    return out


CERTIFICATES = {
    "mass-decay": _cert_mass_decay,
    "dissipation-budget": _cert_dissipation_budget,
    "technical-lemma": _cert_technical_lemma,
    "barrier-defect": _cert_barrier_defect,
    "eps-sphere-barrier": _cert_eps_sphere_barrier,
    "external-sphere": _cert_external_sphere,
    "internal-sphere": _cert_internal_sphere,
    "convex-hull": _cert_convex_hull,
    "avoidance": _cert_avoidance,
    "lsc": _cert_lsc,
    "volume-change": _cert_volume_change,
    "nontriviality": _cert_nontriviality,
}


# ---------------------------------------------------------------------------
# subcommands


def _cmd_simulate(args) -> int:
    st = load_settings(args.config, args)
    from .flow import run
    from .geometry import mesh_to_varifold  # noqa: F401  (import check)
    from .presets import make_preset

    scenario = make_preset(st.preset, eps=st.eps, dt=st.dt,
                           end_time=st.end_time)
    cfg = scenario.config
    if st.enforce_gate is not None or st.gate_constant != 1.0:
        cfg = dataclasses.replace(
            cfg,
            enforce_gate=cfg.enforce_gate if st.enforce_gate is None
            else st.enforce_gate,
            gate_constant=st.gate_constant)
    outdir = Path(st.out)
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    records = []
    if scenario.pair is not None:
        names = ("first", "second")
        meshes = scenario.pair_meshes or (None, None)
        for nm, V, mesh in zip(names, scenario.pair, meshes):
            tr = run(V, cfg,
                     mesh_vertices=None if mesh is None else mesh.vertices,
                     mesh_simplices=None if mesh is None else mesh.simplices)
            records.append(_write_trace(outdir, nm, tr))
    else:
        mesh = scenario.mesh
        tr = run(scenario.varifold, cfg,
                 mesh_vertices=None if mesh is None else mesh.vertices,
                 mesh_simplices=None if mesh is None else mesh.simplices)
        records.append(_write_trace(outdir, "main", tr))
    wall = time.perf_counter() - t0
    from . import __version__
    manifest = {
        "tool": "varimcf",
        "version": __version__,
        "seed": st.seed,
        "preset": scenario.name,
        "description": scenario.description,
        "wall_clock_seconds": wall,
        "config": {
            "eps": cfg.eps, "dt": cfg.dt, "end_time": cfg.end_time,
            "mass_bound": cfg.mass_bound, "cutoff": cfg.cutoff,
            "refinement": cfg.refinement, "mode": cfg.mode,
            "gate_constant": cfg.gate_constant,
            "enforce_gate": cfg.enforce_gate,
            "record_dissipation": cfg.record_dissipation,
        },
        "traces": records,
        "certificates": {},
    }
    (outdir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for rec in records:
        print(f"{rec['name']}: {len(rec['frames'])} frames, "
              f"mass {rec['masses'][0]:.6f} -> {rec['masses'][-1]:.6f}")
    print(f"manifest: {outdir / 'manifest.json'}")
    return 0


def _cmd_check(args) -> int:
    st = load_settings(args.config, args)
    import numpy as np
    mpath, manifest, traces = load_manifest(args.manifest)
    rng = np.random.default_rng(int(manifest.get("seed", 0)))
    verdicts = []
    for cert in st.certificates:
        verdicts.extend(CERTIFICATES[cert](traces, st, manifest, rng))
    all_passed = all(v.passed for v in verdicts)
    payload = {
        "manifest": str(mpath),
        "all_passed": all_passed,
        "verdicts": [v.as_dict() for v in verdicts],
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if args.json is not None:
        Path(args.json).write_text(text + "\n")
    for v in verdicts:
        manifest.setdefault("certificates", {})[f"{v.name}[{v.trace}]"] = \
            v.as_dict()
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return 0 if all_passed else 1


def _cmd_distance(args) -> int:
    st = load_settings(args.config, args)
    from .metrics import bounded_lipschitz, load_measure_csv
    mu = load_measure_csv(args.first)
    nu = load_measure_csv(args.second)
    res = bounded_lipschitz(mu, nu, support_cap=st.lp_support_cap)
    print(json.dumps({
        "distance": res.distance,
        "status": res.status,
        "support_first": len(mu),
        "support_second": len(nu),
    }, indent=2, sort_keys=True))
    return 0


def _cmd_volume(args) -> int:
    st = load_settings(args.config, args)
    import numpy as np
    _, manifest, traces = load_manifest(args.manifest)
    if args.seed is not None:
        manifest = dict(manifest)
        manifest["seed"] = args.seed
    rng = np.random.default_rng(int(manifest.get("seed", 0)))
    verdicts = _cert_volume_change(traces, st, manifest, rng)
    payload = {
        "all_passed": all(v.passed for v in verdicts),
        "verdicts": [v.as_dict() for v in verdicts],
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0 if payload["all_passed"] else 1


# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="varimcf",
        description="discrete-varifold curvature flow: runs and certificates")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a preset and record frames")
    sim.add_argument("--config", help="INI settings file")
    sim.add_argument("--preset", help="scenario name")
    sim.add_argument("--out", help="output directory")
    sim.add_argument("--seed", type=int, help="seed echoed into the manifest")
    sim.add_argument("--eps", type=float, help="smoothing scale")
    sim.add_argument("--dt", type=float, help="time step")
    sim.add_argument("--end-time", dest="end_time", type=float,
                     help="final time (0 records a single snapshot)")
    sim.set_defaults(func=_cmd_simulate)

    chk = sub.add_parser("check", help="evaluate certificates on a run")
    chk.add_argument("manifest", help="manifest.json or its directory")
    chk.add_argument("--config", help="INI settings file")
    chk.add_argument("--certificates",
                     help="comma-separated certificate names, or 'all'")
    chk.add_argument("--json", help="also write the verdicts to this file")
    chk.set_defaults(func=_cmd_check)

    dist = sub.add_parser("distance",
                          help="bounded-Lipschitz distance of two measures")
    dist.add_argument("first", help="measure CSV")
    dist.add_argument("second", help="measure CSV")
    dist.add_argument("--config", help="INI settings file")
    dist.add_argument("--support-cap", dest="support_cap", type=int,
                      help="largest joint support the LP accepts")
    dist.set_defaults(func=_cmd_distance)

    vol = sub.add_parser("volume", help="per-step clipped volume reports")
    vol.add_argument("manifest", help="manifest.json or its directory")
    vol.add_argument("--config", help="INI settings file")
    vol.add_argument("--center", help="window center, e.g. '0,0'")
    vol.add_argument("--radius", type=float, help="window radius")
    vol.add_argument("--samples", type=int, help="Monte Carlo sample count")
    vol.add_argument("--seed", type=int, help="override the manifest seed")
    vol.set_defaults(func=_cmd_volume)
    return p


def main(argv=None) -> int:
    try:
        _apply_thread_env()
        args = _build_parser().parse_args(argv)
        return args.func(args)
    except (ConfigError, MissingFrames) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except VarimcfError as e:
        print(f"run error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
