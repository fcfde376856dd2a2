"""Sphere barriers and the monitors that certify avoidance behavior on traces.

A barrier is a nonnegative comparison weight psi(x, t) = gamma(|x - a|^2 +
2 d t) built from a radial profile gamma.  Two profiles are provided, both
vanishing at the sphere |x - a| = R and growing away from it on one side:

    external:  gamma(r) = (R^2 - r)^beta   for r <= R^2,   0 beyond
    internal:  gamma(r) = (r - R^2)^beta   for r >= R^2,   0 inside

The tangential defect

    (1/4) |S grad psi|^2 / psi  -  S : hess psi  +  d psi / d t

collapses, for such radial profiles, to |S(x-a)|^2 ((gamma')^2/gamma -
4 gamma''), so it is nonpositive exactly when the profile satisfies
(gamma')^2 <= 4 gamma gamma'', which for the power profiles means
beta >= 4/3.  The default beta = 4 keeps psi three times differentiable,
which the certificate below needs.

Monitors take a recorded flow and measure how much mass crosses a shrinking
sphere, how far atoms stray outside the initial convex hull, and whether
weighted masses obey their almost-monotonicity, each against a stated bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.spatial import ConvexHull

from .config import DEFAULT_TOLERANCES, Tolerances, sphere_area
from .errors import (ConfigError, GridMismatch, NonpositiveWeight,
                     PreconditionViolated, ZeroBarrier)
from .flow import FlowTrace
from .varifold import DiscreteVarifold, GrassmannElement, ScalarField

DEFAULT_SCALE_CEILING = 1.0   # admissible smoothing scales are below this
NORM_GRID_STEPS = 256


@dataclass(frozen=True)
class BarrierFunction:
    """Radial comparison weight psi(x, t) = gamma(|x - center|^2 + 2 d t)."""

    center: np.ndarray
    radius: float
    beta: float
    d: int
    orientation: str = "external"

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        c.flags.writeable = False
        object.__setattr__(self, "center", c)
        if self.radius <= 0.0:
            raise ConfigError("radius must be positive")
        if self.beta <= 0.0:
            raise ConfigError("beta must be positive")
        if self.orientation not in ("external", "internal"):
            raise ConfigError(f"unknown orientation {self.orientation!r}")

    @property
    def n(self) -> int:
        return self.center.shape[0]

    def is_smooth(self) -> bool:
        """Twice continuous differentiability across the sphere needs beta > 2."""
        return self.beta > 2.0

    def _sign(self) -> float:
        return 1.0 if self.orientation == "external" else -1.0

    def _uvals(self, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        w = x - self.center
        r = np.einsum("ai,ai->a", w, w) + 2.0 * self.d * t
        u = self._sign() * (self.radius**2 - r)
        return w, np.maximum(u, 0.0), u > 0.0

    def profile(self, r, order: int = 0):
        """gamma and its first three derivatives in the argument r."""
        r = np.asarray(r, dtype=float)
        s = self._sign()
        u = np.maximum(s * (self.radius**2 - r), 0.0)
        b = self.beta
        if order == 0:
            return u**b
        if order == 1:
            return -s * b * u ** (b - 1.0)
        if order == 2:
            return b * (b - 1.0) * u ** (b - 2.0)
        if order == 3:
            return -s * b * (b - 1.0) * (b - 2.0) * u ** (b - 3.0)
        raise ConfigError(f"profile order {order} not available")

    def value(self, x, t: float) -> np.ndarray:
        _, u, _ = self._uvals(x, t)
        return u**self.beta

    def grad(self, x, t: float) -> np.ndarray:
        w, u, live = self._uvals(x, t)
        gp = np.where(live, -self._sign() * self.beta * u ** (self.beta - 1.0), 0.0)
        return 2.0 * gp[:, None] * w

    def hess(self, x, t: float) -> np.ndarray:
        w, u, live = self._uvals(x, t)
        b = self.beta
        gp = np.where(live, -self._sign() * b * u ** (b - 1.0), 0.0)
        gpp = np.where(live, b * (b - 1.0) * u ** (b - 2.0), 0.0)
        eye = np.eye(self.n)
        return (4.0 * gpp[:, None, None] * np.einsum("ai,aj->aij", w, w)
                + 2.0 * gp[:, None, None] * eye[None])

    def third(self, x, t: float) -> np.ndarray:
        w, u, live = self._uvals(x, t)
        b = self.beta
        gpp = np.where(live, b * (b - 1.0) * u ** (b - 2.0), 0.0)
        gppp = np.where(live,
                        -self._sign() * b * (b - 1.0) * (b - 2.0) * u ** (b - 3.0),
                        0.0)
        eye = np.eye(self.n)
        www = np.einsum("ai,aj,ak->aijk", w, w, w)
        sym = (np.einsum("ij,ak->aijk", eye, w)
               + np.einsum("ik,aj->aijk", eye, w)
               + np.einsum("jk,ai->aijk", eye, w))
        return 8.0 * gppp[:, None, None, None] * www + 4.0 * gpp[:, None, None, None] * sym

    def time_derivative(self, x, t: float) -> np.ndarray:
        _, u, live = self._uvals(x, t)
        gp = np.where(live, -self._sign() * self.beta * u ** (self.beta - 1.0), 0.0)
        return 2.0 * self.d * gp

    def axiom_margin(self, samples: int = 512) -> float:
        """min of 4 gamma gamma'' - (gamma')^2 over the profile's support.

        Nonnegative iff the defect below is nonpositive; for the power
        profiles this is the condition beta >= 4/3.
        """
        if self.orientation == "external":
            rs = np.linspace(0.0, self.radius**2, samples, endpoint=False)
        else:
            rs = np.linspace(self.radius**2, 4.0 * self.radius**2, samples,
                             endpoint=False)[1:]
        g = self.profile(rs, 0)
        gp = self.profile(rs, 1)
        gpp = self.profile(rs, 2)
        return float(np.min(4.0 * g * gpp - gp**2))

    def as_scalar_field(self) -> ScalarField:
        """Adapter to the generic weight interface used by flow monitors."""
        return ScalarField(
            value=lambda x, t=0.0: self.value(x, t),
            grad=lambda x, t=0.0: self.grad(x, t),
            hess=lambda x, t=0.0: self.hess(x, t),
            time_derivative=lambda x, t=0.0: self.time_derivative(x, t),
            c1_bound=None, c2_bound=None, hess_bound=None)

    # -- certified norm overestimates (radial sweeps at t = 0) --------------

    def c3_norm(self, safety: float = 1.05) -> float:
        """sup over orders 0..3 of the derivative tensors' Frobenius norms."""
        rho = np.linspace(0.0, self.radius, NORM_GRID_STEPS + 1)
        if self.orientation == "internal":
            rho = np.linspace(self.radius, 2.0 * self.radius, NORM_GRID_STEPS + 1)
        pts = np.zeros((len(rho), self.n))
        pts[:, 0] = rho
        pts = pts + self.center
        worst = float(np.max(self.value(pts, 0.0)))
        worst = max(worst, float(np.max(np.linalg.norm(self.grad(pts, 0.0), axis=1))))
        H = self.hess(pts, 0.0)
        worst = max(worst, float(np.max(np.sqrt(np.einsum("aij,aij->a", H, H)))))
        T = self.third(pts, 0.0)
        worst = max(worst, float(np.max(np.sqrt(np.einsum("aijk,aijk->a", T, T)))))
        return safety * worst

    def grad_l2_norm(self, safety: float = 1.05) -> float:
        """L^2 norm of grad psi(., 0) by radial quadrature."""
        b = self.beta
        R2 = self.radius**2

        if self.orientation == "external":
            def integrand(rho):
                gp = -b * (R2 - rho**2) ** (b - 1.0)
                return (2.0 * abs(gp) * rho) ** 2 * rho ** (self.n - 1)
            hi = self.radius
        else:
            def integrand(rho):
                gp = b * (rho**2 - R2) ** (b - 1.0)
                return (2.0 * gp * rho) ** 2 * rho ** (self.n - 1)
            hi = 2.0 * self.radius  # truncated: certificate use is external-only
        val, _ = quad(integrand, 0.0 if self.orientation == "external" else self.radius,
                      hi, limit=200)
        return safety * math.sqrt(sphere_area(self.n) * val)


def technical_gap(h, phi_val: float, grad_phi, S: GrassmannElement) -> float:
    """Slack of the completed-square bound tying curvature to a weight.

    gap = (1/4)|S grad|^2 / phi + grad . h + |h|^2 phi - (I - S) grad . h
        = | sqrt(phi) h + S grad / (2 sqrt(phi)) |^2  >= 0,

    with equality at h = -(1/2) S grad / phi.
    """
    if phi_val <= 0.0:
        raise NonpositiveWeight(f"weight value {phi_val} must be positive")
    h = np.asarray(h, dtype=float)
    grad_phi = np.asarray(grad_phi, dtype=float)
    Sg = S.projection @ grad_phi
    lhs = -float(np.dot(h, h)) * phi_val + float(np.dot(grad_phi - Sg, h))
    rhs = 0.25 * float(np.dot(Sg, Sg)) / phi_val + float(np.dot(grad_phi, h))
    return rhs - lhs


def barrier_defect(psi: BarrierFunction, x, S: GrassmannElement, t: float,
                   tol: Tolerances = DEFAULT_TOLERANCES) -> float:
    """(1/4)|S grad psi|^2/psi - S : hess psi + d psi/dt at a single point.

    Nonpositive wherever psi > 0, provided the profile passes the axiom
    check; a profile violating it (beta < 4/3) makes this positive somewhere.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    val = float(psi.value(x, t)[0])
    if val <= tol.barrier_floor:
        raise ZeroBarrier(f"psi = {val:.3e} at the queried point")
    g = psi.grad(x, t)[0]
    H = psi.hess(x, t)[0]
    dt_ = float(psi.time_derivative(x, t)[0])
    Sg = S.projection @ g
    return (0.25 * float(np.dot(Sg, Sg)) / val
            - float(np.einsum("ij,ij->", S.projection, H)) + dt_)


# ---------------------------------------------------------------------------
# trace monitors


@dataclass(frozen=True)
class SphereMonitorSeries:
    """Per-snapshot readings against the shrinking sphere sqrt(R^2 - 2dt)."""

    times: np.ndarray
    radii: np.ndarray
    values: np.ndarray   # invaded mass (external) or protrusion (internal)

    def peak(self) -> float:
        return float(np.max(self.values)) if len(self.values) else 0.0


def _shrinking_radii(trace: FlowTrace, R: float, d: int):
    times = trace.times
    r2 = R**2 - 2.0 * d * times
    live = r2 > 0.0
    return times[live], np.sqrt(r2[live]), live


def external_sphere_monitor(trace: FlowTrace, center, R: float) -> SphereMonitorSeries:
    """Mass found inside the shrinking ball; zero for exact avoidance."""
    center = np.asarray(center, dtype=float)
    d = trace.snapshots[0].varifold.d
    times, radii, live = _shrinking_radii(trace, R, d)
    vals = []
    for snap, r in zip([s for s, ok in zip(trace.snapshots, live) if ok], radii):
        V = snap.varifold
        dist = np.linalg.norm(V.positions - center, axis=1)
        vals.append(float(V.masses[dist < r].sum()))
    return SphereMonitorSeries(times, radii, np.array(vals))


def internal_sphere_monitor(trace: FlowTrace, center, R: float) -> SphereMonitorSeries:
    """How far the support protrudes beyond the shrinking ball (<= 0 is inside)."""
    center = np.asarray(center, dtype=float)
    d = trace.snapshots[0].varifold.d
    times, radii, live = _shrinking_radii(trace, R, d)
    vals = []
    for snap, r in zip([s for s, ok in zip(trace.snapshots, live) if ok], radii):
        V = snap.varifold
        dist = np.linalg.norm(V.positions - center, axis=1)
        vals.append(float(np.max(dist) - r))
    return SphereMonitorSeries(times, radii, np.array(vals))


def _degenerate_hull_distance(points: np.ndarray,
                              hull_points: np.ndarray) -> np.ndarray:
    """Distance to the hull of an affinely dependent set (point, segment, patch)."""
    from .geometry import point_segment_distance, point_triangle_distance
    out = np.empty(len(points))
    m = len(hull_points)
    for i, p in enumerate(points):
        if m == 1:
            out[i] = float(np.linalg.norm(p - hull_points[0]))
            continue
        best = math.inf
        for a in range(m):
            for b in range(a + 1, m):
                best = min(best, point_segment_distance(p, hull_points[a],
                                                        hull_points[b]))
                if hull_points.shape[1] == 3:
                    for c in range(b + 1, m):
                        best = min(best, point_triangle_distance(
                            p, hull_points[a], hull_points[b], hull_points[c]))
        out[i] = best
    return out


def _hull_exterior_distance(points: np.ndarray, hull_points: np.ndarray) -> np.ndarray:
    """Euclidean distance to a convex hull, zero inside (n = 2 or 3)."""
    try:
        hull = ConvexHull(hull_points)
    except Exception:
        # fewer points than a full-dimensional hull needs, or a flat set
        return _degenerate_hull_distance(points, hull_points)
    A = hull.equations[:, :-1]
    b = hull.equations[:, -1]
    slack = points @ A.T + b          # <= 0 componentwise means inside
    inside = np.all(slack <= 1e-12, axis=1)
    out = np.zeros(len(points))
    outside_idx = np.nonzero(~inside)[0]
    if len(outside_idx) == 0:
        return out
    from .geometry import point_segment_distance, point_triangle_distance
    verts = hull_points
    for i in outside_idx:
        p = points[i]
        best = math.inf
        for simplex in hull.simplices:
            if hull_points.shape[1] == 2:
                dist = point_segment_distance(p, verts[simplex[0]], verts[simplex[1]])
            else:
                dist = point_triangle_distance(p, verts[simplex[0]],
                                               verts[simplex[1]], verts[simplex[2]])
            best = min(best, dist)
        out[i] = best
    return out


def convex_hull_monitor(trace: FlowTrace) -> np.ndarray:
    """Max distance of any atom to the hull of the initial atoms, per snapshot."""
    hull_pts = trace.snapshots[0].varifold.positions
    out = []
    for snap in trace.snapshots:
        d = _hull_exterior_distance(snap.varifold.positions, hull_pts)
        out.append(float(np.max(d)) if len(d) else 0.0)
    return np.array(out)


def avoidance_distance(trace_a: FlowTrace, trace_b: FlowTrace) -> np.ndarray:
    """Min inter-atom distance between two flows, per shared snapshot."""
    ta, tb = trace_a.times, trace_b.times
    if len(ta) != len(tb) or not np.allclose(ta, tb, atol=1e-12):
        raise GridMismatch("traces use different time subdivisions")
    gaps = []
    for sa, sb in zip(trace_a.snapshots, trace_b.snapshots):
        A, B = sa.varifold.positions, sb.varifold.positions
        diff = A[:, None, :] - B[None, :, :]
        gaps.append(float(np.min(np.linalg.norm(diff, axis=2))))
    return np.array(gaps)


# ---------------------------------------------------------------------------
# certificates


@dataclass(frozen=True)
class EpsBarrierReport:
    eps: float
    step: float
    norm_constant: float        # 2 max{ C3 norm, grad L2 norm, 1 }
    mass_bound: float
    bound: float                # norm_constant * (10M + 9) * eps^(1/6)
    max_increase: float
    passed: bool
    notes: tuple[str, ...] = ()


def _trace_consistency(trace: FlowTrace, tol: Tolerances) -> None:
    """Reject traces whose snapshots cannot come from the recorded steps."""
    snaps = trace.snapshots
    for i in range(len(snaps) - 1):
        s, nxt = snaps[i], snaps[i + 1]
        dt = nxt.time - s.time
        if s.curvature is None or s.curvature_max is None:
            raise PreconditionViolated("trace lacks recorded step fields")
        if len(s.varifold) != len(nxt.varifold):
            raise PreconditionViolated("atom count changed between snapshots")
        moved = np.linalg.norm(nxt.varifold.positions - s.varifold.positions, axis=1)
        allowed = dt * s.curvature_max * (1.0 + 1e-9) + 1e-12
        if float(np.max(moved)) > allowed:
            raise PreconditionViolated(
                f"atom displacement {float(np.max(moved)):.3e} exceeds "
                f"step * recorded curvature bound {allowed:.3e} at t = {s.time:.6g}")
        if nxt.mass > s.mass + dt + tol.chain_slack:
            raise PreconditionViolated(
                f"mass gained more than the step length at t = {s.time:.6g}")


def epsilon_barrier_certificate(trace: FlowTrace, psi: BarrierFunction,
                                c5_cfg: float = 1.0,
                                scale_ceiling: float = DEFAULT_SCALE_CEILING,
                                tol: Tolerances = DEFAULT_TOLERANCES
                                ) -> EpsBarrierReport:
    """Certify the almost-nonincrease of the barrier-weighted mass.

    For a piecewise flow that stays admissible (fine subdivision relative to
    the smoothing scale) the weighted mass can increase between any two
    snapshot times by at most  c (10M + 9) eps^(1/6),  with c the certified
    overestimate of max{ C3 norm of psi, L2 norm of grad psi, 1 } doubled.
    The preconditions also pin the trace to its own recorded step data, so a
    trace whose atoms moved farther than the recorded fields allow is
    rejected rather than graded.
    """
    notes = []
    if psi.orientation != "external":
        raise ConfigError("certificate applies to the compactly supported profile")
    if psi.beta <= 3.0:
        raise ConfigError("profile must be three times differentiable (beta > 3)")
    cfg = trace.config
    if cfg.mode != "piecewise":
        raise PreconditionViolated("certificate applies to the piecewise reading")
    eps = cfg.eps
    step = cfg.delta()
    if c5_cfg * step * eps**-8 > eps * (1.0 + 1e-12):
        raise PreconditionViolated(
            f"subdivision too coarse: {c5_cfg:.3g} * {step:.3g} * eps^-8 "
            f"= {c5_cfg * step * eps**-8:.3e} > eps = {eps:.3e}")
    if eps >= scale_ceiling:
        raise PreconditionViolated(
            f"smoothing scale {eps} not below the ceiling {scale_ceiling}")
    if scale_ceiling > 4.0**-6:
        notes.append("scale ceiling above 4^-6: admissibility is configured, "
                     "not derived")
    _trace_consistency(trace, tol)
    c = 2.0 * max(psi.c3_norm(tol.norm_safety), psi.grad_l2_norm(tol.norm_safety), 1.0)
    M = trace.mass_bound
    bound = c * (10.0 * M + 9.0) * eps ** (1.0 / 6.0)
    worst = -math.inf
    weighted = [float(np.dot(s.varifold.masses,
                             psi.value(s.varifold.positions, s.time)))
                for s in trace.snapshots]
    running_min = math.inf
    for w in weighted:
        running_min = min(running_min, w)
        worst = max(worst, w - running_min)
    return EpsBarrierReport(eps, step, c, M, bound, worst, worst <= bound,
                            tuple(notes))


@dataclass(frozen=True)
class LscReport:
    constant: float         # C = sup |hess psi| * initial mass
    slack: float            # allowed per-step uptick
    max_uptick: float
    passed: bool


def lsc_monitor(trace: FlowTrace, psi: ScalarField,
                constant: float | None = None,
                slack_tol: float | None = None) -> LscReport:
    """Check that t -> ||V(t)||(psi) - C t is nonincreasing up to step slack.

    C defaults to sup |hess psi| times the initial mass; `constant` overrides
    it (a forced C = 0 under a moving support is the negative control).
    """
    if constant is None:
        if psi.hess_bound is None:
            raise ConfigError("weight carries no hessian bound; pass constant=")
        constant = float(psi.hess_bound) * trace.snapshots[0].mass
    if slack_tol is None:
        if psi.c2_bound is None:
            raise ConfigError("weight carries no C2 bound; pass slack_tol=")
        slack_tol = float(psi.c2_bound)
    step = trace.config.delta()
    slack = slack_tol * step
    vals = np.array([float(np.dot(s.varifold.masses,
                                  psi.value(s.varifold.positions, s.time)))
                     - constant * s.time for s in trace.snapshots])
    upticks = np.diff(vals)
    worst = float(np.max(upticks)) if len(upticks) else 0.0
    return LscReport(constant, slack, worst, worst <= slack)
