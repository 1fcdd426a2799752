"""Radial cut-off functions near a small disk, with exact and quadrature norms.

Three transition profiles between 0 (inside a small disk) and 1 (outside a
larger one):

* ``AnnulusCutoff`` -- the harmonic log-interpolation between radii A < B,
  which minimizes the L2 norm of the gradient among all such transitions and
  has closed-form L2 norms.
* ``SmoothCutoff`` -- the C-infinity construction that patches the harmonic
  profile at inner scale ``eps`` and outer scale ``eps * alpha`` with two
  mollifier rings, valid for alpha >= 100 and eps <= 1/100.
* ``LogSmoothstepCutoff`` -- a C-infinity smoothstep in log-radius, usable at
  any radius ratio > 1; it shares the 1/sqrt(log(B/A)) gradient-norm scaling.

A ``MovingCutoff`` translates a profile along a Lipschitz body path.  All
objects are immutable and every function is pure.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

__all__ = [
    "AnnulusCutoff",
    "SmoothCutoff",
    "LogSmoothstepCutoff",
    "MovingCutoff",
    "BodyPath",
    "PathBreakpointError",
    "AnnulusNormsSq",
    "CutoffNorms",
    "alpha_schedule",
    "alpha_schedule_info",
    "smoothstep",
    "mollifier_profile",
    "radial_quadrature",
    "cutoff_norms",
]

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# C-infinity smoothstep built from the bump exponential
# ---------------------------------------------------------------------------

def _bump(t: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        return np.where(t > 0.0, np.exp(-1.0 / np.maximum(t, 1e-300)), 0.0)


def smoothstep(t, order: int = 0):
    """Value (order 0) or derivative (order 1, 2) of the standard C-infinity
    step: 0 for t <= 0, 1 for t >= 1, sigma(t)/(sigma(t)+sigma(1-t)) between,
    sigma(t) = exp(-1/t)."""
    t = np.asarray(t, dtype=float)
    tc = np.clip(t, 1e-9, 1.0 - 1e-9)
    a = _bump(tc)
    b = _bump(1.0 - tc)
    d = a + b
    inside = (t > 0.0) & (t < 1.0)
    if order == 0:
        return np.where(t <= 0.0, 0.0, np.where(t >= 1.0, 1.0, a / d))
    ap = a / tc**2
    bp = -b / (1.0 - tc) ** 2
    num1 = ap * b - a * bp
    if order == 1:
        return np.where(inside, num1 / d**2, 0.0)
    if order == 2:
        app = a * (1.0 / tc**4 - 2.0 / tc**3)
        bpp = b * (1.0 / (1.0 - tc) ** 4 - 2.0 / (1.0 - tc) ** 3)
        s2 = (app * b - a * bpp) / d**2 - 2.0 * num1 * (ap + bp) / d**3
        return np.where(inside, s2, 0.0)
    raise ValueError(f"order must be 0, 1 or 2, got {order}")


def mollifier_profile(r, order: int = 0):
    """Radial mollifier g: 0 for r < 2, 1 for r > 4, smooth monotone between."""
    r = np.asarray(r, dtype=float)
    if order == 0:
        return smoothstep((r - 2.0) / 2.0)
    return smoothstep((r - 2.0) / 2.0, order) / 2.0**order


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

def radial_quadrature(fn: Callable[[np.ndarray], np.ndarray],
                      knots, panels: int, order: int = 10,
                      geometric: bool = True) -> float:
    """Integrate fn(r) over the union of intervals between consecutive knots.

    Composite Gauss-Legendre with ``panels`` subpanels per interval; panels
    are geometrically spaced when the interval has positive lower end (the
    integrands here are log-uniform in r), else uniform.
    """
    if panels < 1:
        raise ValueError("refinement (panel count) must be >= 1")
    nodes, weights = np.polynomial.legendre.leggauss(order)
    total = 0.0
    for lo, hi in zip(knots[:-1], knots[1:]):
        if hi <= lo:
            continue
        if geometric and lo > 0.0:
            edges = lo * (hi / lo) ** (np.arange(panels + 1) / panels)
        else:
            edges = np.linspace(lo, hi, panels + 1)
        a, b = edges[:-1], edges[1:]
        r = 0.5 * (b - a)[:, None] * nodes[None, :] + 0.5 * (a + b)[:, None]
        w = 0.5 * (b - a)[:, None] * weights[None, :]
        total += float(np.sum(w * fn(r)))
    return total


# ---------------------------------------------------------------------------
# harmonic annulus cut-off
# ---------------------------------------------------------------------------

class AnnulusNormsSq(NamedTuple):
    """Squared L2 norms of the annulus cut-off: deficit ||f-1||^2, gradient
    ||grad f||^2, and weighted Hessian |||x| grad^2 f||^2 on the annulus."""

    sq_deficit: float
    sq_grad: float
    sq_weighted_hess: float


class CutoffNorms(NamedTuple):
    """Plain (unsquared) norms of a smooth cut-off profile."""

    deficit: float
    grad: float
    weighted_hess: float


@dataclass(frozen=True)
class AnnulusCutoff:
    """Harmonic cut-off: 0 for r < A, log-interpolation on A < r < B, 1 beyond."""

    inner_radius: float
    outer_radius: float

    def __post_init__(self):
        if not (0.0 < self.inner_radius < self.outer_radius):
            raise ValueError(
                f"need 0 < A < B, got A={self.inner_radius}, B={self.outer_radius}"
            )

    @property
    def alpha(self) -> float:
        return self.outer_radius / self.inner_radius

    @property
    def log_alpha(self) -> float:
        return math.log(self.alpha)

    @property
    def r_inner(self) -> float:
        return self.inner_radius

    @property
    def r_outer(self) -> float:
        return self.outer_radius

    @property
    def knots(self):
        return (self.inner_radius, self.outer_radius)

    def value(self, r):
        r = np.asarray(r, dtype=float)
        a, la = self.inner_radius, self.log_alpha
        rc = np.maximum(r, a * 1e-12)
        t = np.log(rc / a) / la
        return np.clip(t, 0.0, 1.0)

    def deriv(self, r):
        r = np.asarray(r, dtype=float)
        inside = (r > self.inner_radius) & (r < self.outer_radius)
        rc = np.where(inside, r, 1.0)
        return np.where(inside, 1.0 / (rc * self.log_alpha), 0.0)

    def deriv2(self, r):
        r = np.asarray(r, dtype=float)
        inside = (r > self.inner_radius) & (r < self.outer_radius)
        rc = np.where(inside, r, 1.0)
        return np.where(inside, -1.0 / (rc**2 * self.log_alpha), 0.0)

    def eval(self, x) -> np.ndarray:
        """Evaluate at planar points, shape (..., 2)."""
        x = np.asarray(x, dtype=float)
        return self.value(np.hypot(x[..., 0], x[..., 1]))

    def closed_form_norms(self) -> AnnulusNormsSq:
        """Exact squared norms: pi A^2 (a^2/(2 ln^2 a) - 1/(2 ln^2 a) - 1/ln a),
        2 pi / ln a, and 4 pi / ln a, with a the radius ratio."""
        la = self.log_alpha
        al = self.alpha
        deficit = math.pi * self.inner_radius**2 * (
            al**2 / (2.0 * la**2) - 1.0 / (2.0 * la**2) - 1.0 / la
        )
        return AnnulusNormsSq(deficit, 2.0 * math.pi / la, 4.0 * math.pi / la)

    def quadrature_norms(self, refinement: int, order: int = 10) -> AnnulusNormsSq:
        """Same squared norms by radial integration of the explicit derivative
        formulas grad f = x/(|x|^2 ln a), |grad^2 f| = sqrt(2)/(|x|^2 ln a)."""
        a, b, la = self.inner_radius, self.outer_radius, self.log_alpha
        two_pi = 2.0 * math.pi
        sq_grad = radial_quadrature(
            lambda r: two_pi * r / (r**2 * la**2), (a, b), refinement, order)
        sq_hess = radial_quadrature(
            lambda r: two_pi * r * 2.0 / (r**2 * la**2), (a, b), refinement, order)
        annulus_deficit = radial_quadrature(
            lambda r: two_pi * r * (np.log(r / b) / la) ** 2, (a, b),
            refinement, order)
        return AnnulusNormsSq(math.pi * a**2 + annulus_deficit, sq_grad, sq_hess)


# ---------------------------------------------------------------------------
# the smooth cut-off construction (inner scale eps, outer scale eps * alpha)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SmoothCutoff:
    """C-infinity cut-off vanishing near D(0, eps), equal to 1 from eps*alpha on.

    Piecewise: 0 on r < 2 eps; g1 * f_harm on (2 eps, 4 eps); the harmonic
    profile f_harm = log(r/eps)/log(alpha) on (4 eps, eps alpha / 4);
    1 + g2 (f_harm - 1) on (eps alpha / 4, eps alpha / 2); 1 beyond.  Here
    g1(x) = g(x/eps) and g2(x) = 1 - g(8x/(eps alpha)) for the mollifier g.
    """

    eps: float
    alpha: float
    profile: Callable = field(default=mollifier_profile)

    def __post_init__(self):
        if not (0.0 < self.eps <= 0.01):
            raise ValueError(f"eps must lie in (0, 1/100], got {self.eps}")
        if not (100.0 <= self.alpha <= 1.0 / self.eps + 1e-12):
            raise ValueError(
                f"alpha must satisfy 100 <= alpha <= 1/eps, got alpha={self.alpha} "
                f"with 1/eps={1.0 / self.eps:.6g}"
            )

    @property
    def log_alpha(self) -> float:
        return math.log(self.alpha)

    @property
    def r_inner(self) -> float:
        return 2.0 * self.eps

    @property
    def r_outer(self) -> float:
        return self.eps * self.alpha / 2.0

    @property
    def knots(self):
        e, ea = self.eps, self.eps * self.alpha
        return (2.0 * e, 4.0 * e, ea / 4.0, ea / 2.0)

    def _pieces(self, r):
        """g1, g2, harmonic T and radial derivatives of each, vectorized."""
        e, al, la = self.eps, self.alpha, self.log_alpha
        g = self.profile
        g1 = g(r / e)
        g1p = g(r / e, 1) / e
        g1pp = g(r / e, 2) / e**2
        s = 8.0 / (e * al)
        g2 = 1.0 - g(s * r)
        g2p = -s * g(s * r, 1)
        g2pp = -(s**2) * g(s * r, 2)
        rc = np.maximum(r, 2.0 * e * 1e-12)
        T = np.log(rc / e) / la
        Tp = 1.0 / (rc * la)
        Tpp = -1.0 / (rc**2 * la)
        return g1, g1p, g1pp, g2, g2p, g2pp, T, Tp, Tpp

    def value(self, r):
        r = np.asarray(r, dtype=float)
        g1, _, _, g2, _, _, T, _, _ = self._pieces(r)
        hole = r <= 2.0 * self.eps
        u = np.where(hole, 0.0, g1 * T)
        return np.where(hole, 0.0, 1.0 + g2 * (u - 1.0))

    def deriv(self, r):
        r = np.asarray(r, dtype=float)
        g1, g1p, _, g2, g2p, _, T, Tp, _ = self._pieces(r)
        hole = r <= 2.0 * self.eps
        u = np.where(hole, 0.0, g1 * T)
        up = np.where(hole, 0.0, g1p * T + g1 * Tp)
        return np.where(hole, 0.0, g2p * (u - 1.0) + g2 * up)

    def deriv2(self, r):
        r = np.asarray(r, dtype=float)
        g1, g1p, g1pp, g2, g2p, g2pp, T, Tp, Tpp = self._pieces(r)
        hole = r <= 2.0 * self.eps
        u = np.where(hole, 0.0, g1 * T)
        up = np.where(hole, 0.0, g1p * T + g1 * Tp)
        upp = np.where(hole, 0.0, g1pp * T + 2.0 * g1p * Tp + g1 * Tpp)
        return np.where(hole, 0.0, g2pp * (u - 1.0) + 2.0 * g2p * up + g2 * upp)

    def eval(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.value(np.hypot(x[..., 0], x[..., 1]))

    def harmonic_branch(self) -> AnnulusCutoff:
        """The underlying harmonic profile f_{eps, eps*alpha}."""
        return AnnulusCutoff(self.eps, self.eps * self.alpha)


# ---------------------------------------------------------------------------
# log-radius smoothstep: smooth at any radius ratio (desk-scale work)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LogSmoothstepCutoff:
    """C-infinity cut-off 0 on r <= A, 1 on r >= B, smoothstep in log-radius.

    Unlike the patched construction this needs no scale separation, so it is
    the profile of choice when eps is only modestly below the domain size.
    Its gradient norm scales like 1/sqrt(log(B/A)) with a constant slightly
    above the harmonic minimizer's.
    """

    inner_radius: float
    outer_radius: float

    def __post_init__(self):
        if not (0.0 < self.inner_radius < self.outer_radius):
            raise ValueError(
                f"need 0 < A < B, got A={self.inner_radius}, B={self.outer_radius}"
            )

    @property
    def alpha(self) -> float:
        return self.outer_radius / self.inner_radius

    @property
    def log_alpha(self) -> float:
        return math.log(self.alpha)

    @property
    def r_inner(self) -> float:
        return self.inner_radius

    @property
    def r_outer(self) -> float:
        return self.outer_radius

    @property
    def knots(self):
        return (self.inner_radius, self.outer_radius)

    def _t(self, r):
        rc = np.maximum(np.asarray(r, dtype=float), self.inner_radius * 1e-12)
        return np.log(rc / self.inner_radius) / self.log_alpha

    def value(self, r):
        return smoothstep(self._t(r))

    def deriv(self, r):
        r = np.asarray(r, dtype=float)
        rc = np.maximum(r, self.inner_radius * 1e-12)
        return smoothstep(self._t(r), 1) / (rc * self.log_alpha)

    def deriv2(self, r):
        r = np.asarray(r, dtype=float)
        rc = np.maximum(r, self.inner_radius * 1e-12)
        t = self._t(r)
        la = self.log_alpha
        return smoothstep(t, 2) / (rc * la) ** 2 - smoothstep(t, 1) / (rc**2 * la)

    def eval(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.value(np.hypot(x[..., 0], x[..., 1]))


def cutoff_norms(profile, refinement: int, order: int = 10) -> CutoffNorms:
    """L2 norms {||f - 1||, ||grad f||, || |x| grad^2 f ||} of a radial profile
    by piecewise radial quadrature (knots of the profile bound each smooth
    branch)."""
    two_pi = 2.0 * math.pi
    knots = (0.0, *profile.knots)
    deficit_sq = radial_quadrature(
        lambda r: two_pi * r * (profile.value(r) - 1.0) ** 2, knots,
        refinement, order, geometric=False)
    grad_sq = radial_quadrature(
        lambda r: two_pi * r * profile.deriv(r) ** 2, knots,
        refinement, order, geometric=False)
    hess_sq = radial_quadrature(
        lambda r: two_pi * r**3 * (profile.deriv2(r) ** 2
                                   + (profile.deriv(r) / np.maximum(r, 1e-300)) ** 2),
        knots, refinement, order, geometric=False)
    return CutoffNorms(math.sqrt(deficit_sq), math.sqrt(grad_sq), math.sqrt(hess_sq))


# ---------------------------------------------------------------------------
# the intermediate-scale schedule
# ---------------------------------------------------------------------------

def alpha_schedule_info(eps: float, sup_body_speed: float = 0.0):
    """Intermediate cut-off scale max(100, 1/sqrt(eps + eps*speed)), clamped
    into [100, 1/eps].  Returns (alpha, clamped)."""
    if not (0.0 < eps <= 0.01):
        raise ValueError(f"eps must lie in (0, 1/100], got {eps}")
    if sup_body_speed < 0.0:
        raise ValueError(f"sup body speed must be >= 0, got {sup_body_speed}")
    raw = max(100.0, 1.0 / math.sqrt(eps + eps * sup_body_speed))
    clamped = raw > 1.0 / eps
    return (min(raw, 1.0 / eps), clamped)


def alpha_schedule(eps: float, sup_body_speed: float = 0.0) -> float:
    alpha, clamped = alpha_schedule_info(eps, sup_body_speed)
    if clamped:
        log.warning(
            "alpha schedule clamped to 1/eps = %.6g for eps=%.3g, speed=%.3g",
            alpha, eps, sup_body_speed,
        )
    return alpha


# ---------------------------------------------------------------------------
# body paths and the moving cut-off
# ---------------------------------------------------------------------------

class PathBreakpointError(ValueError):
    """The path velocity was requested exactly at a breakpoint; perturb t."""


@dataclass(frozen=True)
class BodyPath:
    """Piecewise-linear body-center path; Lipschitz, differentiable away from
    the breakpoints."""

    times: np.ndarray
    positions: np.ndarray  # (M, 2)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.positions, dtype=float)
        if t.ndim != 1 or p.shape != (t.size, 2):
            raise ValueError("need times (M,) and positions (M, 2)")
        if t.size < 1 or np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing and nonempty")
        t.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", p)

    @classmethod
    def constant(cls, position, horizon: float = 1.0) -> "BodyPath":
        p = np.asarray(position, dtype=float)
        return cls(np.array([0.0, horizon]), np.stack([p, p]))

    @classmethod
    def linear(cls, position, velocity, horizon: float = 1.0) -> "BodyPath":
        p = np.asarray(position, dtype=float)
        v = np.asarray(velocity, dtype=float)
        return cls(np.array([0.0, horizon]), np.stack([p, p + horizon * v]))

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def position(self, t: float) -> np.ndarray:
        return np.array([
            np.interp(t, self.times, self.positions[:, 0]),
            np.interp(t, self.times, self.positions[:, 1]),
        ])

    def velocity(self, t: float) -> np.ndarray:
        if self.times.size == 1:
            return np.zeros(2)
        interior = self.times[1:-1]
        if interior.size and np.any(np.isclose(t, interior, rtol=0.0, atol=1e-12)):
            raise PathBreakpointError(
                f"t={t} is a path breakpoint where the velocity is undefined; "
                "perturb t slightly"
            )
        i = int(np.clip(np.searchsorted(self.times, t, side="right") - 1,
                        0, self.times.size - 2))
        dt = self.times[i + 1] - self.times[i]
        return (self.positions[i + 1] - self.positions[i]) / dt


@dataclass(frozen=True)
class MovingCutoff:
    """Cut-off translated along a body path: eta(t, x) = f(x - h(t))."""

    profile: object  # any radial profile (value/deriv/deriv2/knots/r_inner/r_outer)
    path: BodyPath

    def center(self, t: float) -> np.ndarray:
        return self.path.position(t)

    def value(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = x - self.center(t)
        return self.profile.value(np.hypot(d[..., 0], d[..., 1]))

    def time_derivative(self, t: float, x) -> np.ndarray:
        """d/dt eta = -h'(t) . grad f(x - h(t)); raises at path breakpoints."""
        v = self.path.velocity(t)
        x = np.asarray(x, dtype=float)
        d = x - self.center(t)
        r = np.hypot(d[..., 0], d[..., 1])
        rc = np.maximum(r, 1e-300)
        radial = self.profile.deriv(r)
        return -(v[0] * d[..., 0] + v[1] * d[..., 1]) / rc * radial
