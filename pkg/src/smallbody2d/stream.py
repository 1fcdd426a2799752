"""Stream functions and the cut-off test-function construction.

For a divergence-free planar field phi, the stream function psi satisfies
perp_grad(psi) = phi; on the torus we normalize it to zero mean.  The
modified stream psi_eps subtracts the value at the body center, and the
test field phi_eps = perp_grad(eta_eps * psi_eps) vanishes near the body
while agreeing with phi outside the cut-off annulus.

Two measurement routes coexist on purpose:

* grid route -- phi_eps assembled spectrally on the grid (exactly
  divergence-free), norms via FFT; valid when the cut-off scales are
  grid-resolvable;
* quadrature route -- norms and pairings of phi_eps - phi evaluated by polar
  quadrature around the body center with exact Fourier point evaluation of
  psi and its derivatives; valid at any cut-off scale, including ones far
  below the grid spacing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .cutoffs import MovingCutoff
from .fields import (
    DivergenceError,
    FourierInterpolant,
    GridField,
    divergence,
    l2_norm,
    h1_seminorm,
    linf_norm,
    perp_gradient,
    scalar_laplacian_inverse,
    curl,
    wrap_displacement,
)

__all__ = [
    "TestFunctionBundle",
    "DeviationNorms",
    "biot_savart_stream",
    "modify_stream",
    "build_test_function",
    "eval_test_function",
    "h1_distance",
    "deviation_norms",
    "timeder_pairing",
    "modified_stream_sup",
    "modified_stream_time_sup",
    "sample_cutoff_grid",
]

DIV_TOLERANCE = 1e-8


def biot_savart_stream(phi: GridField, div_tol: float = DIV_TOLERANCE) -> GridField:
    """Zero-mean stream function psi with perp_grad(psi) = phi.

    ``phi`` must be divergence-free and effectively supported away from the
    periodic boundary (support diameter below L/4) for the torus to stand in
    for the plane; the grid identity itself is exact regardless.
    """
    if not phi.is_vector:
        raise ValueError("stream functions are computed for vector fields")
    div_max = linf_norm(divergence(phi))
    scale = max(linf_norm(phi), 1.0)
    if div_max > div_tol * scale:
        raise DivergenceError(div_max, div_tol * scale)
    return scalar_laplacian_inverse(curl(phi))


def modify_stream(psi: GridField, center) -> GridField:
    """Shift psi by its (spectrally interpolated) value at the body center."""
    value = float(FourierInterpolant(psi)(np.asarray(center, dtype=float))[0])
    return psi.with_data(psi.data - value)


def sample_cutoff_grid(mc: MovingCutoff, t: float, L: float, N: int):
    """Sample eta(t, .) = f(x - h(t)) on the grid with periodic wrapping.

    Returns (eta, radius, unit_x, unit_y) arrays of shape (N, N).
    """
    x = np.arange(N) * (L / N)
    h = mc.center(t)
    dx = wrap_displacement(x - h[0], L)[:, None]
    dy = wrap_displacement(x - h[1], L)[None, :]
    r = np.hypot(dx, dy)
    rc = np.maximum(r, 1e-300)
    return mc.profile.value(r), r, dx / rc, dy / rc


@dataclass(frozen=True)
class TestFunctionBundle:
    """phi and its cut-off companion at one time, all on a common grid."""

    t: float
    phi: GridField
    psi: GridField
    psi_eps: GridField
    phi_eps: GridField
    eta: GridField
    cutoff: MovingCutoff | None
    center: np.ndarray | None

    @property
    def grid_resolved(self) -> bool:
        """Whether the cut-off transition is wider than a couple of cells."""
        if self.cutoff is None:
            return True
        return self.cutoff.profile.r_inner >= 2.0 * self.phi.h


def build_test_function(phi: GridField, mc: MovingCutoff | None,
                        t: float) -> TestFunctionBundle:
    """Assemble phi_eps = perp_grad(eta * psi_eps) on the grid.

    With ``mc=None`` (no body) the construction degenerates to phi itself.
    The spectral perpendicular gradient makes phi_eps exactly
    divergence-free on the grid; the pointwise region identities (zero near
    the body, phi outside) hold exactly for ``eval_test_function`` and up to
    spectral tolerance for the gridded field.
    """
    psi = biot_savart_stream(phi)
    if mc is None:
        ones = phi.with_data(np.ones((phi.N, phi.N)))
        return TestFunctionBundle(t=t, phi=phi, psi=psi, psi_eps=psi,
                                  phi_eps=phi, eta=ones, cutoff=None,
                                  center=None)
    center = mc.center(t)
    psi_eps = modify_stream(psi, center)
    eta, _, _, _ = sample_cutoff_grid(mc, t, phi.L, phi.N)
    phi_eps = perp_gradient(psi.with_data(eta * psi_eps.data))
    return TestFunctionBundle(t=t, phi=phi, psi=psi, psi_eps=psi_eps,
                              phi_eps=phi_eps, eta=phi.with_data(eta),
                              cutoff=mc, center=center)


def eval_test_function(bundle: TestFunctionBundle, points: np.ndarray) -> np.ndarray:
    """Pointwise phi_eps = psi_eps * perp_grad(eta) + eta * phi, shape (2, P).

    Exact in the cut-off branches: identically zero for |x - h| below the
    profile's inner hole, identically phi beyond its outer radius.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    interp = FourierInterpolant(bundle.psi)
    psi_x = interp(pts, dx=1)
    psi_y = interp(pts, dy=1)
    phi_pts = np.stack([-psi_y, psi_x])
    if bundle.cutoff is None:
        return phi_pts
    mc = bundle.cutoff
    d = pts - bundle.center
    r = np.hypot(d[:, 0], d[:, 1])
    rc = np.maximum(r, 1e-300)
    eta = mc.profile.value(r)
    etap = mc.profile.deriv(r)
    psi0 = float(interp(np.asarray(bundle.center))[0])
    psi_eps = interp(pts) - psi0
    perp = np.stack([-d[:, 1] / rc, d[:, 0] / rc])
    return psi_eps * etap * perp + eta * phi_pts


def h1_distance(a: GridField, b: GridField) -> tuple[float, float]:
    """Discrete (||a - b||_L2, ||grad(a - b)||_L2) on a shared grid."""
    a.same_grid(b)
    diff = a.with_data(a.data - b.data)
    return l2_norm(diff), h1_seminorm(diff)


# ---------------------------------------------------------------------------
# quadrature route: norms of phi_eps - phi at any scale
# ---------------------------------------------------------------------------

class DeviationNorms(NamedTuple):
    l2: float
    grad_l2: float

    @property
    def h1(self) -> float:
        return float(np.hypot(self.l2, self.grad_l2))


def _polar_nodes(profile, refinement: int, order: int, include_hole: bool = True):
    """Radial Gauss nodes between the profile knots (plus the inner hole)."""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    knots = [0.0] if include_hole else []
    knots += [k for k in profile.knots if k > 0.0]
    rs, ws = [], []
    for lo, hi in zip(knots[:-1], knots[1:]):
        if hi <= lo:
            continue
        if lo > 0.0:
            edges = lo * (hi / lo) ** (np.arange(refinement + 1) / refinement)
        else:
            edges = np.linspace(lo, hi, refinement + 1)
        a, b = edges[:-1], edges[1:]
        rs.append((0.5 * (b - a)[:, None] * nodes[None, :]
                   + 0.5 * (a + b)[:, None]).ravel())
        ws.append((0.5 * (b - a)[:, None] * weights[None, :]).ravel())
    return np.concatenate(rs), np.concatenate(ws)


def deviation_norms(phi: GridField, mc: MovingCutoff, t: float,
                    refinement: int = 12, n_theta: int = 128,
                    order: int = 10) -> DeviationNorms:
    """(||phi_eps - phi||_L2, ||grad(phi_eps - phi)||_L2) by polar quadrature.

    Uses phi_eps - phi = perp_grad((eta - 1) psi_eps), whose support is the
    disk of the cut-off's outer radius; psi and its derivatives are evaluated
    exactly at the quadrature points from the spectral representation, so the
    result is meaningful however small the cut-off scales are.
    """
    psi = biot_savart_stream(phi)
    h = mc.center(t)
    interp = FourierInterpolant(psi)
    psi0 = float(interp(np.asarray(h))[0])

    r, wr = _polar_nodes(mc.profile, refinement, order)
    theta = np.linspace(0.0, 2.0 * np.pi, n_theta, endpoint=False)
    ct, st = np.cos(theta), np.sin(theta)
    pts = np.empty((r.size * n_theta, 2))
    pts[:, 0] = (h[0] + np.outer(r, ct)).ravel()
    pts[:, 1] = (h[1] + np.outer(r, st)).ravel()

    shape = (r.size, n_theta)
    psi_eps = (interp(pts) - psi0).reshape(shape)
    px = interp(pts, dx=1).reshape(shape)
    py = interp(pts, dy=1).reshape(shape)
    pxx = interp(pts, dx=2).reshape(shape)
    pxy = interp(pts, dx=1, dy=1).reshape(shape)
    pyy = interp(pts, dy=2).reshape(shape)

    g = mc.profile.value(r)[:, None] - 1.0
    gp = mc.profile.deriv(r)[:, None]
    gpp = mc.profile.deriv2(r)[:, None]
    rc = np.maximum(r, 1e-300)[:, None]
    ex, ey = ct[None, :], st[None, :]

    # grad chi, chi = (eta - 1) psi_eps
    cx = gp * ex * psi_eps + g * px
    cy = gp * ey * psi_eps + g * py
    grad_sq = cx**2 + cy**2

    # Hessian of chi: g'' er x er psi + (g'/r)(I - er x er) psi
    #                 + g' (er x grad psi + grad psi x er) + g Hess psi
    m_xx = gpp * ex * ex * psi_eps + (gp / rc) * ey * ey * psi_eps \
        + 2.0 * gp * ex * px + g * pxx
    m_yy = gpp * ey * ey * psi_eps + (gp / rc) * ex * ex * psi_eps \
        + 2.0 * gp * ey * py + g * pyy
    m_xy = gpp * ex * ey * psi_eps - (gp / rc) * ex * ey * psi_eps \
        + gp * (ex * py + ey * px) + g * pxy
    hess_sq = m_xx**2 + 2.0 * m_xy**2 + m_yy**2

    dtheta = 2.0 * np.pi / n_theta
    w2d = (wr * r)[:, None] * dtheta
    return DeviationNorms(
        l2=float(np.sqrt(np.sum(w2d * grad_sq))),
        grad_l2=float(np.sqrt(np.sum(w2d * hess_sq))),
    )


def timeder_pairing(w: GridField, phi: GridField, mc: MovingCutoff, t: float,
                    dphi_dt: GridField | None = None, refinement: int = 12,
                    n_theta: int = 128, order: int = 10) -> float:
    """integral w . (dt phi_eps - dt phi) dx via the curl form.

    Equals -integral curl(w) [dt(eta) psi_eps + (eta - 1) dt(psi_eps)] over
    the cut-off disk; raises ``PathBreakpointError`` when t is a breakpoint
    of the body path (the velocity there is undefined; perturb t).
    """
    hdot = mc.path.velocity(t)
    psi = biot_savart_stream(phi)
    h = mc.center(t)
    interp = FourierInterpolant(psi)
    psi0 = float(interp(np.asarray(h))[0])
    curl_interp = FourierInterpolant(curl(w))

    dpsi_interp = None
    dpsi_h = 0.0
    if dphi_dt is not None:
        dpsi = biot_savart_stream(dphi_dt)
        dpsi_interp = FourierInterpolant(dpsi)
        dpsi_h = float(dpsi_interp(np.asarray(h))[0])
    grad_psi_h = np.array([
        float(interp(np.asarray(h), dx=1)[0]),
        float(interp(np.asarray(h), dy=1)[0]),
    ])
    drift = float(hdot @ grad_psi_h)

    r, wr = _polar_nodes(mc.profile, refinement, order)
    theta = np.linspace(0.0, 2.0 * np.pi, n_theta, endpoint=False)
    ct, st = np.cos(theta), np.sin(theta)
    pts = np.empty((r.size * n_theta, 2))
    pts[:, 0] = (h[0] + np.outer(r, ct)).ravel()
    pts[:, 1] = (h[1] + np.outer(r, st)).ravel()
    shape = (r.size, n_theta)

    psi_eps = (interp(pts) - psi0).reshape(shape)
    curl_w = curl_interp(pts).reshape(shape)
    g = mc.profile.value(r)[:, None] - 1.0
    gp = mc.profile.deriv(r)[:, None]
    # dt eta = -h' . grad f = -(h' . er) f'(r)
    deta_dt = -(hdot[0] * ct[None, :] + hdot[1] * st[None, :]) * gp
    if dpsi_interp is None:
        dpsi_eps = -drift
    else:
        dpsi_eps = dpsi_interp(pts).reshape(shape) - dpsi_h - drift

    dtheta = 2.0 * np.pi / n_theta
    w2d = (wr * r)[:, None] * dtheta
    integrand = curl_w * (deta_dt * psi_eps + g * dpsi_eps)
    return float(-np.sum(w2d * integrand))


# ---------------------------------------------------------------------------
# sup bounds of the modified stream on disks
# ---------------------------------------------------------------------------

def _disk_points(center, R: float, nr: int, n_theta: int):
    r = np.linspace(0.0, R, nr)
    theta = np.linspace(0.0, 2.0 * np.pi, n_theta, endpoint=False)
    pts = np.empty((nr * n_theta, 2))
    pts[:, 0] = (center[0] + np.outer(r, np.cos(theta))).ravel()
    pts[:, 1] = (center[1] + np.outer(r, np.sin(theta))).ravel()
    return pts


def modified_stream_sup(psi: GridField, center, R: float, nr: int = 48,
                        n_theta: int = 64) -> float:
    """Measured sup of |psi - psi(center)| over the disk D(center, R)."""
    interp = FourierInterpolant(psi)
    psi0 = float(interp(np.asarray(center, dtype=float))[0])
    pts = _disk_points(np.asarray(center, dtype=float), R, nr, n_theta)
    return float(np.max(np.abs(interp(pts) - psi0)))


def modified_stream_time_sup(psi: GridField, dpsi_dt: GridField | None, center,
                             hdot, R: float, nr: int = 48,
                             n_theta: int = 64) -> float:
    """Measured sup of |dt psi_eps| = |dt psi(x) - dt psi(h) - h'.grad psi(h)|
    over D(center, R); dpsi_dt=None means phi is static."""
    center = np.asarray(center, dtype=float)
    interp = FourierInterpolant(psi)
    grad_psi_h = np.array([
        float(interp(center, dx=1)[0]),
        float(interp(center, dy=1)[0]),
    ])
    drift = float(np.asarray(hdot, dtype=float) @ grad_psi_h)
    if dpsi_dt is None:
        return abs(drift)
    dinterp = FourierInterpolant(dpsi_dt)
    d0 = float(dinterp(center)[0])
    pts = _disk_points(center, R, nr, n_theta)
    return float(np.max(np.abs(dinterp(pts) - d0 - drift)))
