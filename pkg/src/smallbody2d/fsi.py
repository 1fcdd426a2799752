"""Coupled fluid / small-rigid-body solver on the torus.

The velocity is extended inside the body by its rigid motion and evolved on
the whole domain (fictitious-domain form).  One step splits into:

(a) a constant-density spectral Navier-Stokes step (identical to the
    reference solver) followed by a local rescale of the velocity increment
    by 1/rho: heavy regions respond to the same forces with 1/rho the
    acceleration, which is what decouples a body whose mass blows up
    relative to its area;
(b) a rigid projection on the sharp body mask: the rigid field matching the
    solid's linear and angular momenta (a weighted least-squares problem
    solved exactly) overwrites the velocity there, then a global Leray
    projection restores the divergence-free constraint;
(c) a forward update of the body center and angle with the post-projection
    velocities, and a rigid transport of the density mask.

The projection in (b) conserves the solid momenta to rounding and never
increases the solid's density-weighted energy (it is an orthogonal
projection in that inner product), which is the discrete counterpart of the
momentum balance in the weak form and drives the energy-ledger inequality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cutoffs import smoothstep
from .fields import (
    GridField,
    curl,
    deformation_norm_sq,
    divergence,
    leray_project,
    linf_norm,
    spectral_grid,
    velocity_from_vorticity,
    wrap_displacement,
)
from .navier_stokes import check_cfl, step_vorticity_hat
from .stream import biot_savart_stream

__all__ = [
    "BodyShape",
    "RigidBodyState",
    "BodyMasks",
    "ExtendedState",
    "EnergyLedger",
    "EpsilonSchedule",
    "FsiConfig",
    "FsiRunRecord",
    "StepDiagnostics",
    "CompatibilityError",
    "ResolutionFloorError",
    "BodyBoundaryError",
    "TimeEnvelope",
    "SpaceTimeTestField",
    "make_body",
    "validate_initial_data",
    "coupled_step",
    "energy_ledger_update",
    "run_fsi",
    "body_speed_supremum",
    "body_at_snapshot",
    "weak_form_residual",
    "limit_weak_residual",
    "solid_deformation_max",
]


class CompatibilityError(ValueError):
    """Initial data violates the normal-trace compatibility at the body."""

    def __init__(self, flux: float, tolerance: float):
        self.flux = flux
        self.tolerance = tolerance
        super().__init__(
            f"initial velocity has net flux {flux:.3e} through the body "
            f"boundary (tolerance {tolerance:.1e})"
        )


class ResolutionFloorError(ValueError):
    """The body is too small for the grid to resolve."""

    def __init__(self, eps: float, floor: float):
        super().__init__(
            f"body scale eps = {eps:.4g} is below the resolution floor "
            f"4 L/N = {floor:.4g}; refine the grid or enlarge the body"
        )


class BodyBoundaryError(RuntimeError):
    """The body mask reached the guard band at the domain boundary."""


# ---------------------------------------------------------------------------
# body geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BodyShape:
    """Rigid body outline, contained in the disk of radius max(semi-axes)."""

    kind: str                 # "disk" | "ellipse"
    a: float                  # semi-axis along the body x direction
    b: float                  # semi-axis along the body y direction

    @classmethod
    def disk(cls, radius: float) -> "BodyShape":
        return cls("disk", radius, radius)

    @classmethod
    def ellipse(cls, eps: float, aspect: float = 2.0) -> "BodyShape":
        """Aspect-ratio ellipse inscribed in D(0, eps)."""
        return cls("ellipse", eps, eps / aspect)

    @property
    def area(self) -> float:
        return math.pi * self.a * self.b

    @property
    def max_radius(self) -> float:
        return max(self.a, self.b)

    def inertia(self, mass: float) -> float:
        return mass * (self.a**2 + self.b**2) / 4.0

    def sdf_local(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Approximate signed distance in body coordinates (< 0 inside)."""
        if self.kind == "disk":
            return np.hypot(x, y) - self.a
        s = np.sqrt((x / self.a) ** 2 + (y / self.b) ** 2)
        gnorm = np.sqrt((x / self.a**2) ** 2 + (y / self.b**2) ** 2)
        d = np.where(gnorm > 1e-300, (s - 1.0) * s / np.maximum(gnorm, 1e-300),
                     -min(self.a, self.b))
        return d


@dataclass(frozen=True)
class RigidBodyState:
    """Kinematic and inertial state of the rigid body."""

    center: np.ndarray        # absolute position on the torus
    velocity: np.ndarray
    angle: float
    angular_velocity: float
    mass: float
    inertia: float
    rho: float                # uniform body density (fluid density is 1)
    shape: BodyShape
    eps: float                # containing-disk radius, shape fits in D(., eps)

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        v = np.asarray(self.velocity, dtype=float)
        c.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "velocity", v)
        if self.shape.max_radius > self.eps * (1.0 + 1e-12):
            raise ValueError(
                f"shape of radius {self.shape.max_radius} not contained in "
                f"D(0, eps={self.eps})"
            )


def make_body(eps: float, mass: float, shape: str = "disk",
              center=(0.0, 0.0), velocity=(0.0, 0.0), angle: float = 0.0,
              angular_velocity: float = 0.0) -> RigidBodyState:
    outline = BodyShape.disk(eps) if shape == "disk" else BodyShape.ellipse(eps)
    rho = mass / outline.area
    return RigidBodyState(
        center=np.asarray(center, dtype=float),
        velocity=np.asarray(velocity, dtype=float),
        angle=angle,
        angular_velocity=angular_velocity,
        mass=mass,
        inertia=outline.inertia(mass),
        rho=rho,
        shape=outline,
        eps=eps,
    )


@dataclass(frozen=True)
class BodyMasks:
    """Grid rasterization of the body at one position and angle."""

    sharp: np.ndarray      # bool, signed distance <= 0
    eroded: np.ndarray     # bool, two cells inside
    indicator: np.ndarray  # [0, 1], one-cell mollified
    rho_field: np.ndarray  # 1 outside, rho inside, one-cell transition
    dx: np.ndarray         # wrapped displacement from the body center
    dy: np.ndarray


def rasterize_body(body: RigidBodyState, L: float, N: int) -> BodyMasks:
    x = np.arange(N) * (L / N)
    dx = wrap_displacement(x - body.center[0], L)[:, None] * np.ones((1, N))
    dy = np.ones((N, 1)) * wrap_displacement(x - body.center[1], L)[None, :]
    c, s = math.cos(body.angle), math.sin(body.angle)
    xl = c * dx + s * dy
    yl = -s * dx + c * dy
    sdf = body.shape.sdf_local(xl, yl)
    hcell = L / N
    indicator = smoothstep(0.5 - sdf / hcell)
    return BodyMasks(
        sharp=sdf <= 0.0,
        eroded=sdf <= -2.0 * hcell,
        indicator=indicator,
        rho_field=1.0 + (body.rho - 1.0) * indicator,
        dx=dx,
        dy=dy,
    )


def rigid_velocity_field(body: RigidBodyState, masks: BodyMasks) -> np.ndarray:
    """h' + theta' (x - h)^perp on the whole grid (meaningful near the body)."""
    return np.stack([
        body.velocity[0] - body.angular_velocity * masks.dy,
        body.velocity[1] + body.angular_velocity * masks.dx,
    ])


# ---------------------------------------------------------------------------
# state, config, ledger
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExtendedState:
    """Extended velocity (rigid inside the body) plus body state."""

    t: float
    w: GridField
    body: RigidBodyState | None
    masks: BodyMasks | None
    pressure_guess: np.ndarray | None = None  # CG warm start, not state

    @property
    def rho_field(self) -> GridField:
        if self.masks is None:
            return self.w.with_data(np.ones((self.w.N, self.w.N)))
        return self.w.with_data(self.masks.rho_field)

    def weighted_energy(self) -> float:
        rho = 1.0 if self.masks is None else self.masks.rho_field
        return float(np.sum(rho * (self.w.data[0] ** 2 + self.w.data[1] ** 2))
                     * self.w.h**2)


@dataclass(frozen=True)
class FsiConfig:
    nu: float
    L: float
    N: int
    dt: float
    T: float
    guard_cells: int = 4

    def __post_init__(self):
        if self.nu <= 0.0 or self.dt <= 0.0 or self.T <= 0.0:
            raise ValueError("nu, dt, T must be positive")

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def hcell(self) -> float:
        return self.L / self.N


class EnergyLedger:
    """Time series of E(t) = int rho |w|^2, the cumulative dissipation
    D(t) = 4 nu int_0^t int |D(w)|^2, and the inequality residual
    r(t) = E(t) + D(t) - E(0)."""

    def __init__(self, nu: float):
        self.nu = nu
        self.t: list[float] = []
        self.E: list[float] = []
        self.D: list[float] = []
        self._last_rate: float | None = None

    def update(self, t: float, energy_value: float, deformation_sq: float):
        rate = 4.0 * self.nu * deformation_sq
        if not self.t:
            self.t.append(t)
            self.E.append(energy_value)
            self.D.append(0.0)
        else:
            dt = t - self.t[-1]
            self.t.append(t)
            self.E.append(energy_value)
            self.D.append(self.D[-1] + 0.5 * dt * (self._last_rate + rate))
        self._last_rate = rate

    @property
    def residual(self) -> np.ndarray:
        e = np.asarray(self.E)
        return e + np.asarray(self.D) - e[0]

    def max_relative_residual(self) -> float:
        if not self.t:
            return 0.0
        return float(np.max(self.residual) / max(self.E[0], 1e-300))


def energy_ledger_update(state: ExtendedState, ledger: EnergyLedger) -> EnergyLedger:
    """Append the current energy and dissipation sample to the ledger."""
    ledger.update(state.t, state.weighted_energy(),
                  deformation_norm_sq(state.w))
    return ledger


@dataclass(frozen=True)
class EpsilonSchedule:
    """A family of body scales with masses m(eps) growing relative to eps^2."""

    eps_list: tuple
    mass_coeff: float = math.pi
    mass_exponent: float = 1.5

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps_list)
        if any(e <= 0 for e in eps) or any(a <= b for a, b in zip(eps, eps[1:])):
            raise ValueError("eps_list must be positive and strictly decreasing")
        if not (0.0 < self.mass_exponent < 2.0):
            raise ValueError(
                "mass exponent must lie in (0, 2) so that m/eps^2 diverges")
        object.__setattr__(self, "eps_list", eps)

    def mass(self, eps: float) -> float:
        return self.mass_coeff * eps**self.mass_exponent

    def mass_over_eps_sq(self) -> list[float]:
        return [self.mass(e) / e**2 for e in self.eps_list]


# ---------------------------------------------------------------------------
# initial data
# ---------------------------------------------------------------------------

def validate_initial_data(u0: GridField, body: RigidBodyState | None,
                          config: FsiConfig, flux_tol: float = 1e-6,
                          div_tol: float = 1e-8) -> ExtendedState:
    """Check compatibility and build the extended field at t = 0.

    The exterior field must be divergence-free away from the body, and its
    net flux through the body boundary must match the rigid motion's (zero),
    measured weakly as integral (u0 - rigid) . grad(indicator).  The
    extension replaces the interior by the rigid field and projects the
    blend to divergence-free.
    """
    if body is None:
        div_max = linf_norm(divergence(u0))
        scale = max(linf_norm(u0), 1.0)
        if div_max > div_tol * scale:
            raise CompatibilityError(div_max, div_tol * scale)
        return ExtendedState(t=0.0, w=u0, body=None, masks=None)

    floor = 4.0 * config.hcell
    if body.eps < floor:
        raise ResolutionFloorError(body.eps, floor)
    masks = rasterize_body(body, u0.L, u0.N)

    # exterior divergence, away from the mollification ring
    div_field = divergence(u0).data
    exterior = masks.indicator < 1e-12
    scale = max(linf_norm(u0), 1.0)
    div_max = float(np.max(np.abs(div_field[exterior]))) if exterior.any() else 0.0
    if div_max > div_tol * scale:
        raise CompatibilityError(div_max, div_tol * scale)

    # weak flux compatibility through the body boundary
    rigid = rigid_velocity_field(body, masks)
    g = spectral_grid(u0.L, u0.N)
    ind_hat = np.fft.fft2(masks.indicator)
    grad_ind = np.stack([
        np.real(np.fft.ifft2(1j * g.kx * ind_hat)),
        np.real(np.fft.ifft2(1j * g.ky * ind_hat)),
    ])
    mismatch = u0.data - rigid
    flux = float(np.sum(mismatch * grad_ind) * u0.h**2)
    perimeter = 2.0 * math.pi * body.eps
    speed = max(linf_norm(u0), float(np.hypot(*body.velocity)), 1.0)
    tol = flux_tol * perimeter * speed
    if abs(flux) > tol:
        raise CompatibilityError(flux, tol)

    blended = u0.data + masks.indicator * (rigid - u0.data)
    w0 = leray_project(u0.with_data(blended))
    return ExtendedState(t=0.0, w=w0, body=body, masks=masks)


# ---------------------------------------------------------------------------
# the coupled step
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepDiagnostics:
    solid_momentum_pre: np.ndarray   # (px, py, angular) at the old mask
    solid_momentum_post: np.ndarray
    solid_energy_pre: float
    solid_energy_post: float
    max_speed: float
    deformation_sq: float            # int |D(w)|^2 of the accepted state
    solid_deformation_max: float | None = None


def _solid_moments(masks: BodyMasks, rho: float, w: np.ndarray, h2: float):
    m = masks.sharp
    wx, wy = w[0][m], w[1][m]
    dx, dy = masks.dx[m], masks.dy[m]
    mass = rho * h2 * m.sum()
    sx = rho * h2 * dx.sum()
    sy = rho * h2 * dy.sum()
    inertia = rho * h2 * float(np.sum(dx**2 + dy**2))
    px = rho * h2 * wx.sum()
    py = rho * h2 * wy.sum()
    ang = rho * h2 * float(np.sum(dx * wy - dy * wx))
    energy = rho * h2 * float(np.sum(wx**2 + wy**2))
    return mass, sx, sy, inertia, np.array([px, py, ang]), energy


def _rigid_least_squares(mass, sx, sy, inertia, momenta):
    """Solve the normal equations of min sum rho |w - v - omega d^perp|^2."""
    A = np.array([
        [mass, 0.0, -sy],
        [0.0, mass, sx],
        [-sy, sx, inertia],
    ])
    v = np.linalg.solve(A, momenta)
    return v[:2], v[2]


def weighted_projection(w: GridField, rho_field: np.ndarray,
                        tol: float = 1e-6, max_iter: int = 200,
                        guess: np.ndarray | None = None
                        ) -> tuple[GridField, np.ndarray]:
    """Project to divergence-free in the rho-weighted inner product.

    Solves div((1/rho) grad p) = div(w) by CG preconditioned with the
    constant-coefficient spectral Laplacian and subtracts (1/rho) grad p.
    The weighted projection is what keeps a heavy immersed region from
    being re-accelerated by the pressure: the correction it applies inside
    the body is 1/rho times the unweighted one.  A final exact Leray
    projection removes the residual divergence left by the finite CG
    tolerance.  Returns the projected field and p (a warm start for the
    next call).
    """
    g = spectral_grid(w.L, w.N)
    inv_rho = 1.0 / rho_field

    def apply_op(p: np.ndarray) -> np.ndarray:
        p_hat = np.fft.fft2(p)
        gx = np.real(np.fft.ifft2(1j * g.kx * p_hat)) * inv_rho
        gy = np.real(np.fft.ifft2(1j * g.ky * p_hat)) * inv_rho
        out = np.real(np.fft.ifft2(
            1j * g.kx * np.fft.fft2(gx) + 1j * g.ky * np.fft.fft2(gy)))
        return -out  # negate: -div((1/rho) grad .) is positive semidefinite

    def precond(r: np.ndarray) -> np.ndarray:
        return np.real(np.fft.ifft2(np.fft.fft2(r) * g.inv_k2))

    b = -divergence(w).data
    b = b - b.mean()
    p = np.zeros_like(b) if guess is None else guess - guess.mean()
    r = b - apply_op(p) if guess is not None else b.copy()
    z = precond(r)
    d = z.copy()
    rz = float(np.sum(r * z))
    b_norm = float(np.sqrt(np.sum(b * b)))
    if b_norm > 0.0:
        for _ in range(max_iter):
            if float(np.sqrt(np.sum(r * r))) <= tol * b_norm:
                break
            ad = apply_op(d)
            alpha = rz / float(np.sum(d * ad))
            p = p + alpha * d
            r = r - alpha * ad
            z = precond(r)
            rz_new = float(np.sum(r * z))
            d = z + (rz_new / rz) * d
            rz = rz_new
    p_hat = np.fft.fft2(p)
    corr = np.stack([
        np.real(np.fft.ifft2(1j * g.kx * p_hat)) * inv_rho,
        np.real(np.fft.ifft2(1j * g.ky * p_hat)) * inv_rho,
    ])
    projected = leray_project(w.with_data(w.data - corr))
    return projected, p


def solid_deformation_max(w: GridField, masks: BodyMasks) -> float:
    """max |D(w)| over the eroded body mask, by centered differences.

    The local stencil is the right oracle here: rigidity of the solid
    interior is a pointwise property, and centered differences are exact on
    the (affine) rigid field, whereas a spectral derivative would smear the
    mask-edge jump over the whole domain.
    """
    if not masks.eroded.any():
        return 0.0
    h = w.h
    dxx = (np.roll(w.data[0], -1, 0) - np.roll(w.data[0], 1, 0)) / (2 * h)
    dyy = (np.roll(w.data[1], -1, 1) - np.roll(w.data[1], 1, 1)) / (2 * h)
    dxy = 0.5 * ((np.roll(w.data[0], -1, 1) - np.roll(w.data[0], 1, 1)) / (2 * h)
                 + (np.roll(w.data[1], -1, 0) - np.roll(w.data[1], 1, 0)) / (2 * h))
    frob = np.sqrt(dxx**2 + 2.0 * dxy**2 + dyy**2)
    return float(np.max(frob[masks.eroded]))


def _check_boundary_guard(body: RigidBodyState, config: FsiConfig):
    margin = body.eps + config.guard_cells * config.hcell
    cx = wrap_displacement(body.center[0] - config.L / 2.0, config.L)
    cy = wrap_displacement(body.center[1] - config.L / 2.0, config.L)
    if max(abs(cx), abs(cy)) > config.L / 2.0 - margin:
        raise BodyBoundaryError(
            f"body at {body.center} is within the {config.guard_cells}-cell "
            f"guard band of the domain boundary"
        )


def coupled_step(state: ExtendedState, config: FsiConfig,
                 collect_deformation: bool = False
                 ) -> tuple[ExtendedState, StepDiagnostics]:
    """Advance the coupled system by one step (see module docstring)."""
    w_n = state.w
    max_speed = check_cfl(w_n, config.dt)

    # (a) constant-density spectral step, then the 1/rho increment rescale
    g = spectral_grid(w_n.L, w_n.N)
    mean = w_n.data.mean(axis=(1, 2))
    omega_hat = np.fft.fft2(curl(w_n).data)
    new_hat = step_vorticity_hat(omega_hat, g, mean, config.nu, config.dt)
    w_star = velocity_from_vorticity(
        w_n.with_data(np.real(np.fft.ifft2(new_hat))), mean)

    if state.body is None:
        new_state = ExtendedState(t=state.t + config.dt, w=w_star, body=None,
                                  masks=None)
        diag = StepDiagnostics(
            solid_momentum_pre=np.zeros(3), solid_momentum_post=np.zeros(3),
            solid_energy_pre=0.0, solid_energy_post=0.0, max_speed=max_speed,
            deformation_sq=deformation_norm_sq(w_star),
            solid_deformation_max=0.0 if collect_deformation else None)
        return new_state, diag

    body, masks = state.body, state.masks
    _check_boundary_guard(body, config)
    floor = 4.0 * config.hcell
    if body.eps < floor:
        raise ResolutionFloorError(body.eps, floor)

    corrected = w_n.data + (w_star.data - w_n.data) / masks.rho_field
    w_hat = leray_project(w_n.with_data(corrected))

    # (b) rigid projection on the sharp mask
    h2 = w_n.h**2
    mass_d, sx, sy, inertia_d, momenta, energy_pre = _solid_moments(
        masks, body.rho, w_hat.data, h2)
    hdot, thetadot = _rigid_least_squares(mass_d, sx, sy, inertia_d, momenta)
    body_new_vel = replace(body, velocity=hdot, angular_velocity=thetadot)
    rigid = rigid_velocity_field(body_new_vel, masks)
    overwritten = np.where(masks.sharp, rigid, w_hat.data)
    _, _, _, _, momenta_post, energy_post = _solid_moments(
        masks, body.rho, overwritten, h2)
    w_over = w_n.with_data(overwritten)
    deform_max = solid_deformation_max(w_over, masks) if collect_deformation else None
    w_new = leray_project(w_over)

    # (c) body advection and rigid mask transport
    new_center = body.center + config.dt * hdot
    new_center = np.mod(new_center, config.L)
    body_next = replace(body_new_vel, center=new_center,
                        angle=body.angle + config.dt * thetadot)
    masks_next = rasterize_body(body_next, w_n.L, w_n.N)

    new_state = ExtendedState(t=state.t + config.dt, w=w_new, body=body_next,
                              masks=masks_next)
    diag = StepDiagnostics(
        solid_momentum_pre=momenta, solid_momentum_post=momenta_post,
        solid_energy_pre=energy_pre, solid_energy_post=energy_post,
        max_speed=max_speed, deformation_sq=deformation_norm_sq(w_new),
        solid_deformation_max=deform_max)
    return new_state, diag


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------

@dataclass
class FsiRunRecord:
    config: FsiConfig
    eps: float
    mass: float
    ledger: EnergyLedger
    shape_kind: str = "disk"
    times: list[float] = field(default_factory=list)       # snapshot times
    snapshots: list[GridField] = field(default_factory=list)
    # per-step body series (ledger cadence)
    step_times: list[float] = field(default_factory=list)
    displacement: list[np.ndarray] = field(default_factory=list)
    velocity: list[np.ndarray] = field(default_factory=list)
    angle: list[float] = field(default_factory=list)
    angular_velocity: list[float] = field(default_factory=list)
    momentum_error_max: float = 0.0
    # snapshot-aligned body state for test-function rebuilds
    snapshot_centers: list[np.ndarray] = field(default_factory=list)
    snapshot_velocities: list[np.ndarray] = field(default_factory=list)
    snapshot_angles: list[float] = field(default_factory=list)

    def snapshot_index(self, t: float) -> int:
        times = np.asarray(self.times)
        i = int(np.argmin(np.abs(times - t)))
        if abs(times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"time {t} not recorded (closest: {times[i]:.6g})")
        return i


def run_fsi(config: FsiConfig, state0: ExtendedState,
            snapshot_every: int = 1) -> FsiRunRecord:
    """Step the coupled system to T, recording snapshots and body series."""
    state = state0
    body = state.body
    eps = body.eps if body is not None else 0.0
    mass = body.mass if body is not None else 0.0
    origin = body.center.copy() if body is not None else np.zeros(2)
    ledger = EnergyLedger(config.nu)
    record = FsiRunRecord(config=config, eps=eps, mass=mass, ledger=ledger,
                          shape_kind=body.shape.kind if body is not None else "disk")
    displacement = np.zeros(2)

    def note_step(s: ExtendedState, disp):
        energy_ledger_update(s, ledger)
        record.step_times.append(s.t)
        record.displacement.append(disp.copy())
        if s.body is not None:
            record.velocity.append(np.asarray(s.body.velocity).copy())
            record.angle.append(s.body.angle)
            record.angular_velocity.append(s.body.angular_velocity)
        else:
            record.velocity.append(np.zeros(2))
            record.angle.append(0.0)
            record.angular_velocity.append(0.0)

    def note_snapshot(s: ExtendedState):
        record.times.append(s.t)
        record.snapshots.append(s.w)
        if s.body is not None:
            record.snapshot_centers.append(np.asarray(s.body.center).copy())
            record.snapshot_velocities.append(np.asarray(s.body.velocity).copy())
            record.snapshot_angles.append(s.body.angle)
        else:
            record.snapshot_centers.append(origin.copy())
            record.snapshot_velocities.append(np.zeros(2))
            record.snapshot_angles.append(0.0)

    note_step(state, displacement)
    note_snapshot(state)
    for n in range(config.steps):
        state, diag = coupled_step(state, config)
        if state.body is not None:
            displacement = displacement + config.dt * np.asarray(state.body.velocity)
        scale = max(np.max(np.abs(diag.solid_momentum_pre)), 1e-30)
        err = float(np.max(np.abs(diag.solid_momentum_post
                                  - diag.solid_momentum_pre))) / scale
        record.momentum_error_max = max(record.momentum_error_max, err)
        note_step(state, displacement)
        if (n + 1) % snapshot_every == 0 or n + 1 == config.steps:
            note_snapshot(state)
    return record


def body_speed_supremum(record: FsiRunRecord) -> float:
    """sup over the run of eps * |h'(t)|."""
    if not record.velocity:
        return 0.0
    speeds = np.hypot(*np.asarray(record.velocity).T)
    return float(record.eps * np.max(speeds))


# ---------------------------------------------------------------------------
# the weak-form residual
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeEnvelope:
    """C-infinity time profile equal to 1 early and 0 from ``stop`` on,
    making test functions compactly supported in [0, T)."""

    stop: float
    width: float

    @classmethod
    def for_horizon(cls, T: float) -> "TimeEnvelope":
        return cls(stop=0.9 * T, width=0.5 * T)

    def __call__(self, t: float) -> float:
        return float(smoothstep((self.stop - t) / self.width))

    def derivative(self, t: float) -> float:
        return float(-smoothstep((self.stop - t) / self.width, 1) / self.width)


@dataclass(frozen=True)
class SpaceTimeTestField:
    """Separable test function env(t) * phi(x) with its cached stream."""

    space: GridField
    envelope: TimeEnvelope
    psi_space: GridField = None

    def __post_init__(self):
        if self.psi_space is None:
            object.__setattr__(self, "psi_space",
                               biot_savart_stream(self.space))


def _simpson(values: np.ndarray, dt: float) -> float:
    n = len(values) - 1
    if n == 0:
        return 0.0
    if n % 2 == 1:  # trapezoid on the last interval
        core = _simpson(values[:-1], dt) if n > 1 else 0.0
        return core + 0.5 * dt * (values[-2] + values[-1])
    total = values[0] + values[-1] + 4.0 * np.sum(values[1:-1:2]) \
        + 2.0 * np.sum(values[2:-1:2])
    return float(total * dt / 3.0)


def _deformation_pairing(a_hat, b_hat, g, h2: float, N: int) -> float:
    """integral D(a) : D(b) from the spectral velocities."""
    axx = np.real(np.fft.ifft2(1j * g.kx * a_hat[0]))
    ayy = np.real(np.fft.ifft2(1j * g.ky * a_hat[1]))
    axy = 0.5 * (np.real(np.fft.ifft2(1j * g.ky * a_hat[0]))
                 + np.real(np.fft.ifft2(1j * g.kx * a_hat[1])))
    bxx = np.real(np.fft.ifft2(1j * g.kx * b_hat[0]))
    byy = np.real(np.fft.ifft2(1j * g.ky * b_hat[1]))
    bxy = 0.5 * (np.real(np.fft.ifft2(1j * g.ky * b_hat[0]))
                 + np.real(np.fft.ifft2(1j * g.kx * b_hat[1])))
    return float(np.sum(axx * bxx + 2.0 * axy * bxy + ayy * byy) * h2)


def _advective_derivative(w: np.ndarray, target_hat, g) -> np.ndarray:
    """(w . grad) target, spectra of target given componentwise."""
    out = np.empty_like(w)
    for c in range(2):
        tx = np.real(np.fft.ifft2(1j * g.kx * target_hat[c]))
        ty = np.real(np.fft.ifft2(1j * g.ky * target_hat[c]))
        out[c] = w[0] * tx + w[1] * ty
    return out


def weak_form_residual(record: FsiRunRecord, test: SpaceTimeTestField,
                       cutoff_profile=None) -> float:
    """|weak formulation defect| of the recorded run against the moving
    cut-off test function built from ``test``.

    With ``cutoff_profile=None`` (or an empty body) the plain test function
    is used, which evaluates the limit-equation residual of the recorded
    field.  The time derivative of the cut-off test function is assembled
    analytically from the recorded body velocities.
    """
    times = np.asarray(record.times)
    if len(times) < 3:
        raise ValueError("need at least 3 snapshots for the time integral")
    dts = np.diff(times)
    if np.max(np.abs(dts - dts[0])) > 1e-9 * dts[0]:
        raise ValueError("snapshots must be uniformly spaced in time")
    dt = float(dts[0])

    w0 = record.snapshots[0]
    L, N = w0.L, w0.N
    g = spectral_grid(L, N)
    h2 = w0.h**2
    nu = record.config.nu
    psi = test.psi_space
    psi_hat = np.fft.fft2(psi.data)
    psi_x = np.real(np.fft.ifft2(1j * g.kx * psi_hat))
    psi_y = np.real(np.fft.ifft2(1j * g.ky * psi_hat))
    has_body = cutoff_profile is not None and record.eps > 0.0

    from .fields import FourierInterpolant
    psi_interp = FourierInterpolant(psi) if has_body else None

    values = np.empty(len(times))
    init_term = None
    for i, t in enumerate(times):
        w = record.snapshots[i]
        env = test.envelope(t)
        denv = test.envelope.derivative(t)
        if not has_body:
            phi_eps_data = env * test.space.data
            dphi_eps_data = denv * test.space.data
            rho = 1.0
        else:
            center = record.snapshot_centers[i]
            hdot = record.snapshot_velocities[i]
            x = np.arange(N) * (L / N)
            ddx = wrap_displacement(x - center[0], L)[:, None] * np.ones((1, N))
            ddy = np.ones((N, 1)) * wrap_displacement(x - center[1], L)[None, :]
            r = np.hypot(ddx, ddy)
            rc = np.maximum(r, 1e-300)
            eta = cutoff_profile.value(r)
            etap = cutoff_profile.deriv(r)
            psi_c = float(psi_interp(center)[0])
            gpsi_c = np.array([float(psi_interp(center, dx=1)[0]),
                               float(psi_interp(center, dy=1)[0])])
            psi_eps = env * (psi.data - psi_c)
            # dt psi_eps = env' (psi - psi(h)) - env h'.grad psi(h)
            dpsi_eps = denv * (psi.data - psi_c) - env * float(hdot @ gpsi_c)
            deta_dt = -(hdot[0] * ddx + hdot[1] * ddy) / rc * etap
            prod_hat = np.fft.fft2(eta * psi_eps)
            dprod_hat = np.fft.fft2(deta_dt * psi_eps + eta * dpsi_eps)
            phi_eps_data = np.stack([
                np.real(np.fft.ifft2(-1j * g.ky * prod_hat)),
                np.real(np.fft.ifft2(1j * g.kx * prod_hat)),
            ])
            dphi_eps_data = np.stack([
                np.real(np.fft.ifft2(-1j * g.ky * dprod_hat)),
                np.real(np.fft.ifft2(1j * g.kx * dprod_hat)),
            ])
            masks = rasterize_body(body_at_snapshot(record, i), L, N)
            rho = masks.rho_field

        w_hat = np.fft.fft2(w.data, axes=(-2, -1))
        phi_hat = np.fft.fft2(phi_eps_data, axes=(-2, -1))
        advected = _advective_derivative(w.data, phi_hat, g)
        transport = float(np.sum(rho * w.data * (dphi_eps_data + advected)) * h2)
        viscous = 2.0 * nu * _deformation_pairing(w_hat, phi_hat, g, h2, N)
        values[i] = transport - viscous
        if i == 0:
            init_term = float(np.sum(rho * w.data * phi_eps_data) * h2)

    return abs(-_simpson(values, dt) - init_term)


def body_at_snapshot(record: FsiRunRecord, i: int) -> RigidBodyState:
    """Reconstruct the body state at snapshot index i."""
    angle = record.snapshot_angles[i] if record.snapshot_angles else 0.0
    return make_body(record.eps, record.mass, shape=record.shape_kind,
                     center=record.snapshot_centers[i],
                     velocity=record.snapshot_velocities[i], angle=angle)


def limit_weak_residual(times, snapshots, nu: float,
                        test: SpaceTimeTestField) -> float:
    """Weak-formulation residual of a plain fluid run (no body, rho = 1)."""
    cfg = FsiConfig(nu=nu, L=snapshots[0].L, N=snapshots[0].N, dt=1.0,
                    T=float(times[-1]) if times[-1] > 0 else 1.0)
    rec = FsiRunRecord(config=cfg, eps=0.0, mass=0.0, ledger=EnergyLedger(nu))
    rec.times = list(times)
    rec.snapshots = list(snapshots)
    rec.snapshot_centers = [np.zeros(2)] * len(rec.times)
    rec.snapshot_velocities = [np.zeros(2)] * len(rec.times)
    return weak_form_residual(rec, test, cutoff_profile=None)
