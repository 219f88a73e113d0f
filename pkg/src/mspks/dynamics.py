"""Time integration of the coupled chemotaxis system.

Diffusion is advanced exactly in Fourier space (integrating factor
``exp(-|k|^2 dt)`` on the periodic box); transport ``-div(chi n grad c)``
is explicit with the two-stage midpoint rule, recomputing the free-space
chemical gradients at the midpoint. The flux is formed in real space from
the dealiased density and differentiated spectrally, so its zero mode
vanishes identically and mass is conserved to rounding.

In self-similar variables ``X = x/R``, ``tau = log R``, ``R = sqrt(1+2t)``
the extra confinement ``div(X N)`` is explicit as well.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft as sfft
from scipy.ndimage import map_coordinates

from . import fields as fc
from .fields import GridSpec, KernelTable, ScalarField2D
from .species import CouplingModel

log = logging.getLogger(__name__)


class Mode(enum.Enum):
    PHYSICAL = "Physical"
    SELF_SIMILAR = "SelfSimilar"


class Status(enum.Enum):
    COMPLETED = "Completed"
    BLOWUP = "BlowUpDetected"
    NEGATIVITY = "NegativityAbort"


class Indicator(enum.Enum):
    LINF = "LinfThreshold"
    DT_COLLAPSE = "DtCollapse"
    SPECTRAL_TAIL = "SpectralTail"


@dataclass(frozen=True, eq=False)
class SimState:
    t: float
    fields: tuple[ScalarField2D, ...]
    mode: Mode = Mode.PHYSICAL

    def __post_init__(self):
        flds = tuple(self.fields)
        if not flds:
            raise ValueError("state needs at least one species")
        fc._check_same_grid(*flds)
        object.__setattr__(self, "fields", flds)

    @property
    def grid(self) -> GridSpec:
        return self.fields[0].grid

    def arrays(self) -> list[np.ndarray]:
        return [f.values for f in self.fields]

    @classmethod
    def from_arrays(cls, t, grid, arrays, mode=Mode.PHYSICAL):
        return cls(float(t), tuple(ScalarField2D(grid, a) for a in arrays), mode)


@dataclass(frozen=True)
class StepperConfig:
    cfl: float = 0.4
    dt_min: float = 1e-9
    dt_max: float = 1e-2
    blowup_linf_factor: float = 1e4
    blowup_tail_fraction: float = 0.1
    negativity_tolerance: float = 1e-6

    def __post_init__(self):
        if not 0 < self.cfl <= 1:
            raise ValueError(f"cfl must be in (0, 1], got {self.cfl}")
        if not 0 < self.dt_min < self.dt_max:
            raise ValueError("need 0 < dt_min < dt_max")


@dataclass(frozen=True)
class RunOutcome:
    status: Status
    t_final: float
    indicator: Indicator | None = None
    steps: int = 0

    def __post_init__(self):
        if self.status is Status.BLOWUP and self.indicator is None:
            raise ValueError("BlowUpDetected needs an indicator")


class SpectralOps:
    """Per-grid transform data: integrating factors, derivative symbols, masks."""

    def __init__(self, grid: GridSpec):
        self.grid = grid
        kx, ky = grid.wavenumbers()
        n = grid.n
        self.k2 = kx**2 + ky**2
        # odd derivatives drop the Nyquist mode
        self.ikx = 1j * np.where(np.abs(np.fft.fftfreq(n, 1.0 / n))[:, None] == n // 2, 0.0, kx)
        self.iky = 1j * np.where(np.arange(ky.size)[None, :] == n // 2, 0.0, ky)
        # 2/3 rule: keep |index| < n/3 along each axis
        ix = np.abs(np.fft.fftfreq(n, 1.0 / n))[:, None]
        iy = np.arange(n // 2 + 1)[None, :]
        cut = n / 3.0
        self.keep = (ix < cut) & (iy < cut)
        self.tail = ~self.keep
        x, y = grid.mesh()
        self.x, self.y = x, y
        self._if_cache: dict[float, np.ndarray] = {}

    def fft(self, v):
        return sfft.rfft2(v, workers=fc.fft_workers())

    def ifft(self, v):
        return sfft.irfft2(v, s=(self.grid.n, self.grid.n), workers=fc.fft_workers())

    def heat_factor(self, dt: float) -> np.ndarray:
        f = self._if_cache.get(dt)
        if f is None:
            if len(self._if_cache) > 8:
                self._if_cache.clear()
            f = np.exp(-self.k2 * dt)
            self._if_cache[dt] = f
        return f

    def dealias(self, v_hat: np.ndarray) -> np.ndarray:
        return self.ifft(np.where(self.keep, v_hat, 0.0))

    def divergence_hat(self, fx, fy) -> np.ndarray:
        return self.ikx * self.fft(fx) + self.iky * self.fft(fy)

    def tail_fraction(self, v: np.ndarray) -> float:
        p = np.abs(self.fft(v)) ** 2
        # rfft stores the half plane: interior columns count twice
        p[:, 1:-1] *= 2.0
        total = p.sum()
        return 0.0 if total == 0 else float(p[self.tail].sum() / total)


class Integrator:
    """Holds everything a run needs that does not change between steps."""

    def __init__(self, model: CouplingModel, kernel: KernelTable, mode: Mode = Mode.PHYSICAL,
                 config: StepperConfig | None = None):
        self.model = model
        self.kernel = kernel
        self.grid = kernel.grid
        self.mode = mode
        self.config = config or StepperConfig()
        self.ops = SpectralOps(self.grid)
        self.B = np.asarray(model.B, dtype=float)
        self.chi = np.asarray(model.chi, dtype=float)

    # -- chemistry -------------------------------------------------------
    def velocities(self, arrays):
        """Drift velocities ``chi_a grad c_a`` (physical part only)."""
        _, gxs, gys = fc.chemical_arrays(arrays, self.B, self.kernel, with_potential=False)
        return [(c * gx, c * gy) for c, gx, gy in zip(self.chi, gxs, gys)]

    def transport_hat(self, arrays, hats, vel=None):
        """Fourier transform of the explicit part of the right-hand side."""
        if vel is None:
            vel = self.velocities(arrays)
        out = []
        for n_hat, (vx, vy) in zip(hats, vel):
            nd = self.ops.dealias(n_hat)
            fx, fy = nd * vx, nd * vy
            if self.mode is Mode.SELF_SIMILAR:
                fx = fx - self.ops.x * nd
                fy = fy - self.ops.y * nd
            out.append(-self.ops.divergence_hat(fx, fy))
        return out

    def rhs(self, arrays):
        hats = [self.ops.fft(v) for v in arrays]
        lin = [-self.ops.k2 * h for h in hats]
        tr = self.transport_hat(arrays, hats)
        return [self.ops.ifft(a + b) for a, b in zip(lin, tr)]

    # -- stepping ----------------------------------------------------------
    def step_arrays(self, arrays, dt: float, vel=None):
        ops = self.ops
        e_half = ops.heat_factor(0.5 * dt)
        e_full = ops.heat_factor(dt)
        hats = [ops.fft(v) for v in arrays]
        n0 = self.transport_hat(arrays, hats, vel)
        mid_hats = [e_half * (h + 0.5 * dt * g) for h, g in zip(hats, n0)]
        mid = [ops.ifft(h) for h in mid_hats]
        n1 = self.transport_hat(mid, mid_hats)
        return [ops.ifft(e_full * h + dt * e_half * g) for h, g in zip(hats, n1)]

    def advance(self, arrays, dt_cap: float | None = None):
        """One adaptive step; returns ``(new_arrays, dt, adaptive dt before capping)``."""
        vel = self.velocities(arrays)
        dt_free = self._dt_from(arrays, vel)
        dt = dt_free if dt_cap is None else min(dt_free, dt_cap)
        return self.step_arrays(arrays, dt, vel), dt, dt_free

    def max_speed_and_rate(self, arrays, vel=None):
        if vel is None:
            vel = self.velocities(arrays)
        speed = 0.0
        for vx, vy in vel:
            if self.mode is Mode.SELF_SIMILAR:
                vx, vy = vx - self.ops.x, vy - self.ops.y
            speed = max(speed, float(np.sqrt(np.max(vx * vx + vy * vy))))
        rate = 0.0
        for a in range(len(arrays)):
            terms = [self.B[a, b] * arrays[b] for b in range(len(arrays)) if self.B[a, b] != 0]
            if terms:
                rate = max(rate, float(self.chi[a] * np.max(np.abs(sum(terms)))))
        return speed, rate

    def _dt_from(self, arrays, vel) -> float:
        cfg = self.config
        speed, rate = self.max_speed_and_rate(arrays, vel)
        dt = cfg.dt_max
        if speed > 0:
            dt = min(dt, cfg.cfl * self.grid.h / speed)
        if rate > 0:
            dt = min(dt, cfg.cfl / rate)
        return max(dt, cfg.dt_min)

    def adaptive_dt(self, arrays) -> float:
        return self._dt_from(arrays, None)


def rhs(state: SimState, model: CouplingModel, kernel: KernelTable) -> list[ScalarField2D]:
    """``dn_a/dt = Lap n_a - div(chi_a n_a grad c_a)`` (+ ``div(X N_a)`` in self-similar mode)."""
    _check_state(state, model, kernel)
    integ = Integrator(model, kernel, state.mode)
    return [ScalarField2D(state.grid, v) for v in integ.rhs(state.arrays())]


def step(state: SimState, model: CouplingModel, kernel: KernelTable,
         config: StepperConfig | None = None, dt: float | None = None,
         integrator: Integrator | None = None) -> SimState:
    """Advance one step; ``dt`` defaults to :func:`adaptive_dt`."""
    _check_state(state, model, kernel)
    integ = integrator or Integrator(model, kernel, state.mode, config)
    arrays = state.arrays()
    if dt is None:
        dt = integ.adaptive_dt(arrays)
    new = integ.step_arrays(arrays, dt)
    if not all(np.all(np.isfinite(v)) for v in new):
        raise FloatingPointError(f"non-finite density after step at t={state.t}")
    return SimState.from_arrays(state.t + dt, state.grid, new, state.mode)


def adaptive_dt(state: SimState, model: CouplingModel, kernel: KernelTable,
                config: StepperConfig | None = None) -> float:
    """``min(cfl h / max|chi grad c|, cfl / max|chi sum B n|, dt_max)``, floored at ``dt_min``."""
    return Integrator(model, kernel, state.mode, config).adaptive_dt(state.arrays())


def _check_state(state: SimState, model: CouplingModel, kernel: KernelTable):
    if state.grid != kernel.grid:
        raise ValueError("state and kernel grids differ")
    if len(state.fields) != model.species_count:
        raise ValueError(f"state has {len(state.fields)} species, model has {model.species_count}")


class BlowupDetector:
    """Composite indicator; any one firing suffices."""

    def __init__(self, config: StepperConfig, initial_arrays, ops: SpectralOps):
        self.config = config
        self.ops = ops
        self.initial_max = max(float(np.max(np.abs(v))) for v in initial_arrays)

    def check(self, arrays, dt: float | None = None) -> Indicator | None:
        cfg = self.config
        if self.initial_max > 0:
            peak = max(float(np.max(v)) for v in arrays)
            if peak > cfg.blowup_linf_factor * self.initial_max:
                return Indicator.LINF
            if any(self.ops.tail_fraction(v) > cfg.blowup_tail_fraction for v in arrays):
                return Indicator.SPECTRAL_TAIL
        if dt is not None and dt <= cfg.dt_min:
            return Indicator.DT_COLLAPSE
        return None


def detect_blowup(state: SimState, config: StepperConfig | None = None,
                  initial_max: float | None = None, dt: float | None = None) -> Indicator | None:
    """Check the blow-up indicators on one state.

    ``initial_max`` is the reference peak density (defaults to the state's
    own, which disables the L-infinity test).
    """
    config = config or StepperConfig()
    det = BlowupDetector(config, state.arrays(), SpectralOps(state.grid))
    if initial_max is not None:
        det.initial_max = float(initial_max)
    return det.check(state.arrays(), dt)


def negativity_violated(arrays, tolerance: float) -> bool:
    peak = max(float(np.max(v)) for v in arrays)
    low = min(float(np.min(v)) for v in arrays)
    return low < -tolerance * peak


# --------------------------------------------------------------------------
# self-similar change of variables
# --------------------------------------------------------------------------

class Direction(enum.Enum):
    TO_SELF_SIMILAR = "ToSelfSimilar"
    TO_PHYSICAL = "ToPhysical"


def _resample(values: np.ndarray, grid: GridSpec, scale: float) -> np.ndarray:
    """Bilinear samples of ``values`` at ``scale * x`` for every grid point ``x``."""
    x = grid.centers
    idx = (scale * x + grid.half_width) / grid.h - 0.5
    ii, jj = np.meshgrid(idx, idx, indexing="ij")
    return map_coordinates(values, [ii, jj], order=1, mode="constant", cval=0.0)


def map_self_similar(state: SimState, direction: Direction, mass_tol: float = 1e-6) -> SimState:
    """Change variables between ``n(x, t)`` and ``N(X, tau)`` with ``n = R^-2 N(x/R)``.

    Each species is rescaled by one scalar so its mass is carried over
    exactly; the map fails if the resampling loses more than ``mass_tol``
    of the mass off the grid.
    """
    grid = state.grid
    if direction is Direction.TO_SELF_SIMILAR:
        if state.mode is not Mode.PHYSICAL:
            raise ValueError("state is not in physical variables")
        R = np.sqrt(1.0 + 2.0 * state.t)
        new_t, new_mode, scale, amp = float(np.log(R)), Mode.SELF_SIMILAR, R, R * R
    else:
        if state.mode is not Mode.SELF_SIMILAR:
            raise ValueError("state is not in self-similar variables")
        R = float(np.exp(state.t))
        new_t, new_mode, scale, amp = 0.5 * (R * R - 1.0), Mode.PHYSICAL, 1.0 / R, 1.0 / (R * R)
    # source window that the resampled grid actually reads
    reach = scale * grid.half_width
    x = grid.centers
    inside = np.abs(x) <= reach + 0.5 * grid.h
    window = inside[:, None] & inside[None, :]
    out = []
    for f in state.fields:
        mass = fc.integrate(f)
        if mass != 0.0:
            lost = grid.h**2 * np.abs(f.values[~window]).sum()
            if lost > mass_tol * abs(mass):
                raise ValueError(
                    f"{lost / abs(mass):.2e} of the mass lies outside the resampled "
                    f"window; R={R:.3g} is too large for this grid")
        v = amp * _resample(f.values, grid, scale)
        got = grid.h**2 * v.sum()
        if mass != 0.0 and got != 0.0:
            v *= mass / got
        out.append(v)
    return SimState.from_arrays(new_t, grid, out, new_mode)


# --------------------------------------------------------------------------
# orchestration
# --------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Everything a run produces."""

    records: list = field(default_factory=list)
    outcome: RunOutcome | None = None
    snapshots: dict[float, SimState] = field(default_factory=dict)
    v_zero_time: float | None = None
    max_undershoot: float = 0.0


def _v_zero_time(model: CouplingModel, V0: float) -> float | None:
    from .species import second_moment_slope

    if not model.symmetric or np.any(model.chi != 1.0):
        return None
    slope = second_moment_slope(model)
    return V0 / -slope if slope < 0 else None


def integrate_state(state: SimState, model: CouplingModel, kernel: KernelTable, t_end: float,
                    sample_dt: float, config: StepperConfig | None = None,
                    snapshot_times=(), on_record=None) -> Trajectory:
    """Step ``state`` to ``t_end`` or until an indicator fires.

    Diagnostics are taken at multiples of ``sample_dt`` and at the final
    time; steps are shortened to land exactly on sample and snapshot times.
    Undershoots below ``-negativity_tolerance * max`` abort the run only
    while the peak density has not grown past its initial value; during
    concentration they are left to the blow-up indicators.
    """
    from .diagnostics import measure

    _check_state(state, model, kernel)
    config = config or StepperConfig()
    if t_end < 0 or sample_dt <= 0:
        raise ValueError("need t_end >= 0 and sample_dt > 0")
    integ = Integrator(model, kernel, state.mode, config)
    det = BlowupDetector(config, state.arrays(), integ.ops)
    traj = Trajectory()

    def emit(st, dt=None):
        rec = measure(st, model, kernel, traj.records[-1] if traj.records else None, dt)
        traj.records.append(rec)
        if on_record is not None:
            on_record(rec)

    t0 = state.t
    arrays = state.arrays()
    emit(state)
    if state.mode is Mode.PHYSICAL:
        traj.v_zero_time = _v_zero_time(model, traj.records[0].V)
    pending = sorted(float(s) for s in snapshot_times if t0 <= s <= t_end)
    while pending and pending[0] <= t0:
        traj.snapshots[pending.pop(0)] = state
    n_samples = int(np.floor((t_end - t0) / sample_dt + 1e-9))
    marks = [t0 + k * sample_dt for k in range(1, n_samples + 1)]
    if t_end > t0 and (not marks or marks[-1] < t_end - 1e-12 * max(1.0, t_end)):
        marks.append(t_end)

    t, steps, k_mark = t0, 0, 0
    status, indicator = Status.COMPLETED, None
    while k_mark < len(marks):
        target = marks[k_mark]
        if pending:
            target = min(target, pending[0])
        arrays, dt, dt_free = integ.advance(arrays, target - t)
        steps += 1
        if abs(target - (t + dt)) <= 1e-12 * max(1.0, abs(target)):
            t = target
        else:
            t = t + dt
        if not all(np.all(np.isfinite(v)) for v in arrays):
            raise FloatingPointError(f"non-finite density at t={t:.6g} after {steps} steps")
        peak = max(float(np.max(v)) for v in arrays)
        low = min(float(np.min(v)) for v in arrays)
        traj.max_undershoot = max(traj.max_undershoot, -low / peak if peak > 0 else 0.0)
        indicator = det.check(arrays, dt_free)
        if indicator is not None:
            status = Status.BLOWUP
        elif negativity_violated(arrays, config.negativity_tolerance) and peak <= det.initial_max:
            status = Status.NEGATIVITY
        st = SimState.from_arrays(t, state.grid, arrays, state.mode)
        if status is not Status.COMPLETED:
            emit(st, dt)
            break
        if pending and t >= pending[0]:
            traj.snapshots[pending.pop(0)] = st
        if t >= marks[k_mark]:
            emit(st, dt)
            k_mark += 1
    traj.outcome = RunOutcome(status, float(t), indicator, steps)
    log.info("run finished: %s at t=%.6g after %d steps", status.value, t, steps)
    return traj


def run(scenario, on_record=None) -> Trajectory:
    """Run a scenario end to end (kernel, initial data, stepping, diagnostics)."""
    kernel = fc.build_kernel(scenario.grid, scenario.epsilon)
    state = scenario.initial_state()
    return integrate_state(state, scenario.model, kernel, scenario.t_end, scenario.sample_dt,
                           scenario.stepper, scenario.snapshot_times, on_record)
