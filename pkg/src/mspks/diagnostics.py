"""Monitored functionals: mass, second moment, entropy, free energy,
dissipation, Fisher information, L^p norms, and trend fits over a run.

Log and ratio integrands skip cells at or below ``1e-14 * max(n)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
import json

import numpy as np

from . import fields as fc
from .fields import KernelTable, ScalarField2D
from .species import CouplingModel, NotSymmetricError, rescale_sensitivities

FLOOR = 1e-14


def _floor_mask(v: np.ndarray) -> np.ndarray:
    peak = np.max(v)
    if peak <= 0:
        return np.zeros(v.shape, dtype=bool)
    return v > FLOOR * peak


def entropy(n: ScalarField2D) -> float:
    v = n.values
    m = _floor_mask(v)
    return float(n.grid.h**2 * np.sum(v[m] * np.log(v[m])))


def entropy_plus(n: ScalarField2D) -> float:
    """``int n log^+ n``."""
    v = n.values
    m = v > 1.0
    return float(n.grid.h**2 * np.sum(v[m] * np.log(v[m])))


def fisher(n: ScalarField2D) -> float:
    v = n.values
    m = _floor_mask(v)
    gx, gy = fc.gradient_array(v, n.grid.h)
    return float(n.grid.h**2 * np.sum((gx[m] ** 2 + gy[m] ** 2) / v[m]))


def _tagged(arrays, model: CouplingModel):
    # sensitivities enter the energy through the tagged variables n / chi
    if np.all(model.chi == 1.0):
        return arrays, model
    tagged = rescale_sensitivities(model)
    return [a / c for a, c in zip(arrays, model.chi)], tagged


def free_energy(state, model: CouplingModel, kernel: KernelTable) -> float:
    """``sum S[n_a] - 1/2 sum int n_a c_a`` with ``c_a = K * sum_b B_ab n_b``."""
    if not model.symmetric:
        raise NotSymmetricError("the free energy is not dissipated for non-symmetric B")
    arrays, model = _tagged(state.arrays(), model)
    grid = state.grid
    pots, _, _ = fc.chemical_arrays(arrays, model.B, kernel)
    S = sum(entropy(ScalarField2D(grid, a)) for a in arrays)
    inter = sum(float(np.sum(a * c)) for a, c in zip(arrays, pots))
    return float(S - 0.5 * grid.h**2 * inter)


def free_energy_oracle(state, model: CouplingModel, kernel: KernelTable) -> float:
    """Free energy with the interaction as a direct double sum of ``log|x-y|``.

    O(n^4); only for grids with n <= 64. The coincident-cell term uses the
    same cell-averaged kernel value as the fast path.
    """
    if not model.symmetric:
        raise NotSymmetricError("the free energy is not dissipated for non-symmetric B")
    grid = state.grid
    if grid.n > 64:
        raise ValueError("double-sum oracle is limited to n <= 64")
    arrays, model = _tagged(state.arrays(), model)
    x, y = grid.mesh()
    px, py = x.ravel(), y.ravel()
    r = np.hypot(px[:, None] - px[None, :], py[:, None] - py[None, :])
    with np.errstate(divide="ignore"):
        logr = np.log(r)
    logr[r == 0] = -fc.TWO_PI * kernel.k_zero
    h4 = grid.h**4
    inter = 0.0
    k = len(arrays)
    for a in range(k):
        for b in range(k):
            if model.B[a, b] != 0:
                inter += model.B[a, b] / (4 * np.pi) * h4 * (arrays[a].ravel() @ logr @ arrays[b].ravel())
    S = sum(entropy(ScalarField2D(grid, a)) for a in arrays)
    return float(S + inter)


def dissipation(state, model: CouplingModel, kernel: KernelTable) -> float:
    """``sum_a int n_a |grad log n_a - grad c_a|^2``."""
    arrays, model = _tagged(state.arrays(), model)
    grid = state.grid
    _, gxs, gys = fc.chemical_arrays(arrays, model.B, kernel, with_potential=False)
    total = 0.0
    for v, cx, cy in zip(arrays, gxs, gys):
        m = _floor_mask(v)
        nx, ny = fc.gradient_array(v, grid.h)
        fx = nx[m] - v[m] * cx[m]
        fy = ny[m] - v[m] * cy[m]
        total += float(np.sum((fx * fx + fy * fy) / v[m]))
    return grid.h**2 * total


@dataclass
class DiagnosticsRecord:
    t: float
    t_physical: float
    mode: str
    mass: list[float]
    V: float
    entropy: list[float]
    E: float | None
    D: float
    fisher: list[float]
    l2: list[float]
    linf: list[float]
    min_density: float
    cumulative_dissipation: float
    A_t: float
    dt: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), allow_nan=False)

    @classmethod
    def from_json(cls, line: str) -> "DiagnosticsRecord":
        return cls(**json.loads(line))

    def l2sq_physical(self) -> float:
        """``sum ||n_a||_2^2`` in physical variables."""
        total = float(sum(v * v for v in self.l2))
        if self.mode == "SelfSimilar":
            total /= 1.0 + 2.0 * self.t_physical
        return total


RECORD_KEYS = tuple(DiagnosticsRecord.__dataclass_fields__)


def measure(state, model: CouplingModel, kernel: KernelTable, previous: DiagnosticsRecord | None = None,
            dt: float | None = None) -> DiagnosticsRecord:
    """Diagnostics for one state; ``previous`` carries the running integrals."""
    grid = state.grid
    flds = state.fields
    arrays = state.arrays()
    mode = state.mode.value
    t_phys = state.t if mode == "Physical" else 0.5 * (np.exp(2.0 * state.t) - 1.0)
    E = free_energy(state, model, kernel) if model.symmetric else None
    D = dissipation(state, model, kernel)
    plus = sum(entropy_plus(f) for f in flds)
    if previous is None:
        cum, sup_plus = 0.0, plus
    else:
        cum = previous.cumulative_dissipation + 0.5 * (state.t - previous.t) * (D + previous.D)
        sup_plus = max(plus, previous.A_t - previous.cumulative_dissipation)
    return DiagnosticsRecord(
        t=float(state.t),
        t_physical=float(t_phys),
        mode=mode,
        mass=[fc.integrate(f) for f in flds],
        V=float(sum(fc.moment2(f) for f in flds)),
        entropy=[entropy(f) for f in flds],
        E=E,
        D=D,
        fisher=[fisher(f) for f in flds],
        l2=[float(np.sqrt(grid.h**2 * np.sum(a * a))) for a in arrays],
        linf=[float(np.max(np.abs(a))) for a in arrays],
        min_density=float(min(np.min(a) for a in arrays)),
        cumulative_dissipation=float(cum),
        A_t=float(sup_plus + cum),
        dt=dt,
    )


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float


def slope_fit(records, t_max: float | None = None) -> SlopeFit:
    """Least-squares line through ``(t, V)``."""
    pts = [(r.t, r.V) for r in records if t_max is None or r.t <= t_max + 1e-12]
    if len(pts) < 10:
        raise ValueError(f"slope fit needs at least 10 samples, got {len(pts)}")
    t, V = np.array(pts).T
    A = np.vstack([t, np.ones_like(t)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, V, rcond=None)
    resid = V - (slope * t + icpt)
    ss_tot = np.sum((V - V.mean()) ** 2)
    r2 = 1.0 if ss_tot == 0 else 1.0 - np.sum(resid**2) / ss_tot
    return SlopeFit(float(slope), float(icpt), float(r2))


@dataclass(frozen=True)
class DecayFit:
    sup_scaled: float
    monotone_tail: bool
    scaled: tuple[float, ...] = field(default=(), repr=False)
    times: tuple[float, ...] = field(default=(), repr=False)


def decay_fit(records, tolerance: float = 0.05) -> DecayFit:
    """``sup (1+t) sum ||n_a||_2^2`` and whether its last decade is non-increasing.

    "Non-increasing within 5%": no tail sample exceeds the smallest earlier
    tail sample by more than the tolerance.
    """
    t = np.array([r.t_physical for r in records])
    p = np.array([(1.0 + r.t_physical) * r.l2sq_physical() for r in records])
    pos = t[t > 0]
    if pos.size == 0 or t.max() < 10.0 * pos.min():
        raise ValueError("decay fit needs samples spanning at least one decade of t")
    tail = p[t >= t.max() / 10.0]
    running = np.minimum.accumulate(tail)
    ok = bool(np.all(tail[1:] <= running[:-1] * (1.0 + tolerance)))
    return DecayFit(float(p.max()), ok, tuple(p), tuple(t))


def energy_monotone(records, rel_tol: float = 1e-4) -> bool:
    """``E(t_{k+1}) <= E(t_k) + rel_tol |E(t_0)|`` along the records."""
    E = [r.E for r in records]
    if not E or any(e is None for e in E):
        return False
    tol = rel_tol * abs(E[0])
    return all(b <= a + tol for a, b in zip(E, E[1:]))


def dissipation_match(records, t_mid: float | None = None):
    """Centred ``-dE/dt`` versus ``D`` at the interior sample nearest ``t_mid``.

    Returns ``(t, -dE/dt, D, relative mismatch)``.
    """
    if len(records) < 3:
        raise ValueError("need at least three samples")
    t = np.array([r.t for r in records])
    E = np.array([r.E for r in records], dtype=float)
    D = np.array([r.D for r in records])
    if t_mid is None:
        t_mid = 0.5 * (t[0] + t[-1])
    k = int(np.clip(np.argmin(np.abs(t - t_mid)), 1, len(t) - 2))
    dEdt = (E[k + 1] - E[k - 1]) / (t[k + 1] - t[k - 1])
    rel = abs(dEdt + D[k]) / max(abs(dEdt), D[k])
    return float(t[k]), float(-dEdt), float(D[k]), float(rel)
