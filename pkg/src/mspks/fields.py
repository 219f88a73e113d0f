"""Uniform-grid fields on the truncated plane and free-space convolution.

Cell-centred grid on ``[-L, L]^2`` with ``n`` points per axis. Arrays are
indexed ``values[i, j]`` with ``i`` along ``x`` and ``j`` along ``y``.

The chemical fields solve ``-Lap c = rho`` on the whole plane, so they are
computed as ``c = K * rho`` with ``K(z) = -log|z| / (2 pi)`` through a
zero-padded (Hockney) convolution on the doubled grid. No periodic images.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * np.pi

_FFT_WORKERS = 1


def set_fft_workers(workers: int) -> None:
    """Thread count used by every transform in the package."""
    global _FFT_WORKERS
    _FFT_WORKERS = max(1, int(workers))


def fft_workers() -> int:
    return _FFT_WORKERS


@dataclass(frozen=True)
class GridSpec:
    n: int
    half_width: float

    def __post_init__(self):
        n = int(self.n)
        if n < 16 or n & (n - 1):
            raise ValueError(f"grid n must be a power of two >= 16, got {self.n}")
        if not self.half_width > 0:
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "half_width", float(self.half_width))

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def centers(self) -> np.ndarray:
        """1-D cell-centre coordinates."""
        return -self.half_width + (np.arange(self.n) + 0.5) * self.h

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.centers
        return np.meshgrid(x, x, indexing="ij")

    def radius2(self) -> np.ndarray:
        x, y = self.mesh()
        return x * x + y * y

    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        """Angular wavenumbers for an ``rfft2`` layout (periodic box of side 2L)."""
        kx = TWO_PI * np.fft.fftfreq(self.n, d=self.h)
        ky = TWO_PI * np.fft.rfftfreq(self.n, d=self.h)
        return kx[:, None], ky[None, :]


@dataclass(frozen=True, eq=False)
class ScalarField2D:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        n = self.grid.n
        if v.shape == (n * n,):
            v = v.reshape(n, n)
        if v.shape != (n, n):
            raise ValueError(f"field shape {v.shape} does not match grid n={n}")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "ScalarField2D":
        return cls(grid, np.zeros((grid.n, grid.n)))

    @classmethod
    def from_function(cls, grid: GridSpec, func) -> "ScalarField2D":
        x, y = grid.mesh()
        return cls(grid, np.broadcast_to(func(x, y), x.shape).copy())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def __add__(self, other: "ScalarField2D") -> "ScalarField2D":
        _check_same_grid(self, other)
        return ScalarField2D(self.grid, self.values + other.values)

    def __sub__(self, other: "ScalarField2D") -> "ScalarField2D":
        _check_same_grid(self, other)
        return ScalarField2D(self.grid, self.values - other.values)

    def __mul__(self, scalar: float) -> "ScalarField2D":
        return ScalarField2D(self.grid, self.values * float(scalar))

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class VectorField2D:
    grid: GridSpec
    x: np.ndarray
    y: np.ndarray

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.x, self.y)


def _check_same_grid(*fields) -> GridSpec:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise ValueError("fields live on different grids")
    return grid


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------

def log_kernel(r: np.ndarray) -> np.ndarray:
    """Whole-plane Green's function of ``-Lap``: ``-log(r) / 2pi``."""
    with np.errstate(divide="ignore"):
        return -np.log(r) / TWO_PI


def _blend_coeffs():
    # Hermite cubic on s in [1, 4]: value 0, slope 0 at s=1; matches
    # -log(s)/2pi and its slope at s=4. Monotone (Fritsch-Carlson holds).
    v1, d1 = 0.0, 0.0
    v4, d4 = -np.log(4.0) / TWO_PI, -1.0 / (TWO_PI * 4.0)
    return v1, d1, v4, d4


def unit_mollified_profile(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Radial profile ``K^1(s)`` and its derivative ``dK^1/ds``.

    ``K^1 = 0`` for ``s <= 1`` and ``-log(s)/2pi`` for ``s >= 4``; the gap is
    bridged by a monotone C^1 cubic.
    """
    s = np.asarray(s, dtype=np.float64)
    v1, d1, v4, d4 = _blend_coeffs()
    val = np.zeros_like(s)
    der = np.zeros_like(s)
    far = s >= 4.0
    with np.errstate(divide="ignore"):
        val[far] = -np.log(s[far]) / TWO_PI
        der[far] = -1.0 / (TWO_PI * s[far])
    mid = (s > 1.0) & ~far
    w = 3.0
    t = (s[mid] - 1.0) / w
    h00 = 2 * t**3 - 3 * t**2 + 1
    h10 = t**3 - 2 * t**2 + t
    h01 = -2 * t**3 + 3 * t**2
    h11 = t**3 - t**2
    val[mid] = h00 * v1 + h10 * w * d1 + h01 * v4 + h11 * w * d4
    dh00 = 6 * t**2 - 6 * t
    dh10 = 3 * t**2 - 4 * t + 1
    dh01 = -6 * t**2 + 6 * t
    dh11 = 3 * t**2 - 2 * t
    der[mid] = (dh00 * v1 + dh01 * v4) / w + dh10 * d1 + dh11 * d4
    return val, der


def mollified_kernel(r: np.ndarray, epsilon: float) -> tuple[np.ndarray, np.ndarray]:
    """``K^eps(r) = K^1(r/eps) - log(eps)/2pi`` and its radial derivative."""
    val, der = unit_mollified_profile(np.asarray(r) / epsilon)
    return val - np.log(epsilon) / TWO_PI, der / epsilon


def cell_average_log_kernel(h: float, m: int | None = None) -> float:
    """Average of ``-log|z|/2pi`` over the ``h x h`` cell centred at the origin.

    Closed form by default. With ``m`` given, the midpoint rule on
    ``m x m`` sub-cells (``m`` even keeps the singular point off the nodes).
    """
    if m is None:
        # mean of log r over [-a, a]^2 is log a + log(2)/2 - 3/2 + pi/4
        mean_log = np.log(0.5 * h) + 0.5 * np.log(2.0) - 1.5 + 0.25 * np.pi
        return float(-mean_log / TWO_PI)
    u = (np.arange(m) + 0.5) / m - 0.5
    ux, uy = np.meshgrid(u, u, indexing="ij")
    return float(np.mean(log_kernel(h * np.hypot(ux, uy))))


def kernel_value(z_x, z_y, epsilon: float, k_zero: float):
    """Pointwise kernel evaluation, with the tabulated singular-cell value."""
    r = np.hypot(z_x, z_y)
    if epsilon > 0:
        val, _ = mollified_kernel(r, epsilon)
        return val
    out = np.empty_like(r)
    zero = r == 0
    out[~zero] = log_kernel(r[~zero])
    out[zero] = k_zero
    return out


# Central 4th-order first-derivative stencil: offsets (in cells) and weights
# (multiply by 1/h).
_D1_OFFSETS = (1, -1, 2, -2)
_D1_WEIGHTS = (8.0 / 12.0, -8.0 / 12.0, -1.0 / 12.0, 1.0 / 12.0)


@dataclass(frozen=True, eq=False)
class KernelTable:
    """Kernel samples on the doubled grid, stored with their transforms.

    Offsets ``m = -n .. n-1`` are stored in FFT order. For ``epsilon == 0``
    the singular cell holds the cell average of ``K`` and the gradient table
    carries a local correction on the four nearest axis neighbours on each
    side: the punctured trapezoidal rule for the ``z/|z|^2`` kernel misses
    ``h^2 grad(rho) / (4 pi)``, which the correction restores to O(h^4).
    """

    grid: GridSpec
    epsilon: float
    k_zero: float
    k_values: np.ndarray
    gk_values: tuple[np.ndarray, np.ndarray]
    k_hat: np.ndarray = field(repr=False)
    gk_hat: tuple[np.ndarray, np.ndarray] = field(repr=False)

    @property
    def padded_n(self) -> int:
        return 2 * self.grid.n


def doubled_offsets(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    n = grid.n
    m = np.fft.fftfreq(2 * n, d=1.0 / (2 * n))  # 0..n-1, -n..-1
    zx, zy = np.meshgrid(m * grid.h, m * grid.h, indexing="ij")
    return zx, zy


def build_kernel(grid: GridSpec, epsilon: float = 0.0) -> KernelTable:
    """Tabulate ``K`` (or ``K^eps``) and ``grad K`` for free-space convolution."""
    epsilon = float(epsilon)
    h = grid.h
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if 0 < epsilon < h * (1 - 1e-12):
        raise ValueError(f"epsilon={epsilon} is below the grid spacing h={h}")
    zx, zy = doubled_offsets(grid)
    r = np.hypot(zx, zy)
    nonzero = r > 0
    k = np.empty_like(r)
    gx = np.zeros_like(r)
    gy = np.zeros_like(r)
    if epsilon > 0:
        k, dk = mollified_kernel(r, epsilon)
        k_zero = float(k[0, 0])
        gx[nonzero] = dk[nonzero] * zx[nonzero] / r[nonzero]
        gy[nonzero] = dk[nonzero] * zy[nonzero] / r[nonzero]
    else:
        k_zero = cell_average_log_kernel(h)
        k[nonzero] = log_kernel(r[nonzero])
        k[~nonzero] = k_zero
        r2 = r[nonzero] ** 2
        gx[nonzero] = -zx[nonzero] / (TWO_PI * r2)
        gy[nonzero] = -zy[nonzero] / (TWO_PI * r2)
        # conv adds sum_z w(z) rho(x - z); rho(x + s h) sits at z = -s h
        scale = 1.0 / (4.0 * np.pi * h)
        for s, wgt in zip(_D1_OFFSETS, _D1_WEIGHTS):
            gx[-s, 0] += scale * wgt
            gy[0, -s] += scale * wgt
    workers = _FFT_WORKERS
    k_hat = sfft.rfft2(k, workers=workers)
    gk_hat = (sfft.rfft2(gx, workers=workers), sfft.rfft2(gy, workers=workers))
    return KernelTable(grid, epsilon, k_zero, k, (gx, gy), k_hat, gk_hat)


# --------------------------------------------------------------------------
# convolution / Poisson
# --------------------------------------------------------------------------

def _padded_transform(values: np.ndarray) -> np.ndarray:
    # zero padding pruned: the row transform only touches the n data rows
    n = values.shape[0]
    t = sfft.rfft(values, n=2 * n, axis=1, workers=_FFT_WORKERS)
    return sfft.fft(t, n=2 * n, axis=0, workers=_FFT_WORKERS)


def _crop_inverse(spec: np.ndarray, n: int) -> np.ndarray:
    t = sfft.ifft(spec, axis=0, workers=_FFT_WORKERS)[:n]
    return sfft.irfft(t, n=2 * n, axis=1, workers=_FFT_WORKERS)[:, :n]


def source_transforms(densities: list[np.ndarray], B: np.ndarray) -> list[np.ndarray]:
    """Padded transforms of ``rho_a = sum_b B[a, b] n_b`` for every species."""
    hats = [_padded_transform(d) for d in densities]
    out = []
    for a in range(B.shape[0]):
        acc = None
        for b in range(B.shape[1]):
            coef = B[a, b]
            if coef == 0.0:
                continue
            term = coef * hats[b]
            acc = term if acc is None else acc + term
        out.append(acc)
    return out


def chemical_arrays(densities, B, kernel: KernelTable, with_potential=True):
    """Array-level Poisson solve; returns (potentials, grad_x, grad_y) lists."""
    n = kernel.grid.n
    h2 = kernel.grid.h ** 2
    pots, gxs, gys = [], [], []
    for rho_hat in source_transforms(densities, np.asarray(B, dtype=float)):
        if rho_hat is None:
            zero = np.zeros((n, n))
            pots.append(zero)
            gxs.append(zero.copy())
            gys.append(zero.copy())
            continue
        if with_potential:
            pots.append(h2 * _crop_inverse(rho_hat * kernel.k_hat, n))
        gxs.append(h2 * _crop_inverse(rho_hat * kernel.gk_hat[0], n))
        gys.append(h2 * _crop_inverse(rho_hat * kernel.gk_hat[1], n))
    return pots, gxs, gys


def poisson_solve(densities: list[ScalarField2D], B, kernel: KernelTable):
    """Chemicals ``c_a = K * sum_b B[a,b] n_b`` and their gradients.

    Returns ``(chemicals, gradients)``: lists of ScalarField2D and VectorField2D.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if not densities:
        raise ValueError("need at least one density")
    grid = _check_same_grid(*densities)
    if grid != kernel.grid:
        raise ValueError("kernel table was built for a different grid")
    if B.shape != (len(densities), len(densities)):
        raise ValueError(f"B has shape {B.shape} for {len(densities)} densities")
    pots, gxs, gys = chemical_arrays([d.values for d in densities], B, kernel)
    chems = [ScalarField2D(grid, p) for p in pots]
    grads = [VectorField2D(grid, gx, gy) for gx, gy in zip(gxs, gys)]
    return chems, grads


def convolve(f: ScalarField2D, kernel: KernelTable) -> ScalarField2D:
    """``h^2 sum_j K(x_i - x_j) f(x_j)`` via the padded transform."""
    if f.grid != kernel.grid:
        raise ValueError("kernel table was built for a different grid")
    n = f.grid.n
    out = f.grid.h ** 2 * _crop_inverse(_padded_transform(f.values) * kernel.k_hat, n)
    return ScalarField2D(f.grid, out)


def direct_convolution_oracle(f: ScalarField2D, kernel: KernelTable) -> ScalarField2D:
    """Brute-force ``h^2 sum_j K(x_i - x_j) f(x_j)``; O(n^4), n <= 64 only."""
    grid = f.grid
    if grid.n > 64:
        raise ValueError("direct convolution oracle is limited to n <= 64")
    x, y = grid.mesh()
    px, py = x.ravel(), y.ravel()
    zx = px[:, None] - px[None, :]
    zy = py[:, None] - py[None, :]
    kmat = kernel_value(zx, zy, kernel.epsilon, kernel.k_zero)
    out = grid.h ** 2 * (kmat @ f.values.ravel())
    return ScalarField2D(grid, out.reshape(grid.n, grid.n))


# --------------------------------------------------------------------------
# quadrature and finite differences
# --------------------------------------------------------------------------

def integrate(f: ScalarField2D) -> float:
    return float(f.grid.h ** 2 * np.sum(f.values))


def moment2(f: ScalarField2D) -> float:
    return float(f.grid.h ** 2 * np.sum(f.values * f.grid.radius2()))


def _diff_axis(v: np.ndarray, h: float, axis: int) -> np.ndarray:
    v = np.moveaxis(v, axis, 0)
    d = np.empty_like(v)
    d[2:-2] = (8.0 * (v[3:-1] - v[1:-3]) - (v[4:] - v[:-4])) / (12.0 * h)
    # one-sided second order in the two-cell boundary band
    d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
    d[1] = (-3.0 * v[1] + 4.0 * v[2] - v[3]) / (2.0 * h)
    d[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
    d[-2] = (3.0 * v[-2] - 4.0 * v[-3] + v[-4]) / (2.0 * h)
    return np.moveaxis(d, 0, axis)


def gradient_array(v: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    return _diff_axis(v, h, 0), _diff_axis(v, h, 1)


def gradient_fd(f: ScalarField2D) -> VectorField2D:
    """4th-order centred differences, 2nd-order one-sided near the edges."""
    gx, gy = gradient_array(f.values, f.grid.h)
    return VectorField2D(f.grid, gx, gy)


def laplacian_residual(c: ScalarField2D, rhs: ScalarField2D, band: int = 8) -> float:
    """Max interior ``|(-Lap_h c) - rhs| / max|rhs|`` with the 5-point stencil."""
    grid = _check_same_grid(c, rhs)
    v = c.values
    h2 = grid.h ** 2
    lap = (v[2:, 1:-1] + v[:-2, 1:-1] + v[1:-1, 2:] + v[1:-1, :-2] - 4.0 * v[1:-1, 1:-1]) / h2
    lap = np.pad(lap, 1)
    s = slice(band, grid.n - band)
    resid = np.abs(-lap[s, s] - rhs.values[s, s])
    scale = np.max(np.abs(rhs.values))
    if scale == 0.0:
        return float(np.max(resid))
    return float(np.max(resid) / scale)


def write_snapshot(path, fields, time: float) -> None:
    """JSON header line ``{n, half_width, species, time}`` then little-endian float64 data."""
    grid = _check_same_grid(*fields)
    header = {"n": grid.n, "half_width": grid.half_width, "species": len(fields), "time": float(time)}
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode())
        for f in fields:
            fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_snapshot(path) -> tuple[float, list[ScalarField2D]]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        data = np.frombuffer(fh.read(), dtype="<f8")
    grid = GridSpec(int(header["n"]), float(header["half_width"]))
    k, n = int(header["species"]), grid.n
    if data.size != k * n * n:
        raise ValueError(f"{path}: expected {k * n * n} values, found {data.size}")
    data = data.reshape(k, n, n)
    return float(header["time"]), [ScalarField2D(grid, data[a].astype(float)) for a in range(k)]
