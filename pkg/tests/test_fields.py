import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mspks import fields as fc
from mspks.fields import GridSpec, ScalarField2D

PI = np.pi


def gaussian(grid, mass, sigma, cx=0.0, cy=0.0):
    return ScalarField2D.from_function(
        grid, lambda x, y: mass / (2 * PI * sigma**2) * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * sigma**2)))


def gauss_law(r, mass, sigma):
    # |grad c|(r) for -Lap c = radial Gaussian of the given mass
    return mass * (1 - np.exp(-r**2 / (2 * sigma**2))) / (2 * PI * r)


@pytest.fixture(scope="module")
def g256():
    return GridSpec(256, 8.0)


@pytest.fixture(scope="module")
def k256(g256):
    return fc.build_kernel(g256)


def test_grid_validation():
    for bad in (12, 100, 8):
        with pytest.raises(ValueError):
            GridSpec(bad, 1.0)
    with pytest.raises(ValueError):
        GridSpec(32, 0.0)
    g = GridSpec(64, 4.0)
    assert g.h == 2 * 4.0 / 64
    assert g.centers[0] == pytest.approx(-4.0 + 0.5 * g.h)


def test_kernel_unit_distance_and_symmetry():
    g = GridSpec(32, 2.0)
    kern = fc.build_kernel(g)
    assert fc.kernel_value(np.array([1.0]), np.array([0.0]), 0.0, kern.k_zero)[0] == 0.0
    k = kern.k_values
    n2 = 2 * g.n
    idx = (-np.arange(n2)) % n2
    # every tabulated offset except -n has its mirror image in the table
    np.testing.assert_array_equal(k, k[np.ix_(idx, idx)])


def test_gradient_kernel_odd():
    kern = fc.build_kernel(GridSpec(32, 2.0))
    gx, gy = kern.gk_values
    n2 = gx.shape[0]
    idx = (-np.arange(n2)) % n2
    # offset -n has no +n partner on the doubled grid
    keep = np.arange(n2) != n2 // 2
    core = np.ix_(keep, keep)
    np.testing.assert_allclose(gx[core], -gx[np.ix_(idx, idx)][core], atol=1e-15)
    np.testing.assert_allclose(gy[core], -gy[np.ix_(idx, idx)][core], atol=1e-15)
    assert gx[0, 0] == 0.0 and gy[0, 0] == 0.0


def test_cell_average_against_fine_quadrature():
    h = 0.1
    k0 = fc.build_kernel(GridSpec(16, 0.8)).k_zero
    assert k0 == fc.cell_average_log_kernel(h)
    assert k0 == pytest.approx(fc.cell_average_log_kernel(h, 256), abs=1e-6)
    # independent oracle: polar integration over eight triangles with the
    # radial integral of r log r in closed form
    theta = np.linspace(0.0, PI / 4, 200001)
    R = 0.5 * h / np.cos(theta)
    inner = 0.5 * R**2 * np.log(R) - 0.25 * R**2
    oracle = -8 * np.trapezoid(inner, theta) / h**2 / (2 * PI)
    assert k0 == pytest.approx(oracle, abs=1e-10)


def test_mollified_kernel_far_field():
    eps = 0.25
    r = np.linspace(4 * eps, 5.0, 50)
    val, der = fc.mollified_kernel(r, eps)
    np.testing.assert_allclose(val, -np.log(r) / (2 * PI), rtol=1e-13, atol=1e-14)
    np.testing.assert_allclose(der, -1 / (2 * PI * r), rtol=1e-12)
    inner = fc.mollified_kernel(np.linspace(0, eps, 5), eps)[0]
    np.testing.assert_allclose(inner, -np.log(eps) / (2 * PI))


def test_mollified_profile_monotone_c1():
    s = np.linspace(0, 6, 6001)
    val, der = fc.unit_mollified_profile(s)
    assert np.all(np.diff(val) <= 1e-15)
    for knot in (1.0, 4.0):
        lo, hi = fc.unit_mollified_profile(np.array([knot - 1e-9, knot + 1e-9]))
        assert abs(lo[0] - lo[1]) < 1e-8 and abs(hi[0] - hi[1]) < 1e-7


def test_epsilon_below_grid_rejected():
    g = GridSpec(32, 2.0)
    with pytest.raises(ValueError):
        fc.build_kernel(g, 0.5 * g.h)
    fc.build_kernel(g, g.h)


def test_gauss_law_radial_gradient(g256, k256):
    M, sigma = 4 * PI, 0.5
    n = gaussian(g256, M, sigma)
    _, grads = fc.poisson_solve([n], [[1.0]], k256)
    x, y = g256.mesh()
    r = np.hypot(x, y)
    mask = np.abs(r - 1.0) < 0.6 * g256.h
    got = grads[0].magnitude()[mask]
    want = gauss_law(r[mask], M, sigma)
    assert np.max(np.abs(got / want - 1)) <= 1e-4


def test_gauss_law_converges():
    M, sigma = 4 * PI, 0.5
    errs = []
    for n in (64, 128, 256):
        g = GridSpec(n, 8.0)
        _, grads = fc.poisson_solve([gaussian(g, M, sigma)], [[1.0]], fc.build_kernel(g))
        x, y = g.mesh()
        r = np.hypot(x, y)
        m = (r > 0.2) & (r < 3.0)
        errs.append(np.max(np.abs(grads[0].magnitude()[m] - gauss_law(r[m], M, sigma))))
    assert errs[0] > errs[1] > errs[2]
    assert errs[1] / errs[2] > 3.5


def test_zero_density(g256, k256):
    chems, grads = fc.poisson_solve([ScalarField2D.zeros(g256)], [[1.0]], k256)
    assert not np.any(chems[0].values) and not np.any(grads[0].x) and not np.any(grads[0].y)


def test_off_diagonal_structure():
    g = GridSpec(64, 4.0)
    kern = fc.build_kernel(g)
    n1, n2 = gaussian(g, 1.0, 0.4, -1), gaussian(g, 2.0, 0.5, 1)
    chems, _ = fc.poisson_solve([n1, n2], [[0, 1], [1, 0]], kern)
    c_alone, _ = fc.poisson_solve([n2], [[1.0]], kern)
    np.testing.assert_allclose(chems[0].values, c_alone[0].values, rtol=1e-13, atol=1e-14)
    chems2, _ = fc.poisson_solve([n1 * 5.0, n2], [[0, 1], [1, 0]], kern)
    np.testing.assert_allclose(chems2[0].values, chems[0].values, rtol=1e-13, atol=1e-14)


def test_dimension_errors(g256, k256):
    n = ScalarField2D.zeros(g256)
    with pytest.raises(ValueError):
        fc.poisson_solve([n], [[1, 0], [0, 1]], k256)
    with pytest.raises(ValueError):
        fc.poisson_solve([ScalarField2D.zeros(GridSpec(32, 8.0))], [[1.0]], k256)


def test_kernel_gradient_matches_fd(g256, k256):
    n = gaussian(g256, 4 * PI, 0.5)
    chems, grads = fc.poisson_solve([n], [[1.0]], k256)
    fd = fc.gradient_fd(chems[0])
    s = slice(8, -8)
    scale = np.max(grads[0].magnitude())
    diff = np.max(np.hypot(fd.x - grads[0].x, fd.y - grads[0].y)[s, s]) / scale
    assert diff <= 5e-3


def test_laplacian_residual_second_order():
    res = []
    for n in (128, 256):
        g = GridSpec(n, 8.0)
        rho = gaussian(g, 4 * PI, 0.5)
        chems, _ = fc.poisson_solve([rho], [[1.0]], fc.build_kernel(g))
        res.append(fc.laplacian_residual(chems[0], rho))
    assert res[1] <= 1e-2
    assert 4 * 0.7 <= res[0] / res[1] <= 4 * 1.3


def test_laplacian_residual_exact_cases():
    g = GridSpec(64, 4.0)
    assert fc.laplacian_residual(ScalarField2D(g, np.full((64, 64), 3.0)), ScalarField2D.zeros(g)) == 0.0
    c = ScalarField2D.from_function(g, lambda x, y: x**2)
    rhs = ScalarField2D(g, np.full((64, 64), -2.0))
    assert fc.laplacian_residual(c, rhs) <= 1e-10


def test_mollified_convergence(g256):
    rho = gaussian(g256, 4 * PI, 0.5)
    c0 = fc.convolve(rho, fc.build_kernel(g256)).values
    h = g256.h
    errs = [np.max(np.abs(fc.convolve(rho, fc.build_kernel(g256, m * h)).values - c0)) / np.max(np.abs(c0))
            for m in (8, 4, 2, 1)]
    assert all(a > b for a, b in zip(errs, errs[1:]))


def test_fast_vs_direct_32():
    g = GridSpec(32, 2.0)
    kern = fc.build_kernel(g)
    rng = np.random.default_rng(3)
    f = ScalarField2D(g, rng.random((32, 32)))
    fast = fc.convolve(f, kern).values
    slow = fc.direct_convolution_oracle(f, kern).values
    assert np.max(np.abs(fast - slow)) / np.max(np.abs(slow)) <= 1e-12


def test_fast_vs_direct_mollified():
    g = GridSpec(32, 2.0)
    kern = fc.build_kernel(g, 2 * g.h)
    f = gaussian(g, 1.0, 0.3, 0.2, -0.1)
    slow = fc.direct_convolution_oracle(f, kern).values
    assert np.max(np.abs(fc.convolve(f, kern).values - slow)) / np.max(np.abs(slow)) <= 1e-12


def test_direct_point_mass_and_linearity():
    g = GridSpec(16, 1.0)
    kern = fc.build_kernel(g)
    v = np.zeros((16, 16))
    v[5, 9] = 1.0 / g.h**2
    out = fc.direct_convolution_oracle(ScalarField2D(g, v), kern).values
    x, y = g.mesh()
    want = fc.kernel_value(x - x[5, 9], y - y[5, 9], 0.0, kern.k_zero)
    np.testing.assert_allclose(out, want, rtol=1e-14, atol=1e-15)
    rng = np.random.default_rng(0)
    a, b = ScalarField2D(g, rng.random((16, 16))), ScalarField2D(g, rng.random((16, 16)))
    lhs = fc.direct_convolution_oracle(a + b, kern).values
    rhs = fc.direct_convolution_oracle(a, kern).values + fc.direct_convolution_oracle(b, kern).values
    np.testing.assert_allclose(lhs, rhs, rtol=1e-13, atol=1e-14)
    with pytest.raises(ValueError):
        fc.direct_convolution_oracle(ScalarField2D.zeros(GridSpec(128, 1.0)), kern)


def test_translation_equivariance():
    g = GridSpec(64, 4.0)
    kern = fc.build_kernel(g)
    a = gaussian(g, 1.0, 0.3)
    b = ScalarField2D(g, np.roll(a.values, 1, axis=0))
    ca, cb = fc.convolve(a, kern).values, fc.convolve(b, kern).values
    np.testing.assert_allclose(cb[1:, :], ca[:-1, :], rtol=1e-12, atol=1e-13)


def test_integrate_and_moment():
    g = GridSpec(256, 8.0)
    for sigma in (0.25, 0.5, 1.0):
        n = gaussian(g, 4 * PI, sigma)
        assert fc.integrate(n) == pytest.approx(4 * PI, rel=1e-10)
        assert fc.moment2(n) == pytest.approx(2 * sigma**2 * 4 * PI, rel=1e-8)
    z = ScalarField2D.zeros(g)
    assert fc.integrate(z) == 0.0 and fc.moment2(z) == 0.0
    assert fc.integrate(ScalarField2D(g, np.full((256, 256), 0.5))) == pytest.approx(0.5 * 16**2, rel=1e-13)
    v = np.zeros((256, 256))
    v[40, 200] = 2.0 / g.h**2
    x0 = g.centers[[40, 200]]
    assert fc.moment2(ScalarField2D(g, v)) == pytest.approx(2.0 * (x0 @ x0), rel=1e-13)


def test_gradient_fd():
    g = GridSpec(64, 4.0)
    d = fc.gradient_fd(ScalarField2D.from_function(g, lambda x, y: x + 0 * y))
    np.testing.assert_allclose(d.x, 1.0, atol=1e-12)
    np.testing.assert_allclose(d.y, 0.0, atol=1e-12)
    d = fc.gradient_fd(ScalarField2D(g, np.full((64, 64), 7.0)))
    assert not np.any(d.x) and not np.any(d.y)
    errs = []
    for n in (64, 128):
        g = GridSpec(n, 4.0)
        L = g.half_width
        f = ScalarField2D.from_function(g, lambda x, y: np.sin(PI * x / L) + 0 * y)
        x, _ = g.mesh()
        e = np.abs(fc.gradient_fd(f).x - PI / L * np.cos(PI * x / L))[2:-2, 2:-2]
        errs.append(e.max())
    assert errs[0] / errs[1] > 14


def test_snapshot_roundtrip(tmp_path):
    g = GridSpec(32, 2.0)
    a, b = gaussian(g, 1.0, 0.3), gaussian(g, 2.0, 0.4, 0.5)
    path = tmp_path / "x.field"
    fc.write_snapshot(path, [a, b], 0.25)
    head = path.read_bytes().split(b"\n", 1)[0]
    assert b'"species": 2' in head
    t, back = fc.read_snapshot(path)
    assert t == 0.25
    np.testing.assert_array_equal(back[0].values, a.values)
    np.testing.assert_array_equal(back[1].values, b.values)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.3, 1.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(0.1, 50.0))
def test_integrate_gaussian_property(sigma, cx, cy, mass):
    g = GridSpec(128, 8.0)
    assert fc.integrate(gaussian(g, mass, sigma, cx, cy)) == pytest.approx(mass, rel=1e-10)
