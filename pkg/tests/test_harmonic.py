import numpy as np
import pytest
from hypothesis import given, strategies as st

from torus_pdo.errors import PreconditionError
from torus_pdo.harmonic import (
    EuclideanSampledFunction,
    GridFunction,
    euclidean_ft,
    falling_derivative,
    grid_points,
    inflated_ft,
    inverse_toroidal_ft,
    periodize,
    poisson_sums,
    read_grid_function,
    sobolev_norm,
    toroidal_ft,
)
from torus_pdo.lattice import FrequencyBox, LatticeFunction, bracket


def random_gf(rng, box, N=None):
    c = rng.standard_normal(box.shape) + 1j * rng.standard_normal(box.shape)
    return GridFunction(c, box, N)


def delta(box, k):
    out = np.zeros(box.shape)
    out[box.index(np.atleast_1d(k))] = 1.0
    return out


class TestToroidal:
    def test_exponential(self):
        box = FrequencyBox(1, 5)
        u = GridFunction.from_function(lambda x: np.exp(3j * x[0]), box)
        assert np.allclose(toroidal_ft(u).values(), delta(box, 3), atol=1e-14)

    def test_constant(self):
        box = FrequencyBox(2, 3)
        u = GridFunction.from_function(lambda x: np.ones_like(x[0]), box)
        assert np.allclose(toroidal_ft(u).values(), delta(box, (0, 0)), atol=1e-14)

    @pytest.mark.parametrize("n,K", [(1, 9), (2, 4), (3, 2)])
    def test_roundtrip(self, rng, n, K):
        box = FrequencyBox(n, K)
        u = random_gf(rng, box)
        back = GridFunction.from_samples(inverse_toroidal_ft(toroidal_ft(u)).samples, box)
        assert np.max(np.abs(back.coeffs - u.coeffs)) < 1e-12 * np.max(np.abs(u.coeffs)) * 10
        assert np.max(np.abs(back.samples - u.samples)) < 1e-12 * np.max(np.abs(u.samples)) * 10

    def test_inverse_examples(self):
        box = FrequencyBox(1, 4)
        x = grid_points(box.default_grid_size(), 1)[0]
        one = inverse_toroidal_ft(LatticeFunction.from_array(delta(box, 0), box))
        assert np.allclose(one.samples, 1.0, atol=1e-15)
        e3 = inverse_toroidal_ft(LatticeFunction.from_array(delta(box, 3), box))
        assert np.allclose(e3.samples, np.exp(3j * x), atol=1e-14)

    def test_inverse_direct_summation(self):
        box = FrequencyBox(1, 12)
        g = 1.0 / bracket(box.points()) ** 4
        u = inverse_toroidal_ft(LatticeFunction.from_array(g, box))
        x = grid_points(u.N, 1)[0]
        direct = np.array([sum(g[k + 12] * np.exp(1j * xx * k) for k in range(-12, 13)) for xx in x])
        assert np.max(np.abs(u.samples - direct)) < 1e-12

    @pytest.mark.parametrize("n,K", [(1, 7), (2, 3)])
    def test_parseval(self, rng, n, K):
        box = FrequencyBox(n, K)
        u = random_gf(rng, box)
        # trapezoid on the grid is exact for |u|^2, band-limited to 2K < N
        quad = np.sqrt(np.mean(np.abs(u.samples) ** 2))
        assert abs(quad - u.norm()) < 1e-12 * u.norm()
        assert abs(sobolev_norm(u, 0.0) - u.norm()) < 1e-12 * u.norm()

    def test_evaluate_matches_samples(self, rng):
        box = FrequencyBox(2, 3)
        u = random_gf(rng, box)
        x = grid_points(u.N, 2)
        pts = np.stack(x, axis=-1)
        assert np.max(np.abs(u.evaluate(pts) - u.samples)) < 1e-12

    def test_csv_roundtrip_and_duplicates(self, rng, tmp_path):
        from torus_pdo.harmonic import write_grid_function

        box = FrequencyBox(2, 2)
        u = random_gf(rng, box)
        path = tmp_path / "u.csv"
        write_grid_function(u, path)
        v = read_grid_function(path)
        assert v.box == box and np.array_equal(v.coeffs, u.coeffs)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines + [lines[1]]) + "\n")
        with pytest.raises(PreconditionError, match="duplicate"):
            read_grid_function(path)


class TestFallingDerivative:
    def test_examples(self):
        box = FrequencyBox(1, 5)
        u = GridFunction.basis(3, box)
        for alpha, sign, scale in [((1,), 1, 3), ((2,), 1, 6), ((2,), -1, 12)]:
            v = falling_derivative(u, alpha, sign)
            assert np.allclose(v.coeffs, scale * u.coeffs, atol=0)

    @given(st.integers(-6, 6), st.integers(0, 4))
    def test_scales_exponentials(self, k, a):
        box = FrequencyBox(1, 6)
        v = falling_derivative(GridFunction.basis(k, box), (a,))
        want = np.prod([k - r for r in range(a)]) if a else 1
        assert v.coeffs[box.index(np.array([k]))] == want


class TestSobolev:
    def test_examples(self):
        box = FrequencyBox(1, 5)
        one = GridFunction.basis(0, box)
        for s in (-2.0, 0.0, 1.5):
            assert sobolev_norm(one, s) == pytest.approx(1.0, abs=1e-15)
        assert sobolev_norm(GridFunction.basis(3, box), 1.0) == pytest.approx(np.sqrt(10.0), rel=1e-15)


class TestEuclidean:
    def test_gaussian_closed_form(self):
        g = EuclideanSampledFunction.gaussian(1.0)
        assert abs(euclidean_ft(g, [0.0]) - 0.398942) < 1e-6
        assert abs(euclidean_ft(g, [0.0]) - 1 / np.sqrt(2 * np.pi)) < 1e-15

    def test_gaussian_quadrature_matches_closed_form(self):
        g = EuclideanSampledFunction.gaussian(0.7)
        bare = EuclideanSampledFunction(g.func, g.support)
        xi = np.array([[0.0], [1.0], [2.5]])
        assert np.max(np.abs(euclidean_ft(bare, xi) - euclidean_ft(g, xi))) < 1e-12

    def test_zero(self):
        f = EuclideanSampledFunction(lambda x: 0 * x[0], (-1, 1))
        assert euclidean_ft(f, [[0.5]])[0] == 0

    def test_box_function(self):
        # indicator of [-pi, pi]; its transform is sin(pi xi) / (pi xi)
        f = EuclideanSampledFunction(lambda x: (np.abs(x[0]) <= np.pi).astype(float), (-np.pi, np.pi))
        for xi in (1.0, 0.5, 2.3):
            want = np.sin(np.pi * xi) / (np.pi * xi)
            assert abs(euclidean_ft(f, [[xi]], tol=1e-11)[0] - want) < 1e-9


class TestPeriodize:
    def test_gaussian_zero_mode(self):
        g = EuclideanSampledFunction.gaussian(1.0)
        box = FrequencyBox(1, 8)
        for route in ("shift", "fourier"):
            assert abs(periodize(g, box, route=route).coeffs[8] - 0.398942) < 1e-6

    @pytest.mark.parametrize("width", [0.3, 0.7, 1.0, 1.5, 2.0])
    def test_routes_agree(self, width):
        g = EuclideanSampledFunction.gaussian(width)
        box = FrequencyBox(1, 16)
        a = periodize(g, box, route="shift").coeffs
        b = periodize(g, box, route="fourier").coeffs
        assert np.max(np.abs(a - b)) < 1e-9

    def test_routes_agree_2d(self):
        g = EuclideanSampledFunction.gaussian(0.8, n=2)
        box = FrequencyBox(2, 6)
        a = periodize(g, box, route="shift").coeffs
        b = periodize(g, box, route="fourier").coeffs
        assert np.max(np.abs(a - b)) < 1e-9

    def test_compact_inside_cell(self):
        def bump(x):
            t = (x[0] - np.pi) / 2.0
            out = np.zeros_like(t)
            inside = np.abs(t) < 1
            out[inside] = np.exp(-1.0 / (1 - t[inside] ** 2))
            return out

        f = EuclideanSampledFunction(bump, (np.pi - 2.0, np.pi + 2.0))
        N = 512
        Pf = periodize(f, FrequencyBox(1, N // 2 - 1), grid_size=N)
        x = grid_points(N, 1)[0]
        assert np.max(np.abs(Pf.samples - bump((x,)))) < 1e-10

    def test_poisson(self):
        for w in (0.5, 1.0, 1.7):
            left, right = poisson_sums(EuclideanSampledFunction.gaussian(w))
            assert abs(left - right) < 1e-12

    def test_slow_decay_rejected(self):
        f = EuclideanSampledFunction(lambda x: 1.0 / (1.0 + x[0] ** 2), (-3, 3))
        with pytest.raises(PreconditionError):
            periodize(f, FrequencyBox(1, 4))


class TestInflated:
    def test_unit_matches_toroidal(self, rng):
        box = FrequencyBox(1, 6)
        u = random_gf(rng, box)
        g = lambda y: u.evaluate(np.stack(y, axis=-1))  # noqa: E731
        assert np.max(np.abs(inflated_ft(g, 1, box).values() - u.coeffs)) < 1e-12

    def test_half_frequency(self):
        box = FrequencyBox(1, 6)
        F = inflated_ft(lambda y: np.exp(0.5j * y[0]), 2, box)
        # eta = m / N; eta = 1/2 is m = 1. Under the normalization the
        # inflated transform carries N^n.
        want = delta(box, 1) * 2
        assert np.max(np.abs(F.values() - want)) < 1e-12
        assert F.spacing == 0.5

    def test_against_direct_quadrature(self, rng):
        N = 3
        box = FrequencyBox(1, 8)
        ks = rng.integers(-8, 9, size=5)
        cs = rng.standard_normal(5) + 1j * rng.standard_normal(5)

        def g(y):
            return sum(c * np.exp(1j * k * y[0] / N) for k, c in zip(ks, cs))

        F = inflated_ft(g, N, box).values()
        M = 4096
        y = 2 * np.pi * N * np.arange(M) / M
        for m in range(-8, 9):
            direct = np.sum(g((y,)) * np.exp(-1j * y * m / N)) * (2 * np.pi * N / M) / (2 * np.pi)
            assert abs(F[m + 8] - direct) < 1e-10

    def test_rejects_nonperiodic(self):
        with pytest.raises(PreconditionError):
            inflated_ft(lambda y: np.exp(0.3j * y[0]), 2, FrequencyBox(1, 4))
