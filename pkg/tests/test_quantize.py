import numpy as np
import pytest
from hypothesis import given, strategies as st

from torus_pdo.errors import OutOfRangeError
from torus_pdo.harmonic import GridFunction, grid_points
from torus_pdo.lattice import FrequencyBox
from torus_pdo.quantize import (
    LinearOperatorHandle,
    apply_amplitude,
    apply_pdo,
    coefficient_matrix,
    extract_symbol,
    kernel_of,
    pdo_operator,
)
from torus_pdo.symbols import AmplitudeTable, SymbolTable


def ang(xi):
    return np.sqrt(1.0 + sum(np.asarray(k, float) ** 2 for k in xi))


def random_gf(rng, box, N=None):
    return GridFunction(rng.standard_normal(box.shape) + 1j * rng.standard_normal(box.shape), box, N)


def banded(rng, box, N, band=2):
    cs = rng.standard_normal((2 * band + 1, 3)) + 1j * rng.standard_normal((2 * band + 1, 3))

    def f(x, xi):
        k = xi[0]
        prof = [1.0 + 0 * k, k / ang(xi), 1.0 / ang(xi)]
        return sum(cs[e + band, j] * np.exp(1j * e * x[0]) * prof[j] for e in range(-band, band + 1) for j in range(3))

    return SymbolTable.from_function(f, box, N)


def direct_apply(a, u, x):
    """Oracle: sum_xi e^{ix xi} a(x, xi) u_hat(xi) at grid points, by explicit loops."""
    L = u.box.L
    out = np.zeros(x.shape, complex)
    for j, k in enumerate(range(-L, L + 1)):
        col = a.values[:, k + a.box.L]
        out += np.exp(1j * k * x) * col * u.coeffs[j]
    return out


class TestApply:
    def test_derivative(self):
        box = FrequencyBox(2, 4)
        a = SymbolTable.from_function(lambda x, xi: xi[0] + 0 * x[0], box, 16)
        u = GridFunction.basis((3, 0), box, 16)
        assert np.allclose(apply_pdo(a, u).coeffs, 3 * u.coeffs, atol=1e-14)

    def test_multiplication(self, rng):
        box = FrequencyBox(1, 8)
        a = SymbolTable.from_function(lambda x, xi: np.exp(1j * x[0]) + 0 * xi[0], box)
        u = random_gf(rng, box)
        out = apply_pdo(a, u, box.grown(1))
        x = grid_points(64, 1)[0]
        assert np.max(np.abs(out.sample(64) - np.exp(1j * x) * u.sample(64))) < 1e-12

    def test_one_minus_laplacian(self, rng):
        box = FrequencyBox(2, 5)
        a = SymbolTable.from_function(lambda x, xi: ang(xi) ** 2 + 0 * x[0], box, 16)
        u = random_gf(rng, box, 16)
        # spectral Laplacian oracle on the samples
        k = np.fft.fftfreq(16, 1 / 16)
        k1, k2 = np.meshgrid(k, k, indexing="ij")
        lap = np.fft.ifftn(-(k1**2 + k2**2) * np.fft.fftn(u.samples))
        assert np.max(np.abs(apply_pdo(a, u).samples - (u.samples - lap))) < 1e-10

    def test_against_direct_sum(self, rng):
        box = FrequencyBox(1, 10)
        a = banded(rng, box, 32)
        u = random_gf(rng, box, 32)
        out = apply_pdo(a, u, box.grown(2)).sample(32)
        x = grid_points(32, 1)[0]
        assert np.max(np.abs(out - direct_apply(a, u, x))) < 1e-12

    @given(st.integers(-8, 8))
    def test_defining_property(self, k):
        rng = np.random.default_rng(k + 100)
        box = FrequencyBox(1, 8)
        a = banded(rng, box, 32)
        e = GridFunction.basis(k, box, 32)
        out = apply_pdo(a, e, box.grown(2)).sample(32)
        x = grid_points(32, 1)[0]
        assert np.max(np.abs(out - np.exp(1j * k * x) * a.values[:, k + 8])) < 1e-12

    def test_truncation_is_reported(self, rng):
        box = FrequencyBox(1, 8)
        a = SymbolTable.from_function(lambda x, xi: np.exp(2j * x[0]) + 0 * xi[0], box)
        u = GridFunction.basis(8, box)
        out = apply_pdo(a, u)
        assert out.norm() < 1e-14 and out.truncated_mass == pytest.approx(1.0)

    def test_box_too_large(self):
        a = SymbolTable.from_function(lambda x, xi: 1 + 0 * x[0], FrequencyBox(1, 4))
        with pytest.raises(OutOfRangeError):
            apply_pdo(a, GridFunction.basis(0, FrequencyBox(1, 6)))

    def test_linearity(self, rng):
        box = FrequencyBox(2, 3)
        a = SymbolTable.from_function(lambda x, xi: np.cos(x[0]) * xi[1] + ang(xi), box, 16)
        for _ in range(5):
            u, v = random_gf(rng, box, 16), random_gf(rng, box, 16)
            c = complex(rng.standard_normal(), rng.standard_normal())
            lhs = apply_pdo(a, u + v * c, box.grown(1))
            rhs = apply_pdo(a, u, box.grown(1)) + apply_pdo(a, v, box.grown(1)) * c
            assert np.max(np.abs(lhs.coeffs - rhs.coeffs)) < 1e-10

    def test_matrix_matches_rule(self, rng):
        box = FrequencyBox(1, 6)
        a = banded(rng, box, 32)
        op = pdo_operator(a, box, box.grown(2))
        u = random_gf(rng, box, 32)
        assert np.max(np.abs(coefficient_matrix(a, box, box.grown(2)) @ u.coeffs - op(u).coeffs)) < 1e-12


class TestExtract:
    def test_multiplication(self):
        box = FrequencyBox(1, 6)
        mult = GridFunction.basis(1, FrequencyBox(1, 1))
        A = LinearOperatorHandle(lambda u: u.multiply(mult, box.grown(1)), box, box.grown(1))
        s = extract_symbol(A, box, 16)
        x = grid_points(16, 1)[0]
        assert np.max(np.abs(s.values - np.exp(1j * x)[:, None])) < 1e-13

    def test_derivative(self):
        box = FrequencyBox(2, 3)
        from torus_pdo.harmonic import falling_derivative

        A = LinearOperatorHandle(lambda u: falling_derivative(u, (1, 0)), box)
        s = extract_symbol(A, box, 8)
        assert np.max(np.abs(s.values - box.grid()[0][None, None])) < 1e-13

    def test_roundtrip(self, rng):
        box = FrequencyBox(1, 10)
        a = banded(rng, box, 32, band=3)
        s = extract_symbol(pdo_operator(a, box, box.grown(3)), box, 32)
        assert np.max(np.abs(s.values - a.values)) < 1e-10

    def test_apply_after_extract(self, rng):
        box = FrequencyBox(1, 8)
        a = banded(rng, box, 32)
        A = pdo_operator(a, box, box.grown(2))
        s = extract_symbol(A, box, 32)
        u = random_gf(rng, box, 32)
        assert np.max(np.abs(apply_pdo(s, u, box.grown(2)).coeffs - A(u).coeffs)) < 1e-10


class TestAmplitude:
    def test_y_independent(self, rng):
        box = FrequencyBox(1, 6)
        a = banded(rng, box, 32)
        u = random_gf(rng, box, 32)
        got = apply_amplitude(AmplitudeTable.from_symbol(a), u, box.grown(2))
        assert np.max(np.abs(got.coeffs - apply_pdo(a, u, box.grown(2)).coeffs)) < 1e-10

    def test_y_multiplication(self, rng):
        box = FrequencyBox(1, 6)
        amp = AmplitudeTable.from_function(lambda x, y, xi: (2 + np.cos(y[0])) + 0 * x[0] + 0 * xi[0], box, 32)
        # the xi-sum covers the box, so b u is exact up to |xi| <= 6
        u = random_gf(rng, FrequencyBox(1, 5), 32).embed(box, 32)
        b = GridFunction.from_function(lambda x: 2 + np.cos(x[0]), FrequencyBox(1, 1))
        got = apply_amplitude(amp, u, box)
        assert np.max(np.abs(got.coeffs - u.multiply(b, box).coeffs)) < 1e-12

    def test_index_shift(self):
        box = FrequencyBox(1, 6)
        amp = AmplitudeTable.from_function(lambda x, y, xi: np.exp(1j * (y[0] - x[0])) + 0 * xi[0], box, 32)
        # the xi-sum picks xi = k0 + 1, which must lie in the box
        for k0 in range(-6, 6):
            u = GridFunction.basis(k0, box, 32)
            got = apply_amplitude(amp, u, box)
            assert np.max(np.abs(got.coeffs - u.coeffs)) < 1e-12


class TestKernel:
    def test_identity_is_dirichlet(self):
        box = FrequencyBox(1, 5)
        kt = kernel_of(SymbolTable.from_function(lambda x, xi: 1 + 0 * x[0] + 0 * xi[0], box, 16))
        v = grid_points(16, 1)[0]
        dirichlet = sum(np.exp(1j * v * k) for k in range(-5, 6))
        assert np.max(np.abs(kt.values - dirichlet[None, :])) < 1e-12

    def test_exponential_row(self):
        box = FrequencyBox(1, 5)
        kt = kernel_of(SymbolTable.from_function(lambda x, xi: np.exp(1j * x[0]) + 0 * xi[0], box, 16))
        x = grid_points(16, 1)[0]
        dirichlet = sum(np.exp(1j * x * k) for k in range(-5, 6))
        assert np.max(np.abs(kt.values - np.exp(1j * x)[:, None] * dirichlet[None, :])) < 1e-12

    def test_schwartz_form(self, rng):
        box = FrequencyBox(2, 2)
        kt = kernel_of(SymbolTable.from_function(lambda x, xi: np.exp(1j * x[1]) * ang(xi), box, 8))
        K = kt.schwartz()
        for _ in range(20):
            i = tuple(rng.integers(0, 8, 4))
            assert K[i] == kt.values[i[0], i[1], (i[0] - i[2]) % 8, (i[1] - i[3]) % 8]

    def test_three_paths(self, rng):
        # kernel integral, direct sum, and y-independent amplitude agree
        box = FrequencyBox(1, 8)
        a = banded(rng, box, 32, band=2)
        u = random_gf(rng, box, 32)
        direct = apply_pdo(a, u, box.grown(2)).sample(32)
        via_kernel = kernel_of(a).apply_samples(u)
        via_amp = apply_amplitude(AmplitudeTable.from_symbol(a), u, box.grown(2)).sample(32)
        assert np.max(np.abs(direct - via_kernel)) < 1e-9
        assert np.max(np.abs(direct - via_amp)) < 1e-9
        assert np.max(np.abs(via_kernel - via_amp)) < 1e-9

    def test_symbol_recovered(self, rng):
        box = FrequencyBox(1, 8)
        a = banded(rng, box, 32)
        assert np.max(np.abs(kernel_of(a).symbol(box).values - a.values)) < 1e-12
