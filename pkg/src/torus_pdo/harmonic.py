"""Fourier analysis on the torus T^n = (R / 2 pi Z)^n and on R^n.

Both transforms use the measure ``dx / (2 pi)^n``, so the toroidal
coefficients of a grid function are ``u_hat(xi) = int u(x) exp(-i x.xi) dx / (2 pi)^n``
and ``u(x) = sum_xi u_hat(xi) exp(i x.xi)``.
"""
from __future__ import annotations

import csv
import itertools
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import AccuracyError, PreconditionError, ResolutionError
from .lattice import FrequencyBox, LatticeFunction, bracket, falling_power

__all__ = [
    "FrequencyBox",
    "GridFunction",
    "EuclideanSampledFunction",
    "grid_points",
    "grid_phase",
    "toroidal_ft",
    "inverse_toroidal_ft",
    "euclidean_ft",
    "periodize",
    "poisson_sums",
    "sobolev_norm",
    "falling_derivative",
    "inflated_ft",
    "write_grid_function",
    "read_grid_function",
]


def grid_points(N: int, n: int) -> tuple[np.ndarray, ...]:
    """Uniform grid ``x_j = 2 pi j / N`` as an ``ij``-indexed meshgrid."""
    x = 2 * np.pi * np.arange(N) / N
    return tuple(np.meshgrid(*([x] * n), indexing="ij"))


def grid_phase(N: int, n: int, xi, sign: int = 1) -> np.ndarray:
    """``exp(sign * i x.xi)`` on the N-grid for integer points ``xi`` (shape ``(P, n)``).

    The phase is reduced modulo N in integer arithmetic first, so the
    result carries no rounding growth in ``|x.xi|``. Output shape ``(N,)*n + (P,)``.
    """
    xi = np.asarray(xi, dtype=np.int64).reshape(-1, n)
    idx = np.indices((N,) * n).reshape(n, -1).T.astype(np.int64)
    r = np.mod(idx @ xi.T, N)
    return np.exp(sign * 2j * np.pi * r / N).reshape((N,) * n + (xi.shape[0],))


def _fold(coeffs: np.ndarray, box: FrequencyBox, N: int) -> np.ndarray:
    """Sum coefficients into residue classes mod N (FFT ordering)."""
    n = box.n
    out = np.zeros((N,) * n, dtype=complex)
    idx = np.mod(box.axis(), N)
    if box.width <= N:
        out[np.ix_(*([idx] * n))] = coeffs
        return out
    for pos in itertools.product(range(box.width), repeat=n):
        out[tuple(idx[p] for p in pos)] += coeffs[pos]
    return out


def _unfold(spectrum: np.ndarray, box: FrequencyBox) -> np.ndarray:
    """Pick the modes of ``box`` from an FFT-ordered spectrum."""
    N = spectrum.shape[0]
    idx = np.mod(box.axis(), N)
    return spectrum[np.ix_(*([idx] * box.n))]


class GridFunction:
    """Trigonometric polynomial with spectrum in a frequency box.

    The coefficient array is authoritative. Samples on the uniform grid
    of size ``N`` per axis are derived exactly from it.

    Parameters
    ----------
    coeffs : ndarray
        Complex coefficients indexed by ``xi + L`` along each axis.
    box : FrequencyBox
    grid_size : int, optional
        Grid points per axis, at least ``2L + 1``. Defaults to the
        smallest power of two that is at least ``3L + 1``.
    """

    def __init__(self, coeffs, box: FrequencyBox, grid_size: int | None = None):
        coeffs = np.array(coeffs, dtype=complex)
        if coeffs.shape != box.shape:
            raise ValueError(f"coefficient shape {coeffs.shape} does not match box {box.shape}")
        N = grid_size or box.default_grid_size()
        if N < box.width:
            raise ResolutionError(f"grid size {N} cannot resolve a box of width {box.width}")
        coeffs.setflags(write=False)
        self.coeffs = coeffs
        self.box = box
        self.N = N
        self.n = box.n
        self.truncated_mass = 0.0

    @classmethod
    def zeros(cls, box, grid_size=None):
        return cls(np.zeros(box.shape, complex), box, grid_size)

    @classmethod
    def basis(cls, xi, box, grid_size=None):
        """The exponential ``e_xi(x) = exp(i x.xi)``."""
        c = np.zeros(box.shape, complex)
        c[box.index(np.atleast_1d(xi))] = 1.0
        return cls(c, box, grid_size)

    @classmethod
    def from_samples(cls, samples, box: FrequencyBox, tol: float | None = None):
        """Coefficients of the samples restricted to ``box``.

        The L2 norm of the discarded modes is kept in ``truncated_mass``.
        With ``tol`` set, a discarded fraction above ``tol`` raises
        ``ResolutionError``.
        """
        samples = np.asarray(samples)
        N = samples.shape[0]
        if samples.shape != (N,) * box.n:
            raise ValueError("samples must be on a square grid matching the box dimension")
        spectrum = np.fft.fftn(samples) / N**box.n
        coeffs = _unfold(spectrum, box)
        total = np.linalg.norm(spectrum)
        lost = np.sqrt(max(total**2 - np.linalg.norm(coeffs) ** 2, 0.0))
        if tol is not None and lost > tol * max(total, np.finfo(float).tiny):
            raise ResolutionError(f"spectral tail {lost / total:.3e} exceeds {tol:.1e}")
        out = cls(coeffs, box, N)
        out.truncated_mass = lost
        return out

    @classmethod
    def from_function(cls, f: Callable, box: FrequencyBox, grid_size: int | None = None, tol=None):
        """Sample ``f(x)`` (x a tuple of coordinate arrays) and truncate to ``box``."""
        N = grid_size or box.default_grid_size()
        x = grid_points(N, box.n)
        values = np.broadcast_to(np.asarray(f(x), dtype=complex), (N,) * box.n)
        return cls.from_samples(values, box, tol=tol)

    @property
    def samples(self) -> np.ndarray:
        return self.sample(self.N)

    def sample(self, N: int) -> np.ndarray:
        """Exact values on the grid of size N (aliasing folds coefficients)."""
        return np.fft.ifftn(_fold(self.coeffs, self.box, N)) * N**self.n

    def evaluate(self, x) -> np.ndarray:
        """Values at arbitrary points; ``x`` has shape ``(..., n)``."""
        x = np.asarray(x, dtype=float)
        pts = self.box.points().reshape(-1, self.n)
        phase = np.exp(1j * x.reshape(-1, self.n) @ pts.T)
        return (phase @ self.coeffs.reshape(-1)).reshape(x.shape[:-1])

    def with_grid(self, N: int) -> "GridFunction":
        return GridFunction(self.coeffs, self.box, N)

    def restrict(self, box: FrequencyBox) -> "GridFunction":
        """Drop modes outside a smaller box."""
        return GridFunction(self.coeffs[self.box.slices_within(box)], box, max(self.N, box.width))

    def embed(self, box: FrequencyBox, grid_size: int | None = None) -> "GridFunction":
        """Zero-pad into a larger box."""
        c = np.zeros(box.shape, complex)
        c[box.slices_within(self.box)] = self.coeffs
        return GridFunction(c, box, grid_size)

    def resized(self, box: FrequencyBox) -> "GridFunction":
        """Embed or restrict so the result lives on ``box``."""
        if box.L >= self.box.L:
            return self.embed(box)
        return self.restrict(box)

    def norm(self) -> float:
        """L2 norm for the normalized measure (Parseval)."""
        return float(np.linalg.norm(self.coeffs))

    def inner(self, other: "GridFunction") -> complex:
        """``int u conj(v) dx / (2 pi)^n``."""
        a, b = _common(self, other)
        return complex(np.vdot(b.coeffs, a.coeffs))

    def multiply(self, other: "GridFunction", box: FrequencyBox | None = None) -> "GridFunction":
        """Exact product, truncated to ``box`` (default: the full product box)."""
        full = FrequencyBox(self.n, self.box.L + other.box.L)
        M = 1 << (2 * full.L).bit_length()
        prod = self.sample(M) * other.sample(M)
        out = GridFunction.from_samples(prod, full)
        return out if box is None else out.resized(box)

    def _binary(self, other, op):
        if isinstance(other, GridFunction):
            a, b = _common(self, other)
            return GridFunction(op(a.coeffs, b.coeffs), a.box, max(a.N, b.N))
        return GridFunction(op(self.coeffs, other), self.box, self.N)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, scalar):
        if isinstance(scalar, GridFunction):
            return self.multiply(scalar)
        return GridFunction(self.coeffs * scalar, self.box, self.N)

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(-self.coeffs, self.box, self.N)

    def __repr__(self):
        return f"GridFunction(n={self.n}, K={self.box.L}, N={self.N})"


def _common(a: GridFunction, b: GridFunction):
    if a.n != b.n:
        raise ValueError("dimension mismatch")
    if a.box.L == b.box.L:
        return a, b
    big = a.box if a.box.L > b.box.L else b.box
    return a.resized(big), b.resized(big)


def toroidal_ft(u: GridFunction) -> LatticeFunction:
    """Fourier coefficients of ``u`` as a lattice function on its box."""
    return LatticeFunction.from_array(u.coeffs, u.box)


def inverse_toroidal_ft(g: LatticeFunction, grid_size: int | None = None) -> GridFunction:
    """``x -> sum_xi g(xi) exp(i x.xi)`` over the box of ``g``."""
    if g.box is None:
        raise ValueError("lattice function needs a box")
    return GridFunction(g.values(), g.box, grid_size)


def sobolev_norm(u: GridFunction, s: float) -> float:
    """``(sum <xi>^{2s} |u_hat(xi)|^2)^{1/2}``."""
    w = bracket(u.box.points()) ** s
    return float(np.linalg.norm(w * u.coeffs))


def falling_derivative(u: GridFunction, alpha, sign: int = 1) -> GridFunction:
    """Fourier multiplier ``prod_j (sign xi_j)^(alpha_j)``.

    With ``sign=1`` this is ``D^(alpha)``; ``sign=-1`` gives ``(-D)^(alpha)``.
    """
    mult = np.ones(u.box.shape)
    for j, (g, a) in enumerate(zip(u.box.grid(), alpha)):
        mult = mult * falling_power(sign * g, a)
    return GridFunction(u.coeffs * mult, u.box, u.N)


class EuclideanSampledFunction:
    """A rapidly decaying function on R^n.

    Parameters
    ----------
    func : callable
        ``func(x)`` with x a tuple of coordinate arrays.
    support : tuple
        ``(lo, hi)`` bounds applied to every axis, outside which the
        function is negligible.
    n : int
    closed_form_ft : callable, optional
        Exact Euclidean transform ``xi -> F f(xi)`` (xi a tuple of arrays).
    """

    def __init__(self, func, support, n: int = 1, closed_form_ft=None, name: str = ""):
        self.func = func
        self.support = (float(support[0]), float(support[1]))
        if not self.support[0] < self.support[1]:
            raise ValueError("empty support interval")
        self.n = n
        self.closed_form_ft = closed_form_ft
        self.name = name

    @classmethod
    def gaussian(cls, width: float, n: int = 1, center: float = 0.0, amplitude: float = 1.0):
        """``amplitude * exp(-|x - c|^2 / (2 width^2))`` with its exact transform."""
        w = float(width)

        def func(x):
            r2 = sum((xj - center) ** 2 for xj in x)
            return amplitude * np.exp(-r2 / (2 * w * w))

        def ft(xi):
            r2 = sum(k * k for k in xi)
            shift = sum(k * center for k in xi)
            return amplitude * (w / np.sqrt(2 * np.pi)) ** n * np.exp(-0.5 * w * w * r2 - 1j * shift)

        half = 9.0 * w
        return cls(func, (center - half, center + half), n, ft, name=f"gaussian(w={w})")

    def __call__(self, x):
        return self.func(x)

    def quadrature(self, points_per_axis: int):
        """Trapezoid nodes and weights over the support box."""
        lo, hi = self.support
        t = np.linspace(lo, hi, points_per_axis)
        w = np.full(points_per_axis, (hi - lo) / (points_per_axis - 1))
        w[0] *= 0.5
        w[-1] *= 0.5
        return t, w

    def check_decay(self, rel_tol: float = 1e-12, points_per_axis: int | None = None) -> float:
        """Relative L1 mass in a 2 pi collar around the support.

        Raises ``PreconditionError`` when the collar mass exceeds ``rel_tol``.
        """
        lo, hi = self.support
        m = points_per_axis or (2048 if self.n == 1 else 160)
        inner = self._l1(lo, hi, m)
        outer = self._l1(lo - 2 * np.pi, hi + 2 * np.pi, m)
        frac = abs(outer - inner) / max(inner, np.finfo(float).tiny)
        if frac > rel_tol:
            raise PreconditionError(f"mass outside the declared support is {frac:.2e} of the total")
        return frac

    def _l1(self, lo, hi, m):
        t = np.linspace(lo, hi, m)
        w = np.full(m, (hi - lo) / (m - 1))
        w[0] *= 0.5
        w[-1] *= 0.5
        x = np.meshgrid(*([t] * self.n), indexing="ij")
        W = np.ones(())
        for _ in range(self.n):
            W = np.multiply.outer(W, w)
        return float(np.sum(np.abs(self.func(tuple(x))) * W))


def _trapezoid_ft(f: EuclideanSampledFunction, xi: np.ndarray, m: int) -> np.ndarray:
    t, w = f.quadrature(m)
    x = np.meshgrid(*([t] * f.n), indexing="ij")
    vals = np.asarray(f(tuple(x)), dtype=complex)
    W = np.ones(())
    for _ in range(f.n):
        W = np.multiply.outer(W, w)
    weighted = (vals * W).reshape(-1)
    pts = np.stack([a.reshape(-1) for a in x], axis=-1)
    flat = xi.reshape(-1, f.n)
    out = np.empty(flat.shape[0], dtype=complex)
    chunk = max(1, 2_000_000 // pts.shape[0])
    for s in range(0, flat.shape[0], chunk):
        out[s : s + chunk] = np.exp(-1j * flat[s : s + chunk] @ pts.T) @ weighted
    return out.reshape(xi.shape[:-1]) / (2 * np.pi) ** f.n


def euclidean_ft(f: EuclideanSampledFunction, xi, tol: float = 1e-12, max_points: int | None = None):
    """``F f(xi) = int f(x) exp(-i x.xi) dx / (2 pi)^n`` at real points ``xi`` (shape ``(..., n)``).

    Uses the closed form when one is attached, otherwise trapezoid sums
    with Richardson extrapolation, halving the step until successive
    extrapolated values agree to ``tol``.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1:] != (f.n,):
        xi = xi[..., None] if f.n == 1 else xi
    if f.closed_form_ft is not None:
        return np.asarray(f.closed_form_ft(tuple(np.moveaxis(xi, -1, 0))), dtype=complex)
    max_points = max_points or (1 << 17 if f.n == 1 else 1 << 9)
    m = 257 if f.n == 1 else 65
    coarse = _trapezoid_ft(f, xi, m)
    prev = None
    while 2 * m - 1 <= max_points:
        m = 2 * m - 1
        fine = _trapezoid_ft(f, xi, m)
        extrap = fine + (fine - coarse) / 3.0
        if prev is not None and np.max(np.abs(extrap - prev)) <= tol:
            return extrap
        prev, coarse = extrap, fine
    raise AccuracyError("Euclidean transform quadrature did not converge")


def _shift_range(f: EuclideanSampledFunction) -> range:
    lo, hi = f.support
    kmin = int(np.floor((lo - 2 * np.pi) / (2 * np.pi)))
    kmax = int(np.ceil(hi / (2 * np.pi)))
    return range(kmin, kmax + 1)


def _shift_sum(f: EuclideanSampledFunction, x: tuple) -> np.ndarray:
    total = 0.0
    for k in itertools.product(_shift_range(f), repeat=f.n):
        total = total + f(tuple(xj + 2 * np.pi * kj for xj, kj in zip(x, k)))
    return total


def periodize(
    f: EuclideanSampledFunction,
    box: FrequencyBox,
    grid_size: int | None = None,
    route: str = "shift",
    check: bool = True,
) -> GridFunction:
    """Periodization ``P f(x) = sum_k f(x + 2 pi k)`` truncated to ``box``.

    ``route="shift"`` sums translates on the grid and transforms;
    ``route="fourier"`` restricts the Euclidean transform to the lattice.
    The two agree because of the Poisson summation formula.
    """
    if f.n != box.n:
        raise ValueError("dimension mismatch")
    if check:
        f.check_decay()
    if route == "shift":
        N = grid_size or max(box.default_grid_size(), 256 if box.n == 1 else 64)
        values = _shift_sum(f, grid_points(N, box.n))
        out = GridFunction.from_samples(np.asarray(values, dtype=complex), box)
        return out.with_grid(grid_size) if grid_size else out
    if route == "fourier":
        coeffs = euclidean_ft(f, box.points().astype(float))
        return GridFunction(coeffs, box, grid_size)
    raise ValueError(f"unknown route {route!r}")


def poisson_sums(f: EuclideanSampledFunction, x0=None, tol: float = 1e-15, k_max: int = 4096):
    """Both sides of Poisson summation at ``x0``.

    Returns ``(sum_k f(x0 + 2 pi k), sum_xi F f(xi) exp(i x0.xi))``. The
    frequency sum grows a cube until the last shell adds less than ``tol``.
    """
    x0 = np.zeros(f.n) if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
    left = complex(_shift_sum(f, tuple(np.array(v) for v in x0)))
    total = 0.0 + 0.0j
    K = 0
    while K <= k_max:
        shell = FrequencyBox(f.n, K).points().reshape(-1, f.n)
        if K > 0:
            shell = shell[np.max(np.abs(shell), axis=1) == K]
        terms = euclidean_ft(f, shell.astype(float)) * np.exp(1j * shell @ x0)
        total += terms.sum()
        if K > 0 and np.max(np.abs(terms)) < tol:
            return left, total
        K += 1
    raise AccuracyError("Poisson sum did not converge")


def inflated_ft(g: Callable, N: int, box: FrequencyBox, n: int | None = None, grid_size=None) -> LatticeFunction:
    """Transform on the inflated torus ``N T^n`` at the points ``eta = m / N``.

    ``F g(eta) = int_{N T^n} g(y) exp(-i y.eta) dy / (2 pi)^n`` equals
    ``N^n`` times the toroidal coefficient of ``g_N(x) = g(N x)`` at ``N eta``.
    The result is indexed by the integer m; ``spacing`` is ``1 / N``.
    """
    n = n or box.n
    M = grid_size or box.default_grid_size() * 2
    x = grid_points(M, n)
    gn = np.asarray(g(tuple(N * xj for xj in x)), dtype=complex)
    shifted = np.asarray(g(tuple(N * xj + (2 * np.pi * N if j == 0 else 0.0) for j, xj in enumerate(x))))
    if np.max(np.abs(shifted - gn)) > 1e-9 * max(1.0, np.max(np.abs(gn))):
        raise PreconditionError(f"function is not periodic on the inflated torus of size {N}")
    coeffs = GridFunction.from_samples(np.broadcast_to(gn, (M,) * n), box).coeffs * N**n
    out = LatticeFunction.from_array(coeffs, box)
    out.spacing = 1.0 / N
    return out


def write_grid_function(u: GridFunction, path) -> None:
    """CSV with header ``xi_1..xi_n,re,im`` in lexicographic lattice order."""
    pts = u.box.points().reshape(-1, u.n)
    vals = u.coeffs.reshape(-1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"xi_{j + 1}" for j in range(u.n)] + ["re", "im"])
        for p, v in zip(pts, vals):
            w.writerow([*map(int, p), repr(float(v.real)), repr(float(v.imag))])


def read_grid_function(path, grid_size: int | None = None, box: FrequencyBox | None = None) -> GridFunction:
    """Inverse of ``write_grid_function``; missing lattice points are zero."""
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise PreconditionError("empty grid-function file")
    header = [h.strip() for h in rows[0]]
    n = len(header) - 2
    if n < 1 or header[-2:] != ["re", "im"] or header[:n] != [f"xi_{j + 1}" for j in range(n)]:
        raise PreconditionError(f"unexpected header {header}")
    pts, vals, seen = [], [], set()
    for line, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            p = tuple(int(v) for v in row[:n])
            v = complex(float(row[n]), float(row[n + 1]))
        except (ValueError, IndexError) as exc:
            raise PreconditionError(f"bad row at line {line}: {row}") from exc
        if p in seen:
            raise PreconditionError(f"duplicate lattice point {p} at line {line}")
        seen.add(p)
        pts.append(p)
        vals.append(v)
    K = max((max(abs(c) for c in p) for p in pts), default=0)
    box = box or FrequencyBox(n, K)
    coeffs = np.zeros(box.shape, complex)
    for p, v in zip(pts, vals):
        if max(abs(c) for c in p) > box.L:
            raise PreconditionError(f"lattice point {p} outside the requested box")
        coeffs[box.index(np.array(p))] = v
    return GridFunction(coeffs, box, grid_size)
