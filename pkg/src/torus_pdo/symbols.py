"""Toroidal symbol tables, amplitudes and the lattice-to-Euclidean extension.

A toroidal symbol ``a(x, xi)`` is tabulated on the x-grid times a
frequency box. Extension to real frequencies interpolates with a kernel
``F theta`` whose integer samples are the Kronecker delta, so the extended
symbol agrees with the table on the lattice.
"""
from __future__ import annotations

import itertools
import json
import math
from pathlib import Path

import numpy as np

from .errors import KernelTailError, OutOfRangeError, PreconditionError
from .harmonic import grid_points
from .lattice import (
    FrequencyBox,
    bracket,
    difference_array,
    falling_power,
    multi_indices_upto,
    trim_array,
)

__all__ = [
    "ThetaKernel",
    "SymbolTable",
    "AmplitudeTable",
    "EuclideanSymbol",
    "ExtendedSymbol",
    "extend_symbol",
    "restrict_symbol",
    "estimate_class_constants",
    "write_symbol_table",
    "read_symbol_table",
]


def x_frequencies(N: int) -> np.ndarray:
    """Integer frequencies in FFT order."""
    return np.fft.fftfreq(N, d=1.0 / N).round().astype(int)


def _nyquist_mask(N: int) -> np.ndarray:
    keep = np.ones(N)
    if N % 2 == 0:
        keep[N // 2] = 0.0
    return keep


def spectral_multiplier(values: np.ndarray, axes, factors) -> np.ndarray:
    """Apply ``prod_j factors[j](eta_j)`` along the periodic ``axes``.

    ``factors[j]`` maps the integer frequency array to multipliers. The
    Nyquist mode of an even grid is dropped.
    """
    spec = np.fft.fftn(values, axes=axes)
    for ax, fac in zip(axes, factors):
        N = values.shape[ax]
        mult = fac(x_frequencies(N)) * _nyquist_mask(N)
        shape = [1] * values.ndim
        shape[ax] = N
        spec = spec * mult.reshape(shape)
    return np.fft.ifftn(spec, axes=axes)


def _falling_factor(a: int, sign: int):
    return lambda eta: falling_power(sign * eta.astype(float), a)


def _derivative_factor(b: int):
    return lambda eta: (1j * eta) ** b


class ThetaKernel:
    """Interpolation kernel ``F theta`` for extending lattice data to R^n.

    ``theta(x) = prod_j theta_1(x_j)`` where ``theta_1`` is even, smooth,
    supported in ``[-2 pi, 2 pi]`` and satisfies
    ``theta_1(y) + theta_1(2 pi - y) = 1`` on ``[0, 2 pi]``. Hence its
    periodization is identically 1 and ``F theta(k) = delta_{k,0}`` on Z^n.

    ``theta_1(x) = int_{|x|}^{2 pi} h(v - pi) dv`` for a normalized bump h on
    ``(-pi, pi)``, which gives ``F theta_1(s) = sinc(s) * h_hat(s)`` with
    ``h_hat(s) = int h(u) cos(s u) du``.

    Parameters
    ----------
    n : int
        Dimension.
    H : int
        Truncation window: lattice points within ``H`` (max norm) contribute.
    nodes : int
        Quadrature resolution for ``h_hat`` and its derivatives.
    tail_tol : float
        Largest admissible ``|F theta_1(s)|`` for ``|s| >= H``.
    """

    def __init__(self, n: int = 1, H: int = 12, nodes: int = 4096, tail_tol: float = 1e-10,
                 width: float = 0.6, flatness: float = 8.0):
        if H < 1:
            raise ValueError("window H must be positive")
        self.n = n
        self.H = int(H)
        self.nodes = int(nodes)
        self.width = width
        self.flatness = flatness
        u = np.linspace(-np.pi, np.pi, self.nodes + 1)[1:-1]
        self._u = u
        self._du = 2 * np.pi / self.nodes
        raw = self._bump(u)
        self._norm = raw.sum() * self._du
        self._h = raw / self._norm
        t, w = np.polynomial.legendre.leggauss(96)
        self._gl_t = 0.5 * (t + 1.0)
        self._gl_w = 0.5 * w
        self.tail_tol = tail_tol
        self.tail = self.measure_tail()
        if self.tail > tail_tol:
            raise KernelTailError(
                f"kernel tail {self.tail:.2e} beyond window H={self.H} exceeds {tail_tol:.1e}"
            )

    def _bump(self, u):
        r = np.clip((u / np.pi) ** 2, 0.0, 1.0 - 1e-300)
        return np.exp(-0.5 * (u / self.width) ** 2 - self.flatness / np.sqrt(1.0 - r))

    def refined(self, factor: int = 10) -> "ThetaKernel":
        """Same kernel with ``factor`` times the quadrature resolution."""
        return ThetaKernel(self.n, self.H, self.nodes * factor, self.tail_tol, self.width, self.flatness)

    def h_hat(self, s, order: int = 0):
        s = np.asarray(s, dtype=float)
        flat = s.reshape(-1)
        out = np.empty(flat.shape)
        weight = self._h * self._u**order * self._du
        chunk = max(1, 4_000_000 // self._u.size)
        for a in range(0, flat.size, chunk):
            arg = np.multiply.outer(flat[a : a + chunk], self._u) + order * np.pi / 2
            out[a : a + chunk] = np.cos(arg) @ weight
        return out.reshape(s.shape)

    def sinc(self, s, order: int = 0):
        """``sinc(s) = sin(pi s) / (pi s)`` and its derivatives."""
        s = np.asarray(s, dtype=float)
        if order == 0:
            return np.sinc(s)
        t = self._gl_t
        arg = np.multiply.outer(s, np.pi * t) + order * np.pi / 2
        return np.cos(arg) @ (self._gl_w * (np.pi * t) ** order)

    def ft1(self, s, order: int = 0):
        """``d^order/ds^order F theta_1(s)`` in one variable."""
        s = np.asarray(s, dtype=float)
        out = np.zeros(s.shape)
        for j in range(order + 1):
            out = out + math.comb(order, j) * self.sinc(s, j) * self.h_hat(s, order - j)
        return out

    def ft(self, s, alpha=None):
        """``D^alpha F theta(s)`` for points ``s`` of shape ``(..., n)``."""
        s = np.asarray(s, dtype=float)
        alpha = alpha or (0,) * self.n
        out = np.ones(s.shape[:-1])
        for j in range(self.n):
            out = out * self.ft1(s[..., j], alpha[j])
        return out

    def theta1(self, x):
        """Spatial profile ``theta_1`` (vectorized)."""
        x = np.abs(np.asarray(x, dtype=float))
        out = np.zeros(x.shape)
        inside = x < 2 * np.pi
        r = x[inside]
        # mass of h on [r - pi, pi] by Gauss-Legendre on that interval
        t, w = np.polynomial.legendre.leggauss(200)
        lo = r - np.pi
        half = 0.5 * (np.pi - lo)
        nodes = lo[:, None] + half[:, None] * (t[None, :] + 1.0)
        h = self._bump(nodes) / self._norm
        out[inside] = (h * w[None, :]).sum(axis=1) * half
        return out

    def theta(self, x):
        """``theta(x) = prod theta_1(x_j)``; x has shape ``(..., n)``."""
        x = np.asarray(x, dtype=float)
        out = np.ones(x.shape[:-1])
        for j in range(self.n):
            out = out * self.theta1(x[..., j])
        return out

    def periodized(self, x):
        """``sum_k theta(x + 2 pi k)``, identically 1 by construction."""
        x = np.asarray(x, dtype=float)
        total = np.zeros(x.shape[:-1])
        for k in itertools.product(range(-2, 3), repeat=self.n):
            total = total + self.theta(x + 2 * np.pi * np.asarray(k))
        return total

    def measure_tail(self, upto: float | None = None) -> float:
        upto = upto or 4.0 * self.H + 8
        s = np.linspace(self.H, upto, int(64 * (upto - self.H)) + 1)
        return float(np.max(np.abs(self.ft1(s))))

    def table(self, step: float = 1.0 / 64):
        """Tabulated ``F theta_1`` on ``[-H, H]`` for reporting."""
        s = np.arange(-self.H, self.H + step / 2, step)
        return s, self.ft1(s)

    def weights(self, eta, order: int = 0):
        """Window offsets and weights for one axis.

        For real points ``eta`` (shape P) returns integer lattice points
        ``kappa`` of shape ``(P, W)`` with ``|eta - kappa| <= H`` and the
        weights ``F theta_1^(order)(eta - kappa)``.
        """
        eta = np.asarray(eta, dtype=float)
        start = np.ceil(eta - self.H - 1e-12).astype(int)
        offs = np.arange(2 * self.H + 1)
        kappa = start[:, None] + offs[None, :]
        s = eta[:, None] - kappa
        # lattice-valued points repeat the same few offsets; evaluate each once
        uniq, inverse = np.unique(s, return_inverse=True)
        w = self.ft1(uniq, order)[inverse.reshape(s.shape)]
        w[np.abs(s) > self.H + 1e-12] = 0.0
        return kappa, w


class SymbolTable:
    """Tabulated toroidal symbol on the x-grid times a frequency box.

    ``values`` has shape ``(N,)*n + box.shape``: x axes first, then xi axes.
    ``m, rho, delta`` record the declared class ``S^m_{rho, delta}``.
    The x-dependence must be resolved by the grid: on construction the
    energy in the top half of each x-spectrum must stay below ``tail_tol``
    times the row norm (skip with ``check=False``).
    """

    def __init__(self, values, box: FrequencyBox, m: float = 0.0, rho: float = 1.0,
                 delta: float = 0.0, check: bool = True, tail_tol: float = 1e-8):
        values = np.asarray(values, dtype=complex)
        n = box.n
        N = values.shape[0]
        if values.shape != (N,) * n + box.shape:
            raise ValueError(f"values shape {values.shape} does not match grid {N} and box {box.shape}")
        if not 0 <= delta < rho <= 1:
            raise PreconditionError("class parameters need 0 <= delta < rho <= 1")
        self.values = values
        self.box = box
        self.n = n
        self.N = N
        self.m = float(m)
        self.rho = float(rho)
        self.delta = float(delta)
        if check:
            self.check_resolution(tail_tol)

    @property
    def x_axes(self):
        return tuple(range(self.n))

    @property
    def xi_axes(self):
        return tuple(range(self.n, 2 * self.n))

    @classmethod
    def from_function(cls, f, box: FrequencyBox, N: int | None = None, **kw) -> "SymbolTable":
        """Tabulate ``f(x, xi)``; x and xi are tuples of broadcastable arrays."""
        N = N or box.default_grid_size()
        n = box.n
        x = tuple(g.reshape(g.shape + (1,) * n) for g in grid_points(N, n))
        xi = tuple(g.reshape((1,) * n + g.shape) for g in box.grid())
        values = np.broadcast_to(np.asarray(f(x, xi), dtype=complex), (N,) * n + box.shape)
        return cls(np.array(values), box, **kw)

    def like(self, values, box: FrequencyBox | None = None, m: float | None = None, check=False):
        return SymbolTable(values, box or self.box, self.m if m is None else m, self.rho, self.delta,
                           check=check)

    def check_resolution(self, tail_tol: float = 1e-8) -> float:
        spec = np.fft.fftn(self.values, axes=self.x_axes)
        eta = np.abs(x_frequencies(self.N))
        high = eta >= self.N // 4
        mask = np.zeros((self.N,) * self.n, bool)
        for j in range(self.n):
            shape = [1] * self.n
            shape[j] = self.N
            mask = mask | high.reshape(shape)
        mask = mask.reshape(mask.shape + (1,) * self.n)
        tail = np.sqrt(np.sum(np.abs(np.where(mask, spec, 0)) ** 2, axis=self.x_axes))
        total = np.sqrt(np.sum(np.abs(spec) ** 2, axis=self.x_axes))
        ratio = float(np.max(tail / np.maximum(total, np.finfo(float).tiny)))
        if ratio > tail_tol:
            raise PreconditionError(f"x-grid of size {self.N} under-resolves the symbol (tail {ratio:.2e})")
        return ratio

    def xhat(self) -> np.ndarray:
        """x-Fourier coefficients ``a_hat(eta, xi)`` in FFT order along x axes."""
        spec = np.fft.fftn(self.values, axes=self.x_axes) / self.N**self.n
        for j in range(self.n):
            shape = [1] * spec.ndim
            shape[j] = self.N
            spec = spec * _nyquist_mask(self.N).reshape(shape)
        return spec

    def x_band(self, rel_tol: float = 1e-13) -> int:
        """Largest x-frequency carrying more than ``rel_tol`` of the peak coefficient."""
        spec = np.abs(self.xhat())
        peak = spec.max()
        if peak == 0:
            return 0
        eta = np.abs(x_frequencies(self.N))
        band = 0
        for j in range(self.n):
            red = spec.max(axis=tuple(a for a in range(spec.ndim) if a != j))
            live = eta[red > rel_tol * peak]
            band = max(band, int(live.max()) if live.size else 0)
        return band

    def falling_x(self, alpha, sign: int = 1) -> np.ndarray:
        """``D_x^(alpha)`` applied along the x axes (sign -1 gives ``(-D_x)^(alpha)``)."""
        if not any(alpha):
            return self.values
        return spectral_multiplier(self.values, self.x_axes, [_falling_factor(a, sign) for a in alpha])

    def x_derivative(self, beta) -> np.ndarray:
        """``partial_x^beta`` along the x axes."""
        if not any(beta):
            return self.values
        return spectral_multiplier(self.values, self.x_axes, [_derivative_factor(b) for b in beta])

    def difference(self, alpha, trim: int | None = None) -> np.ndarray:
        """Forward difference ``D_xi^alpha`` on the box with margin reduced by ``trim``."""
        d = max(alpha) if trim is None else trim
        if d > self.box.margin:
            raise OutOfRangeError(f"difference of order {tuple(alpha)} needs margin {d}, have {self.box.margin}")
        diff = difference_array(self.values, alpha, self.xi_axes)
        index = [slice(None)] * self.n
        for a in alpha:
            index.append(slice(d, d + self.box.width - 2 * d))
        return diff[tuple(index)]

    def trimmed(self, d: int) -> "SymbolTable":
        """Same symbol on a box with the margin reduced by d."""
        if d > self.box.margin:
            raise OutOfRangeError(f"cannot trim {d} from margin {self.box.margin}")
        return self.like(trim_array(self.values, d, self.xi_axes), self.box.with_margin(self.box.margin - d))

    def core_values(self) -> np.ndarray:
        return self.values[(slice(None),) * self.n + self.box.core_slices()]

    def on_box(self, box: FrequencyBox) -> np.ndarray:
        """Values restricted to a smaller box."""
        return self.values[(slice(None),) * self.n + self.box.slices_within(box)]

    def conj(self) -> "SymbolTable":
        return self.like(np.conj(self.values))

    def _align(self, other: "SymbolTable"):
        if other.N != self.N or other.n != self.n or other.box.K != self.box.K:
            raise PreconditionError("symbol tables live on different grids or boxes")
        margin = min(self.box.margin, other.box.margin)
        return self.trimmed(self.box.margin - margin), other.trimmed(other.box.margin - margin)

    def __add__(self, other):
        if isinstance(other, SymbolTable):
            a, b = self._align(other)
            return a.like(a.values + b.values, m=max(a.m, b.m))
        return self.like(self.values + other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, SymbolTable):
            a, b = self._align(other)
            return a.like(a.values - b.values, m=max(a.m, b.m))
        return self.like(self.values - other)

    def __mul__(self, other):
        if isinstance(other, SymbolTable):
            a, b = self._align(other)
            return a.like(a.values * b.values, m=a.m + b.m)
        return self.like(self.values * other)

    __rmul__ = __mul__

    def __neg__(self):
        return self.like(-self.values)

    def __repr__(self):
        return f"SymbolTable(n={self.n}, N={self.N}, K={self.box.K}, margin={self.box.margin}, m={self.m})"


class AmplitudeTable:
    """Amplitude ``a(x, y, xi)`` on the x-grid, the y-grid and a frequency box.

    ``values`` has shape ``(N,)*n + (N,)*n + box.shape``.
    """

    def __init__(self, values, box: FrequencyBox, m: float = 0.0, rho: float = 1.0, delta: float = 0.0):
        values = np.asarray(values, dtype=complex)
        n = box.n
        N = values.shape[0]
        if values.shape != (N,) * (2 * n) + box.shape:
            raise ValueError("amplitude values have the wrong shape")
        self.values = values
        self.box = box
        self.n = n
        self.N = N
        self.m = float(m)
        self.rho = float(rho)
        self.delta = float(delta)

    @property
    def x_axes(self):
        return tuple(range(self.n))

    @property
    def y_axes(self):
        return tuple(range(self.n, 2 * self.n))

    @property
    def xi_axes(self):
        return tuple(range(2 * self.n, 3 * self.n))

    @classmethod
    def from_function(cls, f, box: FrequencyBox, N: int | None = None, **kw) -> "AmplitudeTable":
        """Tabulate ``f(x, y, xi)`` with tuples of broadcastable arrays."""
        N = N or box.default_grid_size()
        n = box.n
        g = grid_points(N, n)
        x = tuple(a.reshape(a.shape + (1,) * (2 * n)) for a in g)
        y = tuple(a.reshape((1,) * n + a.shape + (1,) * n) for a in g)
        xi = tuple(a.reshape((1,) * (2 * n) + a.shape) for a in box.grid())
        shape = (N,) * (2 * n) + box.shape
        return cls(np.array(np.broadcast_to(np.asarray(f(x, y, xi), dtype=complex), shape)), box, **kw)

    @classmethod
    def from_symbol(cls, a: SymbolTable, slot: str = "x") -> "AmplitudeTable":
        """Amplitude depending only on x (``slot='x'``) or only on y."""
        n = a.n
        if slot == "x":
            v = a.values.reshape((a.N,) * n + (1,) * n + a.box.shape)
        else:
            v = a.values.reshape((1,) * n + (a.N,) * n + a.box.shape)
        v = np.broadcast_to(v, (a.N,) * (2 * n) + a.box.shape)
        return cls(np.array(v), a.box, a.m, a.rho, a.delta)

    def falling_y(self, alpha, sign: int = 1) -> np.ndarray:
        if not any(alpha):
            return self.values
        return spectral_multiplier(self.values, self.y_axes, [_falling_factor(a, sign) for a in alpha])

    def diagonal(self, values: np.ndarray | None = None) -> np.ndarray:
        """Restrict to ``y = x``; returns an array shaped like a symbol table."""
        v = self.values if values is None else values
        n, N = self.n, self.N
        idx = np.indices((N,) * n)
        sel = tuple(idx) + tuple(idx)
        return v[sel]

    def trimmed(self, d: int) -> "AmplitudeTable":
        if d > self.box.margin:
            raise OutOfRangeError(f"cannot trim {d} from margin {self.box.margin}")
        return AmplitudeTable(trim_array(self.values, d, self.xi_axes), self.box.with_margin(self.box.margin - d),
                              self.m, self.rho, self.delta)


class EuclideanSymbol:
    """Symbol on ``T^n x R^n`` given by an evaluation rule.

    ``func(x, eta)`` takes tuples of broadcastable coordinate arrays.
    """

    provenance = "analytic"

    def __init__(self, func, n: int, m: float = 0.0, rho: float = 1.0, delta: float = 0.0):
        self.func = func
        self.n = n
        self.m = m
        self.rho = rho
        self.delta = delta

    def __call__(self, x, eta):
        return self.func(x, eta)

    def on_grid(self, eta, N: int, alpha=None) -> np.ndarray:
        """Values on the N-grid at real points ``eta`` of shape ``(P, n)``."""
        if alpha is not None and any(alpha):
            raise NotImplementedError("derivatives of analytic symbols are not tabulated")
        n = self.n
        eta = np.asarray(eta, dtype=float).reshape(-1, n)
        x = tuple(g[..., None] for g in grid_points(N, n))
        e = tuple(eta[:, j].reshape((1,) * n + (-1,)) for j in range(n))
        return np.array(np.broadcast_to(np.asarray(self.func(x, e), complex), (N,) * n + (eta.shape[0],)))


class ExtendedSymbol(EuclideanSymbol):
    """``a(x, eta) = sum_kappa F theta(eta - kappa) a_table(x, kappa)``.

    The sum is truncated to ``|eta - kappa| <= H`` and evaluated on the
    grid of the source table. Valid for ``|eta_j| <= L - H`` where L is the
    extent of the source box.
    """

    provenance = "extended"

    def __init__(self, table: SymbolTable, kernel: ThetaKernel):
        if kernel.n != table.n:
            raise ValueError("kernel and table dimensions differ")
        super().__init__(None, table.n, table.m, table.rho, table.delta)
        self.table = table
        self.kernel = kernel
        self.N = table.N

    @property
    def reach(self) -> int:
        """Largest ``|eta_j|`` at which the extension is defined."""
        return self.table.box.L - self.kernel.H

    def on_grid(self, eta, N: int | None = None, alpha=None) -> np.ndarray:
        """``partial_eta^alpha a(x, eta)`` on the table grid; ``eta`` has shape ``(P, n)``."""
        if N not in (None, self.N):
            raise PreconditionError("extended symbols are evaluated on their source grid")
        n = self.n
        alpha = alpha or (0,) * n
        eta = np.asarray(eta, dtype=float).reshape(-1, n)
        if np.any(np.abs(eta) > self.reach + 1e-9):
            raise OutOfRangeError(f"extension reaches |eta| <= {self.reach}; asked for {np.abs(eta).max():.3f}")
        L = self.table.box.L
        vals = self.table.values
        P = eta.shape[0]
        W = 2 * self.kernel.H + 1
        out = np.empty((self.N,) * n + (P,), dtype=complex)
        per_point = self.N**n * W**n
        chunk = max(1, 20_000_000 // per_point)
        for a in range(0, P, chunk):
            e = eta[a : a + chunk]
            ks, ws = zip(*(self.kernel.weights(e[:, j], alpha[j]) for j in range(n)))
            if n == 1:
                block = vals[:, ks[0] + L]  # (N, p, W)
                res = np.einsum("xpw,pw->xp", block, ws[0])
            elif n == 2:
                idx0 = (ks[0] + L)[:, :, None]
                idx1 = (ks[1] + L)[:, None, :]
                block = vals[:, :, idx0, idx1]  # (N, N, p, W, W)
                res = np.einsum("xypvw,pv,pw->xyp", block, ws[0], ws[1])
            else:
                idx0 = (ks[0] + L)[:, :, None, None]
                idx1 = (ks[1] + L)[:, None, :, None]
                idx2 = (ks[2] + L)[:, None, None, :]
                block = vals[:, :, :, idx0, idx1, idx2]
                res = np.einsum("xyzpuvw,pu,pv,pw->xyzp", block, ws[0], ws[1], ws[2])
            out[..., a : a + chunk] = res
        return out

    def on_field(self, eta, alpha=None) -> np.ndarray:
        """``partial_eta^alpha a(x, eta(x))`` for x-dependent points.

        ``eta`` has shape ``(N,)*n + S + (n,)``: one real frequency per grid
        point x and per entry of S. Returns shape ``(N,)*n + S``.
        """
        n, N = self.n, self.N
        alpha = alpha or (0,) * n
        eta = np.asarray(eta, dtype=float)
        S = eta.shape[n:-1]
        eta = eta.reshape((N,) * n + (-1, n))
        if np.any(np.abs(eta) > self.reach + 1e-9):
            raise OutOfRangeError(f"extension reaches |eta| <= {self.reach}; asked for {np.abs(eta).max():.3f}")
        L = self.table.box.L
        P = eta.shape[n]
        W = 2 * self.kernel.H + 1
        out = np.empty((N,) * n + (P,), dtype=complex)
        chunk = max(1, 20_000_000 // (N**n * W**n))
        grid_idx = np.indices((N,) * n)
        for a in range(0, P, chunk):
            e = eta[..., a : a + chunk, :]
            p = e.shape[n]
            idx = [g.reshape((N,) * n + (1,) * (n + 1)) for g in grid_idx]
            weight = 1.0
            for j in range(n):
                kappa, w = self.kernel.weights(e[..., j].reshape(-1), alpha[j])
                shape = (N,) * n + (p,) + tuple(W if i == j else 1 for i in range(n))
                idx.append((kappa + L).reshape(shape))
                weight = weight * w.reshape(shape)
            block = self.table.values[tuple(idx)]
            out[..., a : a + chunk] = np.sum(block * weight, axis=tuple(range(n + 1, 2 * n + 1)))
        return out.reshape((N,) * n + S)

    def __call__(self, x, eta):
        """Evaluate at arbitrary points by trigonometric interpolation in x.

        ``x`` and ``eta`` have shape ``(..., n)`` and broadcast together.
        """
        x = np.asarray(x, dtype=float)
        eta = np.asarray(eta, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], eta.shape[:-1])
        x = np.broadcast_to(x, shape + (self.n,)).reshape(-1, self.n)
        eta = np.broadcast_to(eta, shape + (self.n,)).reshape(-1, self.n)
        grid_vals = self.on_grid(eta)  # (N..., P)
        spec = np.fft.fftn(grid_vals, axes=tuple(range(self.n))) / self.N**self.n
        freqs = np.stack(np.meshgrid(*([x_frequencies(self.N)] * self.n), indexing="ij"), -1).reshape(-1, self.n)
        spec = spec.reshape(-1, spec.shape[-1])
        out = np.einsum("fp,pf->p", spec, np.exp(1j * x @ freqs.T))
        return out.reshape(shape)


def extend_symbol(a: SymbolTable, kernel: ThetaKernel | None = None) -> ExtendedSymbol:
    """Extension of a toroidal symbol to real frequencies."""
    kernel = kernel or ThetaKernel(a.n)
    return ExtendedSymbol(a, kernel)


def restrict_symbol(b: EuclideanSymbol, box: FrequencyBox, N: int | None = None, check: bool = False) -> SymbolTable:
    """Tabulate a Euclidean symbol on the lattice points of ``box``."""
    if isinstance(b, ExtendedSymbol):
        N = b.N if N is None else N
        vals = b.on_grid(box.points().reshape(-1, box.n), N)
    else:
        N = N or box.default_grid_size()
        vals = b.on_grid(box.points().reshape(-1, box.n), N)
    vals = vals.reshape((N,) * box.n + box.shape)
    return SymbolTable(vals, box, b.m, b.rho, b.delta, check=check)


def estimate_class_constants(a: SymbolTable, alpha_max: int, beta_max: int) -> dict:
    """Empirical class constants on the tabulated region.

    For every ``|alpha| <= alpha_max`` and ``|beta| <= beta_max`` returns
    ``sup |D_xi^alpha partial_x^beta a| <xi>^{-m + rho |alpha| - delta |beta|}``
    over the grid and the box with margin reduced by ``alpha_max``.
    """
    if alpha_max > a.box.margin:
        raise OutOfRangeError(f"estimating differences of order {alpha_max} needs margin {alpha_max}")
    n = a.n
    inner = a.box.with_margin(a.box.margin - alpha_max)
    w = bracket(inner.points())
    out = {}
    for beta in multi_indices_upto(n, beta_max):
        derived = a.like(a.x_derivative(beta), check=False)
        for alpha in multi_indices_upto(n, alpha_max):
            d = derived.difference(alpha, trim=alpha_max)
            weight = w ** (-a.m + a.rho * sum(alpha) - a.delta * sum(beta))
            out[(tuple(alpha), tuple(beta))] = float(np.max(np.abs(d) * weight))
    return out


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def write_symbol_table(a: SymbolTable, path) -> None:
    """CSV ``x_1..x_n,xi_1..xi_n,re,im`` plus a JSON sidecar with class and grid data."""
    path = Path(path)
    n = a.n
    xs = np.stack(grid_points(a.N, n), -1).reshape(-1, n)
    pts = a.box.points().reshape(-1, n)
    vals = a.values.reshape(xs.shape[0], pts.shape[0])
    with open(path, "w") as fh:
        fh.write(",".join([f"x_{j + 1}" for j in range(n)] + [f"xi_{j + 1}" for j in range(n)] + ["re", "im"]))
        fh.write("\n")
        for i, x in enumerate(xs):
            xtxt = ",".join(repr(float(v)) for v in x)
            for p, v in zip(pts, vals[i]):
                fh.write(f"{xtxt},{','.join(str(int(c)) for c in p)},{float(v.real)!r},{float(v.imag)!r}\n")
    meta = {"m": a.m, "rho": a.rho, "delta": a.delta, "K": a.box.K, "margin": a.box.margin, "N": a.N, "n": n}
    _sidecar(path).write_text(json.dumps(meta, indent=2))


def read_symbol_table(path) -> SymbolTable:
    """Load a table written by ``write_symbol_table``; duplicate points are rejected."""
    path = Path(path)
    meta = json.loads(_sidecar(path).read_text())
    n, N = int(meta["n"]), int(meta["N"])
    box = FrequencyBox(n, int(meta["K"]), int(meta["margin"]))
    values = np.zeros((N,) * n + box.shape, complex)
    seen = np.zeros(values.shape, bool)
    step = 2 * np.pi / N
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if len(header) != 2 * n + 2:
            raise PreconditionError("symbol table header does not match the sidecar dimension")
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.strip().split(",")
            xi_idx = tuple(int(parts[n + j]) + box.L for j in range(n))
            x_idx = tuple(int(round(float(parts[j]) / step)) % N for j in range(n))
            key = x_idx + xi_idx
            if seen[key]:
                raise PreconditionError(f"duplicate entry at line {line_no}")
            seen[key] = True
            values[key] = complex(float(parts[2 * n]), float(parts[2 * n + 1]))
    if not seen.all():
        raise PreconditionError("symbol table file is incomplete")
    return SymbolTable(values, box, meta["m"], meta["rho"], meta["delta"], check=False)
