"""Toroidal quantization: symbols to operators and back.

``a(X, D) u(x) = sum_xi exp(i x.xi) a(x, xi) u_hat(xi)``. All routes work
on Fourier coefficients: if ``a_hat(eta, xi)`` are the x-coefficients of
the symbol, the output coefficient at ``omega`` is
``sum_xi a_hat(omega - xi, xi) u_hat(xi)``, which is exact for tabulated
symbols.
"""
from __future__ import annotations

import itertools
from typing import Callable

import numpy as np

from .errors import OutOfRangeError, PreconditionError
from .harmonic import GridFunction, grid_phase
from .lattice import FrequencyBox
from .symbols import AmplitudeTable, SymbolTable, _nyquist_mask, x_frequencies

__all__ = [
    "LinearOperatorHandle",
    "KernelTable",
    "apply_pdo",
    "apply_amplitude",
    "extract_symbol",
    "kernel_of",
    "coefficient_matrix",
    "pdo_operator",
    "amplitude_operator",
]


class LinearOperatorHandle:
    """A linear map between grid functions on fixed boxes.

    Parameters
    ----------
    rule : callable
        ``GridFunction -> GridFunction``.
    box : FrequencyBox
        Input box.
    out_box : FrequencyBox, optional
        Output box (defaults to ``box``).
    matrix : callable, optional
        Returns the coefficient matrix ``(out_box.size, box.size)`` directly.
    """

    def __init__(self, rule: Callable, box: FrequencyBox, out_box: FrequencyBox | None = None,
                 matrix: Callable | None = None, grid_size: int | None = None):
        self.rule = rule
        self.box = box
        self.out_box = out_box or box
        self._matrix = matrix
        self.N = grid_size or box.default_grid_size()

    def __call__(self, u: GridFunction) -> GridFunction:
        if u.box != self.box:
            u = u.resized(self.box)
        return self.rule(u).resized(self.out_box)

    def to_matrix(self) -> np.ndarray:
        if self._matrix is not None:
            return self._matrix()
        cols = []
        for xi in self.box.points().reshape(-1, self.box.n):
            cols.append(self(GridFunction.basis(xi, self.box, self.N)).coeffs.reshape(-1))
        return np.stack(cols, axis=1)

    def compose(self, other: "LinearOperatorHandle") -> "LinearOperatorHandle":
        """``self`` after ``other``."""

        def rule(u):
            return self(other(u))

        return LinearOperatorHandle(rule, other.box, self.out_box, grid_size=other.N)


def _masked_xhat(values: np.ndarray, n: int) -> np.ndarray:
    N = values.shape[0]
    spec = np.fft.fftn(values, axes=tuple(range(n))) / N**n
    for j in range(n):
        shape = [1] * spec.ndim
        shape[j] = N
        spec = spec * _nyquist_mask(N).reshape(shape)
    return spec


def _accumulate(xhat: np.ndarray, weights: np.ndarray, n: int) -> tuple[np.ndarray, FrequencyBox]:
    """``out[xi + eta] += xhat[eta, xi] * weights[xi]`` over all x-frequencies eta.

    Returns coefficients on the input box grown by the x-band ``N/2 - 1``.
    """
    N = xhat.shape[0]
    width = weights.shape[0]
    Lin = (width - 1) // 2
    band = (N - 1) // 2 if N % 2 else N // 2 - 1
    ext = FrequencyBox(n, Lin + band)
    out = np.zeros(ext.shape, complex)
    weighted = xhat * weights[(None,) * n]
    for eta in itertools.product(range(-band, band + 1), repeat=n):
        src = tuple(e % N for e in eta)
        dst = tuple(slice(e + band, e + band + width) for e in eta)
        out[dst] += weighted[src]
    return out, ext


def _finish(coeffs: np.ndarray, ext: FrequencyBox, out_box: FrequencyBox, grid_size=None) -> GridFunction:
    if out_box.L > ext.L:
        full = GridFunction(coeffs, ext).embed(out_box)
        full.truncated_mass = 0.0
        return full if grid_size is None else full.with_grid(max(grid_size, out_box.width))
    kept = coeffs[ext.slices_within(out_box)]
    lost = np.sqrt(max(np.linalg.norm(coeffs) ** 2 - np.linalg.norm(kept) ** 2, 0.0))
    N = grid_size if grid_size and grid_size >= out_box.width else None
    out = GridFunction(kept, out_box, N)
    out.truncated_mass = float(lost)
    return out


def apply_pdo(a: SymbolTable, u: GridFunction, out_box: FrequencyBox | None = None) -> GridFunction:
    """Apply the toroidal quantization of ``a`` to ``u``.

    The symbol is read on the box of ``u``, which must fit in the symbol
    box. The result is truncated to ``out_box`` (default: the box of u)
    and the L2 norm of the dropped coefficients is kept in
    ``truncated_mass``.
    """
    if u.n != a.n:
        raise PreconditionError("symbol and function dimensions differ")
    if u.box.L > a.box.L:
        raise OutOfRangeError(f"function box extent {u.box.L} exceeds symbol box extent {a.box.L}")
    values = a.on_box(FrequencyBox(u.n, u.box.L))
    coeffs, ext = _accumulate(_masked_xhat(values, a.n), u.coeffs, a.n)
    return _finish(coeffs, ext, out_box or u.box, u.N)


def coefficient_matrix(a: SymbolTable, box: FrequencyBox, out_box: FrequencyBox | None = None) -> np.ndarray:
    """Matrix ``M[omega, xi] = a_hat(omega - xi, xi)`` from ``box`` to ``out_box``."""
    out_box = out_box or box
    if box.L > a.box.L:
        raise OutOfRangeError("input box exceeds symbol box")
    n, N = a.n, a.N
    xhat = _masked_xhat(a.on_box(FrequencyBox(n, box.L)), n)
    pin = box.points().reshape(-1, n)
    pout = out_box.points().reshape(-1, n)
    eta = pout[:, None, :] - pin[None, :, :]
    band = (N - 1) // 2 if N % 2 else N // 2 - 1
    valid = np.all(np.abs(eta) <= band, axis=-1)
    flat_x = xhat.reshape((N,) * n + (-1,))
    col = np.broadcast_to(np.arange(pin.shape[0])[None, :], valid.shape)
    idx = tuple(np.mod(eta[..., j], N) for j in range(n)) + (col,)
    return np.where(valid, flat_x[idx], 0.0)


def pdo_operator(a: SymbolTable, box: FrequencyBox, out_box: FrequencyBox | None = None) -> LinearOperatorHandle:
    """Operator handle for ``a(X, D)`` from ``box`` to ``out_box``."""
    out_box = out_box or box

    def rule(u):
        return apply_pdo(a, u, out_box)

    return LinearOperatorHandle(rule, box, out_box, matrix=lambda: coefficient_matrix(a, box, out_box))


def extract_symbol(A: LinearOperatorHandle, box: FrequencyBox, N: int | None = None, **kw) -> SymbolTable:
    """``sigma(x, xi) = exp(-i x.xi) (A e_xi)(x)`` on the N-grid for xi in ``box``."""
    if box.L > A.box.L:
        raise OutOfRangeError("extraction box exceeds the operator input box")
    n = box.n
    N = N or box.default_grid_size()
    values = np.empty((N,) * n + box.shape, complex)
    for pos in itertools.product(range(box.width), repeat=n):
        xi = np.array(pos) - box.L
        out = A(GridFunction.basis(xi, A.box, A.N))
        values[(Ellipsis,) + pos] = out.sample(N) * grid_phase(N, n, xi[None], -1)[..., 0]
    return SymbolTable(values, box, check=kw.pop("check", False), **kw)


def apply_amplitude(a: AmplitudeTable, u: GridFunction, out_box: FrequencyBox | None = None) -> GridFunction:
    """``Op(a) u(x) = sum_xi int exp(i (x - y).xi) a(x, y, xi) u(y) dy``.

    The xi-sum runs over the amplitude box; the y-integral is the grid sum,
    exact when the grid resolves ``a(x, ., xi) u``.
    """
    n, N = a.n, a.N
    if u.n != n:
        raise PreconditionError("amplitude and function dimensions differ")
    us = u.sample(N)
    E = grid_phase(N, n, a.box.points().reshape(-1, n), -1).reshape(N**n, -1)
    vals = a.values.reshape(N**n, N**n, -1)
    c = np.einsum("xyk,y,yk->xk", vals, us.reshape(-1), E, optimize=True) / N**n
    c = c.reshape((N,) * n + a.box.shape)
    coeffs, ext = _accumulate(_masked_xhat(c, n), np.ones(a.box.shape), n)
    return _finish(coeffs, ext, out_box or u.box, u.N)


def amplitude_operator(a: AmplitudeTable, box: FrequencyBox, out_box: FrequencyBox | None = None):
    out_box = out_box or box
    return LinearOperatorHandle(lambda u: apply_amplitude(a, u, out_box), box, out_box)


class KernelTable:
    """Convolution-form kernel ``k(x, v) = sum_xi exp(i v.xi) sigma(x, xi)`` on grid x grid.

    The Schwartz kernel is ``K(x, y) = k(x, x - y)``.
    """

    def __init__(self, values: np.ndarray, n: int):
        self.values = values
        self.n = n
        self.N = values.shape[0]

    def schwartz(self) -> np.ndarray:
        """``K(x, y)`` with shape ``(N,)*n + (N,)*n``."""
        n, N = self.n, self.N
        ix = np.indices((N,) * n)
        out = np.empty((N,) * (2 * n), complex)
        for ypos in itertools.product(range(N), repeat=n):
            v = tuple((ix[j] - ypos[j]) % N for j in range(n))
            out[(Ellipsis,) + ypos] = self.values[tuple(ix) + v]
        return out

    def apply_samples(self, u: GridFunction) -> np.ndarray:
        """Grid values of ``int K(x, y) u(y) dy`` (grid sum)."""
        n, N = self.n, self.N
        K = self.schwartz().reshape(N**n, N**n)
        return (K @ u.sample(N).reshape(-1) / N**n).reshape((N,) * n)

    def symbol(self, box: FrequencyBox) -> SymbolTable:
        """Recover the symbol: the v-transform of ``k(x, .)`` restricted to ``box``."""
        n, N = self.n, self.N
        spec = np.fft.fftn(self.values, axes=tuple(range(n, 2 * n))) / N**n
        idx = np.mod(box.axis(), N)
        sel = (slice(None),) * n + np.ix_(*([idx] * n))
        return SymbolTable(spec[sel], box, check=False)


def kernel_of(a: SymbolTable) -> KernelTable:
    """Kernel of ``a(X, D)`` on the grid of the symbol table."""
    n, N = a.n, a.N
    if a.box.width > N:
        raise PreconditionError("grid too coarse for the symbol box")
    idx = np.mod(a.box.axis(), N)
    folded = np.zeros((N,) * (2 * n), complex)
    folded[(slice(None),) * n + np.ix_(*([idx] * n))] = a.values
    k = np.fft.ifftn(folded, axes=tuple(range(n, 2 * n))) * N**n
    return KernelTable(k, n)
