"""Asymptotic symbol calculus for toroidal operators.

All expansions use forward differences in xi paired with falling-factorial
derivatives ``D_x^(alpha)`` in x, so on trigonometric x-dependence they
truncate exactly instead of only asymptotically.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EllipticityError, OutOfRangeError, PreconditionError, UndefinedFitError
from .harmonic import GridFunction
from .lattice import FrequencyBox, bracket, factorial, multi_indices, multi_indices_upto
from .symbols import AmplitudeTable, SymbolTable

__all__ = [
    "AsymptoticSeries",
    "DecayFit",
    "compose_symbols",
    "adjoint_symbol",
    "amplitude_to_symbol",
    "parametrix",
    "smooth_cutoff",
    "fit_decay_order",
    "shell_maxima",
]


@dataclass
class AsymptoticSeries:
    """Finite list of ``(order, table)`` terms with strictly decreasing orders."""

    terms: list = field(default_factory=list)

    def __post_init__(self):
        orders = [o for o, _ in self.terms]
        if any(b >= a for a, b in zip(orders, orders[1:])):
            raise PreconditionError(f"term orders must decrease strictly, got {orders}")

    @property
    def m(self) -> float:
        return self.terms[0][0]

    def __len__(self):
        return len(self.terms)

    def component(self, j: int):
        """Term of order ``m - j`` or ``None`` when absent."""
        for order, table in self.terms:
            if abs(order - (self.m - j)) < 1e-12:
                return table
        return None

    def sum(self) -> SymbolTable:
        total = self.terms[0][1]
        for _, t in self.terms[1:]:
            total = total + t
        return total


def _check_pair(a: SymbolTable, b: SymbolTable, d: int):
    if a.N != b.N or a.n != b.n or a.box.K != b.box.K:
        raise PreconditionError("symbol tables must share the grid and the core box")
    margin = min(a.box.margin, b.box.margin)
    if margin < d:
        raise OutOfRangeError(f"expansion of this length needs margin {d}, have {margin}")
    return a.trimmed(a.box.margin - margin), b.trimmed(b.box.margin - margin)


def compose_symbols(a: SymbolTable, b: SymbolTable, M: int) -> SymbolTable:
    """``sum_{|alpha| < M} (1/alpha!) D_xi^alpha a * D_x^(alpha) b``.

    The result lives on the common box with the margin reduced by ``M - 1``.
    """
    d = M - 1
    a, b = _check_pair(a, b, d)
    out_box = a.box.with_margin(a.box.margin - d)
    total = np.zeros((a.N,) * a.n + out_box.shape, complex)
    for alpha in multi_indices_upto(a.n, M - 1):
        db = b.like(b.falling_x(alpha)).difference((0,) * a.n, trim=d)
        total += a.difference(alpha, trim=d) * db / factorial(alpha)
    return SymbolTable(total, out_box, a.m + b.m, min(a.rho, b.rho), max(a.delta, b.delta), check=False)


def adjoint_symbol(a: SymbolTable, M: int) -> SymbolTable:
    """``sum_{|alpha| < M} (1/alpha!) D_xi^alpha D_x^(alpha) conj(a)``."""
    d = M - 1
    if a.box.margin < d:
        raise OutOfRangeError(f"adjoint expansion needs margin {d}")
    c = a.conj()
    total = np.zeros((a.N,) * a.n + a.box.with_margin(a.box.margin - d).shape, complex)
    for alpha in multi_indices_upto(a.n, M - 1):
        total += c.like(c.falling_x(alpha)).difference(alpha, trim=d) / factorial(alpha)
    return SymbolTable(total, a.box.with_margin(a.box.margin - d), a.m, a.rho, a.delta, check=False)


def amplitude_to_symbol(amp: AmplitudeTable, M: int) -> SymbolTable:
    """Reduce an amplitude to a symbol.

    ``sum_{|alpha| < M} (1/alpha!) D_xi^alpha D_y^(alpha) a(x, y, xi) |_{y = x}``.
    """
    d = M - 1
    if amp.box.margin < d:
        raise OutOfRangeError(f"reduction needs margin {d}")
    n = amp.n
    total = np.zeros((amp.N,) * n + amp.box.with_margin(amp.box.margin - d).shape, complex)
    for alpha in multi_indices_upto(n, M - 1):
        diag = amp.diagonal(amp.falling_y(alpha))
        t = SymbolTable(diag, amp.box, amp.m, check=False)
        total += t.difference(alpha, trim=d) / factorial(alpha)
    return SymbolTable(total, amp.box.with_margin(amp.box.margin - d), amp.m, amp.rho, amp.delta, check=False)


def smooth_cutoff(r, N0: float, width: float = 2.0):
    """Smooth step: 0 for ``r < N0``, 1 for ``r >= N0 + width``."""
    t = np.clip((np.asarray(r, dtype=float) - N0) / width, 0.0, 1.0)
    with np.errstate(divide="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def parametrix(A: AsymptoticSeries, M: int, N0: float, C0: float | None = None) -> AsymptoticSeries:
    """First M terms of a parametrix of an elliptic operator.

    ``B_0 = chi / sigma_{A_0}`` with a smooth cutoff chi vanishing for
    ``|xi| < N0``, and for ``N >= 1``

    ``B_N = -1/sigma_{A_0} sum_{k<N} sum_{j<=N-k} sum_{|gamma|=N-j-k}
    (1/gamma!) D_xi^gamma sigma_{A_j} D_x^(gamma) sigma_{B_k}``.

    ``A_j`` is the term of order ``m - j``. Ellipticity requires
    ``|sigma_{A_0}| >= C0 <xi>^m`` for ``|xi| >= N0``; without C0 the
    ratio must stay above 1e-10. Violations raise ``EllipticityError``
    reporting the worst point.
    """
    m = A.m
    d = M - 1
    tables = {}
    for order, t in A.terms:
        j = m - order
        if abs(j - round(j)) > 1e-12:
            raise PreconditionError("term orders must differ from the leading order by integers")
        tables[int(round(j))] = t
    a0 = tables[0]
    margin = min(t.box.margin for t in tables.values())
    if margin < d:
        raise OutOfRangeError(f"parametrix with {M} terms needs margin {d}")
    tables = {j: t.trimmed(t.box.margin - margin) for j, t in tables.items()}
    a0 = tables[0]
    out_box = a0.box.with_margin(margin - d)
    n = a0.n
    sig0 = a0.difference((0,) * n, trim=d)
    pts = out_box.points()
    radius = np.sqrt(np.sum(pts.astype(float) ** 2, axis=-1))
    region = np.broadcast_to(radius >= N0, sig0.shape)
    ratio = np.abs(sig0) / bracket(pts) ** m
    threshold = 1e-10 if C0 is None else C0
    masked = np.where(region, ratio, np.inf)
    worst = np.unravel_index(np.argmin(masked), masked.shape)
    if masked[worst] < threshold:
        raise EllipticityError(
            f"principal symbol too small: ratio {masked[worst]:.3e} below {threshold:.1e}",
            x_index=worst[:n],
            xi=tuple(int(v) for v in pts[worst[n:]]),
        )
    chi = smooth_cutoff(radius, N0)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(region, chi / sig0, 0.0)
    diffs = {}
    for j, t in tables.items():
        for gamma in multi_indices_upto(n, M - 1):
            diffs[(j, gamma)] = t.difference(gamma, trim=d)
    B = [SymbolTable(np.array(inv, dtype=complex), out_box, -m, a0.rho, a0.delta, check=False)]
    for Nn in range(1, M):
        acc = np.zeros_like(inv, dtype=complex)
        for k in range(Nn):
            for j in range(Nn - k + 1):
                if j not in tables:
                    continue
                for gamma in multi_indices(n, Nn - j - k):
                    acc += diffs[(j, gamma)] * B[k].falling_x(gamma) / factorial(gamma)
        B.append(SymbolTable(-inv * acc, out_box, -m - Nn, a0.rho, a0.delta, check=False))
    return AsymptoticSeries([(-m - k, b) for k, b in enumerate(B)])


@dataclass
class DecayFit:
    slope: float
    intercept: float
    radii: np.ndarray
    magnitudes: np.ndarray
    residual: float


def _default_shells(K: int) -> list[int]:
    base = K // 8
    return [base * f for f in (1, 2, 4, 8)]


def shell_maxima(magnitude: np.ndarray, box: FrequencyBox, radii) -> np.ndarray:
    """Largest value of ``magnitude`` (over the box) on each lattice shell ``round(|xi|) = r``."""
    rad = np.sqrt(np.sum(box.points().astype(float) ** 2, axis=-1))
    out = []
    for r in radii:
        sel = np.abs(rad - r) < 0.5
        if not sel.any():
            raise PreconditionError(f"shell of radius {r} is empty")
        out.append(float(np.max(magnitude[sel])))
    return np.array(out)


def fit_decay_order(data, shells=None, box: FrequencyBox | None = None) -> DecayFit:
    """Least-squares slope of ``log max|s|`` against ``log <r>`` over lattice shells.

    ``data`` is a SymbolTable (maximum over x), a GridFunction
    (coefficient moduli) or an array over ``box``. Shells default to
    ``floor(K/8) * (1, 2, 4, 8)``. At least four shells of radius four or
    more are required. All-zero data has no slope and raises
    ``UndefinedFitError``.
    """
    if isinstance(data, SymbolTable):
        box = data.box
        mag = np.max(np.abs(data.values), axis=data.x_axes)
    elif isinstance(data, GridFunction):
        box = data.box
        mag = np.abs(data.coeffs)
    else:
        if box is None:
            raise ValueError("array data needs a box")
        mag = np.abs(np.asarray(data))
        if mag.shape != box.shape:
            mag = np.max(mag, axis=tuple(range(mag.ndim - box.n)))
    radii = np.asarray(shells if shells is not None else _default_shells(box.K), dtype=float)
    if np.sum(radii >= 4) < 4:
        raise PreconditionError("need at least four shells with radius >= 4")
    peaks = shell_maxima(mag, box, radii)
    if np.all(peaks == 0):
        raise UndefinedFitError("all shell maxima are zero; no decay order to fit")
    logs = np.log(np.maximum(peaks, np.finfo(float).tiny))
    lr = np.log(np.sqrt(1.0 + radii**2))
    slope, intercept = np.polyfit(lr, logs, 1)
    resid = float(np.sqrt(np.mean((logs - (slope * lr + intercept)) ** 2)))
    return DecayFit(float(slope), float(intercept), radii, peaks, resid)
