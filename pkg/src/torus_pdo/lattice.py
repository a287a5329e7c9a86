"""Multi-indices, frequency boxes and the difference calculus on Z^n.

Differences act on functions of the lattice variable. The forward
difference in direction j is ``p(xi + e_j) - p(xi)`` and the backward
difference is ``p(xi) - p(xi - e_j)``. Falling factorials
``theta^(alpha)`` play the role that monomials play for derivatives.
"""
from __future__ import annotations

import itertools
import math
from fractions import Fraction
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .errors import OutOfRangeError

MAX_ORDER = 12
_INT64_MAX = 2**63 - 1


def _check_int64(value: int) -> int:
    if abs(value) > _INT64_MAX:
        raise OverflowError(f"integer {value} does not fit in 64 bits")
    return value


class MultiIndex(tuple):
    """Non-negative integer multi-index."""

    def __new__(cls, entries):
        if isinstance(entries, (int, np.integer)):
            entries = (entries,)
        entries = tuple(int(e) for e in entries)
        if any(e < 0 for e in entries):
            raise ValueError(f"multi-index entries must be non-negative, got {entries}")
        return super().__new__(cls, entries)

    @property
    def order(self) -> int:
        return sum(self)

    @property
    def n(self) -> int:
        return len(self)

    def factorial(self) -> int:
        return factorial(self)

    def below(self) -> Iterator["MultiIndex"]:
        """All beta with beta <= alpha componentwise."""
        for beta in itertools.product(*(range(a + 1) for a in self)):
            yield MultiIndex(beta)

    def __add__(self, other):
        return MultiIndex(a + b for a, b in zip(self, other))

    def __sub__(self, other):
        return MultiIndex(a - b for a, b in zip(self, other))


def multi_indices(n: int, order: int) -> list[MultiIndex]:
    """All multi-indices in n variables with ``|alpha| == order``."""
    out = []
    for combo in itertools.product(range(order + 1), repeat=n):
        if sum(combo) == order:
            out.append(MultiIndex(combo))
    return out


def multi_indices_upto(n: int, order: int) -> list[MultiIndex]:
    """All multi-indices with ``|alpha| <= order``, sorted by order."""
    return [a for k in range(order + 1) for a in multi_indices(n, k)]


def leq(beta, alpha) -> bool:
    return all(b <= a for b, a in zip(beta, alpha))


def _check_order(alpha) -> None:
    if sum(alpha) > MAX_ORDER:
        raise ValueError(f"|alpha| = {sum(alpha)} exceeds the supported maximum {MAX_ORDER}")


def factorial(alpha) -> int:
    alpha = MultiIndex(alpha)
    _check_order(alpha)
    out = 1
    for a in alpha:
        out *= math.factorial(a)
    return _check_int64(out)


def binomial(alpha, beta) -> int:
    """Multi-binomial coefficient; zero unless beta <= alpha."""
    out = 1
    for a, b in zip(alpha, beta):
        if b < 0 or b > a:
            return 0
        out *= math.comb(a, b)
    return _check_int64(out)


def falling_factorial(theta, alpha) -> int:
    """``prod_j theta_j (theta_j - 1) ... (theta_j - alpha_j + 1)`` for integer theta."""
    alpha = MultiIndex(alpha)
    _check_order(alpha)
    theta = np.atleast_1d(np.asarray(theta, dtype=np.int64))
    if theta.size != len(alpha):
        raise ValueError("theta and alpha differ in dimension")
    out = 1
    for t, a in zip(theta.tolist(), alpha):
        for r in range(a):
            out *= t - r
        _check_int64(out)
    return _check_int64(out)


def falling_power(theta, k: int):
    """Falling factorial of a real or complex array in one variable."""
    theta = np.asarray(theta)
    out = np.ones(theta.shape, dtype=np.result_type(theta.dtype, float))
    for r in range(k):
        out = out * (theta - r)
    return out


def bracket(xi):
    """Japanese bracket ``sqrt(1 + |xi|^2)``; the last axis holds coordinates."""
    xi = np.asarray(xi, dtype=float)
    return np.sqrt(1.0 + np.sum(xi * xi, axis=-1))


@dataclass(frozen=True)
class FrequencyBox:
    """Lattice points with ``|xi_j| <= K + margin`` in dimension n.

    The core ``|xi_j| <= K`` carries the data of interest, the margin is
    room for difference stencils. Arrays over a box use index ``xi + L``
    along each axis where ``L = K + margin``.
    """

    n: int
    K: int
    margin: int = 0

    def __post_init__(self):
        if self.n not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.n}")
        if self.K < 0 or self.margin < 0:
            raise ValueError("K and margin must be non-negative")

    @property
    def L(self) -> int:
        return self.K + self.margin

    @property
    def width(self) -> int:
        return 2 * self.L + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.width,) * self.n

    @property
    def size(self) -> int:
        return self.width**self.n

    def axis(self) -> np.ndarray:
        return np.arange(-self.L, self.L + 1)

    def grid(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.axis()] * self.n), indexing="ij"))

    def points(self) -> np.ndarray:
        return np.stack(self.grid(), axis=-1)

    def contains(self, xi) -> np.ndarray:
        xi = np.asarray(xi)
        return np.all(np.abs(xi) <= self.L, axis=-1)

    def index(self, xi) -> tuple:
        xi = np.asarray(xi, dtype=int)
        return tuple(xi[..., j] + self.L for j in range(self.n))

    def core_slices(self) -> tuple[slice, ...]:
        s = slice(self.margin, self.margin + 2 * self.K + 1)
        return (s,) * self.n

    def core(self) -> "FrequencyBox":
        return FrequencyBox(self.n, self.K, 0)

    def with_margin(self, margin: int) -> "FrequencyBox":
        return FrequencyBox(self.n, self.K, margin)

    def grown(self, d: int) -> "FrequencyBox":
        """Box with the core enlarged by d and no margin."""
        return FrequencyBox(self.n, self.L + d, 0)

    def default_grid_size(self) -> int:
        """Smallest power of two with at least ``3L + 1`` points per axis."""
        need = 3 * self.L + 1
        return 1 << max(need - 1, 1).bit_length()

    def slices_within(self, other: "FrequencyBox") -> tuple[slice, ...]:
        """Slices selecting ``other`` (a smaller box) from arrays over ``self``."""
        if other.L > self.L or other.n != self.n:
            raise OutOfRangeError(f"box with extent {other.L} does not fit in extent {self.L}")
        off = self.L - other.L
        return (slice(off, off + other.width),) * self.n


def trim_array(values: np.ndarray, d: int, axes) -> np.ndarray:
    """Drop d entries from both ends along each axis in ``axes``."""
    if d == 0:
        return values
    index = [slice(None)] * values.ndim
    for ax in axes:
        if values.shape[ax] <= 2 * d:
            raise OutOfRangeError("box margin too small for the requested trim")
        index[ax] = slice(d, values.shape[ax] - d)
    return values[tuple(index)]


def difference_array(values: np.ndarray, alpha, axes) -> np.ndarray:
    """Forward difference of order alpha along ``axes``.

    The result is shorter by ``alpha_j`` at the upper end of axis j, so
    entry i of the output is the difference at the point with index i.
    """
    out = values
    for a, ax in zip(alpha, axes):
        for _ in range(a):
            out = np.diff(out, axis=ax)
    return out


class LatticeFunction:
    """A function on a finite part of Z^n.

    Parameters
    ----------
    func : callable
        Maps an integer array of shape ``(..., n)`` to values of shape ``(...)``.
    box : FrequencyBox or None
        Declared domain. Evaluation outside it raises ``OutOfRangeError``.
        ``None`` means the rule is valid everywhere.
    """

    def __init__(self, func: Callable, box: FrequencyBox | None = None, n: int | None = None):
        self.func = func
        self.box = box
        if box is not None:
            n = box.n
        if n is None:
            raise ValueError("dimension needed when no box is given")
        self.n = n

    @classmethod
    def from_array(cls, values, box: FrequencyBox) -> "LatticeFunction":
        values = np.asarray(values)
        if values.shape != box.shape:
            raise ValueError(f"array shape {values.shape} does not match box {box.shape}")

        def func(xi):
            return values[box.index(xi)]

        lf = cls(func, box)
        lf._array = values
        return lf

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=np.int64)
        if xi.shape[-1:] != (self.n,):
            raise ValueError(f"expected points with {self.n} coordinates")
        if self.box is not None and not np.all(self.box.contains(xi)):
            bad = xi[~self.box.contains(xi)] if xi.ndim > 1 else xi
            raise OutOfRangeError(f"lattice point {bad.reshape(-1, self.n)[0].tolist()} outside box")
        return self.func(xi)

    def values(self, box: FrequencyBox | None = None) -> np.ndarray:
        """Tabulate on ``box`` (default: the declared box)."""
        box = box or self.box
        if box is None:
            raise ValueError("no box to tabulate on")
        if box == self.box and hasattr(self, "_array"):
            return self._array
        return np.asarray(self(box.points()))


def _as_point(xi, n=None) -> np.ndarray:
    xi = np.atleast_1d(np.asarray(xi, dtype=np.int64))
    if n is not None and xi.shape != (n,):
        raise ValueError(f"expected a point with {n} coordinates")
    return xi


def _stencil(alpha) -> tuple[np.ndarray, list[int]]:
    betas = list(MultiIndex(alpha).below())
    coeffs = [(-1) ** (sum(alpha) - sum(b)) * binomial(alpha, b) for b in betas]
    return np.array(betas, dtype=np.int64).reshape(len(betas), len(alpha)), coeffs


def _combine(values, coeffs):
    total = 0
    for c, v in zip(coeffs, values):
        total = total + c * v
    return total


def forward_difference(p, alpha, xi):
    """``sum_{beta <= alpha} (-1)^{|alpha - beta|} C(alpha, beta) p(xi + beta)``."""
    alpha = MultiIndex(alpha)
    _check_order(alpha)
    xi = _as_point(xi, len(alpha))
    shifts, coeffs = _stencil(alpha)
    values = p(xi + shifts)
    return _combine(values, coeffs)


def backward_difference(phi, alpha, xi):
    """``sum_{beta <= alpha} (-1)^{|beta|} C(alpha, beta) phi(xi - beta)``."""
    alpha = MultiIndex(alpha)
    _check_order(alpha)
    xi = _as_point(xi, len(alpha))
    betas = np.array(list(alpha.below()), dtype=np.int64).reshape(-1, len(alpha))
    coeffs = [(-1) ** int(sum(b)) * binomial(alpha, b) for b in betas]
    values = phi(xi - betas)
    return _combine(values, coeffs)


def leibniz_difference(phi, psi, alpha, xi):
    """Right side of the product rule for differences.

    ``sum_{gamma <= alpha} C(alpha, gamma) D^gamma phi(xi) D^{alpha-gamma} psi(xi + gamma)``
    where ``D`` is the forward difference.
    """
    alpha = MultiIndex(alpha)
    xi = _as_point(xi, len(alpha))
    total = 0
    for gamma in alpha.below():
        shifted = xi + np.array(gamma, dtype=np.int64)
        total = total + binomial(alpha, gamma) * forward_difference(phi, gamma, xi) * forward_difference(
            psi, alpha - gamma, shifted
        )
    return total


def summation_by_parts(phi, psi, alpha, box: FrequencyBox):
    """Both sides of ``sum phi D^alpha psi = (-1)^|alpha| sum (Dbar^alpha phi) psi``.

    The sums run over ``box``; the identity holds when phi and psi vanish
    within ``|alpha|`` of the box boundary.
    """
    alpha = MultiIndex(alpha)
    lhs = 0
    rhs = 0
    for xi in box.points().reshape(-1, box.n):
        lhs = lhs + phi(xi[None])[0] * forward_difference(psi, alpha, xi)
        rhs = rhs + backward_difference(phi, alpha, xi) * psi(xi[None])[0]
    return lhs, (-1) ** alpha.order * rhs


def _taylor_indices(n: int, M: int) -> list[MultiIndex]:
    if M < 1:
        raise ValueError("Taylor order M must be at least 1")
    if M - 1 > MAX_ORDER:
        raise ValueError(f"Taylor order exceeds {MAX_ORDER + 1}")
    return multi_indices_upto(n, M - 1)


def discrete_taylor(p, xi, theta, M: int):
    """Partial sum ``sum_{|alpha| < M} theta^(alpha) / alpha! D^alpha p(xi)``.

    Integer-valued p gives an exact ``Fraction``.
    """
    xi = _as_point(xi)
    theta = _as_point(theta, xi.size)
    total = 0
    for alpha in _taylor_indices(xi.size, M):
        ff = falling_factorial(theta, alpha)
        if ff == 0:
            continue
        diff = forward_difference(p, alpha, xi)
        if isinstance(diff, (int, np.integer)):
            # integer data stays exact
            term = Fraction(ff * int(diff), factorial(alpha))
        else:
            term = ff * diff / factorial(alpha)
        total = total + term
    return total


def taylor_remainder(p, xi, theta, M: int):
    """``p(xi + theta)`` minus the partial sum of order M."""
    xi = _as_point(xi)
    theta = _as_point(theta, xi.size)
    value = p((xi + theta)[None])[0]
    if isinstance(value, np.integer):
        value = int(value)
    return value - discrete_taylor(p, xi, theta, M)


def remainder_cube(theta) -> np.ndarray:
    """Lattice points nu with ``|nu_j| <= |theta_j|`` and ``nu_j theta_j >= 0``."""
    theta = _as_point(theta)
    ranges = [range(0, t + 1) if t >= 0 else range(t, 1) for t in theta.tolist()]
    return np.array(list(itertools.product(*ranges)), dtype=np.int64).reshape(-1, theta.size)


def taylor_remainder_bound(p, xi, theta, M: int) -> float:
    """Bound on the remainder of order M.

    ``sum_{|alpha| = M} |theta^(alpha)| / alpha! * max_{nu in Q(theta)} |D^alpha p(xi + nu)|``
    where ``Q(theta)`` is the lattice cube spanned by 0 and theta.
    """
    xi = _as_point(xi)
    theta = _as_point(theta, xi.size)
    if M > MAX_ORDER:
        raise ValueError(f"Taylor order exceeds {MAX_ORDER}")
    cube = remainder_cube(theta)
    bound = 0.0
    for alpha in multi_indices(xi.size, M):
        ff = falling_factorial(theta, alpha)
        if ff == 0:
            continue
        peak = max(abs(forward_difference(p, alpha, xi + nu)) for nu in cube)
        bound += abs(ff) / factorial(alpha) * float(peak)
    return bound
