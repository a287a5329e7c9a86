"""Hyperbolic Cauchy problems ``d_t u = i a(X, D) u``, ``u(0) = f`` on the torus.

``a = a1(xi) + a0(x, xi)`` with a real multiplier ``a1`` and a perturbation
``a0`` of order at most zero. The sign is chosen so that the solution
operator is a Fourier series operator with phase ``x.k + t a1(k)``; for
``a1 = xi`` the solution is the translate ``f(x + t)``.

Two solvers are provided: a reference stepper on Fourier coefficients
and a parametrix built from that phase and a truncated transport
amplitude ``b = b_0 + ... + b_{M-1}``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import AccuracyError, OutOfRangeError, PreconditionError
from .harmonic import EuclideanSampledFunction, GridFunction, grid_points, periodize
from .lattice import FrequencyBox, LatticeFunction, factorial, multi_indices_upto
from .quantize import apply_pdo, coefficient_matrix
from .symbols import SymbolTable, ThetaKernel, extend_symbol, spectral_multiplier

__all__ = [
    "CauchyProblem",
    "EvolvedSolution",
    "solve_reference",
    "solve_fso",
    "embed_and_periodize",
    "rk4_adaptive",
]

STEP_TOL = 1e-9
MAX_STEPS = 2**15


@dataclass
class CauchyProblem:
    """Data of ``d_t u = i (a1(D) + a0(X, D)) u`` with ``u(0) = f``.

    ``box`` is the frequency box on which solutions are reported; it
    defaults to the box of f.
    """

    f: GridFunction
    a1: LatticeFunction
    a0: SymbolTable | None = None
    times: list = field(default_factory=lambda: [0.0])
    box: FrequencyBox | None = None
    diagnostics: list = field(default_factory=list)

    def __post_init__(self):
        self.times = [float(t) for t in self.times]
        if not self.times or self.times[0] != 0.0:
            raise PreconditionError("times must start at 0")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise PreconditionError("times must increase")
        if self.box is None:
            self.box = self.f.box
        if self.a0 is not None and self.a0.n != self.f.n:
            raise PreconditionError("perturbation and datum dimensions differ")
        vals = np.asarray(self.a1.values(self.box))
        if np.max(np.abs(np.imag(vals))) > 1e-12 * max(1.0, np.max(np.abs(vals))):
            raise PreconditionError("principal multiplier must be real")

    @property
    def n(self) -> int:
        return self.f.n


@dataclass
class EvolvedSolution:
    times: list
    states: list
    method: str
    diagnostics: list

    def at(self, t: float) -> GridFunction:
        return self.states[self.times.index(float(t))]


def rk4_adaptive(rhs, y0, t0: float, t1: float, tol: float = STEP_TOL, start: int = 4):
    """Classical RK4 from t0 to t1; the step count doubles until halving changes ``y`` by < tol."""

    def run(steps):
        h = (t1 - t0) / steps
        y = y0
        t = t0
        for _ in range(steps):
            k1 = rhs(t, y)
            k2 = rhs(t + h / 2, y + h / 2 * k1)
            k3 = rhs(t + h / 2, y + h / 2 * k2)
            k4 = rhs(t + h, y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t = t0 + (t1 - t0) * (_ + 1) / steps
        return y

    steps = max(1, int(start))
    coarse = run(steps)
    while steps <= MAX_STEPS:
        fine = run(2 * steps)
        if np.max(np.abs(fine - coarse)) < tol:
            return fine, 2 * steps
        steps *= 2
        coarse = fine
    raise AccuracyError(f"step halving did not reach {tol:.1e} within {MAX_STEPS} steps")


def _diagnose(u: GridFunction) -> dict:
    return {"norm": u.norm(), "spectral_tail": float(getattr(u, "truncated_mass", 0.0) or 0.0)}


def solve_reference(P: CauchyProblem) -> EvolvedSolution:
    """Galerkin solution on ``P.box`` in the interaction picture.

    With ``v = exp(-i t a1) u_hat`` the system is
    ``v' = i exp(-i t a1) A0 exp(i t a1) v``, stepped by RK4 with step
    halving to ``1e-9``. Without a perturbation the flow is the exact
    diagonal ``exp(i t a1(k))``.
    """
    box = P.box
    f = P.f.resized(box)
    a1 = np.asarray(P.a1.values(box), dtype=float).reshape(-1)
    states, diags = [], []
    v = f.coeffs.reshape(-1).astype(complex)
    A0 = None
    if P.a0 is not None:
        A0 = coefficient_matrix(P.a0, box, box)
        if not np.any(A0):
            A0 = None
    gap = a1[:, None] - a1[None, :]

    def rhs(t, y):
        return 1j * (np.exp(-1j * t * gap) * A0) @ y

    prev = 0.0
    for t in P.times:
        if A0 is not None and t > prev:
            start = max(4, int(np.ceil((t - prev) * max(1.0, np.max(np.abs(gap)) if gap.size else 1.0) / 2)))
            v, _ = rk4_adaptive(rhs, v, prev, t, start=start)
        prev = t
        coeffs = (np.exp(1j * t * a1) * v).reshape(box.shape)
        u = GridFunction(coeffs, box, f.N if f.N >= box.width else None)
        u.truncated_mass = 0.0
        states.append(u)
        diags.append(_diagnose(u))
    states[0] = f
    return EvolvedSolution(list(P.times), states, "reference", diags)


def _multiplier_table(a1: LatticeFunction, box: FrequencyBox, N: int) -> SymbolTable:
    vals = np.asarray(a1.values(box), dtype=complex)
    return SymbolTable(np.broadcast_to(vals, (N,) * box.n + box.shape).copy(), box, check=False)


def solve_fso(P: CauchyProblem, M: int, kernel: ThetaKernel | None = None, N: int | None = None) -> EvolvedSolution:
    """Parametrix solution ``sum_k exp(i (x.k + t a1(k))) b(t, x, k) f_hat(k)``.

    ``b = b_0 + ... + b_{M-1}`` with ``b_0(0) = 1``, ``b_j(0) = 0`` and

    ``d_t b_j = i [a0 b_j + sum_{0 < |alpha| <= j} (1/alpha!) d_xi^alpha (a1 + a0)(x, k) D_x^alpha b_{j - |alpha|}]``,

    the order-by-order matching of the equation on the phase. The
    xi-derivatives are taken on the theta-kernel extensions of ``a1`` and
    ``a0``, which must therefore be tabulated at least ``H`` beyond the
    box of f.
    """
    if not 1 <= M <= 4:
        raise PreconditionError("transport truncation M must lie in 1..4")
    n = P.n
    kbox = FrequencyBox(n, P.f.box.L)
    f = P.f.resized(kbox)
    kernel = kernel or ThetaKernel(n)
    H = kernel.H
    if P.a0 is not None:
        N = P.a0.N
    N = N or max(kbox.default_grid_size(), P.f.N)
    shape = (N,) * n + kbox.shape
    pts = kbox.points().reshape(-1, n)
    a1_k = np.asarray(P.a1.values(kbox), dtype=float)
    a0_k = np.zeros(shape, complex)
    coeff = {}
    if M > 1:
        a1_ext = extend_symbol(_multiplier_table(P.a1, FrequencyBox(n, kbox.L, H), N), kernel)
        a0_ext = None
        if P.a0 is not None:
            if P.a0.box.L < kbox.L + H:
                raise OutOfRangeError(f"perturbation table must reach {kbox.L + H} for the extension")
            a0_ext = extend_symbol(P.a0, kernel)
        for alpha in multi_indices_upto(n, M - 1):
            if not any(alpha):
                continue
            c = a1_ext.on_grid(pts, N, tuple(alpha))
            if a0_ext is not None:
                c = c + a0_ext.on_grid(pts, N, tuple(alpha))
            coeff[tuple(alpha)] = c.reshape(shape) / factorial(alpha)
    if P.a0 is not None:
        if P.a0.box.L < kbox.L:
            raise OutOfRangeError("perturbation table does not cover the datum box")
        a0_k = P.a0.on_box(kbox)
    axes = tuple(range(n))

    def D(b, alpha):
        return spectral_multiplier(b, axes, [(lambda e, k=k: e.astype(float) ** k) for k in alpha])

    def rhs(t, y):
        out = np.empty_like(y)
        for j in range(M):
            acc = a0_k * y[j]
            for alpha, c in coeff.items():
                if sum(alpha) <= j:
                    acc = acc + c * D(y[j - sum(alpha)], alpha)
            out[j] = 1j * acc
        return out

    b = np.zeros((M,) + shape, complex)
    b[0] = 1.0
    # without a perturbation b_0 = 1 and the higher terms only see D_x of constants
    frozen = P.a0 is None or not np.any(a0_k)
    states, diags = [], []
    prev = 0.0
    for t in P.times:
        if t > prev and not frozen:
            b, _ = rk4_adaptive(rhs, b, prev, t)
        prev = t
        amp = b.sum(axis=0) * np.exp(1j * t * a1_k)[(None,) * n]
        u = apply_pdo(SymbolTable(amp, kbox, check=False), f, P.box)
        states.append(u)
        diags.append(_diagnose(u))
    states[0] = P.f.resized(P.box)
    return EvolvedSolution(list(P.times), states, "fso", diags)


def embed_and_periodize(f: EuclideanSampledFunction, a1: LatticeFunction, a0=None, box: FrequencyBox | None = None,
                        a0_box: FrequencyBox | None = None, N: int | None = None, times=(0.0,),
                        tol: float = 1e-12) -> CauchyProblem:
    """Toroidal problem from compactly supported Euclidean data.

    The datum becomes its periodization ``P f``; the multiplier is
    restricted to the lattice; ``a0(x, xi)`` (a callable on coordinate
    tuples, supported in ``[-pi, pi]^n`` in x) is periodized in x and
    tabulated on ``a0_box``. The smoothing remainder of the periodized
    operator is dropped; only its existence is recorded.
    """
    n = f.n
    box = box or FrequencyBox(n, 32)
    lo, hi = f.support
    if lo < -np.pi or hi > np.pi:
        m = 4096 if n == 1 else 256
        total = f._l1(lo, hi, m)
        inside = f._l1(max(lo, -np.pi), min(hi, np.pi), m)
        if total - inside > tol * max(total, np.finfo(float).tiny):
            raise PreconditionError("datum is not supported in [-pi, pi]^n")
    pf = periodize(f, box, N)
    diagnostics = ["smoothing remainder dropped (not computed)"]
    table = None
    if a0 is not None:
        a0_box = a0_box or box
        Ng = N or a0_box.default_grid_size()
        table = periodize_symbol(a0, a0_box, Ng, tol)
    return CauchyProblem(pf.with_grid(N) if N else pf, a1, table, list(times), box, diagnostics)


def periodize_symbol(a0, box: FrequencyBox, N: int, tol: float = 1e-12) -> SymbolTable:
    """``sum_m a0(x + 2 pi m, xi)`` on the grid for ``a0`` supported in ``[-pi, pi]^n`` in x."""
    n = box.n
    x = tuple(g.reshape(g.shape + (1,) * n) for g in grid_points(N, n))
    xi = tuple(g.reshape((1,) * n + g.shape) for g in box.grid())
    shape = (N,) * n + box.shape
    # support check on the two outer periods
    probe = tuple(3 * np.pi * (2 * g / (2 * np.pi) - 1) for g in x)
    vals = np.broadcast_to(np.asarray(a0(probe, xi), dtype=complex), shape)
    outside = np.zeros((N,) * n, bool)
    for j in range(n):
        outside = outside | (np.abs(probe[j][(...,) + (0,) * n]) > np.pi)
    peak = max(float(np.max(np.abs(vals))), 1e-300)
    if np.max(np.abs(vals[outside])) > tol * peak:
        raise PreconditionError("perturbation is not supported in [-pi, pi] in x")
    total = np.zeros(shape, complex)
    for m in itertools.product((-1, 0, 1), repeat=n):
        shifted = tuple(xj + 2 * np.pi * mj for xj, mj in zip(x, m))
        total = total + np.broadcast_to(np.asarray(a0(shifted, xi), dtype=complex), shape)
    return SymbolTable(total, box, check=False)
