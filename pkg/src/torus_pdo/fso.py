"""Fourier series operators ``T u(x) = sum_xi exp(i phi(x, xi)) a(x, xi) u_hat(xi)``.

A phase is stored as ``x . g(xi) + phi_per(x, xi)`` with ``phi_per``
periodic in x. The operator is well defined on the torus exactly when
``g(xi)`` is integer-valued, which is what the periodicity certificate
measures. With that, ``exp(i (phi - x.xi))`` is a periodic factor and
every application reduces to the exact toroidal routines.
"""
from __future__ import annotations

import itertools

import numpy as np

from .errors import IterationLimitError, OutOfRangeError, PhaseError, PreconditionError
from .harmonic import GridFunction, grid_points
from .lattice import (
    FrequencyBox,
    binomial,
    bracket,
    difference_array,
    factorial,
    falling_power,
    multi_indices_upto,
    trim_array,
)
from .quantize import LinearOperatorHandle, _accumulate, _masked_xhat, apply_amplitude, apply_pdo, coefficient_matrix
from .symbols import (
    AmplitudeTable,
    SymbolTable,
    ThetaKernel,
    extend_symbol,
    spectral_multiplier,
    _falling_factor,
)

__all__ = [
    "PhaseTable",
    "FourierSeriesOp",
    "PsiCorrection",
    "check_phase",
    "apply_fso",
    "fso_operator",
    "compose_fso_pdo",
    "compose_pdo_fso",
    "compose_pdo_fso_difference",
    "schur_l2_bound",
    "fso_l2_check",
    "operator_norm",
    "graph_constant",
]


class PhaseTable:
    """Real phase ``phi(x, xi) = x . g(xi) + phi_per(x, xi)``.

    Parameters
    ----------
    periodic : ndarray
        ``phi_per`` on the x-grid times ``box``, shape ``(N,)*n + box.shape``.
    box : FrequencyBox
    slope : ndarray, optional
        ``g(xi)`` with shape ``box.shape + (n,)``; defaults to ``xi``.
    """

    def __init__(self, periodic, box: FrequencyBox, slope=None):
        periodic = np.asarray(periodic, dtype=float)
        n = box.n
        N = periodic.shape[0]
        if periodic.shape != (N,) * n + box.shape:
            raise ValueError("periodic part has the wrong shape")
        if slope is None:
            slope = box.points().astype(float)
        slope = np.asarray(slope, dtype=float)
        if slope.shape != box.shape + (n,):
            raise ValueError("slope has the wrong shape")
        self.periodic = periodic
        self.slope = slope
        self.box = box
        self.n = n
        self.N = N

    @classmethod
    def linear(cls, box: FrequencyBox, N: int | None = None, extra=None) -> "PhaseTable":
        """``x . xi + extra(xi)`` with ``extra`` a callable on tuples of lattice arrays."""
        N = N or box.default_grid_size()
        per = np.zeros((N,) * box.n + box.shape)
        if extra is not None:
            per = per + np.asarray(extra(box.grid()), dtype=float)[(None,) * box.n]
        return cls(per, box)

    @classmethod
    def from_function(cls, phi, box: FrequencyBox, N: int | None = None) -> "PhaseTable":
        """Split ``phi(x, xi)`` into its linear growth and periodic part.

        ``g_j(xi) = (phi(x + 2 pi e_j, xi) - phi(x, xi)) / (2 pi)`` is read at
        the grid points and must not depend on x.
        """
        N = N or box.default_grid_size()
        n = box.n
        x = tuple(g.reshape(g.shape + (1,) * n) for g in grid_points(N, n))
        xi = tuple(g.reshape((1,) * n + g.shape) for g in box.grid())
        shape = (N,) * n + box.shape
        base = np.broadcast_to(np.asarray(phi(x, xi), dtype=float), shape)
        slope = np.empty(box.shape + (n,))
        for j in range(n):
            shifted = tuple(xk + (2 * np.pi if k == j else 0.0) for k, xk in enumerate(x))
            jump = (np.broadcast_to(np.asarray(phi(shifted, xi), dtype=float), shape) - base) / (2 * np.pi)
            spread = np.max(np.ptp(jump.reshape(N**n, -1), axis=0))
            if spread > 1e-9 * max(1.0, np.max(np.abs(jump))):
                raise PhaseError("phase is not of the form x . g(xi) + periodic")
            slope[..., j] = jump.reshape(N**n, *box.shape).mean(axis=0)
        # the jump is read through rounding; snap slopes that are integers up to that noise
        near = np.rint(slope)
        slope = np.where(np.abs(slope - near) < 1e-9 * np.maximum(1.0, np.abs(near)), near, slope)
        linear = sum(x[j] * slope[..., j][(None,) * n] for j in range(n))
        return cls(base - linear, box, slope)

    def values(self) -> np.ndarray:
        x = tuple(g.reshape(g.shape + (1,) * self.n) for g in grid_points(self.N, self.n))
        return self.periodic + sum(x[j] * self.slope[..., j][(None,) * self.n] for j in range(self.n))

    def periodic_gradient(self) -> np.ndarray:
        """``grad_x phi_per`` with shape ``(n,) + (N,)*n + box.shape``."""
        axes = tuple(range(self.n))
        out = []
        for j in range(self.n):
            factors = [(lambda e: 1j * e) if k == j else (lambda e: np.ones(e.shape)) for k in range(self.n)]
            out.append(spectral_multiplier(self.periodic, axes, factors).real)
        return np.stack(out)

    def gradient(self) -> np.ndarray:
        """``grad_x phi`` with shape ``(n,) + (N,)*n + box.shape``."""
        g = np.moveaxis(self.slope, -1, 0)[(slice(None),) + (None,) * self.n]
        return self.periodic_gradient() + g

    def periodicity_defect(self) -> float:
        """``max |exp(2 pi i g_j(xi)) - 1|``; zero exactly when the phase lives on the torus."""
        frac = self.slope - np.rint(self.slope)
        return float(np.max(np.abs(np.exp(2j * np.pi * frac) - 1.0)))

    def torus_factor(self, tol: float = 1e-9) -> np.ndarray:
        """Periodic factor ``exp(i (phi(x, xi) - x . xi))``."""
        defect = self.periodicity_defect()
        if defect > tol:
            raise PhaseError(f"phase fails the periodicity certificate (defect {defect:.3e})")
        shift = np.rint(self.slope - self.box.points()).astype(np.int64)
        n, N = self.n, self.N
        idx = np.indices((N,) * n)
        r = sum(idx[j][(...,) + (None,) * n] * shift[..., j][(None,) * n] for j in range(n))
        lin = 2 * np.pi * np.mod(r, N) / N
        return np.exp(1j * (lin + self.periodic))

    def trimmed(self, d: int) -> "PhaseTable":
        if d > self.box.margin:
            raise OutOfRangeError("phase margin too small")
        axes = tuple(range(self.n, 2 * self.n))
        per = trim_array(self.periodic, d, axes)
        slope = trim_array(self.slope, d, tuple(range(self.n)))
        return PhaseTable(per, self.box.with_margin(self.box.margin - d), slope)

    def on_box(self, box: FrequencyBox) -> "PhaseTable":
        return self.trimmed(self.box.L - box.L) if box.L < self.box.L else self


class FourierSeriesOp:
    """Phase plus amplitude; the amplitude is ``a(x, xi)`` or ``a(x, y, xi)``."""

    def __init__(self, phase: PhaseTable, amplitude):
        if amplitude.N != phase.N or amplitude.n != phase.n:
            raise PreconditionError("phase and amplitude grids differ")
        if amplitude.box.K != phase.box.K:
            raise PreconditionError("phase and amplitude boxes differ")
        margin = min(amplitude.box.margin, phase.box.margin)
        self.phase = phase.trimmed(phase.box.margin - margin)
        self.amplitude = amplitude.trimmed(amplitude.box.margin - margin)
        self.box = self.phase.box
        self.n = phase.n
        self.N = phase.N

    @property
    def symbol_form(self) -> bool:
        return isinstance(self.amplitude, SymbolTable)

    def effective_symbol(self) -> SymbolTable:
        """``exp(i (phi - x.xi)) a(x, xi)`` for symbol-form amplitudes."""
        if not self.symbol_form:
            raise PreconditionError("amplitude depends on y")
        a = self.amplitude
        return SymbolTable(self.phase.torus_factor() * a.values, a.box, a.m, a.rho, a.delta, check=False)

    def effective_amplitude(self) -> AmplitudeTable:
        a = self.amplitude
        if self.symbol_form:
            a = AmplitudeTable.from_symbol(a)
        n = self.n
        f = self.phase.torus_factor()
        f = f.reshape((self.N,) * n + (1,) * n + self.box.shape)
        return AmplitudeTable(f * a.values, a.box, a.m, a.rho, a.delta)


def apply_fso(T: FourierSeriesOp, u: GridFunction, out_box: FrequencyBox | None = None) -> GridFunction:
    """Apply a Fourier series operator; the result is truncated to ``out_box``."""
    if T.symbol_form:
        return apply_pdo(T.effective_symbol(), u, out_box)
    return apply_amplitude(T.effective_amplitude(), u, out_box)


def fso_operator(T: FourierSeriesOp, box: FrequencyBox, out_box: FrequencyBox | None = None):
    out_box = out_box or box
    matrix = None
    if T.symbol_form:
        eff = T.effective_symbol()
        matrix = lambda: coefficient_matrix(eff, box, out_box)  # noqa: E731
    return LinearOperatorHandle(lambda u: apply_fso(T, u, out_box), box, out_box, matrix=matrix)


def graph_constant(phase: PhaseTable, box: FrequencyBox | None = None, chunk: int = 4_000_000) -> float:
    """``inf |grad_x phi(x, k) - grad_x phi(x, l)| / |k - l|`` over the grid and pairs k != l."""
    ph = phase.on_box(box or phase.box.core())
    n, N = ph.n, ph.N
    grad = ph.gradient().reshape(n, N**n, -1)  # (n, X, P)
    pts = ph.box.points().reshape(-1, n).astype(float)
    P = pts.shape[0]
    i, j = np.triu_indices(P, k=1)
    dist = np.sqrt(np.sum((pts[i] - pts[j]) ** 2, axis=1))
    best = np.inf
    step = max(1, chunk // max(1, N**n))
    for s in range(0, i.size, step):
        a, b = i[s : s + step], j[s : s + step]
        diff = grad[:, :, a] - grad[:, :, b]
        ratio = np.sqrt(np.sum(diff**2, axis=0)) / dist[s : s + step][None, :]
        best = min(best, float(ratio.min()))
    return best


def check_phase(phase: PhaseTable, graph_box: FrequencyBox | None = None) -> dict:
    """Certificate for a phase function.

    Returns ``periodicity_defect``, the comparability constants
    ``C_lower <= <grad phi> / <xi> <= C_upper``, the graph constant and
    the bounds ``sup |d_x^alpha D_xi^beta phi|`` for ``|beta| = 1`` and
    ``|alpha| <= 2n + 1`` (``sup_tables``).
    """
    grad = phase.gradient()
    ratio = bracket(np.moveaxis(grad, 0, -1)) / bracket(phase.box.points())[(None,) * phase.n]
    report = {
        "periodicity_defect": phase.periodicity_defect(),
        "C_lower": float(ratio.min()),
        "C_upper": float(ratio.max()),
        "graph_constant": graph_constant(phase, graph_box),
        "sup_tables": _phase_difference_sups(phase),
    }
    return report


def _phase_difference_sups(phase: PhaseTable) -> dict:
    """``sup |d_x^alpha D_xi^beta phi|`` over all available first differences."""
    n, N = phase.n, phase.N
    x = tuple(g.reshape(g.shape + (1,) * n) for g in grid_points(N, n))
    out = {}
    for j in range(n):
        beta = tuple(1 if k == j else 0 for k in range(n))
        dper = np.diff(phase.periodic, axis=n + j)
        dslope = np.diff(phase.slope, axis=j)[(None,) * n]
        for alpha in multi_indices_upto(n, 2 * n + 1):
            order = sum(alpha)
            if order == 0:
                val = dper + sum(x[k] * dslope[..., k] for k in range(n))
            else:
                facs = [(lambda e, b=b: (1j * e) ** b) for b in alpha]
                val = spectral_multiplier(dper, tuple(range(n)), facs).real
                if order == 1:
                    val = val + dslope[..., alpha.index(1)]
            out[f"alpha={tuple(alpha)},beta={beta}"] = float(np.max(np.abs(val))) if val.size else 0.0
    return out


def schur_l2_bound(a: SymbolTable) -> float:
    """Schur test bound for the toroidal quantization of ``a``.

    ``sqrt(sup_omega sum_xi |a_hat(omega - xi, xi)| * sup_xi sum_omega |a_hat(omega - xi, xi)|)``
    with ``a_hat`` the x-Fourier coefficients, over the table box.
    """
    xhat = np.abs(_masked_xhat(a.values, a.n))
    col = float(np.max(np.sum(xhat, axis=a.x_axes)))
    rows, _ = _accumulate(xhat.astype(complex), np.ones(a.box.shape), a.n)
    row = float(np.max(np.abs(rows)))
    return float(np.sqrt(row * col))


def operator_norm(A: LinearOperatorHandle, tol: float = 1e-8, max_iter: int = 500, seed: int = 0) -> float:
    """Largest singular value by power iteration on ``A* A``.

    Stops when successive estimates agree to relative ``tol``; otherwise
    raises ``IterationLimitError`` carrying the last estimate.
    """
    M = A.to_matrix()
    rng = np.random.default_rng(seed)
    v = rng.normal(size=M.shape[1]) + 1j * rng.normal(size=M.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = M @ v
        new = float(np.linalg.norm(w))
        if new == 0.0:
            return 0.0
        v = M.conj().T @ w
        v /= np.linalg.norm(v)
        if abs(new - est) <= tol * new:
            return new
        est = new
    raise IterationLimitError(f"power iteration did not converge in {max_iter} steps", last=est)


def fso_l2_check(T: FourierSeriesOp) -> dict:
    """Sufficient conditions for L2 boundedness plus a Schur bound.

    Reports ``sup |d_x^alpha a|`` for ``|alpha| <= 2n + 1``, the phase
    certificate and the Schur bound of the periodic symbol
    ``exp(i (phi - x.xi)) a``.
    """
    if not T.symbol_form:
        raise PreconditionError("L2 check needs a symbol-form amplitude")
    a = T.amplitude
    amp = {}
    for alpha in multi_indices_upto(T.n, 2 * T.n + 1):
        amp[f"alpha={tuple(alpha)}"] = float(np.max(np.abs(a.x_derivative(alpha))))
    report = check_phase(T.phase)
    report["amplitude_sups"] = amp
    report["schur_bound"] = schur_l2_bound(T.effective_symbol())
    return report




class PsiCorrection:
    """Second-order phase remainder ``phi(y) - phi(x) + (x - y) . grad_x phi(x)``.

    With ``phi = x . g + phi_per`` the linear part cancels, so only the
    periodic part enters: ``Psi = phi_per(y) - phi_per(x) - (y - x) . grad phi_per(x)``.
    ``y - x`` is taken in ``(-pi, pi]`` per axis, which is where the
    expansion is used. ``values`` has shape ``(N,)*n + (N,)*n + box.shape``.
    """

    def __init__(self, phase: PhaseTable):
        n, N = phase.n, phase.N
        self.phase = phase
        self.n, self.N = n, N
        per = phase.periodic
        grad = phase.periodic_gradient()
        pad = (1,) * n
        px = per.reshape((N,) * n + pad + phase.box.shape)
        py = per.reshape(pad + (N,) * n + phase.box.shape)
        idx = np.indices((N,) * n)
        psi = py - px
        for j in range(n):
            steps = np.mod(idx[j].reshape(pad + (N,) * n) - idx[j].reshape((N,) * n + pad) + N // 2, N) - N // 2
            gap = (2 * np.pi / N) * steps
            psi = psi - gap[(...,) + (None,) * n] * grad[j].reshape((N,) * n + pad + phase.box.shape)
        self.values = psi

    def check(self) -> dict:
        """``max |Psi(x, x)|`` and ``max |grad_y Psi(x, y)|_{y=x}|``."""
        n, N = self.n, self.N
        idx = tuple(np.indices((N,) * n))
        diag = self.values[idx + idx]
        grad = self.phase.periodic_gradient()
        # grad_y Psi = grad phi_per(y) - grad phi_per(x); on the diagonal both coincide
        dy = grad.reshape((n,) + (1,) * n + (N,) * n + self.phase.box.shape) - grad.reshape(
            (n,) + (N,) * n + (1,) * n + self.phase.box.shape
        )
        return {
            "psi_diagonal": float(np.max(np.abs(diag))),
            "grad_psi_diagonal": float(np.max(np.abs(dy[(slice(None),) + idx + idx]))),
        }


def _amplitude_parts(T: FourierSeriesOp):
    """``F(y, [z,] xi) = exp(i phi_per(y, xi)) a(y, [z,] xi)`` and the number of middle axes."""
    n = T.n
    a = T.amplitude
    per = T.phase.periodic
    if T.symbol_form:
        return np.exp(1j * per) * a.values, 0
    e = np.exp(1j * per).reshape((T.N,) * n + (1,) * n + T.box.shape)
    return e * a.values, n


def _wrap_output(T: FourierSeriesOp, values, box: FrequencyBox, m: float):
    if T.symbol_form:
        return SymbolTable(values, box, m, check=False)
    return AmplitudeTable(values, box, m)


def _y_derivatives(F, n, order, kind):
    """All ``partial^beta`` (kind 'd') or ``D^(beta)`` (kind 'f') of F along the first n axes."""
    out = {}
    for beta in multi_indices_upto(n, order):
        if not any(beta):
            out[tuple(beta)] = F
        elif kind == "d":
            out[tuple(beta)] = spectral_multiplier(F, tuple(range(n)), [(lambda e, b=b: (1j * e) ** b) for b in beta])
        else:
            out[tuple(beta)] = spectral_multiplier(F, tuple(range(n)), [_falling_factor(b, 1) for b in beta])
    return out


def _binomial_sum(alpha, dF, w, mid, kind):
    """``sum_{beta <= alpha} C(alpha, beta) c^(alpha - beta) dF[beta]``.

    ``c = -i w`` with ordinary powers (kind 'd') or ``c = -w`` with falling
    powers (kind 'f'); w has shape ``(n,) + (N,)*n + box``.
    """
    n = len(alpha)
    total = 0.0
    for beta in multi_indices_upto(n, sum(alpha)):
        if any(b > a for a, b in zip(alpha, beta)):
            continue
        coef = float(binomial(alpha, beta))
        for j in range(n):
            k = alpha[j] - beta[j]
            if k:
                fac = (-1j * w[j]) ** k if kind == "d" else falling_power(-w[j], k)
                coef = coef * fac
        if not np.isscalar(coef):
            lead = coef.shape[:n]
            coef = coef.reshape(lead + (1,) * mid + coef.shape[n:])
        total = total + coef * dF[tuple(beta)]
    return total


def _central_difference(fn, alpha, h):
    """Tensor central difference of ``fn(shift)`` of order alpha and step h."""
    n = len(alpha)
    stencils = []
    for k in alpha:
        offs = [(k / 2 - j) * h for j in range(k + 1)]
        coeffs = [(-1) ** j * float(binomial((k,), (j,))) / h**k for j in range(k + 1)]
        stencils.append(list(zip(offs, coeffs)))
    total = 0.0
    for combo in itertools.product(*stencils):
        shift = np.array([c[0] for c in combo])
        weight = np.prod([c[1] for c in combo])
        total = total + weight * fn(shift)
    return total


def compose_pdo_fso(p: SymbolTable, T: FourierSeriesOp, M: int, kernel: ThetaKernel | None = None,
                    derivative: str = "kernel", h: float = 1e-3):
    """Amplitude of ``p(X, D) o T``; the phase of T is kept.

    ``c(x, z, xi) = sum_{|alpha| < M} (i^-|alpha| / alpha!) d_eta^alpha p(x, eta)|_{eta = grad phi}
    d_y^alpha [exp(i Psi) a(y, z, xi)]|_{y = x}``.

    ``p`` is extended to real frequencies with the theta kernel; its
    eta-derivatives come from differentiating the kernel
    (``derivative='kernel'``) or from central differences of step h with
    one Richardson halving (``derivative='richardson'``). The result has
    the form of T's amplitude (a SymbolTable for symbol-form T).
    """
    if p.N != T.N or p.n != T.n:
        raise PreconditionError("symbol and operator grids differ")
    defect = T.phase.periodicity_defect()
    if defect > 1e-9:
        raise PhaseError(f"phase fails the periodicity certificate (defect {defect:.3e})")
    n, N = T.n, T.N
    ext = extend_symbol(p, kernel or ThetaKernel(n))
    grad = T.phase.gradient()  # (n, X, box)
    eta = np.moveaxis(grad, 0, -1)
    if np.any(np.abs(eta) > ext.reach + 1e-9):
        raise OutOfRangeError(f"phase gradient reaches {np.abs(eta).max():.3f}; extension covers {ext.reach}")
    w = T.phase.periodic_gradient()
    F, mid = _amplitude_parts(T)
    dF = _y_derivatives(F, n, M - 1, "d")
    unphase = np.exp(-1j * T.phase.periodic)
    total = 0.0
    for alpha in multi_indices_upto(n, M - 1):
        dp = _eta_derivative(ext, eta, alpha, derivative, h)
        piece = (1j ** -sum(alpha)) / factorial(alpha) * dp * unphase
        piece = piece.reshape((N,) * n + (1,) * mid + T.box.shape)
        total = total + piece * _binomial_sum(alpha, dF, w, mid, "d")
    return _wrap_output(T, total, T.box, T.amplitude.m + p.m)


def _eta_derivative(ext, eta, alpha, derivative, h):
    if derivative == "kernel" or not any(alpha):
        return ext.on_field(eta, tuple(alpha))
    if derivative != "richardson":
        raise ValueError("derivative must be 'kernel' or 'richardson'")

    def at(step):
        return _central_difference(lambda s: ext.on_field(eta + s, None), alpha, step)

    return (4 * at(h / 2) - at(h)) / 3


def compose_pdo_fso_difference(p: SymbolTable, T: FourierSeriesOp, M: int, tol: float = 1e-9):
    """Difference form of ``p(X, D) o T`` for lattice-valued ``grad_x phi``.

    ``c = sum_{|alpha| < M} (1/alpha!) [D_omega^alpha p(x, omega)]_{omega = grad phi}
    D_y^(alpha) [exp(i Psi) a]|_{y = x}``, read directly from the table of p.
    """
    if p.N != T.N or p.n != T.n:
        raise PreconditionError("symbol and operator grids differ")
    defect = T.phase.periodicity_defect()
    if defect > 1e-9:
        raise PhaseError(f"phase fails the periodicity certificate (defect {defect:.3e})")
    n, N = T.n, T.N
    grad = T.phase.gradient()
    omega = np.rint(grad)
    if np.max(np.abs(grad - omega)) > tol:
        raise PreconditionError("phase gradient is not lattice-valued; use the derivative form")
    omega = omega.astype(np.int64)
    Lp = p.box.L
    if np.any(omega < -Lp) or np.any(omega + (M - 1) > Lp):
        raise OutOfRangeError("symbol box does not cover the phase gradient plus the difference stencil")
    w = T.phase.periodic_gradient()
    F, mid = _amplitude_parts(T)
    dF = _y_derivatives(F, n, M - 1, "f")
    unphase = np.exp(-1j * T.phase.periodic)
    xidx = np.indices((N,) * n)
    xsel = tuple(g.reshape(g.shape + (1,) * n) for g in xidx)
    total = 0.0
    for alpha in multi_indices_upto(n, M - 1):
        diff = difference_array(p.values, alpha, p.xi_axes)
        dp = diff[xsel + tuple(omega[j] + Lp for j in range(n))]
        piece = (dp * unphase / factorial(alpha)).reshape((N,) * n + (1,) * mid + T.box.shape)
        total = total + piece * _binomial_sum(alpha, dF, w, mid, "f")
    return _wrap_output(T, total, T.box, T.amplitude.m + p.m)


def compose_fso_pdo(T: FourierSeriesOp, p: SymbolTable, M: int) -> AmplitudeTable:
    """Amplitude of ``T o p(X, D)``; the phase of T is kept.

    ``c(x, z, xi) = sum_{|alpha| < M} (1/alpha!) (-D_z)^(alpha) [a(x, z, xi) D_xi^alpha p(z, xi)]``.
    The result lives on T's core with the margin reduced by ``M - 1``.
    """
    if p.N != T.N or p.n != T.n or p.box.K != T.box.K:
        raise PreconditionError("symbol and operator grids or boxes differ")
    d = M - 1
    margin = min(p.box.margin, T.box.margin)
    if margin < d:
        raise OutOfRangeError(f"expansion of this length needs margin {d}, have {margin}")
    p = p.trimmed(p.box.margin - margin)
    n, N = T.n, T.N
    out_box = p.box.with_margin(margin - d)
    amp = T.amplitude.trimmed(T.amplitude.box.margin - margin)
    z_axes = tuple(range(n, 2 * n))
    if T.symbol_form:
        # a(x, xi) does not see z, so the z-derivatives act on the p-factor alone
        q = 0.0
        for alpha in multi_indices_upto(n, d):
            dp = p.like(p.difference(alpha, trim=d), out_box)
            q = q + dp.falling_x(alpha, sign=-1) / factorial(alpha)
        a = trim_array(amp.values, d, amp.xi_axes)
        values = a.reshape((N,) * n + (1,) * n + out_box.shape) * np.asarray(q).reshape((1,) * n + (N,) * n + out_box.shape)
        return AmplitudeTable(values, out_box, amp.m + p.m)
    a = trim_array(amp.values, d, amp.xi_axes)
    total = 0.0
    for alpha in multi_indices_upto(n, d):
        prod = a * p.difference(alpha, trim=d).reshape((1,) * n + (N,) * n + out_box.shape)
        if any(alpha):
            prod = spectral_multiplier(prod, z_axes, [_falling_factor(k, -1) for k in alpha])
        total = total + prod / factorial(alpha)
    return AmplitudeTable(total, out_box, amp.m + p.m)
