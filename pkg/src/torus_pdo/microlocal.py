"""Numerical wave-front diagnostic on the torus.

A point ``(x0, cone)`` is flagged when the localized coefficients
``F(chi u)`` fail to decay fast inside a discrete cone: the fitted slope
of ``log max |F(chi u)|`` against ``log <r>`` over dyadic shells exceeds a
threshold ``s*`` (default -4). On a finite box this can only contrast
decay rates; it does not decide smoothness.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError, UndefinedFitError
from .harmonic import GridFunction
from .lattice import FrequencyBox
from .quantize import apply_pdo
from .symbols import SymbolTable

__all__ = [
    "DiscreteCone",
    "Localizer",
    "WaveFrontReport",
    "default_cones",
    "default_localizers",
    "dyadic_shells",
    "wavefront_detect",
    "operator_wf_containment",
]

ZERO_FLOOR = 1e-13


@dataclass(frozen=True)
class DiscreteCone:
    """Lattice points with ``xi . w >= |xi| cos(half_angle)`` and ``|xi| >= r0``."""

    direction: tuple
    half_angle: float = np.deg2rad(20.0)
    r0: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.direction, dtype=float)
        norm = np.linalg.norm(w)
        if norm == 0:
            raise ValueError("cone direction must be nonzero")
        object.__setattr__(self, "direction", tuple(float(v) for v in w / norm))

    @property
    def n(self) -> int:
        return len(self.direction)

    def mask(self, box: FrequencyBox) -> np.ndarray:
        pts = box.points().astype(float)
        r = np.sqrt(np.sum(pts**2, axis=-1))
        dot = pts @ np.asarray(self.direction)
        inside = (dot >= r * np.cos(self.half_angle) - 1e-12) & (r >= self.r0)
        if not inside.any():
            raise PreconditionError(f"cone around {self.direction} holds no lattice point of the box")
        return inside

    def contains_direction(self, v) -> bool:
        v = np.asarray(v, dtype=float)
        return bool(v @ np.asarray(self.direction) >= np.linalg.norm(v) * np.cos(self.half_angle) - 1e-12)

    def to_dict(self) -> dict:
        return {"direction": list(self.direction), "half_angle_deg": float(np.rad2deg(self.half_angle)), "r0": self.r0}


def default_cones(n: int, half_angle_deg: float = 20.0) -> list[DiscreteCone]:
    """Directions ``+-e_1`` in one dimension, every 45 degrees in two, ``+-e_j`` and diagonals in three."""
    h = np.deg2rad(half_angle_deg)
    if n == 1:
        dirs = [(1.0,), (-1.0,)]
    elif n == 2:
        dirs = [(np.cos(a), np.sin(a)) for a in np.arange(8) * np.pi / 4]
    elif n == 3:
        dirs = [tuple(s * e) for e in np.eye(3) for s in (1, -1)]
        dirs += [tuple(np.array(s) / np.sqrt(3)) for s in itertools.product((1, -1), repeat=3)]
    else:
        raise ValueError("dimension must be 1, 2 or 3")
    return [DiscreteCone(d, h) for d in dirs]


@dataclass(frozen=True)
class Localizer:
    """Raised-cosine bump ``prod_j ((1 + cos(x_j - c_j)) / 2)^p``.

    It is a trigonometric polynomial of degree p per axis, so its
    coefficients are exact on the box ``K = p``.
    """

    center: tuple
    power: int = 4

    @property
    def n(self) -> int:
        return len(self.center)

    def function(self, grid_size: int | None = None) -> GridFunction:
        box = FrequencyBox(self.n, self.power)
        c = np.asarray(self.center, dtype=float)
        return GridFunction.from_function(
            lambda x: np.prod([((1 + np.cos(xj - cj)) / 2) ** self.power for xj, cj in zip(x, c)], axis=0),
            box,
            grid_size,
        )


def default_localizers(n: int, cells: int = 4, power: int = 4) -> list[Localizer]:
    """Bumps centered on the ``cells^n`` points ``2 pi j / cells``."""
    centers = itertools.product(*[2 * np.pi * np.arange(cells) / cells] * n)
    return [Localizer(tuple(float(v) for v in c), power) for c in centers]


def dyadic_shells(K: int) -> list[int]:
    """Radii ``K/8, K/4, K/2, K`` rounded down."""
    return [max(1, K // 8), max(1, K // 4), max(1, K // 2), K]


@dataclass
class WaveFrontReport:
    s_star: float
    entries: list = field(default_factory=list)

    def flagged(self) -> set:
        return {(e["cell"], e["cone"]) for e in self.entries if e["flagged"]}

    def to_json(self) -> str:
        def clean(e):
            return {
                "cell": list(e["cell"]),
                "cone": list(e["cone"]),
                "slope": None if not np.isfinite(e["slope"]) else e["slope"],
                "flagged": e["flagged"],
            }

        return json.dumps({"s_star": self.s_star, "entries": [clean(e) for e in self.entries]}, indent=2)


def _cone_slope(coeffs: np.ndarray, box: FrequencyBox, mask: np.ndarray, radii, floor: float) -> float:
    rad = np.sqrt(np.sum(box.points().astype(float) ** 2, axis=-1))
    peaks = []
    for r in radii:
        sel = mask & (np.abs(rad - r) < 0.5)
        if not sel.any():
            raise UndefinedFitError(f"shell of radius {r} has no lattice points in the cone")
        peaks.append(float(np.max(np.abs(coeffs[sel]))))
    peaks = np.asarray(peaks)
    if np.any(peaks[1:] <= floor):
        # coefficients vanish further out: decay is faster than any power
        return -np.inf
    lr = np.log(np.sqrt(1.0 + np.asarray(radii, dtype=float) ** 2))
    return float(np.polyfit(lr, np.log(np.maximum(peaks, np.finfo(float).tiny)), 1)[0])


def wavefront_detect(u: GridFunction, cutoffs=None, cones=None, s_star: float = -4.0, shells=None) -> WaveFrontReport:
    """Flag ``(cell, cone)`` pairs whose localized coefficients decay slower than ``<xi>^{s*}``.

    Shells default to the dyadic radii of ``K - p`` where K is the box of
    u and p the localizer degree, so that the truncation edge of u stays
    out of the fit.
    """
    n = u.n
    cutoffs = cutoffs if cutoffs is not None else default_localizers(n)
    cones = cones if cones is not None else default_cones(n)
    report = WaveFrontReport(float(s_star))
    for chi in cutoffs:
        radii = shells if shells is not None else dyadic_shells(u.box.K - chi.power)
        w = u.multiply(chi.function())
        floor = ZERO_FLOOR * max(float(np.max(np.abs(w.coeffs))), np.finfo(float).tiny)
        for cone in cones:
            slope = _cone_slope(w.coeffs, w.box, cone.mask(w.box), radii, floor)
            report.entries.append({
                "cell": tuple(chi.center),
                "cone": cone.direction,
                "slope": slope,
                "flagged": bool(slope > s_star),
            })
    return report


def operator_wf_containment(a: SymbolTable, u: GridFunction, cones=None, cutoffs=None, s_star: float = -4.0) -> dict:
    """Compare the diagnostics of u and ``a(X, D) u``.

    ``a(X, D) u`` is kept on the box of u grown by the x-band b of the
    symbol so nothing is cut. Its coefficients are only free of the
    truncation of u for ``|xi| <= K - b``, so both fits use the dyadic
    shells of ``K - b - p`` with p the localizer degree.
    """
    n = u.n
    cutoffs = cutoffs if cutoffs is not None else default_localizers(n)
    cones = cones if cones is not None else default_cones(n)
    band = a.x_band()
    Au = apply_pdo(a, u, u.box.grown(band))
    power = max(c.power for c in cutoffs)
    radii = dyadic_shells(u.box.K - band - power)
    ru = wavefront_detect(u, cutoffs, cones, s_star, radii)
    rA = wavefront_detect(Au, cutoffs, cones, s_star, radii)
    new = sorted(rA.flagged() - ru.flagged())
    return {
        "u": ru,
        "Au": rA,
        "new_flags": [{"cell": list(c), "cone": list(k)} for c, k in new],
        "contained": not new,
    }
