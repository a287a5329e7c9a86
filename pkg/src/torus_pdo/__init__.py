"""Pseudo-differential and Fourier series operators on the torus.

Symbols live on ``T^n x Z^n``: periodic in x, tabulated on a finite
frequency box in xi. Submodules are imported lazily so that thread
settings chosen by the command line reach the numeric libraries.
"""
from __future__ import annotations

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "lattice": ["FrequencyBox", "LatticeFunction", "MultiIndex", "forward_difference", "backward_difference",
                "leibniz_difference", "summation_by_parts", "discrete_taylor", "taylor_remainder",
                "taylor_remainder_bound", "bracket"],
    "harmonic": ["GridFunction", "EuclideanSampledFunction", "toroidal_ft", "inverse_toroidal_ft", "euclidean_ft",
                 "periodize", "poisson_sums", "sobolev_norm", "read_grid_function", "write_grid_function"],
    "symbols": ["SymbolTable", "AmplitudeTable", "ThetaKernel", "extend_symbol", "restrict_symbol",
                "estimate_class_constants", "read_symbol_table", "write_symbol_table"],
    "quantize": ["apply_pdo", "extract_symbol", "pdo_operator", "apply_amplitude", "kernel_of",
                 "LinearOperatorHandle"],
    "calculus": ["AsymptoticSeries", "compose_symbols", "adjoint_symbol", "amplitude_to_symbol", "parametrix",
                 "fit_decay_order"],
    "fso": ["PhaseTable", "FourierSeriesOp", "apply_fso", "compose_fso_pdo", "compose_pdo_fso",
            "compose_pdo_fso_difference", "check_phase", "schur_l2_bound", "fso_l2_check", "operator_norm",
            "PsiCorrection"],
    "evolve": ["CauchyProblem", "solve_reference", "solve_fso", "embed_and_periodize"],
    "microlocal": ["DiscreteCone", "wavefront_detect", "operator_wf_containment"],
    "expr": ["parse_expression"],
}
_WHERE = {name: mod for mod, names in _EXPORTS.items() for name in names}

__all__ = sorted(_WHERE) + ["__version__"]


def __getattr__(name):
    mod = _WHERE.get(name)
    if mod is None:
        raise AttributeError(f"module 'torus_pdo' has no attribute {name!r}")
    return getattr(importlib.import_module(f".{mod}", __name__), name)
