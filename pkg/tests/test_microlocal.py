import json

import numpy as np
import pytest

from torus_pdo.errors import PreconditionError
from torus_pdo.harmonic import GridFunction
from torus_pdo.lattice import FrequencyBox
from torus_pdo.microlocal import (
    DiscreteCone,
    Localizer,
    default_cones,
    default_localizers,
    dyadic_shells,
    operator_wf_containment,
    wavefront_detect,
)
from torus_pdo.symbols import SymbolTable


def sawtooth_1d(K):
    # x on (-pi, pi): coefficients i (-1)^k / k, jump at x = pi
    box = FrequencyBox(1, K)
    k = box.axis()
    c = np.zeros(box.shape, complex)
    nz = k != 0
    c[nz] = 1j * (-1.0) ** k[nz] / k[nz]
    return GridFunction(c, box)


def sawtooth_2d(K):
    # singular along x1 = pi, smooth in x2
    box = FrequencyBox(2, K)
    c = np.zeros(box.shape, complex)
    k = box.axis()
    nz = k != 0
    c[nz, K] = 1j * (-1.0) ** k[nz] / k[nz]
    return GridFunction(c, box)


class TestHelpers:
    def test_shells(self):
        assert dyadic_shells(64) == [8, 16, 32, 64]
        assert dyadic_shells(4) == [1, 1, 2, 4]

    def test_cone_normalized_and_membership(self):
        c = DiscreteCone((3.0, 0.0))
        assert c.direction == (1.0, 0.0)
        assert c.contains_direction((10, 3))
        assert not c.contains_direction((1, 1))
        with pytest.raises(ValueError):
            DiscreteCone((0.0, 0.0))

    def test_cone_mask(self):
        mask = DiscreteCone((1.0,)).mask(FrequencyBox(1, 5))
        assert mask.tolist() == [False] * 6 + [True] * 5

    def test_empty_cone_rejected(self):
        with pytest.raises(PreconditionError):
            DiscreteCone((1.0,), r0=10).mask(FrequencyBox(1, 3))

    def test_default_counts(self):
        assert [len(default_cones(n)) for n in (1, 2, 3)] == [2, 8, 14]
        assert len(default_localizers(2, cells=3)) == 9

    def test_localizer_exact(self):
        chi = Localizer((0.0,), power=2).function()
        # ((1 + cos x) / 2)^2 = 3/8 + cos(x) / 2 + cos(2x) / 8
        assert np.allclose(chi.coeffs, [1 / 16, 1 / 4, 3 / 8, 1 / 4, 1 / 16], atol=1e-15)


class TestDetect:
    @pytest.mark.parametrize("n", [1, 2])
    def test_trig_polynomial_not_flagged(self, n, rng):
        box = FrequencyBox(n, 32)
        c = np.zeros(box.shape, complex)
        core = tuple(slice(32 - 3, 32 + 4) for _ in range(n))
        c[core] = rng.standard_normal(c[core].shape)
        rep = wavefront_detect(GridFunction(c, box))
        assert rep.flagged() == set()
        assert all(e["slope"] == -np.inf for e in rep.entries)

    def test_sawtooth_1d(self):
        rep = wavefront_detect(sawtooth_1d(128))
        flagged = rep.flagged()
        # the localizer at 0 vanishes to high order at the jump
        assert not any(cell == (0.0,) for cell, _ in flagged)
        assert ((np.pi,), (1.0,)) in flagged and ((np.pi,), (-1.0,)) in flagged

    def test_sawtooth_2d_directions(self):
        rep = wavefront_detect(sawtooth_2d(32))
        cones = default_cones(2)
        meeting = {c.direction for c in cones if c.contains_direction((1, 0)) or c.contains_direction((-1, 0))}
        assert {cone for _, cone in rep.flagged()} == meeting

    def test_json(self):
        rep = wavefront_detect(sawtooth_1d(32))
        data = json.loads(rep.to_json())
        assert data["s_star"] == -4.0 and len(data["entries"]) == 8


class TestContainment:
    def test_multiplication_adds_nothing(self):
        u = sawtooth_2d(32)
        a = SymbolTable.from_function(lambda x, k: 2 + np.cos(x[0]) + 0 * k[0], u.box, 32)
        res = operator_wf_containment(a, u)
        assert res["contained"] and res["new_flags"] == []
        assert res["u"].flagged()

    def test_smooth_input_stays_smooth(self):
        box = FrequencyBox(1, 64)
        u = GridFunction.from_function(lambda x: np.exp(np.cos(x[0])), box)
        a = SymbolTable.from_function(lambda x, k: np.exp(1j * x[0]) * np.sqrt(1 + k[0] ** 2), box, 128)
        res = operator_wf_containment(a, u)
        assert res["Au"].flagged() == set() and res["contained"]
