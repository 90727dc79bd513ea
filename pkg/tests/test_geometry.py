import math

import pytest

from wdepth.geometry import (
    C_LIGHT,
    EnsembleGeometry,
    atom_number,
    interaction_volume,
    rayleigh_length,
)
from scipy import integrate


def test_rayleigh_length_cs_d2():
    assert rayleigh_length(100e-6, C_LIGHT / 351.726e12) == pytest.approx(3.69e-2, rel=1e-2)


def test_rayleigh_zero_waist():
    assert rayleigh_length(0.0, 852e-9) == 0.0


def test_volume_matches_quadrature():
    geom = EnsembleGeometry(100e-6, 852e-9, 0.0753, 0.0369)
    area = lambda z: math.pi * math.log(10) * geom.beam_waist**2 * (1 + (z / geom.z_w) ** 2)
    num = integrate.quad(area, -geom.cell_length / 2, geom.cell_length / 2)[0]
    assert interaction_volume(geom) == pytest.approx(num, rel=1e-12)


def test_volume_long_rayleigh_limit():
    geom = EnsembleGeometry(1e-3, 1e-9, 0.01)
    cyl = math.pi * math.log(10) * 1e-6 * 0.01
    assert interaction_volume(geom) == pytest.approx(cyl, rel=1e-6)


def test_reference_atom_number():
    geom = EnsembleGeometry(100e-6, C_LIGHT / 351.726e12, 0.0753, 0.0369)
    n = atom_number(1.2133e18, interaction_volume(geom))
    assert n == pytest.approx(8.85e9, rel=0.02)
    assert atom_number(0.0, interaction_volume(geom)) == 0.0


def test_provenance_flags_mismatch():
    lam = C_LIGHT / 351.726e12
    ok = EnsembleGeometry(100e-6, lam, 0.0753, 0.0369).provenance
    assert ok["rayleigh_source"] == "user" and not ok["rayleigh_inconsistent"]
    bad = EnsembleGeometry(100e-6, lam, 0.0753, 0.05).provenance
    assert bad["rayleigh_inconsistent"]
    assert EnsembleGeometry(100e-6, lam, 0.0753).provenance["rayleigh_source"] == "derived"


def test_from_dict():
    g = EnsembleGeometry.from_dict({"beam_waist_m": 1e-4, "wavelength_m": 852e-9,
                                    "cell_length_m": 0.0753})
    assert g.rayleigh_length is None
    with pytest.raises(KeyError):
        EnsembleGeometry.from_dict({"beam_waist_m": 1e-4, "cell_length_m": 0.0753})
    with pytest.raises(ValueError):
        EnsembleGeometry(-1e-4, 852e-9, 0.0753)
