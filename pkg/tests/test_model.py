import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nhdms.model import (HOST, METAL, VACUUM, MaterialSet, NondimScheme, build_coefficient_field,
                         nondimensionalize, preset_materials)

C_LIGHT = 299792458.0


def test_default_scaling_values():
    s = nondimensionalize(preset_materials("case_5_1"))
    assert s.omega_p == 1.0
    assert s.gamma == pytest.approx(1.08e14 / 1.37e16, rel=1e-14)
    assert s.beta == pytest.approx(1.08e6 / (1e-9 * 1.37e16), rel=1e-14)
    # w_p * 1 nm / c with c from the SI constants
    assert s.wave_factor == pytest.approx(1.37e16 * 1e-9 / C_LIGHT, rel=1e-9)
    assert s.wavenumber(0.5) == pytest.approx(0.5 * s.wave_factor)


def test_presets_differ_only_in_host():
    a, b = preset_materials("case_5_1"), preset_materials("case_5_2")
    assert (a.eps_host, b.eps_host) == (3.9, 80.0)
    assert a.omega_p == b.omega_p and a.eps_metal == b.eps_metal == 9.5
    with pytest.raises(KeyError):
        preset_materials("gold")
    assert preset_materials("case_5_1", gamma=2e14).gamma == 2e14


def test_invalid_material_rejected():
    with pytest.raises(ValueError):
        MaterialSet(gamma=-1.0)
    with pytest.raises(ValueError):
        MaterialSet(eps_host=float("nan"))
    with pytest.raises(ValueError):
        nondimensionalize(MaterialSet(), wave_factor=0.0)


@given(st.floats(1e-12, 1e-6), st.floats(1e10, 1e18), st.floats(1e-3, 1e3))
def test_scaling_round_trip(length, freq, x):
    mats = MaterialSet()
    sch = NondimScheme(length_scale=length, frequency_scale=freq)
    assert sch.unscale_length(sch.scale_length(x)) == pytest.approx(x, rel=1e-14)
    assert sch.unscale_frequency(sch.scale_frequency(x, mats), mats) == pytest.approx(x, rel=1e-14)


def test_literal_wave_factor():
    s = nondimensionalize(MaterialSet(), wave_factor=1.0)
    assert s.wavenumber(0.3) == 0.3


def test_gamma_star_definition():
    s = nondimensionalize(MaterialSet())
    w = 0.75
    assert s.gamma_star(w, s.gamma) == pytest.approx(w * (w + 1j * s.gamma))
    lam = np.array([0.1, 1.0])
    # the imaginary part grows linearly in the extension parameter
    assert np.allclose(s.gamma_star(w, lam).imag, w * lam)
    assert s.beta_star(4.0) == 4.0


def test_coefficient_field_fills_regions():
    s = nondimensionalize(preset_materials("case_5_2"))
    region = np.array([VACUUM, HOST, METAL, HOST])
    c = build_coefficient_field(region, s)
    assert np.array_equal(c.eps, [1.0, 80.0, 9.5, 80.0])
    assert np.array_equal(c.gamma, [0, 0, s.gamma, 0])
    e = build_coefficient_field(region, s, lam=3.0)
    assert np.array_equal(e.gamma, [0, 3.0, s.gamma, 3.0])
    assert np.array_equal(e.beta2, [0, 3.0, s.beta2, 3.0])
    with pytest.raises(ValueError):
        build_coefficient_field(np.array([0, 7]), s)
    with pytest.raises(ValueError):
        build_coefficient_field(region, s, lam=-1.0)
