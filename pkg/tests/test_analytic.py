import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DESK_GRID
from hpbrdf.analytic import (
    AnalyticPbrdf,
    SpectralIor,
    dielectric_material,
    eval_analytic,
    fresnel_coefficients,
    fresnel_reflection_mueller,
    lobe_distribution,
    material_from_dict,
    material_to_dict,
    metal_material,
)
from hpbrdf.errors import BelowHorizon, ConfigError
from hpbrdf.mueller import dop, is_physical_gk, physical_mask
from hpbrdf.rusinkiewicz import SurfaceFrame

mp.mp.dps = 40


def fresnel_mp(eta, kappa, theta):
    """Arbitrary-precision Fresnel amplitudes, written from Snell's law directly."""
    n = mp.mpc(eta, -kappa)
    ci = mp.cos(theta)
    ct = mp.sqrt(1 - (mp.sin(theta) / n) ** 2)
    rs = (ci - n * ct) / (ci + n * ct)
    rp = (n * ci - ct) / (n * ci + ct)
    return float(abs(rs) ** 2), float(abs(rp) ** 2), float(mp.arg(rs * mp.conj(rp)))


@pytest.mark.parametrize(
    "eta,kappa,theta",
    [(1.5, 0.0, 0.3), (1.5, 0.0, 1.2), (0.2, 3.4, np.pi / 4), (1.3, 0.7, 1.0), (0.6, 5.5, 1.45), (2.4, 0.01, 0.05)],
)
def test_fresnel_matches_high_precision_oracle(eta, kappa, theta):
    rs, rp, delta = fresnel_coefficients(eta, kappa, theta)
    ers, erp, edelta = fresnel_mp(eta, kappa, theta)
    assert rs == pytest.approx(ers, abs=1e-13)
    assert rp == pytest.approx(erp, abs=1e-13)
    if kappa > 0:
        assert np.cos(delta - edelta) == pytest.approx(1.0, abs=1e-12)


def test_fresnel_golden_metal_45deg():
    # frozen after agreement with the arbitrary-precision oracle above
    rs, rp, delta = fresnel_coefficients(0.2, 3.4, np.pi / 4)
    assert rs == pytest.approx(0.9569761776504208, abs=1e-14)
    assert rp == pytest.approx(0.9158034045904097, abs=1e-14)
    assert delta == pytest.approx(-2.7410169, abs=1e-7)


def test_normal_incidence_reflectance():
    eta, kappa = 1.7, 0.4
    rs, rp, _ = fresnel_coefficients(eta, kappa, 0.0)
    expected = ((eta - 1) ** 2 + kappa**2) / ((eta + 1) ** 2 + kappa**2)
    assert rs == pytest.approx(expected, abs=1e-15)
    assert rp == pytest.approx(expected, abs=1e-15)


def test_brewster_angle_extinguishes_p():
    theta_b = np.arctan(1.5)
    _, rp, _ = fresnel_coefficients(1.5, 0.0, theta_b)
    assert rp == pytest.approx(0.0, abs=1e-30)
    s = fresnel_reflection_mueller(1.5, 0.0, theta_b) @ np.array([1.0, 0, 0, 0])
    assert dop(s) == pytest.approx(1.0, abs=1e-12)


def test_grazing_incidence_reflects_everything():
    rs, rp, _ = fresnel_coefficients(1.5, 0.0, np.pi / 2 - 1e-9)
    assert rs == pytest.approx(1.0, abs=1e-7) and rp == pytest.approx(1.0, abs=1e-7)


def test_lossless_dielectric_phase_is_zero_or_pi():
    _, _, delta = fresnel_coefficients(1.5, 0.0, np.linspace(0, 1.5, 50))
    assert np.all((delta == 0.0) | (delta == np.pi))


def test_absorbing_media_have_negative_phase():
    thetas = np.linspace(0.05, 1.5, 30)
    for eta, kappa in [(0.2, 3.4), (1.5, 0.05), (1.2, 1.0)]:
        assert np.all(fresnel_coefficients(eta, kappa, thetas)[2] < 0)


@given(st.floats(1.01, 3.0), st.floats(0.0, 5.0), st.floats(0.0, 1.55))
def test_fresnel_mueller_is_physical(eta, kappa, theta):
    assert is_physical_gk(fresnel_reflection_mueller(eta, kappa, theta))[0]


def test_lobe_normalized_to_unit_projected_solid_angle():
    t = np.linspace(0, np.pi / 2, 20001)
    f = lobe_distribution(t, 0.2) * np.cos(t) * np.sin(t) * 2 * np.pi
    assert np.trapezoid(f, t) == pytest.approx(1.0, abs=1e-6)


def _dir(theta, phi):
    return np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])


hemi = st.tuples(st.floats(0.02, 1.5), st.floats(0, 2 * np.pi))


@settings(max_examples=60)
@given(hemi, hemi)
def test_oracle_reciprocal_in_intensity(a, b):
    for mat in (dielectric_material(DESK_GRID), metal_material(DESK_GRID)):
        m1 = eval_analytic(mat, _dir(*a), _dir(*b), 3)
        m2 = eval_analytic(mat, _dir(*b), _dir(*a), 3)
        assert m1[0, 0] == pytest.approx(m2[0, 0], rel=1e-10, abs=1e-300)


@settings(max_examples=60)
@given(hemi, hemi, st.floats(0, 2 * np.pi))
def test_oracle_isotropic(a, b, rot):
    mat = metal_material(DESK_GRID)
    m1 = eval_analytic(mat, _dir(*a), _dir(*b), 5)
    m2 = eval_analytic(mat, _dir(a[0], a[1] + rot), _dir(b[0], b[1] + rot), 5)
    np.testing.assert_allclose(m2, m1, rtol=1e-9, atol=1e-12 * max(abs(m1[0, 0]), 1e-300))


def test_oracle_matrices_physical_everywhere():
    rng = np.random.default_rng(5)
    n = 3000
    th = np.arccos(rng.uniform(0.02, 1, (2, n)))
    ph = rng.uniform(0, 2 * np.pi, (2, n))
    wi = np.stack([np.sin(th[0]) * np.cos(ph[0]), np.sin(th[0]) * np.sin(ph[0]), np.cos(th[0])], -1)
    wo = np.stack([np.sin(th[1]) * np.cos(ph[1]), np.sin(th[1]) * np.sin(ph[1]), np.cos(th[1])], -1)
    for mat in (dielectric_material(DESK_GRID), metal_material(DESK_GRID), dielectric_material(DESK_GRID, albedo=0.0)):
        assert physical_mask(eval_analytic(mat, wi, wo, rng.integers(0, 16, n))).all()


def test_diffuse_only_is_a_depolarizer():
    mat = AnalyticPbrdf(SpectralIor.constant(1.5, 0, DESK_GRID), np.full(16, 0.8), 0.0, 0.1, DESK_GRID)
    m = eval_analytic(mat, _dir(0.4, 0.1), _dir(0.8, 2.0), 2)
    expected = np.zeros((4, 4))
    expected[0, 0] = 0.8 / np.pi
    np.testing.assert_allclose(m, expected, atol=1e-15)


def test_directional_albedo_bounded_for_dielectric():
    mat = dielectric_material(DESK_GRID, lobe_width=0.1)
    t = np.linspace(0, np.pi / 2, 400)[1:-1]
    p = np.linspace(0, 2 * np.pi, 401)[:-1]
    tt, pp = np.meshgrid(t, p, indexing="ij")
    wo = np.stack([np.sin(tt) * np.cos(pp), np.sin(tt) * np.sin(pp), np.cos(tt)], -1)
    dw = (t[1] - t[0]) * (p[1] - p[0]) * np.sin(tt)
    for theta_i in (0.1, 0.6, np.pi / 3):
        m = eval_analytic(mat, _dir(theta_i, 0.0), wo, 15)
        assert np.sum(m[..., 0, 0] * np.cos(tt) * dw) <= 1.0


def test_below_horizon_rejected():
    with pytest.raises(BelowHorizon):
        eval_analytic(dielectric_material(DESK_GRID), _dir(0.3, 0), [0, 0.5, -0.866], 0)


def test_custom_surface_frame_matches_local():
    mat = metal_material(DESK_GRID)
    n = np.array([0.3, 0.1, 0.95])
    frame = SurfaceFrame.from_normal(n / np.linalg.norm(n))
    wi_l, wo_l = _dir(0.5, 0.3), _dir(0.7, 2.2)
    m_world = eval_analytic(mat, frame.to_world(wi_l), frame.to_world(wo_l), 4, frame)
    np.testing.assert_allclose(m_world, eval_analytic(mat, wi_l, wo_l, 4), rtol=1e-9, atol=1e-14)


def test_material_dict_round_trip_and_validation():
    mat = metal_material(DESK_GRID)
    again = material_from_dict(material_to_dict(mat), DESK_GRID)
    np.testing.assert_array_equal(again.ior.kappa, mat.ior.kappa)
    assert material_from_dict({"preset": "dielectric", "albedo": 0.2}, DESK_GRID).diffuse_albedo[3] == 0.2
    with pytest.raises(ConfigError):
        material_from_dict({"preset": "dielectric", "roughness": 1}, DESK_GRID)
    with pytest.raises(ConfigError):
        material_from_dict({"albedo": 0.2}, DESK_GRID)
    with pytest.raises(ConfigError):
        AnalyticPbrdf(SpectralIor.constant(-1.0, 0, DESK_GRID), np.zeros(16), grid=DESK_GRID)
