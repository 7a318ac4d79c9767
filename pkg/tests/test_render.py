import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DESK_GRID
from hpbrdf.analytic import dielectric_material, metal_material
from hpbrdf.errors import ConfigError, NoVisibleBands
from hpbrdf.mueller import is_admissible
from hpbrdf.render import (
    PointLight,
    RenderScene,
    SpectralStokesImage,
    TableMaterial,
    aolp_map,
    apply_polarizer,
    cie_cmf,
    dop_map,
    nir_channels,
    read_pfm,
    render_direct,
    render_mueller,
    spectrum_to_linear_rgb,
    to_srgb,
    write_pfm,
    write_png,
)

BANDS = tuple(DESK_GRID.wavelengths)


def _scene(**kw):
    base = dict(width=64, height=64, light=PointLight(position=(0.5, 0.0, 0.866)), wavelengths_nm=BANDS)
    base.update(kw)
    return RenderScene(**base)


def _stokes(data, wl=(550.0,)):
    data = np.asarray(data, float)
    return SpectralStokesImage(data, np.ones(data.shape[1:3], bool), np.asarray(wl))


def test_diffuse_only_is_unpolarized():
    mat = dielectric_material(DESK_GRID, specular_scale=0.0, albedo=0.5)
    img = render_direct(_scene(), mat)
    assert img.mask.sum() > 1000
    assert np.all(img.data[..., 1:] == 0)
    assert img.data[..., 0].max() > 0


def test_brewster_ring_is_fully_polarized():
    mat = dielectric_material(albedo=0.0, lobe_width=0.3)
    angle = 2 * np.arctan(1.5) - 0.06
    scene = RenderScene(
        width=128,
        height=128,
        light=PointLight(position=(np.sin(angle), 0.0, np.cos(angle))),
        wavelengths_nm=(550.0,),
    )
    img = render_direct(scene, mat)
    ring = img.mask & (np.abs(img.aux["theta_d"] - np.arctan(1.5)) < np.radians(0.25)) & (img.data[0, ..., 0] > 0)
    assert ring.sum() >= 10
    assert dop_map(img, 0)[ring].min() >= 0.99


def test_malus_law_sweep():
    s = np.array([2.0, 0.6, -0.8, 0.3])
    img = _stokes(s[None, None, None, :])
    angles = np.linspace(0, np.pi, 37)
    vals = np.array([apply_polarizer(img, a)[0, 0, 0] for a in angles])
    aolp = 0.5 * np.arctan2(s[2], s[1])
    lin = np.hypot(s[1], s[2])
    # least-squares fit of a + b cos^2(theta - aolp)
    design = np.stack([np.ones_like(angles), np.cos(angles - aolp) ** 2], axis=1)
    coef, *_ = np.linalg.lstsq(design, vals, rcond=None)
    assert np.abs(design @ coef - vals).max() < 1e-10
    np.testing.assert_allclose(coef, [(s[0] - lin) / 2, lin], atol=1e-12)


def test_polarizer_on_unpolarized_and_full_pixels():
    unpol = _stokes([[[[1.0, 0, 0, 0]]]])
    for a in np.linspace(0, np.pi, 5):
        assert apply_polarizer(unpol, a)[0, 0, 0] == pytest.approx(0.5)
    full = _stokes([[[[1.0, np.cos(0.6), np.sin(0.6), 0]]]])
    assert apply_polarizer(full, 0.3)[0, 0, 0] == pytest.approx(1.0)
    assert apply_polarizer(full, 0.3 + np.pi / 2)[0, 0, 0] == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("make", [dielectric_material, metal_material])
def test_rendered_pixels_admissible(make):
    img = render_direct(_scene(), make(DESK_GRID))
    s = img.data[:, img.mask]
    assert np.all(s[..., 0] >= 0)
    assert np.all(is_admissible(s))
    assert np.all(dop_map(img)[img.mask] <= 1 + 1e-9)


def test_linear_in_light_radiance():
    mat = metal_material(DESK_GRID)
    a = render_direct(_scene(), mat)
    b = render_direct(_scene(light=PointLight(position=(0.5, 0.0, 0.866), intensity=3.0)), mat)
    np.testing.assert_allclose(b.data, 3 * a.data, rtol=1e-12, atol=0)


def test_frame_changes_keep_intensity():
    mat = metal_material(DESK_GRID)
    plain = render_direct(_scene(), mat)
    rotated = render_direct(_scene(light=PointLight(position=(0.5, 0.0, 0.866), x_axis=(1.0, 1.0, 0.0))), mat)
    np.testing.assert_allclose(rotated.data[..., 0], plain.data[..., 0], rtol=1e-12, atol=1e-300)
    # an upside-down camera sees the same rays with a flipped polarization frame
    flipped = render_direct(_scene(up=(0.0, -1.0, 0.0)), mat)
    np.testing.assert_allclose(flipped.data[:, ::-1, ::-1, 0], plain.data[..., 0], rtol=1e-9, atol=1e-300)


def test_linear_light_rotates_aolp():
    mat = dielectric_material(DESK_GRID, albedo=0.0)
    lit = [render_direct(_scene(light=PointLight(position=(0.5, 0, 0.866), polarization="linear", angle_deg=a)), mat) for a in (0, 90)]
    assert not np.allclose(lit[0].data, lit[1].data)
    np.testing.assert_allclose(lit[0].data.sum(0)[..., 0] + lit[1].data.sum(0)[..., 0],
                               2 * render_direct(_scene(), mat).data.sum(0)[..., 0], rtol=1e-10, atol=1e-300)


def test_table_matches_analytic_render(oracle_table, dielectric_desk):
    scene = _scene(width=96, height=96, wavelengths_nm=BANDS[:4])
    ref = render_direct(scene, dielectric_desk)
    tri = render_direct(scene, TableMaterial(oracle_table, "trilinear"))
    near = render_direct(scene, TableMaterial(oracle_table, "nearest"))
    m = ref.mask & (ref.data[0, ..., 0] > 0)
    rel = np.abs(tri.data[:, m, 0] - ref.data[:, m, 0]) / ref.data[:, m, 0]
    assert np.median(rel) < 0.05

    def roughness(img):
        # mean squared second difference of s0 along rows
        s0 = img.data[0, ..., 0]
        d2 = s0[:, 2:] - 2 * s0[:, 1:-1] + s0[:, :-2]
        return np.mean(d2[m[:, 1:-1] & m[:, 2:] & m[:, :-2]] ** 2)

    assert roughness(tri) < roughness(near)


def test_plane_scene_hits_and_misses():
    scene = _scene(shape="plane", plane_half_size=0.05)
    img = render_direct(scene, dielectric_material(DESK_GRID))
    assert 0 < img.mask.sum() < img.mask.size
    assert np.all(img.data[:, ~img.mask] == 0)


def test_scene_validation():
    with pytest.raises(ConfigError):
        RenderScene(shape="cube")
    with pytest.raises(ConfigError):
        PointLight(polarization="circular")
    with pytest.raises(ConfigError):
        RenderScene(up=(0.0, 0.0, 1.0)).camera_basis()


def test_dop_aolp_maps():
    s = np.zeros((1, 2, 2, 4))
    s[0, 0, 0] = [1, 0, 1, 0]
    s[0, 0, 1] = [1, 0, -1, 0]
    s[0, 1, 0] = [2, -1, 0, 0]
    img = _stokes(s)
    dop = dop_map(img, 0)
    np.testing.assert_allclose(dop, [[1, 1], [0.5, 0]])
    aolp = aolp_map(img, 0)
    np.testing.assert_allclose(aolp[0], [np.pi / 4, 3 * np.pi / 4])
    assert aolp[1, 0] == pytest.approx(np.pi / 2)


@settings(max_examples=50, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10))
def test_aolp_range(s1, s2):
    a = aolp_map(np.array([[[[1.0, s1, s2, 0.0]]]]), 0)
    assert 0 <= a[0, 0] < np.pi


def test_flat_spectrum_is_neutral():
    wl = np.arange(414.0, 707.0, 8.0)
    rgb = spectrum_to_linear_rgb(np.ones(len(wl)), wl)
    assert np.ptp(rgb) / rgb.mean() < 0.02
    # the CIE 1931 functions have equal areas, so an equal-energy spectrum sits at x = y = 1/3
    cwl, cmf = cie_cmf()
    assert cwl[0] == 380 and cwl[-1] == 780 and cmf.shape == (81, 3)
    xyz = cmf.sum(axis=0)
    np.testing.assert_allclose(xyz / xyz.sum(), 1 / 3, atol=2e-3)


def test_zero_image_is_black_and_green_at_550():
    zero = SpectralStokesImage(np.zeros((3, 2, 2, 4)), np.ones((2, 2), bool), np.array([450.0, 550.0, 650.0]))
    assert np.all(to_srgb(zero) == 0)
    mono = zero.data.copy()
    mono[1, ..., 0] = 1.0
    px = to_srgb(SpectralStokesImage(mono, zero.mask, zero.wavelengths_nm))[0, 0]
    assert px[1] > px[0] and px[1] > px[2]


def test_nir_only_raises_and_nir_channels():
    img = SpectralStokesImage(np.ones((2, 1, 1, 4)), np.ones((1, 1), bool), np.array([800.0, 900.0]))
    with pytest.raises(NoVisibleBands):
        to_srgb(img)
    assert sorted(nir_channels(img)) == [800.0, 900.0]


def test_pfm_and_png_writers(tmp_path):
    rng = np.random.default_rng(0)
    grey = rng.normal(size=(5, 7)).astype(np.float32)
    colour = rng.normal(size=(4, 3, 3)).astype(np.float32)
    write_pfm(tmp_path / "g.pfm", grey)
    write_pfm(tmp_path / "c.pfm", colour)
    assert np.array_equal(read_pfm(tmp_path / "g.pfm"), grey)
    assert np.array_equal(read_pfm(tmp_path / "c.pfm"), colour)
    from PIL import Image

    px = rng.integers(0, 256, (6, 4, 3), dtype=np.uint8)
    write_png(tmp_path / "a.png", px)
    assert np.array_equal(np.asarray(Image.open(tmp_path / "a.png")), px)


def test_mueller_render_times_light_gives_stokes():
    scene = _scene(light=PointLight(position=(0.5, 0, 0.866), polarization="linear", angle_deg=30))
    mat = metal_material(DESK_GRID)
    mr = render_mueller(scene, mat)
    img = render_direct(scene, mat)
    s = scene.light.stokes(len(BANDS))
    np.testing.assert_allclose(np.einsum("bhwij,bj->bhwi", mr.data, s), img.data)
