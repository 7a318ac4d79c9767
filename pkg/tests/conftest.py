import numpy as np
import pytest
from scipy import optimize

from hpbrdf.analytic import dielectric_material, metal_material
from hpbrdf.mueller import WavelengthGrid
from hpbrdf.table import DESK_DIMS, inpaint, tabulate_analytic

DESK_GRID = WavelengthGrid(414.0, 32.0, 16)


def fibonacci_sphere(n):
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    r = np.sqrt(1 - z * z)
    phi = np.pi * (1 + 5**0.5) * k
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


_SPHERE = fibonacci_sphere(4000)


def stokes_margin(m):
    """Minimum of ``(M s)_0 - |(M s)_pol|`` over fully polarized unit inputs.

    Brute-force oracle for the Stokes criterion: dense sampling of the
    Poincare sphere followed by local refinement of the best candidates.
    Negative means some admissible input maps outside the light cone.
    """
    m = np.asarray(m, dtype=float)

    def f(u):
        s = np.concatenate([[1.0], u / np.linalg.norm(u)])
        out = m @ s
        return out[0] - np.linalg.norm(out[1:])

    s = np.concatenate([np.ones((len(_SPHERE), 1)), _SPHERE], axis=1)
    out = s @ m.T
    vals = out[:, 0] - np.linalg.norm(out[:, 1:], axis=1)
    best = vals.min()
    for i in np.argsort(vals)[:4]:
        res = optimize.minimize(f, _SPHERE[i], method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-13})
        best = min(best, res.fun)
    return best / np.linalg.norm(m)


def random_physical_mueller(rng):
    """Convex mixture of products of rotated polarizers, retarders and diattenuators."""
    from hpbrdf.mueller import depolarizer_mueller, diattenuator_mueller, retarder_mueller

    parts = []
    for _ in range(rng.integers(1, 4)):
        d = rng.normal(size=3)
        d *= rng.uniform(0, 0.99) / np.linalg.norm(d)
        m = retarder_mueller(rng.uniform(0, np.pi), rng.uniform(0, np.pi)) @ diattenuator_mueller(d)
        m = depolarizer_mueller(rng.uniform(0, 1)) @ m if rng.random() < 0.5 else m
        parts.append(rng.uniform(0.1, 1.0) * m)
    return sum(parts)


@pytest.fixture(scope="session")
def desk_grid():
    return DESK_GRID


@pytest.fixture(scope="session")
def dielectric_desk():
    return dielectric_material(DESK_GRID)


@pytest.fixture(scope="session")
def metal_desk():
    return metal_material(DESK_GRID)


@pytest.fixture(scope="session")
def oracle_table(dielectric_desk):
    """Inpainted desk-scale table sampled from the dielectric oracle."""
    return inpaint(tabulate_analytic(dielectric_desk, DESK_DIMS))
