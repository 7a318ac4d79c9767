"""Pipeline configuration: a JSON document layered over built-in defaults.

Unknown keys are rejected at every level.  ``HPBRDF_CONFIG`` names the file
used when no ``--config`` is given.  Defaults reproduce the full-scale rig
(68 bands, 25 arm angles, 361x91x91 angular bins); ``configs/desk.json``
shrinks everything to laptop scale.
"""

import copy
import json
import os
from dataclasses import dataclass

import numpy as np

from .analytic import material_from_dict
from .ellipsometer import (
    ANALYZER_QWP_DEG,
    ARM_DEG,
    ILLUM_QWP_DEG,
    AcquisitionConfig,
    SphereScene,
    _blackbody,
    split_occlusion_masks,
)
from .errors import ConfigError
from .mueller import WavelengthGrid
from .neural import TrainConfig
from .render import PointLight, RenderScene
from .table import FULL_DIMS

CONFIG_ENV = "HPBRDF_CONFIG"

DEFAULTS = {
    "seed": 0,
    "material": {"preset": "dielectric"},
    "wavelength": {"start_nm": 414.0, "step_nm": 8.0, "count": 68},
    "acquisition": {
        "illum_qwp_deg": list(ILLUM_QWP_DEG),
        "analyzer_qwp_deg": list(ANALYZER_QWP_DEG),
        "arm_deg": list(ARM_DEG),
        "retardance_deg": 90.0,
        "light_temperature_k": 3200.0,
        "noise_rel": 0.0,
        "split_occlusion": False,
        "falloff": True,
        "foreshortening": True,
    },
    "scene": {
        "radius": 0.05,
        "camera_distance": 1.0,
        "light_distance": 1.0,
        "width": 410,
        "height": 410,
        "fill": 0.9,
    },
    "table": {"dims": list(FULL_DIMS)},
    "inpaint": {"sigma_bins": [2.0, 2.0, 2.0], "truncate": 3.0, "max_rounds": 16},
    "render": {
        "shape": "sphere",
        "width": 256,
        "height": 256,
        "radius": 0.05,
        "camera_position": [0.0, 0.0, 1.0],
        "look_at": [0.0, 0.0, 0.0],
        "fov_deg": None,
        "wavelengths_nm": None,
        "lookup_mode": "trilinear",
        "light": {
            "position": [0.5, 0.0, 0.866],
            "intensity": 1.0,
            "polarization": "unpolarized",
            "angle_deg": 0.0,
        },
    },
    "train": {
        "hidden": [256, 256, 256, 256],
        "n_frequencies": 4,
        "activation": "silu",
        "steps": 200000,
        "batch_size": 4096,
        "learning_rate": 1e-3,
        "decay_start": 0.8,
    },
}

# sections whose contents are free-form (validated by their consumer)
_OPEN = {("material",)}


def _merge(base, override, path=()):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            where = ".".join(path + (key,))
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and path + (key,) not in _OPEN:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {'.'.join(path + (key,))!r} must be an object")
            out[key] = _merge(base[key], value, path + (key,))
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class PipelineConfig:
    data: dict

    @classmethod
    def from_dict(cls, overrides=None):
        return cls(_merge(DEFAULTS, overrides or {}))

    @classmethod
    def load(cls, path=None):
        """Read ``path`` (or ``$HPBRDF_CONFIG``); built-in defaults when neither is set."""
        path = path or os.environ.get(CONFIG_ENV)
        if not path:
            return cls.from_dict()
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(raw)

    def to_json(self):
        return json.dumps(self.data, indent=2, sort_keys=True)

    @property
    def seed(self):
        return int(self.data["seed"])

    def grid(self):
        w = self.data["wavelength"]
        return WavelengthGrid(float(w["start_nm"]), float(w["step_nm"]), int(w["count"]))

    def material(self):
        return material_from_dict(self.data["material"], self.grid())

    def scene(self):
        s = self.data["scene"]
        return SphereScene(
            radius=float(s["radius"]),
            camera_distance=float(s["camera_distance"]),
            light_distance=float(s["light_distance"]),
            width=int(s["width"]),
            height=int(s["height"]),
            fill=float(s["fill"]),
        )

    def acquisition(self, seed=None):
        a = self.data["acquisition"]
        grid = self.grid()
        s = self.data["scene"]
        masks = split_occlusion_masks(int(s["width"]), int(s["height"])) if a["split_occlusion"] else None
        return AcquisitionConfig(
            illum_qwp_angles=np.radians(a["illum_qwp_deg"]),
            analyzer_qwp_angles=np.radians(a["analyzer_qwp_deg"]),
            light_arm_angles=np.radians(a["arm_deg"]),
            wavelength_grid=grid,
            illum_retardance=np.radians(float(a["retardance_deg"])),
            analyzer_retardance=np.radians(float(a["retardance_deg"])),
            light_spectrum=_blackbody(grid.wavelengths, float(a["light_temperature_k"])),
            noise_rel=float(a["noise_rel"]),
            occlusion_masks=masks,
            falloff=bool(a["falloff"]),
            foreshortening=bool(a["foreshortening"]),
            seed=self.seed if seed is None else int(seed),
        )

    def table_dims(self):
        dims = tuple(int(d) for d in self.data["table"]["dims"])
        if len(dims) != 4 or min(dims) < 2:
            raise ConfigError("table.dims needs four sizes >= 2")
        return dims

    def inpaint_args(self):
        p = self.data["inpaint"]
        return {
            "sigma_bins": tuple(float(x) for x in p["sigma_bins"]),
            "truncate": float(p["truncate"]),
            "max_rounds": int(p["max_rounds"]),
        }

    def train_config(self, seed=None):
        t = self.data["train"]
        return TrainConfig(
            steps=int(t["steps"]),
            batch_size=int(t["batch_size"]),
            learning_rate=float(t["learning_rate"]),
            decay_start=float(t["decay_start"]),
            seed=self.seed if seed is None else int(seed),
        )


def render_scene_from_dict(data, default_wavelengths=None):
    """Scene for the renderer from a ``render``-section-shaped mapping."""
    merged = _merge(DEFAULTS["render"], data, ("render",))
    light = PointLight(
        position=tuple(merged["light"]["position"]),
        intensity=merged["light"]["intensity"],
        polarization=merged["light"]["polarization"],
        angle_deg=float(merged["light"]["angle_deg"]),
    )
    wl = merged["wavelengths_nm"]
    if wl is None:
        wl = default_wavelengths if default_wavelengths is not None else [550.0]
    return (
        RenderScene(
            shape=merged["shape"],
            width=int(merged["width"]),
            height=int(merged["height"]),
            radius=float(merged["radius"]),
            camera_position=tuple(merged["camera_position"]),
            look_at=tuple(merged["look_at"]),
            fov_deg=merged["fov_deg"],
            light=light,
            wavelengths_nm=tuple(float(x) for x in wl),
        ),
        merged["lookup_mode"],
    )


def load_render_scene(path, default_wavelengths=None):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return render_scene_from_dict(raw, default_wavelengths)
