"""Half/difference angle parameterization and the hpBRDF polarization frames.

Directions are given in world coordinates together with a :class:`SurfaceFrame`
(tangent, bitangent, normal).  All functions broadcast over leading axes.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateHalfVector
from .mueller import PolarizationFrame

_EPS = 1e-12


@dataclass(frozen=True)
class SurfaceFrame:
    normal: np.ndarray
    tangent: np.ndarray

    @property
    def bitangent(self):
        return np.cross(self.normal, self.tangent)

    @classmethod
    def local(cls):
        return cls(np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))

    @classmethod
    def from_normal(cls, normal, up=(0.0, 1.0, 0.0)):
        """Tangent frame with the tangent orthogonal to ``up`` (isotropic use)."""
        n = np.asarray(normal, dtype=float)
        up = np.broadcast_to(np.asarray(up, dtype=float), n.shape)
        t = np.cross(up, n)
        norm = np.linalg.norm(t, axis=-1, keepdims=True)
        alt = np.cross(np.array([1.0, 0.0, 0.0]), n)
        t = np.where(norm > 1e-8, t, alt)
        t = t / np.linalg.norm(t, axis=-1, keepdims=True)
        return cls(n, t)

    def to_local(self, v):
        v = np.asarray(v, dtype=float)
        return np.stack(
            [
                np.sum(v * self.tangent, axis=-1),
                np.sum(v * self.bitangent, axis=-1),
                np.sum(v * self.normal, axis=-1),
            ],
            axis=-1,
        )

    def to_world(self, v):
        v = np.asarray(v, dtype=float)
        return (
            v[..., 0:1] * self.tangent
            + v[..., 1:2] * self.bitangent
            + v[..., 2:3] * self.normal
        )


@dataclass(frozen=True)
class RusinkiewiczCoord:
    phi_d: np.ndarray
    theta_d: np.ndarray
    theta_h: np.ndarray


def _rot_z(v, angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.stack([c * v[..., 0] - s * v[..., 1], s * v[..., 0] + c * v[..., 1], v[..., 2]], axis=-1)


def _rot_y(v, angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.stack([c * v[..., 0] + s * v[..., 2], v[..., 1], -s * v[..., 0] + c * v[..., 2]], axis=-1)


def half_vector(omega_i, omega_o):
    total = np.asarray(omega_i, dtype=float) + np.asarray(omega_o, dtype=float)
    norm = np.linalg.norm(total, axis=-1, keepdims=True)
    if np.any(norm < _EPS):
        raise DegenerateHalfVector("omega_i and omega_o are opposite")
    return total / norm


def _half_angles(h_local):
    theta_h = np.arctan2(np.hypot(h_local[..., 0], h_local[..., 1]), h_local[..., 2])
    phi_h = np.arctan2(h_local[..., 1], h_local[..., 0])
    phi_h = np.where(theta_h < _EPS, 0.0, phi_h)
    return theta_h, phi_h


def to_rusinkiewicz(omega_i, omega_o, frame=None, return_phi_h=False):
    """Map a direction pair to ``(phi_d, theta_d, theta_h)``.

    ``phi_d`` is wrapped to ``[0, 2*pi)``; at ``theta_h == 0`` the canonical
    half-vector azimuth 0 is used.
    """
    frame = frame or SurfaceFrame.local()
    wi = frame.to_local(omega_i)
    wo = frame.to_local(omega_o)
    h = half_vector(wi, wo)
    theta_h, phi_h = _half_angles(h)
    d = _rot_y(_rot_z(wi, -phi_h), -theta_h)
    theta_d = np.arctan2(np.hypot(d[..., 0], d[..., 1]), d[..., 2])
    phi_d = np.mod(np.arctan2(d[..., 1], d[..., 0]), 2 * np.pi)
    phi_d = np.where(phi_d >= 2 * np.pi, 0.0, phi_d)
    coord = RusinkiewiczCoord(phi_d, theta_d, theta_h)
    if return_phi_h:
        return coord, phi_h
    return coord


def from_rusinkiewicz(coord, frame=None, phi_h=0.0):
    """Inverse of :func:`to_rusinkiewicz` for the given half-vector azimuth."""
    frame = frame or SurfaceFrame.local()
    phi_d, theta_d, theta_h = np.broadcast_arrays(
        np.asarray(coord.phi_d, dtype=float),
        np.asarray(coord.theta_d, dtype=float),
        np.asarray(coord.theta_h, dtype=float),
    )
    st = np.sin(theta_d)
    d = np.stack([st * np.cos(phi_d), st * np.sin(phi_d), np.cos(theta_d)], axis=-1)
    wi = _rot_z(_rot_y(d, theta_h), phi_h)
    z = np.zeros(theta_h.shape + (3,))
    z[..., 2] = 1.0
    h = _rot_z(_rot_y(z, theta_h), phi_h)
    wo = 2.0 * np.sum(wi * h, axis=-1, keepdims=True) * h - wi
    return frame.to_world(wi), frame.to_world(wo)


def hpbrdf_frames(omega_i, omega_o, frame=None):
    """Incident and outgoing polarization frames the hpBRDF is expressed in.

    Both x-axes are the bitangent of the half-vector azimuth, projected off
    the ray.  The matrices therefore depend only on the half/difference
    angles for isotropic materials.  The incident frame propagates along
    ``-omega_i``, the outgoing one along ``omega_o``.
    """
    frame = frame or SurfaceFrame.local()
    wi = frame.to_local(omega_i)
    wo = frame.to_local(omega_o)
    theta_h, phi_h = _half_angles(half_vector(wi, wo))
    b_h = np.stack([-np.sin(phi_h), np.cos(phi_h), np.zeros_like(phi_h)], axis=-1)
    b_h = frame.to_world(b_h)
    f_in = PolarizationFrame.from_propagation(-np.asarray(omega_i, dtype=float), b_h)
    f_out = PolarizationFrame.from_propagation(np.asarray(omega_o, dtype=float), b_h)
    return f_in, f_out
