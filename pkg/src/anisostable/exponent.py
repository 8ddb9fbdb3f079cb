"""Characteristic exponent of the stable semigroup.

The exponent is ``phi_constant * integral over the sphere of |u . xi|^alpha
mu(dxi)`` with ``phi_constant = pi / (2 sin(pi alpha / 2) Gamma(1 + alpha))``.
Atoms are summed exactly; the rotation-invariant part has a closed form; cap
contributions depend only on the angle between the frequency and the cap
center, so they are tabulated once per cap geometry and spline-interpolated.
Homogeneity ``Phi(u) = |u|^alpha Phi(u/|u|)`` holds exactly by construction.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.interpolate import CubicSpline

from .measures import Cap, StableModel, _cap_axis_integral, sphere_grid

_CAP_PROFILE_POINTS = 513
_cap_profile_cache: dict = {}


def uniform_abs_moment(d, alpha):
    """E|e . Theta|^alpha for Theta uniform on the sphere."""
    if d == 1:
        return 1.0
    if d == 2:
        return math.gamma((alpha + 1) / 2) * math.sqrt(np.pi) / (
            math.gamma(alpha / 2 + 1) * np.pi)
    if d == 3:
        return 1.0 / (alpha + 1.0)
    raise ValueError(f"unsupported dimension {d}")


def _cap_profile(d, alpha, ang_radius):
    """Spline of beta -> integral over a unit-density cap of |cos(angle)|^alpha."""
    key = (d, round(alpha, 12), round(ang_radius, 12))
    if key in _cap_profile_cache:
        return _cap_profile_cache[key]
    betas = np.linspace(0.0, np.pi, _CAP_PROFILE_POINTS)
    vals = np.empty_like(betas)
    f = lambda c: np.abs(c) ** alpha
    if d == 2:
        axis = np.array([1.0, 0.0])
        centers = np.column_stack([np.cos(betas), np.sin(betas)])
    else:
        axis = np.array([1.0, 0.0, 0.0])
        centers = np.column_stack(
            [np.cos(betas), np.sin(betas), np.zeros_like(betas)])
    for i, c in enumerate(centers):
        cap = Cap(c, ang_radius, 1.0)
        vals[i] = _cap_axis_integral(cap, d, axis, f, [np.pi / 2.0],
                                     1e-12, 1e-10)
    spline = CubicSpline(betas, vals, bc_type=((1, 0.0), (1, 0.0)))
    _cap_profile_cache[key] = spline
    return spline


class ExponentEvaluator:
    """Vectorized evaluation of the characteristic exponent."""

    def __init__(self, model: StableModel):
        self.model = model
        self.alpha = model.alpha
        self.d = model.d
        self.phi_constant = model.phi_constant
        m = model.measure
        self._atom_dirs = m.atom_directions
        self._atom_masses = m.atom_masses
        self._uniform_coef = (
            m.uniform_mass * uniform_abs_moment(self.d, self.alpha))
        self._caps = [(c.center, c.density, _cap_profile(self.d, self.alpha,
                                                         c.angular_radius))
                      for c in m.caps]
        self._sphere_cache = None

    def sphere_exponent(self, dirs):
        """Phi on unit directions (rows of ``dirs``)."""
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        out = np.zeros(dirs.shape[0])
        if self._atom_masses.size:
            out += np.abs(dirs @ self._atom_dirs.T) ** self.alpha @ self._atom_masses
        out += self._uniform_coef
        for center, q, profile in self._caps:
            beta = np.arccos(np.clip(dirs @ center, -1.0, 1.0))
            out += q * profile(beta)
        return self.phi_constant * out

    def __call__(self, u):
        """Phi(u) for an (n, d) array or a single point; Phi(0) = 0."""
        u = np.asarray(u, dtype=float)
        single = u.ndim == 1
        u = np.atleast_2d(u)
        norms = np.linalg.norm(u, axis=1)
        out = np.zeros(u.shape[0])
        nz = norms > 0
        if np.any(nz):
            out[nz] = norms[nz] ** self.alpha * self.sphere_exponent(
                u[nz] / norms[nz, None])
        return float(out[0]) if single else out

    def sphere_range(self, n=None):
        """(min, max) of Phi over a deterministic sphere grid."""
        if self._sphere_cache is None:
            if n is None:
                n = {1: 2, 2: 1440, 3: 6000}[self.d]
            vals = self.sphere_exponent(sphere_grid(self.d, n))
            self._sphere_cache = (float(vals.min()), float(vals.max()))
        return self._sphere_cache


def phi_eval(model: StableModel, u):
    """One-shot exponent evaluation (builds no lattice tables for atoms)."""
    return ExponentEvaluator(model)(u)
