"""Spectral measures on the unit sphere and the induced jump-intensity measures.

A model is a finite symmetric nondegenerate measure ``mu`` on the unit
sphere together with a stability index ``alpha`` in (0, 2).  The jump
measure is the polar product ``r**(-1-alpha) dr x mu(dtheta)``; it is
homogeneous of order ``-alpha``.  Everything this module computes reduces
to one primitive: integrals of functions of ``xi . axis`` against ``mu``,
evaluated exactly for atoms and by adaptive quadrature for the continuous
components (caps, uniform part, shrinking-cap families).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

# Quadrature defaults (absolute / relative); integrands here are smooth away
# from a known finite set of breakpoints, which callers must supply.
QUAD_EPSABS = 1e-10
QUAD_EPSREL = 1e-8
_RADIAL_NODES = 64

# Angle below which a scan point is treated as lying exactly on an atom ray.
_ON_RAY_TOL = 1e-12


class ModelError(ValueError):
    """Raised for invalid spectral-measure specifications."""


def unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ModelError("zero vector cannot be normalized")
    return v / n


def angle_between(u, v):
    c = float(np.clip(np.dot(u, v), -1.0, 1.0))
    return math.acos(c)


def orthonormal_frame(axis):
    """Two unit vectors completing ``axis`` (d>=2) to an orthonormal basis."""
    axis = np.asarray(axis, dtype=float)
    d = axis.size
    k = int(np.argmin(np.abs(axis)))
    e = np.zeros(d)
    e[k] = 1.0
    u = e - np.dot(e, axis) * axis
    u /= np.linalg.norm(u)
    if d == 2:
        return u, None
    w = np.cross(axis, u)
    return u, w / np.linalg.norm(w)


def circle_directions(n, offset=0.0):
    t = offset + 2.0 * np.pi * np.arange(n) / n
    return np.column_stack([np.cos(t), np.sin(t)])


def fibonacci_sphere(n):
    """Deterministic quasi-uniform direction set on S^2."""
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + 5.0**0.5) * i
    return np.column_stack(
        [np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)]
    )


def sphere_grid(d, n):
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        return circle_directions(n)
    if d == 3:
        return fibonacci_sphere(n)
    raise ModelError(f"no direction grid for d={d}")


@lru_cache(maxsize=8)
def _leggauss(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _gl_nodes(lo, hi, n=_RADIAL_NODES):
    x, w = _leggauss(n)
    mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
    return mid + half * x, half * w


# ---------------------------------------------------------------------------
# components


@dataclass(frozen=True)
class Cap:
    """Constant surface density on a spherical cap (one of a symmetric pair)."""

    center: np.ndarray
    angular_radius: float
    density: float

    def mass(self, d):
        a, q = self.angular_radius, self.density
        if d == 2:
            return 2.0 * a * q
        return 2.0 * np.pi * q * (1.0 - math.cos(a))


@dataclass(frozen=True)
class Feature:
    """A direction at which the measure has structure worth scanning."""

    direction: np.ndarray
    kind: str  # "atom" | "cap_center" | "cap_edge" | "ball_center"
    scale: float | None = None
    separation: float | None = None
    index: int | None = None


@dataclass(frozen=True)
class ShrinkingBalls:
    """Family of caps with angular radii 4^-n and center gaps ~2^-n.

    Centers are laid out along the great circle through ``base`` and a fixed
    perpendicular direction so the construction is reproducible; consecutive
    center separations are 1.5 * (2^-n + 2^-(n+1)), keeping the 2^-n
    neighborhoods pairwise disjoint.
    """

    base: np.ndarray
    n_start: int = 2
    count: int = 6
    density: float = 1.0

    def center_angles(self):
        angles = [0.0]
        for n in range(self.n_start, self.n_start + self.count - 1):
            angles.append(angles[-1] + 1.5 * (2.0**-n + 2.0 ** -(n + 1)))
        return np.array(angles)

    def radii(self):
        return 4.0 ** -np.arange(self.n_start, self.n_start + self.count, dtype=float)

    def separations(self):
        return 2.0 ** -np.arange(self.n_start, self.n_start + self.count, dtype=float)


class SpectralMeasure:
    """Finite symmetric measure on the unit sphere.

    Generators: point atoms, constant-density caps, a rotation-invariant
    component, and an optional shrinking-cap family.  Every atom and cap is
    stored together with its antipode, so symmetry holds exactly.
    """

    def __init__(self, dimension, atoms=(), caps=(), uniform_mass=0.0,
                 shrinking_balls=None):
        if dimension < 1:
            raise ModelError("dimension must be >= 1")
        self.dimension = int(dimension)
        d = self.dimension

        atom_dirs, atom_masses = [], []

        def add_atom(direction, mass):
            if mass <= 0:
                raise ModelError("atom masses must be positive")
            u = unit(direction)
            atom_dirs.extend([u, -u])
            atom_masses.extend([float(mass), float(mass)])

        for direction, mass in atoms:
            add_atom(direction, mass)

        if d == 1:
            # S^0 = {-1, +1}: caps degenerate to atoms, the uniform part is
            # the symmetric two-point measure.
            if caps or shrinking_balls is not None:
                raise ModelError("caps/shrinking_balls require dimension >= 2")
            if uniform_mass > 0:
                add_atom([1.0], uniform_mass / 2.0)
            uniform_mass = 0.0

        cap_list = []

        def add_cap(center, ang_radius, density):
            if not (0.0 < ang_radius < np.pi):
                raise ModelError("cap angular radius must lie in (0, pi)")
            if density <= 0:
                raise ModelError("cap density must be positive")
            u = unit(center)
            cap_list.append(Cap(u, float(ang_radius), float(density)))
            cap_list.append(Cap(-u, float(ang_radius), float(density)))

        for center, ang_radius, density in caps:
            add_cap(center, ang_radius, density)

        features = []
        for u, m in zip(atom_dirs, atom_masses):
            features.append(Feature(u, "atom"))
        for cap in cap_list:
            features.append(Feature(cap.center, "cap_center", scale=cap.angular_radius))

        self.shrinking_balls = None
        if shrinking_balls is not None:
            if d < 2:
                raise ModelError("shrinking_balls require dimension >= 2")
            sb = shrinking_balls
            base = unit(sb.base)
            tangent, _ = orthonormal_frame(base)
            angles = sb.center_angles()
            radii = sb.radii()
            seps = sb.separations()
            for k, (ang, a_n, sep) in enumerate(zip(angles, radii, seps)):
                c = math.cos(ang) * base + math.sin(ang) * tangent
                add_cap(c, a_n, sb.density)
                n = sb.n_start + k
                features.append(Feature(c / np.linalg.norm(c), "ball_center",
                                        scale=a_n, separation=sep, index=n))
                features.append(Feature(-c / np.linalg.norm(c), "ball_center",
                                        scale=a_n, separation=sep, index=n))
            self.shrinking_balls = ShrinkingBalls(base, sb.n_start, sb.count, sb.density)

        self.atom_directions = (np.array(atom_dirs).reshape(-1, d)
                                if atom_dirs else np.zeros((0, d)))
        self.atom_masses = np.array(atom_masses, dtype=float)
        self.caps = tuple(cap_list)
        self.uniform_mass = float(uniform_mass)
        if self.uniform_mass < 0:
            raise ModelError("uniform_mass must be nonnegative")
        self.features = tuple(features)

        self.total_mass = (self.atom_masses.sum() + self.uniform_mass
                           + sum(c.mass(d) for c in self.caps))
        if self.total_mass <= 0:
            raise ModelError("spectral measure must have positive total mass")

        self._gram = self._compute_gram()
        eigs = np.linalg.eigvalsh(self._gram)
        if eigs[0] <= 1e-10 * self.total_mass:
            raise ModelError(
                "degenerate spectral measure: support does not span R^d "
                f"(Gram eigenvalues {eigs})")

    # -- structure ---------------------------------------------------------

    def _compute_gram(self):
        d = self.dimension
        g = np.zeros((d, d))
        for u, m in zip(self.atom_directions, self.atom_masses):
            g += m * np.outer(u, u)
        if self.uniform_mass > 0:
            g += self.uniform_mass / d * np.eye(d)
        for cap in self.caps:
            a, q, c = cap.angular_radius, cap.density, cap.center
            if d == 2:
                lam_par = q * (a + 0.5 * math.sin(2 * a))
                lam_perp = q * (a - 0.5 * math.sin(2 * a))
                perp = np.array([-c[1], c[0]])
                g += lam_par * np.outer(c, c) + lam_perp * np.outer(perp, perp)
            else:
                mass = cap.mass(d)
                lam_par = 2.0 * np.pi * q * (1.0 - math.cos(a) ** 3) / 3.0
                lam_perp = 0.5 * (mass - lam_par)
                g += (lam_par - lam_perp) * np.outer(c, c) + lam_perp * np.eye(d)
        return g

    @property
    def gram(self):
        """Second-moment matrix of mu: integral of xi xi^T."""
        return self._gram

    def feature_directions(self):
        return [f.direction for f in self.features]

    def support_directions(self, n_per_component=8):
        """Deterministic direction set inside supp(mu), for scan grids."""
        d = self.dimension
        dirs = [u for u in self.atom_directions]
        for cap in self.caps:
            c, a = cap.center, cap.angular_radius
            dirs.append(c)
            t, w = orthonormal_frame(c)
            for frac in (0.5, 0.95):
                dirs.append(unit(math.cos(frac * a) * c + math.sin(frac * a) * t))
                if d == 3 and w is not None:
                    dirs.append(unit(math.cos(frac * a) * c + math.sin(frac * a) * w))
        if self.uniform_mass > 0:
            dirs.extend(sphere_grid(d, n_per_component))
        return np.array(dirs).reshape(-1, d)

    def contains_direction(self, direction, tol=1e-9):
        u = unit(direction)
        if self.uniform_mass > 0:
            return True
        for v in self.atom_directions:
            if angle_between(u, v) <= tol:
                return True
        for cap in self.caps:
            if angle_between(u, cap.center) <= cap.angular_radius + tol:
                return True
        return False

    # -- the measure-integral primitive ------------------------------------

    def axis_integral(self, axis, f, breakpoints=(), epsabs=QUAD_EPSABS,
                      epsrel=QUAD_EPSREL):
        """Integrate ``f(cos angle(xi, axis))`` against mu(dxi).

        ``f`` must be vectorized over an array of cosines and may return
        ``inf`` entries (propagated).  ``breakpoints`` lists angles to the
        axis (in [0, pi]) at which ``f`` is singular or kinked.
        """
        d = self.dimension
        axis = unit(axis)
        total = 0.0

        if self.atom_masses.size:
            cos_a = np.clip(self.atom_directions @ axis, -1.0, 1.0)
            vals = np.asarray(f(cos_a), dtype=float)
            if np.any(np.isinf(vals)):
                return math.inf
            total += float(np.dot(self.atom_masses, vals))

        bp = sorted(set(float(b) for b in breakpoints if 0.0 < b < np.pi))

        if self.uniform_mass > 0:
            if d == 2:
                g = lambda phi: f(np.cos(phi))
                val = self.uniform_mass / np.pi * _piecewise_quad(
                    g, 0.0, np.pi, bp, epsabs, epsrel)
            else:
                g = lambda phi: f(np.cos(phi)) * np.sin(phi)
                val = self.uniform_mass / 2.0 * _piecewise_quad(
                    g, 0.0, np.pi, bp, epsabs, epsrel)
            if math.isinf(val):
                return math.inf
            total += val

        for cap in self.caps:
            val = _cap_axis_integral(cap, d, axis, f, bp, epsabs, epsrel)
            if math.isinf(val):
                return math.inf
            total += val
        return total

    # -- serialization ------------------------------------------------------

    def to_dict(self):
        spec = {
            "atoms": [[list(map(float, u)), float(m)]
                      for u, m in zip(self.atom_directions[::2],
                                      self.atom_masses[::2])],
            "caps": [[list(map(float, c.center)), c.angular_radius, c.density]
                     for c in self.caps[::2]
                     if self.shrinking_balls is None
                     or not _is_shrinking_cap(self, c)],
            "uniform_mass": self.uniform_mass,
        }
        if self.shrinking_balls is not None:
            sb = self.shrinking_balls
            spec["shrinking_balls"] = {
                "base": list(map(float, sb.base)),
                "n_start": sb.n_start,
                "count": sb.count,
                "density": sb.density,
            }
        return spec


def _is_shrinking_cap(measure, cap):
    radii = set(float(r) for r in measure.shrinking_balls.radii())
    return float(cap.angular_radius) in radii


def _piecewise_quad(g, lo, hi, breakpoints, epsabs, epsrel):
    pts = [b for b in breakpoints if lo < b < hi]
    scalar = lambda x: float(g(np.array([x]))[0])
    if pts:
        val, _ = quad(scalar, lo, hi, points=pts, limit=200,
                      epsabs=epsabs, epsrel=epsrel)
    else:
        val, _ = quad(scalar, lo, hi, limit=200, epsabs=epsabs, epsrel=epsrel)
    return val


def _cap_axis_integral(cap, d, axis, f, breakpoints, epsabs, epsrel):
    c, a, q = cap.center, cap.angular_radius, cap.density
    beta = angle_between(c, axis)
    if d == 2:
        # Arc parametrized by offset u from the cap center; the angle to the
        # axis is |wrap(u + delta)| with delta the center-to-axis angle.
        cross_z = axis[0] * c[1] - axis[1] * c[0]
        delta = beta if cross_z >= 0 else -beta
        bp_u = []
        for b in breakpoints:
            for u0 in (b - delta, -b - delta, b - delta - 2 * np.pi,
                       -b - delta + 2 * np.pi):
                if -a < u0 < a:
                    bp_u.append(u0)
        g = lambda u: f(np.cos(u + delta))
        return q * _piecewise_quad(g, -a, a, sorted(bp_u), epsabs, epsrel)

    lo, hi = abs(beta - a), min(beta + a, np.pi)
    if lo >= hi:
        lo, hi = max(0.0, beta - a), min(beta + a, np.pi)
    if beta <= 1e-12 or beta >= np.pi - 1e-12:
        # Cap centered on the axis: rings are full circles up to angle a.
        g = lambda phi: f(np.cos(phi) if beta <= 1e-12 else -np.cos(phi)) \
            * 2.0 * np.pi * np.sin(phi)
        return q * _piecewise_quad(g, 0.0, a, breakpoints, epsabs, epsrel)

    sin_beta, cos_beta, cos_a = math.sin(beta), math.cos(beta), math.cos(a)

    def ring_length(phi):
        s = np.sin(phi)
        with np.errstate(divide="ignore", invalid="ignore"):
            x = (cos_a - np.cos(phi) * cos_beta) / (s * sin_beta)
        psi = np.arccos(np.clip(x, -1.0, 1.0))
        return 2.0 * psi * s

    g = lambda phi: f(np.cos(phi)) * ring_length(phi)
    bp = sorted(set(b for b in breakpoints if lo < b < hi))
    return q * _piecewise_quad(g, lo, hi, bp, epsabs, epsrel)


# ---------------------------------------------------------------------------
# the stable model and its jump-measure view


class StableModel:
    """Dimension, stability index, spectral measure, and derived constants."""

    def __init__(self, measure: SpectralMeasure, alpha: float):
        if not (0.0 < alpha < 2.0):
            raise ModelError("alpha must lie in (0, 2)")
        self.measure = measure
        self.alpha = float(alpha)
        self.d = measure.dimension
        # Prefactor turning the sphere integral of |u.xi|^alpha into the
        # characteristic exponent.
        self.phi_constant = np.pi / (
            2.0 * math.sin(np.pi * alpha / 2.0) * math.gamma(1.0 + alpha))
        self.levy = LevyMeasureView(self)

    @property
    def total_mass(self):
        return self.measure.total_mass

    def large_jump_rate(self, cutoff):
        """Total jump intensity beyond radius ``cutoff``: |mu| cutoff^-alpha / alpha."""
        return self.total_mass * cutoff ** (-self.alpha) / self.alpha

    def small_jump_covariance(self, cutoff):
        """Second moment of jumps below ``cutoff``: gram * cutoff^(2-alpha)/(2-alpha)."""
        return self.measure.gram * cutoff ** (2.0 - self.alpha) / (2.0 - self.alpha)

    def to_dict(self):
        return {"d": self.d, "alpha": self.alpha, "spectral": self.measure.to_dict()}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @staticmethod
    def from_dict(obj):
        spec = obj.get("spectral", {})
        sb = None
        if spec.get("shrinking_balls"):
            s = spec["shrinking_balls"]
            sb = ShrinkingBalls(np.asarray(s["base"], dtype=float),
                                int(s.get("n_start", 2)), int(s.get("count", 6)),
                                float(s.get("density", 1.0)))
        measure = SpectralMeasure(
            int(obj["d"]),
            atoms=[(np.asarray(u, dtype=float), float(m))
                   for u, m in spec.get("atoms", [])],
            caps=[(np.asarray(c, dtype=float), float(a), float(q))
                  for c, a, q in spec.get("caps", [])],
            uniform_mass=float(spec.get("uniform_mass", 0.0)),
            shrinking_balls=sb,
        )
        return StableModel(measure, float(obj["alpha"]))

    @staticmethod
    def from_json(path):
        with open(path) as fh:
            return StableModel.from_dict(json.load(fh))


class LevyMeasureView:
    """Ball masses and Riesz-weighted ball integrals of the jump measure.

    Everything reduces per direction to radial integrals over the chord
    ``{s > 0 : |s xi - x| < rho}`` whose endpoints solve a quadratic in s.
    """

    def __init__(self, model: StableModel):
        self.model = model

    def ball_mass(self, x, rho, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL):
        """nu(B(x, rho)); returns inf when the closed ball reaches the origin."""
        x = np.asarray(x, dtype=float)
        alpha = self.model.alpha
        r = float(np.linalg.norm(x))
        if rho <= 0:
            raise ModelError("rho must be positive")
        if r <= rho:
            return math.inf
        axis = x / r
        phi_max = math.asin(rho / r)

        def f(cos_phi):
            a = r * cos_phi
            disc = a * a - (r * r - rho * rho)
            out = np.zeros_like(cos_phi)
            ok = (disc > 0) & (a > 0)
            if np.any(ok):
                root = np.sqrt(disc[ok])
                s_lo, s_hi = a[ok] - root, a[ok] + root
                out[ok] = (s_lo ** (-alpha) - s_hi ** (-alpha)) / alpha
            return out

        return self.model.measure.axis_integral(
            axis, f, breakpoints=[phi_max], epsabs=epsabs, epsrel=epsrel)

    def riesz_ball_integral(self, y, rho, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL):
        """Integral of |y - v|^(alpha - d) over B(y, rho) against nu(dv).

        Exactly equals ``ball_mass`` when alpha == d (unit kernel).  Returns
        inf when an atom ray passes through y and the kernel is not
        radially integrable there (d - alpha >= 1).
        """
        model = self.model
        alpha, d = model.alpha, model.d
        if abs(alpha - d) < 1e-14:
            return self.ball_mass(y, rho, epsabs=epsabs, epsrel=epsrel)
        y = np.asarray(y, dtype=float)
        r = float(np.linalg.norm(y))
        if rho <= 0:
            raise ModelError("rho must be positive")
        if r <= rho:
            return math.inf
        axis = y / r
        phi_max = math.asin(rho / r)

        def f(cos_phi):
            cos_phi = np.atleast_1d(np.asarray(cos_phi, dtype=float))
            out = np.zeros_like(cos_phi)
            for i, cp in enumerate(cos_phi):
                out[i] = _riesz_radial(r, cp, rho, alpha, d)
            return out

        # Grade the angular quadrature toward the near-singular axis angle.
        small = [phi_max * 2.0**-k for k in range(1, 14)]
        return model.measure.axis_integral(
            axis, f, breakpoints=[phi_max] + small, epsabs=epsabs, epsrel=epsrel)


def _riesz_radial(r, cos_phi, rho, alpha, d):
    """Radial factor of the Riesz ball integral along one direction.

    Integrates ((s - a)^2 + m^2)^((alpha-d)/2) s^(-1-alpha) over the chord,
    where a = r cos(phi) and m = r sin(phi) is the distance from the ray to
    the ball center.  A sinh substitution absorbs the near-singularity.
    """
    a = r * cos_phi
    disc = a * a - (r * r - rho * rho)
    if disc <= 0 or a <= 0:
        return 0.0
    root = math.sqrt(disc)
    s_lo, s_hi = a - root, a + root
    m2 = max(r * r - a * a, 0.0)
    m = math.sqrt(m2)
    p = alpha - d + 1.0

    if m < _ON_RAY_TOL * r:
        if p <= 1e-12:
            return math.inf
        # |s - a|^(alpha-d) endpoint singularity, removed by s = a -+ w^(1/p).
        total = 0.0
        for sign, width in ((-1.0, a - s_lo), (1.0, s_hi - a)):
            if width <= 0:
                continue
            z, wz = _gl_nodes(0.0, width**p)
            s = a + sign * z ** (1.0 / p)
            total += np.sum(wz * s ** (-1.0 - alpha)) / p
        return total

    w_lo = math.asinh((s_lo - a) / m)
    w_hi = math.asinh((s_hi - a) / m)
    w, ww = _gl_nodes(w_lo, w_hi)
    s = a + m * np.sinh(w)
    kernel = (m * np.cosh(w)) ** (alpha - d)
    return float(np.sum(ww * m * np.cosh(w) * kernel * s ** (-1.0 - alpha)))


# ---------------------------------------------------------------------------
# direction sampling


def component_masses(measure: SpectralMeasure):
    """Masses of (atoms..., caps..., uniform) in sampling order."""
    d = measure.dimension
    masses = list(measure.atom_masses)
    masses.extend(c.mass(d) for c in measure.caps)
    if measure.uniform_mass > 0:
        masses.append(measure.uniform_mass)
    return np.array(masses)


def sample_directions(measure: SpectralMeasure, rng, n):
    """Draw ``n`` directions distributed as mu / |mu|."""
    d = measure.dimension
    masses = component_masses(measure)
    cdf = np.cumsum(masses) / masses.sum()
    comp = np.searchsorted(cdf, rng.random(n), side="right")
    out = np.empty((n, d))

    n_atoms = len(measure.atom_masses)
    n_caps = len(measure.caps)
    for k in range(n_atoms):
        sel = comp == k
        if np.any(sel):
            out[sel] = measure.atom_directions[k]
    for j, cap in enumerate(measure.caps):
        sel = comp == n_atoms + j
        cnt = int(np.count_nonzero(sel))
        if cnt:
            out[sel] = _sample_cap(cap, d, rng, cnt)
    if measure.uniform_mass > 0:
        sel = comp == n_atoms + n_caps
        cnt = int(np.count_nonzero(sel))
        if cnt:
            if d == 2:
                t = rng.uniform(0.0, 2.0 * np.pi, cnt)
                out[sel] = np.column_stack([np.cos(t), np.sin(t)])
            else:
                g = rng.standard_normal((cnt, d))
                out[sel] = g / np.linalg.norm(g, axis=1, keepdims=True)
    return out


def _sample_cap(cap, d, rng, n):
    c, a = cap.center, cap.angular_radius
    if d == 2:
        base = math.atan2(c[1], c[0])
        t = base + rng.uniform(-a, a, n)
        return np.column_stack([np.cos(t), np.sin(t)])
    cos_phi = rng.uniform(math.cos(a), 1.0, n)
    sin_phi = np.sqrt(1.0 - cos_phi**2)
    psi = rng.uniform(0.0, 2.0 * np.pi, n)
    u, w = orthonormal_frame(c)
    return (cos_phi[:, None] * c
            + (sin_phi * np.cos(psi))[:, None] * u
            + (sin_phi * np.sin(psi))[:, None] * w)
