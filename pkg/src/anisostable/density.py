"""Transition densities on lattices via Fourier inversion.

Only the time-one density is tabulated; every other time follows from the
scaling law ``p_t(x) = t**(-d/alpha) p_1(t**(-1/alpha) x)``.

Two constructions are used:

* ``LatticeDensityGrid`` - tensor lattice, one FFT of ``exp(-Phi)``.  The
  frequency box is sized so the neglected spectral tail is below a target,
  and the FFT period is padded so wrap-around ghost images stay below the
  same target.  Practical for d in {1, 2} generally and d = 3 with moderate
  anisotropy and alpha not too small.
* ``ProductDensityGrid`` - when the spectral measure consists of atom pairs
  on mutually orthogonal lines, the coordinates along those lines are
  independent one-dimensional stable components, so ``p_1`` factorizes
  exactly into 1-D densities inverted on very long 1-D grids.  This covers
  the rough (atomic) models whose heavy directional tails would need an
  astronomically large tensor FFT.
"""

from __future__ import annotations

import hashlib
import json
import math
import os

import numpy as np
from scipy.fft import fftn, fftshift, ifftshift, next_fast_len
from scipy.interpolate import RegularGridInterpolator
from scipy.special import gammaincc, gamma as gamma_fn

from .exponent import ExponentEvaluator
from .measures import StableModel, sphere_grid

CACHE_ENV = "ANISOSTABLE_CACHE"


class DensityError(RuntimeError):
    """Inversion could not be certified (size budget, positivity, ...)."""


def _sphere_area(d):
    return 2.0 * np.pi ** (d / 2.0) / gamma_fn(d / 2.0)


def _frequency_cutoff(phi_min, alpha, d, tail):
    """Smallest U with the spectral mass beyond |u| > U below ``tail``."""
    pref = _sphere_area(d) / (2.0 * np.pi) ** d
    scale = alpha * phi_min ** (d / alpha)

    def excess(u):
        return pref * gamma_fn(d / alpha) * gammaincc(
            d / alpha, phi_min * u**alpha) / scale - tail

    lo, hi = 1.0, 2.0
    while excess(hi) > 0:
        hi *= 2.0
        if hi > 1e9:
            raise DensityError("frequency cutoff exceeds 1e9; model too rough")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            lo = mid
        else:
            hi = mid
    return hi


def _dft_invert(psi, du, d):
    """Density values from spectrum samples on the centered lattice."""
    scale = (du / (2.0 * np.pi)) ** d
    vals = fftshift(fftn(ifftshift(psi), overwrite_x=True, workers=-1))
    return scale * np.real(vals)


def _invert_1d(coef, alpha, extent, tail, alias, spacing_cap=0.01):
    """1-D symmetric stable density with exponent coef*|u|^alpha."""
    du = np.pi / alias
    u_max = _frequency_cutoff(coef, alpha, 1, tail)
    n = max(int(math.ceil(2.0 * u_max / du)),
            int(math.ceil(2.0 * alias / spacing_cap)))
    n = next_fast_len(max(n, 2048))
    if n % 2:
        n = next_fast_len(n + 1)
    u = (np.arange(n) - n // 2) * du
    psi = np.exp(-coef * np.abs(u) ** alpha)
    vals = _dft_invert(psi, du, 1)
    h = 2.0 * np.pi / (n * du)
    x = (np.arange(n) - n // 2) * h
    keep = np.abs(x) <= extent
    x, vals = x[keep], vals[keep]
    vals = 0.5 * (vals + vals[::-1])
    return x, vals


class _GridBase:
    kind = "base"

    def density_at(self, t, x, allow_extrapolation=False):
        """p_t at one point or an (n, d) block, by the scaling law."""
        if t <= 0:
            raise ValueError("t must be positive")
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x) * t ** (-1.0 / self.alpha)
        vals, extrapolated = self.values_at(pts, allow_extrapolation)
        vals = vals * t ** (-self.d / self.alpha)
        if single:
            return float(vals[0])
        return vals

    def radial_values(self, direction, s):
        """p_1 along a ray, with per-point extrapolation mask."""
        direction = np.asarray(direction, dtype=float)
        pts = np.outer(np.asarray(s, dtype=float), direction)
        return self.values_at(pts, allow_extrapolation=True)

    def meta(self):
        return {"kind": self.kind, "d": self.d, "alpha": self.alpha,
                "spacing": self.spacing, "extent": self.extent}


class LatticeDensityGrid(_GridBase):
    kind = "lattice"

    def __init__(self, axis, values, alpha, meta=None):
        self.axis = np.asarray(axis, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.d = self.values.ndim
        self.alpha = float(alpha)
        self.spacing = float(self.axis[1] - self.axis[0])
        self.extent = float(self.axis[-1])
        self.build_meta = dict(meta or {})
        if np.any(self.values <= 0.0):
            k = np.unravel_index(int(np.argmin(self.values)), self.values.shape)
            raise DensityError(
                "positivity certification failed at lattice point "
                f"{tuple(self.axis[i] for i in k)}: value {self.values[k]:.3e}; "
                "increase the frequency extent or the alias radius")
        self._interp = RegularGridInterpolator(
            (self.axis,) * self.d, self.values, method="linear",
            bounds_error=False, fill_value=np.nan)
        self._tail_coef, self._tail_exp = self._fit_tail()

    def _fit_tail(self):
        radii = self.extent * np.array([0.55, 0.65, 0.75, 0.85, 0.95])
        dirs = sphere_grid(self.d, 64 if self.d == 2 else 256)
        best = np.zeros_like(radii)
        for i, r in enumerate(radii):
            vals, _ = self.values_at(r * dirs, allow_extrapolation=False)
            best[i] = np.nanmax(vals)
        mask = best > 0
        if mask.sum() < 2:
            return float(best[-1]), self.d + self.alpha
        slope, logc = np.polyfit(np.log(radii[mask]), np.log(best[mask]), 1)
        return float(np.exp(logc)), float(-slope)

    def values_at(self, pts, allow_extrapolation=False):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        vals = self._interp(pts)
        outside = np.isnan(vals)
        if np.any(outside):
            if not allow_extrapolation:
                raise DensityError(
                    "point outside the tabulated extent and extrapolation "
                    "is disabled")
            r = np.linalg.norm(pts[outside], axis=1)
            vals[outside] = self._tail_coef * r ** (-self._tail_exp)
        return vals, outside

    def mass_report(self):
        kept = float(self.values.sum() * self.spacing**self.d)
        # Isotropic upper-envelope estimate of the mass beyond the extent.
        b = self._tail_exp
        tail = (self._tail_coef * _sphere_area(self.d)
                * self.extent ** (self.d - b) / max(b - self.d, 1e-9))
        return {"kept_mass": kept, "tail_estimate": tail,
                "total": kept + tail}

    def sup_value(self):
        return float(self.values.max())

    def save(self, path):
        np.savez_compressed(
            path, kind=self.kind, axis=self.axis, values=self.values,
            alpha=self.alpha, meta=json.dumps(self.build_meta))

    def to_csv(self, path, stride=1):
        ax = self.axis[::stride]
        idx = np.arange(0, self.axis.size, stride)
        with open(path, "w") as fh:
            fh.write(",".join(f"x{i}" for i in range(self.d)) + ",p1\n")
            for flat in np.ndindex(*(ax.size,) * self.d):
                coords = [ax[k] for k in flat]
                v = self.values[tuple(idx[k] for k in flat)]
                fh.write(",".join(f"{c:.10g}" for c in coords)
                         + f",{v:.12g}\n")


class ProductDensityGrid(_GridBase):
    kind = "product"

    def __init__(self, rotation, factors, alpha, meta=None):
        self.rotation = np.asarray(rotation, dtype=float)  # rows = line dirs
        self.factors = [(np.asarray(x, dtype=float), np.asarray(v, dtype=float))
                        for x, v in factors]
        self.d = self.rotation.shape[0]
        self.alpha = float(alpha)
        self.spacing = float(max(x[1] - x[0] for x, _ in self.factors))
        self.extent = float(min(x[-1] for x, _ in self.factors))
        self.build_meta = dict(meta or {})
        for x, v in self.factors:
            if np.any(v <= 0.0):
                raise DensityError("positivity certification failed in a "
                                   "1-D factor; increase frequency extent")

    def values_at(self, pts, allow_extrapolation=False):
        pts = np.atleast_2d(np.asarray(pts, dtype=float)) @ self.rotation.T
        out = np.ones(pts.shape[0])
        outside = np.zeros(pts.shape[0], dtype=bool)
        for k, (x, v) in enumerate(self.factors):
            c = pts[:, k]
            beyond = np.abs(c) > x[-1]
            outside |= beyond
            if np.any(beyond) and not allow_extrapolation:
                raise DensityError(
                    "point outside the tabulated extent and extrapolation "
                    "is disabled")
            vals = np.interp(np.abs(c), x[x >= 0], v[x >= 0])
            if np.any(beyond):
                # 1-D stable tail continues as |c|^(-1-alpha).
                edge_x, edge_v = x[-1], v[-1]
                vals[beyond] = edge_v * (np.abs(c[beyond]) / edge_x) ** (
                    -1.0 - self.alpha)
            out *= vals
        return out, outside

    def mass_report(self):
        masses = []
        for x, v in self.factors:
            h = x[1] - x[0]
            kept = float(v.sum() * h)
            tail = 2.0 * float(v[-1]) * x[-1] / self.alpha
            masses.append(kept + tail)
        return {"kept_mass": float(np.prod([float(v.sum() * (x[1] - x[0]))
                                            for x, v in self.factors])),
                "tail_estimate": float(np.prod(masses)
                                       - np.prod([float(v.sum() * (x[1] - x[0]))
                                                  for x, v in self.factors])),
                "total": float(np.prod(masses))}

    def sup_value(self):
        return float(np.prod([v.max() for _, v in self.factors]))

    def save(self, path):
        arrays = {"kind": self.kind, "rotation": self.rotation,
                  "alpha": self.alpha, "meta": json.dumps(self.build_meta)}
        for k, (x, v) in enumerate(self.factors):
            arrays[f"factor_x{k}"] = x
            arrays[f"factor_v{k}"] = v
        np.savez_compressed(path, **arrays)

    def to_csv(self, path, stride=1):
        with open(path, "w") as fh:
            fh.write("factor,x,f\n")
            for k, (x, v) in enumerate(self.factors):
                for xi, vi in zip(x[::stride], v[::stride]):
                    fh.write(f"{k},{xi:.10g},{vi:.12g}\n")


def _orthogonal_atom_lines(model: StableModel):
    """Rotation rows and per-line coefficients when p_1 factorizes exactly."""
    m = model.measure
    if m.uniform_mass > 0 or m.caps or m.atom_masses.size == 0:
        return None
    dirs, masses = m.atom_directions, m.atom_masses
    lines, line_mass = [], []
    for u, w in zip(dirs, masses):
        for i, v in enumerate(lines):
            if abs(abs(np.dot(u, v)) - 1.0) < 1e-12:
                line_mass[i] += w
                break
        else:
            lines.append(u)
            line_mass.append(w)
    if len(lines) != model.d:
        return None
    rot = np.array(lines)
    if not np.allclose(rot @ rot.T, np.eye(model.d), atol=1e-12):
        return None
    coefs = model.phi_constant * np.array(line_mass)
    return rot, coefs


def _phi_on_lattice(evaluator, u_axis, d):
    """Phi on the tensor lattice, assembled by broadcasting per component."""
    n = u_axis.size
    grids = np.meshgrid(*([u_axis] * d), indexing="ij")
    norm2 = np.zeros((n,) * d)
    for g in grids:
        norm2 += g * g
    norm = np.sqrt(norm2)
    del norm2
    alpha = evaluator.alpha
    out = np.zeros((n,) * d)
    if evaluator._atom_masses.size:
        for xi, m in zip(evaluator._atom_dirs, evaluator._atom_masses):
            dot = np.zeros((n,) * d)
            for g, comp in zip(grids, xi):
                dot += comp * g
            out += m * np.abs(dot) ** alpha
    if evaluator._uniform_coef:
        out += evaluator._uniform_coef * norm**alpha
    for center, q, profile in evaluator._caps:
        dot = np.zeros((n,) * d)
        for g, comp in zip(grids, center):
            dot += comp * g
        with np.errstate(invalid="ignore"):
            beta = np.arccos(np.clip(dot / norm, -1.0, 1.0))
        beta[norm == 0] = 0.0
        out += q * profile(beta) * norm**alpha
        del beta, dot
    # Atom terms carry |u| inside the dot product; uniform and cap terms are
    # scaled by norm**alpha explicitly.
    out *= evaluator.phi_constant
    return out


def build_density_grid(model: StableModel, extent=None, spacing=None,
                       freq_tail=None, alias_radius=None,
                       max_elements=2**25, force_lattice=False):
    """Tabulate p_1 for the model; picks the product route when exact.

    Raises :class:`DensityError` with a diagnostic when the required lattice
    would exceed ``max_elements`` (slowly decaying spectra at small alpha
    combined with heavy spatial tails).
    """
    d, alpha = model.d, model.alpha
    if d > 3:
        raise DensityError("density grids support d in {1, 2, 3}")
    if extent is None:
        extent = {1: 64.0, 2: 12.0, 3: 5.0}[d]
    if freq_tail is None:
        freq_tail = {1: 1e-11, 2: 1e-9, 3: 1e-7}[d]

    product = None if force_lattice else _orthogonal_atom_lines(model)
    if product is not None:
        rot, coefs = product
        extent_1d = max(4.0 * extent, 64.0)
        alias = alias_radius or max(2048.0, 8.0 * extent_1d)
        factors = [_invert_1d(c, alpha, extent_1d, min(freq_tail, 1e-10), alias)
                   for c in coefs]
        meta = {"route": "product", "alias_radius": alias,
                "freq_tail": freq_tail, "model": model.to_dict()}
        return ProductDensityGrid(rot, factors, alpha, meta)

    evaluator = ExponentEvaluator(model)
    phi_min, phi_max = evaluator.sphere_range()
    u_max = _frequency_cutoff(phi_min, alpha, d, freq_tail)
    if alias_radius is None:
        alias_radius = {1: extent + 256.0, 2: extent + 48.0,
                        3: extent + 10.0}[d]
    du = np.pi / alias_radius
    n = int(math.ceil(2.0 * u_max / du))
    if spacing is None:
        spacing = {1: 1 / 256, 2: 1 / 32, 3: 1 / 10}[d]
    n = max(n, int(math.ceil(2.0 * alias_radius / spacing)))
    n = next_fast_len(n)
    if n % 2:
        n = next_fast_len(n + 1)
    if n**d > max_elements:
        raise DensityError(
            f"lattice inversion needs {n}^{d} spectrum samples "
            f"(cutoff {u_max:.3g}, alias radius {alias_radius:.3g}); "
            "beyond the memory budget - this model/alpha combination is too "
            "rough for tensor inversion at the requested accuracy")

    u_axis = (np.arange(n) - n // 2) * du
    psi = np.exp(-_phi_on_lattice(evaluator, u_axis, d))
    vals = _dft_invert(psi, du, d)
    h = 2.0 * np.pi / (n * du)
    x_axis = (np.arange(n) - n // 2) * h
    keep = np.abs(x_axis) <= extent + 1e-12
    idx = np.where(keep)[0]
    vals = vals[np.ix_(*([idx] * d))]
    x_axis = x_axis[idx]
    vals = 0.5 * (vals + np.flip(vals))
    meta = {"route": "lattice", "alias_radius": alias_radius,
            "freq_tail": freq_tail, "freq_cutoff": u_max,
            "phi_range": [phi_min, phi_max], "n_per_dim": n,
            "model": model.to_dict()}
    return LatticeDensityGrid(x_axis, vals, alpha, meta)


def density_at(t, x, grid, allow_extrapolation=False):
    return grid.density_at(t, x, allow_extrapolation)


def check_decay_bound(grid, gamma, slope_tol=0.1):
    """Shell statistics for sup p_1(y) (1+|y|)^(gamma+alpha).

    Bounded means no growth trend of the dyadic-shell maxima: the log-log
    slope across shells stays below ``slope_tol``.
    """
    d, alpha = grid.d, grid.alpha
    dirs = sphere_grid(d, 512 if d == 2 else 1200)
    radii = np.geomspace(0.25, grid.extent * 0.98, 28)
    stat_max = np.empty_like(radii)
    arg_dir = np.zeros((radii.size, d))
    for i, r in enumerate(radii):
        vals, _ = grid.values_at(r * dirs, allow_extrapolation=False)
        w = vals * (1.0 + r) ** (gamma + alpha)
        k = int(np.nanargmax(w))
        stat_max[i] = w[k]
        arg_dir[i] = dirs[k]
    shells = np.floor(np.log2(radii)).astype(int)
    shell_ids = np.unique(shells)
    shell_stats = np.array([stat_max[shells == s].max() for s in shell_ids])
    shell_radii = np.array([radii[shells == s].mean() for s in shell_ids])
    slope = float(np.polyfit(np.log(shell_radii), np.log(shell_stats), 1)[0])
    k = int(np.argmax(stat_max))
    return {
        "gamma": gamma,
        "shell_radii": shell_radii.tolist(),
        "shell_stats": shell_stats.tolist(),
        "slope": slope,
        "passes": bool(slope <= slope_tol),
        "sup_statistic": float(stat_max[k]),
        "sup_location": (radii[k] * arg_dir[k]).tolist(),
    }


# -- cache ------------------------------------------------------------------


def model_checksum(model: StableModel):
    blob = json.dumps(model.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def load_grid(path):
    with np.load(path, allow_pickle=False) as z:
        kind = str(z["kind"])
        alpha = float(z["alpha"])
        meta = json.loads(str(z["meta"]))
        if kind == "lattice":
            return LatticeDensityGrid(z["axis"], z["values"], alpha, meta)
        rot = z["rotation"]
        factors = []
        k = 0
        while f"factor_x{k}" in z:
            factors.append((z[f"factor_x{k}"], z[f"factor_v{k}"]))
            k += 1
        return ProductDensityGrid(rot, factors, alpha, meta)


def load_or_build(model, cache_dir=None, **kwargs):
    cache_dir = cache_dir or os.environ.get(CACHE_ENV)
    if not cache_dir:
        return build_density_grid(model, **kwargs)
    os.makedirs(cache_dir, exist_ok=True)
    tag = model_checksum(model)
    path = os.path.join(cache_dir, f"p1_{tag}.npz")
    if os.path.exists(path):
        return load_grid(path)
    grid = build_density_grid(model, **kwargs)
    grid.save(path)
    return grid
