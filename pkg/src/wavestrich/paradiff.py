"""Paradifferential and pseudodifferential operators on the periodic lattice.

Quantization is Kohn-Nirenberg summation over lattice frequencies, which is
exact on the torus.  The paradifferential operator is applied through its
dyadic block form

    T_a u = sum_k [S_{k-3}(a)](x, D) Delta_k(rho(D) u),

algebraically identical to the frequency-cutoff double sum; the double sum
itself is kept (d=1) as the brute-force oracle and to materialise adjoints.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from .fitting import SlopeFit, fit_slope
from .profiles import DEFAULT_PROFILE, CutoffProfile
from .spectral import (
    PeriodicGrid,
    SpectralField,
    max_block_index,
    norm_l2,
    sobolev_norm,
    top_octave_fraction,
    zygmund_norm,
)

__all__ = [
    "SymbolField",
    "SemiNorm",
    "CHI_EPS1",
    "CHI_EPS2",
    "chi_cutoff",
    "smooth_symbol",
    "apply_pseudodiff",
    "apply_paradiff",
    "paradiff_matrix",
    "apply_paradiff_adjoint",
    "semi_norm",
    "sharp_product",
    "adjoint_symbol",
    "composition_remainder",
    "adjoint_remainder",
    "para_vs_smoothed_remainder",
    "band_probe",
]

# Cutoff bands of the paradifferential frequency cutoff, derived from the
# plateau [1,2] profile: chi = 1 for |theta| <= (1+|eta|)/32 and chi = 0 for
# |theta| >= (1+|eta|)/2.
CHI_EPS1 = 1.0 / 32.0
CHI_EPS2 = 0.5

ALIAS_GUARD = 1e-10


class SymbolField:
    """Symbol a(x, xi) sampled on the spatial grid, one frequency at a time.

    ``func(grid, xi)`` must return the complex array x -> a(x, xi) on the
    grid for a single lattice frequency (scalar in d=1, length-d vector in
    d=2).  Samples and their x-spectra are cached per frequency.
    """

    def __init__(self, grid: PeriodicGrid, func, order: float, regularity: float,
                 homogeneous: bool = False, smooth_level: float | None = None,
                 profile: CutoffProfile = DEFAULT_PROFILE):
        self.grid = grid
        self.func = func
        self.order = float(order)
        self.regularity = float(regularity)
        self.homogeneous = homogeneous
        self.smooth_level = smooth_level
        self.profile = profile
        self._cache: dict = {}
        self._spec_cache: dict = {}

    def _key(self, xi):
        if self.grid.dim == 1:
            return round(float(xi), 12)
        return tuple(round(float(c), 12) for c in np.asarray(xi).ravel())

    def sample(self, xi) -> np.ndarray:
        key = self._key(xi)
        hit = self._cache.get(key)
        if hit is None:
            vals = np.asarray(self.func(self.grid, xi), dtype=complex)
            if vals.shape != self.grid.shape:
                vals = np.broadcast_to(vals, self.grid.shape).astype(complex)
            if not np.all(np.isfinite(vals)):
                raise ValueError(f"symbol not finite at xi={xi}")
            hit = vals
            self._cache[key] = hit
        return hit

    def sample_batch(self, xis) -> np.ndarray:
        return np.stack([self.sample(xi) for xi in xis])

    def x_spectrum(self, xi) -> np.ndarray:
        key = self._key(xi)
        hit = self._spec_cache.get(key)
        if hit is None:
            hit = np.fft.fftn(self.sample(xi)) / np.prod(self.grid.points)
            self._spec_cache[key] = hit
        return hit


def chi_cutoff(theta, eta, profile: CutoffProfile = DEFAULT_PROFILE,
               k_max: int = 48) -> np.ndarray:
    """Paradifferential cutoff chi(theta, eta) = sum_k psi_{k-3}(theta) phi_k(eta)."""
    r_theta = np.abs(np.asarray(theta, dtype=float))
    r_eta = np.abs(np.asarray(eta, dtype=float))
    r_theta, r_eta = np.broadcast_arrays(r_theta, r_eta)
    out = np.zeros_like(r_theta)
    for k in range(k_max + 1):
        phik = profile.phi_k(r_eta, k)
        if not np.any(phik):
            if 2.0 ** (k - 1) > np.max(r_eta):
                break
            continue
        out += profile.psi_plateau.val(r_theta * 2.0 ** (-(k - 3))) * phik
    return out


def _lowpass_mask(grid: PeriodicGrid, level: float, profile: CutoffProfile) -> np.ndarray:
    key = ("_lowpass_mask", round(float(level), 12), id(profile))
    cache = grid.__dict__.setdefault("_mask_cache", {})
    if key not in cache:
        cache[key] = profile.psi_plateau.val(grid.xi_norm * 2.0 ** (-level))
    return cache[key]


def smooth_symbol(a: SymbolField, cutoff_level: float) -> SymbolField:
    """Low-pass the x-dependence of a symbol by psi(2^-level D_x), per frequency.

    Homogeneity in xi is preserved since the operation acts on x alone.
    Negative levels are allowed; the dyadic block route uses them for k < 3.
    """
    cache = a.__dict__.setdefault("_smoothed_cache", {})
    key = round(float(cutoff_level), 12)
    if key in cache:
        return cache[key]
    mask = _lowpass_mask(a.grid, cutoff_level, a.profile)
    npts = np.prod(a.grid.points)

    def func(grid, xi):
        spec = np.fft.fftn(a.sample(xi)) / npts
        return np.fft.ifftn(mask * spec) * npts

    out = SymbolField(a.grid, func, a.order, a.regularity,
                      homogeneous=a.homogeneous, smooth_level=cutoff_level,
                      profile=a.profile)
    cache[key] = out
    return out


def _phase_matrix(grid: PeriodicGrid) -> np.ndarray:
    """exp(i x xi) on grid x lattice; cached for d=1 up to N=2048."""
    if grid.dim != 1:
        raise ValueError("phase matrix only materialised in d=1")
    cache = grid.__dict__.setdefault("_mask_cache", {})
    if "_phase" not in cache:
        cache["_phase"] = np.exp(1j * np.outer(grid.x_mesh, grid.xi_mesh))
    return cache["_phase"]


def _kn_accumulate(a: SymbolField, grid: PeriodicGrid, coef: np.ndarray) -> np.ndarray:
    """sum over active lattice xi of a(x, xi) coef(xi) exp(i x.xi)."""
    active = np.nonzero(coef)
    if active[0].size == 0:
        return np.zeros(grid.shape, dtype=complex)
    if grid.dim == 1:
        idx = active[0]
        xis = grid.xi_mesh[idx]
        samples = a.sample_batch(xis)  # (n, N)
        if grid.points[0] <= 2048:
            E = _phase_matrix(grid)[:, idx]
        else:
            E = np.exp(1j * np.outer(grid.x_mesh, xis))
        return np.einsum("xn,nx->x", E, samples * coef[idx][:, None])
    out = np.zeros(grid.shape, dtype=complex)
    xi_pts = grid.xi_mesh[active]  # (n, d)
    cvals = coef[active]
    x = grid.x_mesh  # (nx, ny, d)
    for xi, c in zip(xi_pts, cvals):
        phase = np.exp(1j * np.tensordot(x, xi, axes=([-1], [0])))
        out += a.sample(xi) * c * phase
    return out


def apply_pseudodiff(a: SymbolField, u: SpectralField) -> SpectralField:
    """Kohn-Nirenberg quantization: (a(x,D)u)(x) = sum_xi a(x,xi) u_hat(xi) e^{i x.xi}."""
    if top_octave_fraction(u) > ALIAS_GUARD:
        raise ValueError("input has energy in the top lattice octave (aliasing guard)")
    vals = _kn_accumulate(a, u.grid, u.spectrum)
    return SpectralField(u.grid, vals)


def apply_paradiff(a: SymbolField, u: SpectralField) -> SpectralField:
    """T_a u via the dyadic block route."""
    if top_octave_fraction(u) > ALIAS_GUARD:
        raise ValueError("input has energy in the top lattice octave (aliasing guard)")
    grid = u.grid
    profile = a.profile
    rho_mask = profile.rho(grid.xi_norm)
    spec = rho_mask * u.spectrum
    out = np.zeros(grid.shape, dtype=complex)
    for k in range(max_block_index(grid) + 1):
        block = profile.phi_k(grid.xi_norm, k) * spec
        if not np.any(block):
            continue
        out += _kn_accumulate(smooth_symbol(a, k - 3), grid, block)
    return SpectralField(grid, out)


def paradiff_matrix(a: SymbolField, grid: PeriodicGrid,
                    in_idx=None) -> np.ndarray:
    """Spectrum-side matrix of T_a from the frequency-cutoff definition (d=1).

    Entry (i, j) maps u_hat(eta_j) to (T_a u)_hat(xi_i):
    chi(xi - eta, eta) a_hat(xi - eta, eta) rho(eta).
    """
    if grid.dim != 1:
        raise ValueError("kernel materialisation is d=1 only")
    xi = grid.xi_mesh
    n = xi.size
    if in_idx is None:
        in_idx = np.arange(n)
    profile = a.profile
    rho = profile.rho(np.abs(xi))
    K = np.zeros((n, len(in_idx)), dtype=complex)
    for col, j in enumerate(in_idx):
        if rho[j] == 0.0:
            continue
        eta = xi[j]
        spec_a = a.x_spectrum(eta)  # coefficients over theta lattice
        # theta = xi_i - eta must be a lattice frequency; index arithmetic:
        dxi = 2.0 * np.pi / grid.extent[0]
        shifts = np.round((xi - eta) / dxi).astype(int)
        theta = shifts * dxi
        # theta must itself be a lattice frequency
        valid = (shifts >= -(n // 2)) & (shifts < n // 2)
        th_idx = np.mod(shifts, n)
        vals = chi_cutoff(theta, eta, profile) * spec_a[th_idx] * rho[j]
        K[:, col] = np.where(valid, vals, 0.0)
    return K


def apply_paradiff_adjoint(a: SymbolField, w: SpectralField) -> SpectralField:
    """(T_a)* w via the conjugate-transposed frequency kernel (d=1)."""
    K = paradiff_matrix(a, w.grid)
    spec = K.conj().T @ w.spectrum
    return SpectralField.from_spectrum(w.grid, spec)


@dataclass
class SemiNorm:
    value: float
    m: float
    rho: float


def _w_rho_inf(samples: np.ndarray, grid: PeriodicGrid, rho: float) -> np.ndarray:
    """W^{rho,inf}-in-x norms of a batch of grid functions (batch on axis 0)."""
    npts = np.prod(grid.points)
    best = np.max(np.abs(samples), axis=tuple(range(1, samples.ndim)))
    if rho <= 0:
        return best
    if abs(rho - round(rho)) > 1e-12:
        # fractional order through the dyadic-block characterisation
        out = []
        for s in samples:
            f = SpectralField(grid, s)
            out.append(max(np.max(np.abs(s)), zygmund_norm(f, rho)))
        return np.asarray(out)
    spec = np.fft.fftn(samples, axes=tuple(range(1, samples.ndim))) / npts
    fields = [spec]
    for _ in range(int(round(rho))):
        nxt = []
        for sp in fields:
            for axis in range(grid.dim):
                shape = [1] * samples.ndim
                shape[axis + 1] = grid.points[axis]
                xi = grid.freq_axes[axis].reshape(shape)
                nxt.append(1j * xi * sp)
        fields = nxt
        for sp in fields:
            vals = np.fft.ifftn(sp, axes=tuple(range(1, samples.ndim))) * npts
            best = np.maximum(best, np.max(np.abs(vals), axis=tuple(range(1, samples.ndim))))
    return best


def semi_norm(a: SymbolField, m: float | None = None, rho: float | None = None,
              xi_stride: int = 4) -> SemiNorm:
    """Symbol semi-norm: weighted W^{rho,inf} bounds of xi-derivatives.

    xi-derivatives are centered differences with one lattice spacing, per the
    smooth-in-xi symbols in scope.
    """
    if m is None:
        m = a.order
    if rho is None:
        rho = a.regularity
    grid = a.grid
    alpha_max = int(np.floor(grid.dim / 2.0 + 1.0 + rho))
    best = 0.0
    if grid.dim == 1:
        xi = grid.xi_mesh
        dxi = 2.0 * np.pi / grid.extent[0]
        nodes = xi[(np.abs(xi) >= 0.5)][::xi_stride]
        for alpha in range(alpha_max + 1):
            # central difference of order alpha via binomial stencil
            stencil = [(-1) ** i * factorial(alpha) / (factorial(i) * factorial(alpha - i))
                       for i in range(alpha + 1)]
            vals = []
            for node in nodes:
                acc = np.zeros(grid.shape, dtype=complex)
                for i, w in enumerate(stencil):
                    acc += w * a.sample(node + (alpha / 2.0 - i) * dxi)
                vals.append(acc / dxi**alpha)
            vals = np.stack(vals)
            wnorm = _w_rho_inf(vals, grid, rho)
            weight = (1.0 + np.abs(nodes)) ** (alpha - m)
            best = max(best, float(np.max(weight * wnorm)))
    else:
        # d=2: sample a thinned lattice and only pure-axis derivatives
        xi_pts = grid.xi_mesh.reshape(-1, 2)[:: max(xi_stride, 8)]
        xi_pts = xi_pts[np.linalg.norm(xi_pts, axis=1) >= 0.5]
        dxi = 2.0 * np.pi / max(grid.extent)
        for alpha in range(alpha_max + 1):
            stencil = [(-1) ** i * factorial(alpha) / (factorial(i) * factorial(alpha - i))
                       for i in range(alpha + 1)]
            for axis in range(2):
                e = np.zeros(2)
                e[axis] = 1.0
                vals = []
                for node in xi_pts:
                    acc = np.zeros(grid.shape, dtype=complex)
                    for i, w in enumerate(stencil):
                        acc += w * a.sample(node + (alpha / 2.0 - i) * dxi * e)
                    vals.append(acc / dxi**alpha)
                vals = np.stack(vals)
                wnorm = _w_rho_inf(vals, grid, rho)
                weight = (1.0 + np.linalg.norm(xi_pts, axis=1)) ** (alpha - m)
                best = max(best, float(np.max(weight * wnorm)))
    return SemiNorm(best, float(m), float(rho))


def _xi_derivative(a: SymbolField, xi, alpha: int, dxi: float) -> np.ndarray:
    stencil = [(-1) ** i * factorial(alpha) / (factorial(i) * factorial(alpha - i))
               for i in range(alpha + 1)]
    acc = np.zeros(a.grid.shape, dtype=complex)
    for i, w in enumerate(stencil):
        acc += w * a.sample(xi + (alpha / 2.0 - i) * dxi)
    return acc / dxi**alpha


def sharp_product(a: SymbolField, b: SymbolField, rho: float) -> SymbolField:
    """Truncated composition symbol sum_{|alpha|<rho} ((-i)^|a|/a!) d_xi^a a d_x^a b (d=1)."""
    if a.grid.dim != 1:
        raise ValueError("sharp product implemented for d=1 probes")
    grid = a.grid
    dxi = 2.0 * np.pi / grid.extent[0]
    npts = np.prod(grid.points)
    n_terms = int(np.ceil(rho))
    theta = grid.freq_axes[0]

    def func(g, xi):
        total = np.zeros(grid.shape, dtype=complex)
        for alpha in range(n_terms):
            da = _xi_derivative(a, xi, alpha, dxi) if alpha else a.sample(xi)
            spec_b = np.fft.fft(b.sample(xi)) / npts
            db = np.fft.ifft(((1j * theta) ** alpha) * spec_b) * npts
            total += ((-1j) ** alpha / factorial(alpha)) * da * db
        return total

    return SymbolField(grid, func, a.order + b.order, min(a.regularity, b.regularity))


def adjoint_symbol(a: SymbolField, rho: float) -> SymbolField:
    """a* = sum_{|alpha|<rho} (1/(i^|a| a!)) d_xi^a d_x^a conj(a) (d=1)."""
    if a.grid.dim != 1:
        raise ValueError("adjoint symbol implemented for d=1 probes")
    grid = a.grid
    dxi = 2.0 * np.pi / grid.extent[0]
    npts = np.prod(grid.points)
    n_terms = int(np.ceil(rho))
    theta = grid.freq_axes[0]

    abar = SymbolField(grid, lambda g, xi: np.conj(a.sample(xi)), a.order, a.regularity)

    def func(g, xi):
        total = np.zeros(grid.shape, dtype=complex)
        for alpha in range(n_terms):
            da = _xi_derivative(abar, xi, alpha, dxi) if alpha else abar.sample(xi)
            spec = np.fft.fft(da) / npts
            dxa = np.fft.ifft(((1j * theta) ** alpha) * spec) * npts
            total += dxa / (1j**alpha * factorial(alpha))
        return total

    return SymbolField(grid, func, a.order, a.regularity)


def band_probe(grid: PeriodicGrid, j: int, rng) -> SpectralField:
    """Random field with spectrum in the dyadic annulus at 2^j (d=1)."""
    xi = grid.xi_mesh
    mask = (np.abs(xi) >= 2.0 ** (j - 1)) & (np.abs(xi) <= 2.0 ** (j + 1))
    if not np.any(mask):
        raise ValueError(f"block {j} not representable on this grid")
    spec = np.zeros(grid.shape, dtype=complex)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=int(np.sum(mask)))
    spec[mask] = np.exp(1j * phases)
    return SpectralField.from_spectrum(grid, spec)


def composition_remainder(a: SymbolField, b: SymbolField, rho: float,
                          probe_j_range, seed: int = 0) -> SlopeFit:
    """Decay fit of ||(T_a T_b - T_{a#b}) u_j|| / ||u_j|| against j."""
    js = list(probe_j_range)
    if len(js) < 3:
        raise ValueError("need at least 3 dyadic probes for the remainder fit")
    rng = np.random.default_rng(seed)
    ash_b = sharp_product(a, b, rho)
    vals = []
    for j in js:
        u = band_probe(a.grid, j, rng)
        lhs = apply_paradiff(a, apply_paradiff(b, u))
        rhs = apply_paradiff(ash_b, u)
        vals.append(norm_l2(lhs - rhs) / norm_l2(u))
    return fit_slope(js, np.log2(np.maximum(vals, 1e-300)))


def adjoint_remainder(a: SymbolField, rho: float, probe_j_range,
                      seed: int = 0) -> SlopeFit:
    """Decay fit of ||((T_a)* - T_{a*}) u_j|| / ||u_j|| against j."""
    js = list(probe_j_range)
    if len(js) < 3:
        raise ValueError("need at least 3 dyadic probes for the remainder fit")
    rng = np.random.default_rng(seed)
    astar = adjoint_symbol(a, rho)
    vals = []
    for j in js:
        u = band_probe(a.grid, j, rng)
        lhs = apply_paradiff_adjoint(a, u)
        rhs = apply_paradiff(astar, u)
        vals.append(norm_l2(lhs - rhs) / norm_l2(u))
    return fit_slope(js, np.log2(np.maximum(vals, 1e-300)))


@dataclass
class BlockRemainderRecord:
    j: int
    annulus_leak: float
    norm_ratio: float


def para_vs_smoothed_remainder(a: SymbolField, u: SpectralField, j: int,
                               mu: float = 0.0):
    """R'_j u = T_a Delta_j u - S_{j-3}(a)(x,D) Delta_j u with its certificates.

    Returns the remainder field plus a record with the relative spectral
    energy outside the annulus C(2^{j-2}, 2^{j+2}) and the ratio
    ||R'_j u||_{H^{mu-m+rho}} / ||u||_{H^mu}.
    """
    if j < 1:
        raise ValueError("j >= 1 required")
    profile = a.profile
    grid = u.grid
    block = SpectralField.from_spectrum(grid, profile.phi_k(grid.xi_norm, j) * u.spectrum)
    lhs = apply_paradiff(a, block)
    rhs = apply_pseudodiff(smooth_symbol(a, j - 3), block)
    rem = lhs - rhs
    spec = rem.spectrum
    total = float(np.sum(np.abs(spec) ** 2))
    ann = (grid.xi_norm >= 2.0 ** (j - 2)) & (grid.xi_norm <= 2.0 ** (j + 2))
    leak = float(np.sum(np.abs(spec[~ann]) ** 2) / total) if total > 0 else 0.0
    ratio_num = sobolev_norm(rem, mu - a.order + a.regularity)
    ratio_den = sobolev_norm(u, mu)
    record = BlockRemainderRecord(j=j, annulus_leak=leak,
                                  norm_ratio=ratio_num / ratio_den if ratio_den else 0.0)
    return rem, record
