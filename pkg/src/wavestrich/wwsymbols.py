"""Symbols of the gravity-capillary operator built from a sampled surface.

Everything is derived from the surface gradient: the first two
Dirichlet-Neumann symbols, the curvature symbols, the symmetrizers, the
principal symbol of order 3/2 and its complex sub-principal companion of
order 1/2.  Spatial derivatives inside the symbols are spectral; the
xi-dependence is closed form.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .paradiff import SymbolField
from .spectral import PeriodicGrid, SpectralField, holder_norm, spectral_gradient

__all__ = [
    "SurfaceState",
    "WWSymbolSet",
    "surface_preset",
    "velocity_preset",
    "parse_preset",
    "dn_symbols",
    "curvature_symbols",
    "symmetrizer",
    "gamma_omega",
    "build_symbol_set",
    "gamma_hessian_det",
    "hessian_det_gamma",
    "gamma_principal_factor",
    "symbol_seminorms",
    "trace_velocities",
    "CPRIME_RADII",
]

# radial samples of the annulus 1/4 <= |xi| <= 4 used for sup-in-xi scans
CPRIME_RADII = np.geomspace(0.25, 4.0, 17)


class SurfaceState:
    """Surface elevation sample with cached spectral derivatives."""

    def __init__(self, grid: PeriodicGrid, eta_values, t: float = 0.0):
        eta_values = np.asarray(eta_values)
        field = SpectralField(grid, eta_values)
        if np.max(np.abs(field.values.imag)) > 1e-12:
            raise ValueError("surface elevation must be real")
        self.grid = grid
        self.eta = field
        self.t = float(t)

    @cached_property
    def grad(self) -> list:
        return [np.real(f.values) for f in spectral_gradient(self.eta)]

    @cached_property
    def grad_sq(self) -> np.ndarray:
        return sum(g**2 for g in self.grad)

    @cached_property
    def one_plus_grad_sq(self) -> np.ndarray:
        return 1.0 + self.grad_sq

    @cached_property
    def hess(self) -> list:
        rows = []
        for f in spectral_gradient(self.eta):
            rows.append([np.real(g.values) for g in spectral_gradient(f)])
        return rows

    @property
    def norm_grad_inf(self) -> float:
        return float(np.sqrt(np.max(self.grad_sq)))


def parse_preset(text: str):
    """Parse 'name' or 'name(a, b, ...)' into (name, [floats])."""
    text = text.strip()
    m = re.fullmatch(r"([a-zA-Z_]+)\s*(?:\(([^)]*)\))?", text)
    if not m:
        raise ValueError(f"cannot parse preset {text!r}")
    name = m.group(1).lower()
    args = []
    if m.group(2):
        for piece in m.group(2).split(","):
            piece = piece.strip()
            if piece:
                args.append(float(piece))
    return name, args


def _periodic_bump(grid: PeriodicGrid, amplitude: float, width: float, center) -> np.ndarray:
    """Gaussian bump wrapped onto the box (three periodic images per axis)."""
    centers = np.atleast_1d(np.asarray(center, dtype=float))
    out = np.zeros(grid.shape)
    if grid.dim == 1:
        x = grid.x_mesh
        L = grid.extent[0]
        for n in (-1, 0, 1):
            out += np.exp(-(((x - centers[0]) + n * L) / width) ** 2)
    else:
        X = grid.x_mesh
        for n0 in (-1, 0, 1):
            for n1 in (-1, 0, 1):
                r2 = ((X[..., 0] - centers[0]) + n0 * grid.extent[0]) ** 2 \
                    + ((X[..., 1] - centers[-1]) + n1 * grid.extent[1]) ** 2
                out += np.exp(-r2 / width**2)
    return amplitude * out


def _shaped_random(grid: PeriodicGrid, seed: int, smoothness: float) -> np.ndarray:
    """Real random field with spectrum ~ (1+|xi|^2)^(-s/2 - d/4), fixed seed."""
    rng = np.random.default_rng(int(seed))
    shape = (1.0 + grid.xi_norm**2) ** (-(smoothness / 2.0 + grid.dim / 4.0))
    shape = np.where(grid.xi_norm > 0, shape, 0.0)
    noise = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    spec = shape * noise
    vals = np.real(SpectralField.from_spectrum(grid, spec).values)
    peak = np.max(np.abs(vals))
    return vals / peak if peak > 0 else vals


def surface_preset(grid: PeriodicGrid, spec_text: str, t: float = 0.0) -> SurfaceState:
    """Named surfaces: flat | bump(amp, width, center) | cosine(amp, wavenumber) | random(seed, s)."""
    name, args = parse_preset(spec_text)
    if name == "flat":
        return SurfaceState(grid, np.zeros(grid.shape), t)
    if name == "bump":
        amp = args[0] if args else 0.2
        width = args[1] if len(args) > 1 else grid.extent[0] / 8.0
        center = args[2] if len(args) > 2 else grid.extent[0] / 2.0
        return SurfaceState(grid, _periodic_bump(grid, amp, width, center), t)
    if name == "cosine":
        amp = args[0] if args else 0.1
        wavenumber = int(args[1]) if len(args) > 1 else 1
        if grid.dim == 1:
            vals = amp * np.cos(2.0 * np.pi * wavenumber * grid.x_mesh / grid.extent[0])
        else:
            vals = amp * np.cos(2.0 * np.pi * wavenumber * grid.x_mesh[..., 0] / grid.extent[0])
        return SurfaceState(grid, vals, t)
    if name == "random":
        seed = int(args[0]) if args else 0
        smoothness = args[1] if len(args) > 1 else 3.0
        amp = args[2] if len(args) > 2 else 0.1
        return SurfaceState(grid, amp * _shaped_random(grid, seed, smoothness), t)
    raise ValueError(f"unknown surface preset {name!r}")


def velocity_preset(grid: PeriodicGrid, spec_text: str) -> np.ndarray:
    """Named transport fields: zero | constant(c..) | sine(amp, wavenumber) | random(seed, s, amp).

    Returns an array of shape grid.shape (d=1) or grid.shape+(d,) (d=2).
    """
    name, args = parse_preset(spec_text)
    vec_shape = grid.shape if grid.dim == 1 else grid.shape + (grid.dim,)
    if name == "zero":
        return np.zeros(vec_shape)
    if name == "constant":
        out = np.zeros(vec_shape)
        vals = args if args else [0.1]
        if grid.dim == 1:
            out[...] = vals[0]
        else:
            for axis in range(grid.dim):
                out[..., axis] = vals[axis] if axis < len(vals) else vals[-1]
        return out
    if name == "sine":
        amp = args[0] if args else 0.2
        wavenumber = int(args[1]) if len(args) > 1 else 1
        if grid.dim == 1:
            return amp * np.sin(2.0 * np.pi * wavenumber * grid.x_mesh / grid.extent[0])
        out = np.zeros(vec_shape)
        out[..., 0] = amp * np.sin(2.0 * np.pi * wavenumber * grid.x_mesh[..., 0] / grid.extent[0])
        return out
    if name == "random":
        seed = int(args[0]) if args else 0
        smoothness = args[1] if len(args) > 1 else 3.0
        amp = args[2] if len(args) > 2 else 0.1
        if grid.dim == 1:
            return amp * _shaped_random(grid, seed, smoothness)
        out = np.zeros(vec_shape)
        for axis in range(grid.dim):
            out[..., axis] = amp * _shaped_random(grid, seed + axis, smoothness)
        return out
    raise ValueError(f"unknown velocity preset {name!r}")


def _xi_components(grid: PeriodicGrid, xi):
    if grid.dim == 1:
        return [float(xi)]
    xi = np.asarray(xi, dtype=float).ravel()
    return [float(c) for c in xi]


def _grid_spectral_derivative(grid: PeriodicGrid, values: np.ndarray, axis: int) -> np.ndarray:
    shape = [1] * grid.dim
    shape[axis] = grid.points[axis]
    f = grid.freq_axes[axis].reshape(shape)
    return np.fft.ifftn(1j * f * np.fft.fftn(values))


def dn_symbols(s: SurfaceState):
    """First two Dirichlet-Neumann symbols and the auxiliary alpha symbol."""
    grid = s.grid
    q2 = s.one_plus_grad_sq
    grad = s.grad

    def lam1(g, xi):
        c = _xi_components(grid, xi)
        gxi = sum(gi * ci for gi, ci in zip(grad, c))
        xi2 = sum(ci**2 for ci in c)
        return np.sqrt(q2 * xi2 - gxi**2) + 0j

    def alph(g, xi):
        c = _xi_components(grid, xi)
        gxi = sum(gi * ci for gi, ci in zip(grad, c))
        return (np.real(lam1(g, xi)) + 1j * gxi) / q2

    lam1_sym = SymbolField(grid, lam1, order=1.0, regularity=1.0, homogeneous=True)
    alpha_sym = SymbolField(grid, alph, order=1.0, regularity=1.0, homogeneous=True)

    def lam0(g, xi):
        c = _xi_components(grid, xi)
        l1v = np.real(lam1_sym.sample(xi))
        a1v = alpha_sym.sample(xi)
        gxi = sum(gi * ci for gi, ci in zip(grad, c))
        # div(alpha grad eta) and d_xi lambda1 . grad alpha, both spectral in x
        div = np.zeros(grid.shape, dtype=complex)
        for axis in range(grid.dim):
            div += _grid_spectral_derivative(grid, a1v * grad[axis], axis)
        dxi_lam = [(q2 * ci - gxi * grad[axis]) / l1v for axis, ci in enumerate(c)]
        dot = np.zeros(grid.shape, dtype=complex)
        for axis in range(grid.dim):
            dot += dxi_lam[axis] * _grid_spectral_derivative(grid, a1v, axis)
        return (q2 / (2.0 * l1v)) * (div + 1j * dot)

    lam0_sym = SymbolField(grid, lam0, order=0.0, regularity=0.0)
    return lam1_sym, lam0_sym, alpha_sym


def curvature_symbols(s: SurfaceState):
    """Principal and sub-principal symbols of the linearised mean-curvature operator."""
    grid = s.grid
    q2 = s.one_plus_grad_sq
    grad = s.grad

    def l2(g, xi):
        c = _xi_components(grid, xi)
        gxi = sum(gi * ci for gi, ci in zip(grad, c))
        xi2 = sum(ci**2 for ci in c)
        return q2 ** (-0.5) * (xi2 - gxi**2 / q2) + 0j

    l2_sym = SymbolField(grid, l2, order=2.0, regularity=1.0, homogeneous=True)

    def l1(g, xi):
        c = _xi_components(grid, xi)
        gxi = sum(gi * ci for gi, ci in zip(grad, c))
        total = np.zeros(grid.shape, dtype=complex)
        for axis, ci in enumerate(c):
            dxi_l2 = q2 ** (-0.5) * (2.0 * ci - 2.0 * gxi * grad[axis] / q2)
            total += _grid_spectral_derivative(grid, dxi_l2, axis)
        return -0.5j * total

    l1_sym = SymbolField(grid, l1, order=1.0, regularity=0.0)
    return l2_sym, l1_sym


def symmetrizer(s: SurfaceState):
    """Zero-order and half-order symmetrizer symbols (principal parts)."""
    grid = s.grid
    q2 = s.one_plus_grad_sq

    q_sym = SymbolField(grid, lambda g, xi: q2 ** (-0.5) + 0j, order=0.0, regularity=1.0)

    def p_principal(g, xi):
        c = _xi_components(grid, xi)
        xi2 = sum(ci**2 for ci in c)
        return q2 ** (-1.25) * xi2**0.25 + 0j

    p_sym = SymbolField(grid, p_principal, order=0.5, regularity=1.0, homogeneous=True)
    return q_sym, p_sym


def _gamma_core(s: SurfaceState, xi):
    """Q = |xi|^2 - (grad.xi)^2/(1+|grad|^2), the quadratic form under gamma."""
    c = _xi_components(s.grid, xi)
    gxi = sum(gi * ci for gi, ci in zip(s.grad, c))
    xi2 = sum(ci**2 for ci in c)
    return xi2 - gxi**2 / s.one_plus_grad_sq


def gamma_omega(s: SurfaceState, lam0_sym: SymbolField | None = None):
    """Principal symbol gamma = Q^(3/4) and the complex half-order symbol omega."""
    grid = s.grid
    if lam0_sym is None:
        _, lam0_sym, _ = dn_symbols(s)
    q2 = s.one_plus_grad_sq
    grad = s.grad

    gamma_sym = SymbolField(grid, lambda g, xi: _gamma_core(s, xi) ** 0.75 + 0j,
                            order=1.5, regularity=1.0, homogeneous=True)

    def omega(g, xi):
        c = _xi_components(grid, xi)
        Q = _gamma_core(s, xi)
        gxi = sum(gi * ci for gi, ci in zip(grad, c))
        total = np.zeros(grid.shape, dtype=complex)
        for axis, ci in enumerate(c):
            dxi_gamma = 0.75 * Q ** (-0.25) * (2.0 * ci - 2.0 * gxi * grad[axis] / q2)
            total += _grid_spectral_derivative(grid, dxi_gamma, axis)
        first = -0.5j * total
        # sqrt(l2/lam1) = Q^(1/2) * (1+|grad eta|^2)^(-1/2) / lam1; use closed forms
        xi2 = sum(ci**2 for ci in c)
        lam1 = np.sqrt(q2 * xi2 - gxi**2)
        ratio = np.sqrt(q2 ** (-0.5) * Q / lam1)
        return first + ratio * np.real(lam0_sym.sample(xi)) / 2.0

    omega_sym = SymbolField(grid, omega, order=0.5, regularity=0.0)
    return gamma_sym, omega_sym


@dataclass
class WWSymbolSet:
    lam1: SymbolField
    lam0: SymbolField
    alpha1: SymbolField
    l2: SymbolField
    l1: SymbolField
    q: SymbolField
    p_principal: SymbolField
    gamma: SymbolField
    omega: SymbolField
    c0_gamma: float


def gamma_hessian_det(s: SurfaceState, xi) -> np.ndarray:
    """det Hess_xi of gamma by closed-form differentiation of the 3/4 power."""
    grid = s.grid
    c = _xi_components(grid, xi)
    Q = _gamma_core(s, xi)
    if grid.dim == 1:
        A = 1.0 / s.one_plus_grad_sq
        return 0.75 * A**0.75 * np.abs(c[0]) ** (-0.5) * np.sign(1.0)
    g1, g2 = s.grad
    q2 = s.one_plus_grad_sq
    A11 = 1.0 - g1 * g1 / q2
    A12 = -g1 * g2 / q2
    A22 = 1.0 - g2 * g2 / q2
    Ax1 = A11 * c[0] + A12 * c[1]
    Ax2 = A12 * c[0] + A22 * c[1]
    H11 = 1.5 * Q ** (-0.25) * A11 - 0.75 * Q ** (-1.25) * Ax1 * Ax1
    H12 = 1.5 * Q ** (-0.25) * A12 - 0.75 * Q ** (-1.25) * Ax1 * Ax2
    H22 = 1.5 * Q ** (-0.25) * A22 - 0.75 * Q ** (-1.25) * Ax2 * Ax2
    return H11 * H22 - H12 * H12


def hessian_det_gamma(s: SurfaceState, radii=CPRIME_RADII, n_angles: int = 16):
    """Floor of |det Hess_xi gamma| over the grid and a sample of the annulus.

    Returns (c0, witness) where witness = (flat grid index, xi).  A
    non-positive floor signals a violated lower bound.
    """
    best = np.inf
    witness = None
    if s.grid.dim == 1:
        directions = [np.array([1.0]), np.array([-1.0])]
    else:
        ths = np.linspace(0.0, 2.0 * np.pi, n_angles, endpoint=False)
        directions = [np.array([np.cos(t), np.sin(t)]) for t in ths]
    for r in radii:
        for d in directions:
            xi = r * d if s.grid.dim > 1 else float(r * d[0])
            det = np.abs(gamma_hessian_det(s, xi))
            idx = int(np.argmin(det))
            val = float(det.ravel()[idx])
            if val < best:
                best = val
                witness = (idx, xi)
    return best, witness


def gamma_principal_factor(s: SurfaceState) -> np.ndarray:
    """d=1 separable factor: gamma(x, xi) = factor(x) |xi|^(3/2)."""
    if s.grid.dim != 1:
        raise ValueError("separable principal factor exists only in d=1")
    return s.one_plus_grad_sq ** (-0.75)


def build_symbol_set(s: SurfaceState) -> WWSymbolSet:
    lam1, lam0, alpha1 = dn_symbols(s)
    l2, l1 = curvature_symbols(s)
    q_sym, p_sym = symmetrizer(s)
    gamma, omega = gamma_omega(s, lam0)
    c0, _ = hessian_det_gamma(s)
    return WWSymbolSet(lam1, lam0, alpha1, l2, l1, q_sym, p_sym, gamma, omega, c0)


def _xi_samples(dim: int, radii=CPRIME_RADII, n_angles: int = 8):
    if dim == 1:
        return [float(r * sgn) for r in radii for sgn in (1.0, -1.0)]
    ths = np.linspace(0.0, 2.0 * np.pi, n_angles, endpoint=False)
    return [r * np.array([np.cos(t), np.sin(t)]) for r in radii for t in ths]


def _xi_fd_derivative(sym: SymbolField, xi, beta: int, axis: int, step: float) -> np.ndarray:
    from math import factorial
    if beta == 0:
        return sym.sample(xi)
    stencil = [(-1) ** i * factorial(beta) / (factorial(i) * factorial(beta - i))
               for i in range(beta + 1)]
    acc = np.zeros(sym.grid.shape, dtype=complex)
    for i, w in enumerate(stencil):
        offset = (beta / 2.0 - i) * step
        if sym.grid.dim == 1:
            acc += w * sym.sample(float(xi) + offset)
        else:
            e = np.zeros(sym.grid.dim)
            e[axis] = 1.0
            acc += w * sym.sample(np.asarray(xi) + offset * e)
    return acc / step**beta


def symbol_seminorms(slices, k: int, p: float = 4.0, fd_step: float = 1.0 / 64.0):
    """Coefficient semi-norms over a time-sampled family.

    ``slices`` is a list of (t, gamma_symbol, omega_symbol), times increasing.
    Returns (N_k_gamma, M_k_gamma, N_k_omega): sums over xi-derivative orders
    up to k of sup-in-time/xi of W^{1,inf} norms, the L^p-in-time W^{3/2,inf}
    variant, and the sup L^inf norms of the half-order symbol.
    """
    if k > 4:
        raise ValueError("k <= 4 at desk scale")
    times = np.asarray([t for t, _, _ in slices], dtype=float)
    grid = slices[0][1].grid
    samples = _xi_samples(grid.dim)
    n_gamma = 0.0
    m_gamma = 0.0
    n_omega = 0.0
    for beta in range(k + 1):
        axes = range(grid.dim) if beta > 0 else [0]
        for axis in axes:
            sup_g = 0.0
            sup_o = 0.0
            best_mk = 0.0
            for xi in samples:
                w32_t = []
                for t, gsym, osym in slices:
                    dg = _xi_fd_derivative(gsym, xi, beta, axis, fd_step)
                    do = _xi_fd_derivative(osym, xi, beta, axis, fd_step)
                    f = SpectralField(grid, dg)
                    w1 = max(f.max_abs(),
                             max(g.max_abs() for g in spectral_gradient(f)))
                    sup_g = max(sup_g, w1)
                    sup_o = max(sup_o, float(np.max(np.abs(do))))
                    w32_t.append(max(f.max_abs(), holder_norm(f, 1.5)))
                if len(times) > 1:
                    lp = np.trapz(np.asarray(w32_t) ** p, times) ** (1.0 / p)
                else:
                    span = 1.0
                    lp = (span * w32_t[0] ** p) ** (1.0 / p)
                best_mk = max(best_mk, float(lp))
            n_gamma += sup_g
            m_gamma += best_mk
            n_omega += sup_o
    return n_gamma, m_gamma, n_omega


def trace_velocities(eta: SpectralField, psi: SpectralField, g_eta_psi: SpectralField):
    """Vertical and horizontal surface velocities from the trace data.

    The Dirichlet-Neumann image G(eta)psi is supplied externally.
    """
    s = SurfaceState(eta.grid, eta.values)
    grad_psi = [np.real(f.values) for f in spectral_gradient(psi)]
    num = sum(g * dp for g, dp in zip(s.grad, grad_psi)) + np.real(g_eta_psi.values)
    B = num / s.one_plus_grad_sq
    V = [dp - B * g for dp, g in zip(grad_psi, s.grad)]
    return SpectralField(eta.grid, B), [SpectralField(eta.grid, v) for v in V]
