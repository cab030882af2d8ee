"""Semiclassical reduction: regularized dyadic operators, straightening flow,
frame matrices, and pulled-back symbols with their derivative stacks.

Within one frequency window the surface is frozen, so all coefficient
fields are autonomous in the semiclassical time; the flow map itself still
depends on sigma.  Off-lattice evaluation goes through truncated Fourier
series of the (periodic) displacement fields, which keeps every derivative
exact to the stored bandwidth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .paradiff import SymbolField, apply_pseudodiff, smooth_symbol
from .profiles import DEFAULT_PROFILE, CutoffProfile
from .spectral import PeriodicGrid, SpectralField, norm_l2
from .wwsymbols import SurfaceState, gamma_principal_factor

__all__ = [
    "SemiclassicalParams",
    "BandField1D",
    "BandField2D",
    "band_limit",
    "GammaH1D",
    "build_gamma_h",
    "StraightenedFrame",
    "integrate_straightening",
    "PulledBackSymbol",
    "pullback_symbol",
    "check_symbol_class",
    "rescale_to_semiclassical",
    "unscale_from_semiclassical",
    "LocalizedOperator",
    "build_L_j",
]


@dataclass
class SemiclassicalParams:
    """Frequency-window parameters: h = 2^-j, window sigma in [0, h^delta]."""

    j: int
    delta: float = 0.4
    nu: float | None = None
    j0: int = 4
    n_sigma_steps: int = 64

    def __post_init__(self):
        if not (0.0 < self.delta <= 0.5):
            raise ValueError("delta must lie in (0, 1/2]")
        if self.nu is None:
            self.nu = 1.0 - self.delta
        if not (0.0 < self.nu <= 1.0 - self.delta + 1e-12):
            raise ValueError("nu must lie in (0, 1 - delta]")
        if self.j < self.j0:
            raise ValueError(f"j must be >= j0 = {self.j0}")

    @property
    def h(self) -> float:
        return 2.0 ** (-self.j)

    @property
    def sigma_max(self) -> float:
        return self.h**self.delta

    @property
    def t_window(self) -> float:
        return self.h ** (0.5 + self.delta)

    @property
    def smoothing_level(self) -> float:
        return (self.j - 3) * self.delta


class BandField1D:
    """Truncated Fourier series on a circle of length L, exact derivatives."""

    def __init__(self, L: float, freqs: np.ndarray, coefs: np.ndarray, tol: float = 1e-14):
        self.L = float(L)
        coefs = np.asarray(coefs, dtype=complex)
        freqs = np.asarray(freqs, dtype=float)
        scale = np.max(np.abs(coefs)) if coefs.size else 0.0
        keep = np.abs(coefs) > tol * max(scale, 1.0)
        if not np.any(keep):
            keep = np.zeros(coefs.shape, dtype=bool)
            keep[np.argmax(freqs == 0.0)] = True
        self.freqs = freqs[keep]
        self.coefs = coefs[keep]

    @classmethod
    def fit(cls, L: float, values: np.ndarray, tol: float = 1e-14) -> "BandField1D":
        values = np.asarray(values)
        n = values.size
        coefs = np.fft.fft(values) / n
        freqs = 2.0 * np.pi * np.fft.fftfreq(n, d=L / n)
        return cls(L, freqs, coefs, tol)

    @property
    def bandwidth(self) -> float:
        return float(np.max(np.abs(self.freqs)))

    def phase(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.exp(1j * x[..., None] * self.freqs)

    def eval_with(self, E: np.ndarray, deriv: int = 0) -> np.ndarray:
        w = self.coefs * (1j * self.freqs) ** deriv
        return E @ w

    def __call__(self, x, deriv: int = 0) -> np.ndarray:
        return self.eval_with(self.phase(x), deriv)

    def real_at(self, x, deriv: int = 0) -> np.ndarray:
        return np.real(self(x, deriv))


class BandField2D:
    """Truncated 2-d Fourier series; derivatives by multi-index."""

    def __init__(self, extent, freqs: np.ndarray, coefs: np.ndarray, tol: float = 1e-13):
        self.extent = tuple(float(v) for v in extent)
        coefs = np.asarray(coefs, dtype=complex)
        scale = np.max(np.abs(coefs)) if coefs.size else 0.0
        keep = np.abs(coefs) > tol * max(scale, 1.0)
        self.freqs = np.asarray(freqs, dtype=float)[keep]
        self.coefs = coefs[keep]

    @classmethod
    def fit(cls, grid: PeriodicGrid, values: np.ndarray, tol: float = 1e-13) -> "BandField2D":
        n = np.prod(grid.points)
        coefs = (np.fft.fftn(values) / n).ravel()
        freqs = grid.xi_mesh.reshape(-1, 2)
        return cls(grid.extent, freqs, coefs, tol)

    def __call__(self, pts: np.ndarray, deriv=(0, 0)) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        E = np.exp(1j * (pts[..., None, 0] * self.freqs[:, 0] + pts[..., None, 1] * self.freqs[:, 1]))
        w = self.coefs * (1j * self.freqs[:, 0]) ** deriv[0] * (1j * self.freqs[:, 1]) ** deriv[1]
        return E @ w


def band_limit(grid: PeriodicGrid, values: np.ndarray, level: float,
               profile: CutoffProfile = DEFAULT_PROFILE):
    """Low-pass a grid field by psi(2^-level D_x) and wrap it as a band field."""
    npts = np.prod(grid.points)
    mask = profile.psi_plateau.val(grid.xi_norm * 2.0 ** (-level))
    spec = mask * (np.fft.fftn(np.asarray(values, dtype=complex)) / npts)
    if grid.dim == 1:
        return BandField1D(grid.extent[0], grid.freq_axes[0], spec)
    return BandField2D.fit_from_spectrum(grid, spec) if hasattr(BandField2D, "fit_from_spectrum") \
        else BandField2D(grid.extent, grid.xi_mesh.reshape(-1, 2), spec.ravel())


class GammaH1D:
    """Frequency-window principal symbol in d=1: Gamma_h(x, z) = gs(x) |z|^(3/2) phi1(z).

    gs is the smoothed separable factor of the order-3/2 symbol; all x- and
    z-derivatives up to second order are closed form.
    """

    def __init__(self, gs: BandField1D, profile: CutoffProfile = DEFAULT_PROFILE):
        self.gs = gs
        self.profile = profile
        self._bump = profile.phi1_bump

    # radial factor m(z) = |z|^(3/2) phi1(z) and derivatives
    def m(self, z):
        r = np.abs(z)
        return r**1.5 * self._bump.val(r)

    def m1(self, z):
        r = np.abs(z)
        s = np.sign(z)
        return s * (1.5 * r**0.5 * self._bump.val(r) + r**1.5 * self._bump.d1(r))

    def m2(self, z):
        r = np.abs(z)
        return 0.75 * r ** (-0.5) * self._bump.val(r) \
            + 3.0 * r**0.5 * self._bump.d1(r) + r**1.5 * self._bump.d2(r)

    def value(self, x, z):
        return self.gs.real_at(x) * self.m(z)

    def dx(self, x, z):
        return self.gs.real_at(x, 1) * self.m(z)

    def dz(self, x, z):
        return self.gs.real_at(x) * self.m1(z)

    def dzz(self, x, z):
        return self.gs.real_at(x) * self.m2(z)

    def dxz(self, x, z):
        return self.gs.real_at(x, 1) * self.m1(z)

    def dxx(self, x, z):
        return self.gs.real_at(x, 2) * self.m(z)

    def hessian_floor(self, x_samples, z_samples) -> float:
        vals = [np.min(np.abs(self.dzz(x_samples, z))) for z in z_samples]
        return float(np.min(vals))


def build_gamma_h(surface: SurfaceState, params: SemiclassicalParams,
                  profile: CutoffProfile = DEFAULT_PROFILE) -> GammaH1D:
    """Assemble the window symbol from a surface (d=1).

    Requires the homogeneous separable structure of the order-3/2 symbol,
    which the smoothing preserves; rejected otherwise.
    """
    if surface.grid.dim != 1:
        raise ValueError("window symbol assembly is d=1; use per-frequency smoothing in d=2")
    factor = gamma_principal_factor(surface)
    gs = band_limit(surface.grid, factor, params.smoothing_level, profile)
    return GammaH1D(gs, profile)


# ----------------------------------------------------------------------------
# straightening flow


class StraightenedFrame:
    """Lagrangian straightening data on a shared sigma half-step ladder.

    Tables hold the flow and its first three y-derivatives on a fine periodic
    lattice per sigma node; off-lattice values come from truncated Fourier
    series of the periodic displacement fields.
    """

    def __init__(self, params: SemiclassicalParams, L: float, sigma_nodes: np.ndarray,
                 tables: dict, v_field: BandField1D, dim: int = 1, tables2d: dict | None = None):
        self.params = params
        self.L = float(L)
        self.sigma_nodes = sigma_nodes
        self.dim = dim
        self._tables = tables          # d=1: arrays [node, y_lattice]
        self._tables2d = tables2d
        self.v_field = v_field
        self._interp_cache: dict = {}

    def node_index(self, sigma: float) -> int:
        idx = int(round(sigma / self.sigma_nodes[-1] * (len(self.sigma_nodes) - 1)))
        if not np.isclose(self.sigma_nodes[idx], sigma, atol=1e-12):
            raise ValueError(f"sigma {sigma} not on the stored ladder")
        return idx

    def _interp(self, name: str, node: int) -> BandField1D:
        key = (name, node)
        if key not in self._interp_cache:
            self._interp_cache[key] = BandField1D.fit(self.L, self._tables[name][node])
        return self._interp_cache[key]

    # --- d=1 evaluators -----------------------------------------------------
    def X(self, node: int, y) -> np.ndarray:
        return np.asarray(y) + np.real(self._interp("disp", node)(np.asarray(y, dtype=float)))

    def DX(self, node: int, y) -> np.ndarray:
        return 1.0 + np.real(self._interp("dxp", node)(np.asarray(y, dtype=float)))

    def D2X(self, node: int, y) -> np.ndarray:
        return np.real(self._interp("dxpp", node)(np.asarray(y, dtype=float)))

    def D3X(self, node: int, y) -> np.ndarray:
        return np.real(self._interp("dxppp", node)(np.asarray(y, dtype=float)))

    def M0(self, node: int, y) -> np.ndarray:
        return 1.0 / self.DX(node, y)

    def M0_dy(self, node: int, y) -> np.ndarray:
        xp = self.DX(node, y)
        return -self.D2X(node, y) / xp**2

    def M0_dyy(self, node: int, y) -> np.ndarray:
        xp = self.DX(node, y)
        xpp = self.D2X(node, y)
        return -self.D3X(node, y) / xp**2 + 2.0 * xpp**2 / xp**3

    _GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(12)

    def H(self, node: int, y, y2) -> np.ndarray:
        """Segment average of DX between y2 and y (quadrature over the chord)."""
        y = np.asarray(y, dtype=float)
        y2 = np.asarray(y2, dtype=float)
        lam = 0.5 * (self._GL_NODES + 1.0)
        pts = lam * y[..., None] + (1.0 - lam) * y2[..., None]
        vals = self.DX(node, pts)
        return 0.5 * np.sum(self._GL_WEIGHTS * vals, axis=-1)

    def M(self, node: int, y, y2) -> np.ndarray:
        return 1.0 / self.H(node, y, y2)

    def J(self, node: int, y, y2) -> np.ndarray:
        return np.abs(self.DX(node, y2)) * np.abs(self.M(node, y, y2))

    def X_inverse(self, node: int, x, tol: float = 1e-13, max_iter: int = 30) -> np.ndarray:
        """Newton inversion of the flow map at one sigma node."""
        x = np.asarray(x, dtype=float)
        y = x.copy()
        for _ in range(max_iter):
            r = self.X(node, y) - x
            if np.max(np.abs(r)) < tol:
                return y
            y = y - r / self.DX(node, y)
        raise RuntimeError("flow inversion did not converge")

    def deviation_from_identity(self) -> float:
        return float(np.max(np.abs(self._tables["dxp"])))

    # --- d=2 smoke evaluators ------------------------------------------------
    def X2(self, node: int, pts) -> np.ndarray:
        disp = self._tables2d["disp"][node]
        return np.asarray(pts) + np.stack(
            [np.real(f(np.asarray(pts))) for f in disp], axis=-1)

    def DX2(self, node: int, pts) -> np.ndarray:
        rows = self._tables2d["jac"][node]
        out = np.stack(
            [np.stack([np.real(f(np.asarray(pts))) for f in row], axis=-1) for row in rows],
            axis=-2)
        out = out + np.eye(2)
        return out

    def H2(self, node: int, y, y2) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        y2 = np.asarray(y2, dtype=float)
        lam = 0.5 * (self._GL_NODES + 1.0)
        acc = 0.0
        for l, w in zip(lam, self._GL_WEIGHTS):
            acc = acc + w * self.DX2(node, l * y + (1.0 - l) * y2)
        return 0.5 * acc

    def M2_two_point(self, node: int, y, y2) -> np.ndarray:
        return np.linalg.inv(np.swapaxes(self.H2(node, y, y2), -1, -2))

    def J2(self, node: int, y, y2) -> np.ndarray:
        return np.abs(np.linalg.det(self.DX2(node, y2))) * np.abs(
            np.linalg.det(self.M2_two_point(node, y, y2)))


def _rk4(state, rhs, dt):
    k1 = rhs(state)
    k2 = rhs([s + 0.5 * dt * k for s, k in zip(state, k1)])
    k3 = rhs([s + 0.5 * dt * k for s, k in zip(state, k2)])
    k4 = rhs([s + dt * k for s, k in zip(state, k3)])
    return [s + dt / 6.0 * (a + 2 * b + 2 * c + d)
            for s, a, b, c, d in zip(state, k1, k2, k3, k4)]


def integrate_straightening(v_field, params: SemiclassicalParams, L: float,
                            n_lattice: int = 256, dim: int = 1,
                            smallness_bound: float = 0.5) -> StraightenedFrame:
    """Integrate the straightening flow and its variational stack.

    The variational equations ride in the same RK4 stages as the flow.  The
    window must satisfy the transport smallness proviso; it is enforced as
    t_window * sup|V| <= smallness_bound.
    """
    hv = np.sqrt(params.h)
    n_half = 2 * params.n_sigma_steps
    sig = np.linspace(0.0, params.sigma_max, n_half + 1)
    dt = sig[1] - sig[0]

    if dim == 1:
        vmax = float(np.max(np.abs(np.real(v_field(np.linspace(0, L, 257))))))
        if params.t_window * vmax > smallness_bound:
            raise ValueError("transport field too large for the window (smallness proviso)")
        y0 = np.arange(n_lattice) * (L / n_lattice)
        X = y0.copy()
        Xp = np.ones_like(y0)
        Xpp = np.zeros_like(y0)
        Xppp = np.zeros_like(y0)

        tables = {k: np.zeros((n_half + 1, n_lattice)) for k in ("disp", "dxp", "dxpp", "dxppp")}

        def rhs(state):
            x, xp, xpp, xppp = state
            E = v_field.phase(x)
            v = np.real(v_field.eval_with(E, 0))
            v1 = np.real(v_field.eval_with(E, 1))
            v2 = np.real(v_field.eval_with(E, 2))
            v3 = np.real(v_field.eval_with(E, 3))
            return [hv * v,
                    hv * v1 * xp,
                    hv * (v2 * xp**2 + v1 * xpp),
                    hv * (v3 * xp**3 + 3.0 * v2 * xp * xpp + v1 * xppp)]

        state = [X, Xp, Xpp, Xppp]
        for n in range(n_half + 1):
            tables["disp"][n] = state[0] - y0
            tables["dxp"][n] = state[1] - 1.0
            tables["dxpp"][n] = state[2]
            tables["dxppp"][n] = state[3]
            if n < n_half:
                state = _rk4(state, rhs, dt)
            if np.min(state[1]) <= 0.0:
                raise RuntimeError("flow Jacobian lost invertibility (diffeomorphism regime violated)")
        return StraightenedFrame(params, L, sig, tables, v_field, dim=1)

    # d=2 smoke scale: flow + first and second variations
    vx, vy = v_field  # pair of BandField2D
    grid_pts = n_lattice
    ax = np.arange(grid_pts) * (L / grid_pts)
    Y = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)

    def v_eval(pts, dx=0, dy=0):
        return np.stack([np.real(vx(pts, (dx, dy))), np.real(vy(pts, (dx, dy)))], axis=-1)

    X = Y.copy()
    DX = np.tile(np.eye(2), (Y.shape[0], 1, 1))
    disp_nodes, jac_nodes = [], []

    def rhs2(state):
        x, dxm = state
        v = v_eval(x)
        g = np.empty((x.shape[0], 2, 2))
        g[:, :, 0] = v_eval(x, 1, 0)
        g[:, :, 1] = v_eval(x, 0, 1)
        return [hv * v, hv * np.einsum("nik,nkj->nij", g, dxm)]

    state = [X, DX]
    store_every = max(1, n_half // 8)
    kept_nodes = []
    for n in range(n_half + 1):
        if n % store_every == 0 or n == n_half:
            gshape = (grid_pts, grid_pts)
            disp = state[0] - Y
            dgrid = PeriodicGrid(2, (L, L), (grid_pts, grid_pts))
            disp_nodes.append([BandField2D.fit(dgrid, disp[:, c].reshape(gshape)) for c in range(2)])
            jac = state[1] - np.eye(2)
            jac_nodes.append([[BandField2D.fit(dgrid, jac[:, i, j].reshape(gshape))
                               for j in range(2)] for i in range(2)])
            kept_nodes.append(sig[n])
        if n < n_half:
            state = _rk4(state, rhs2, dt)
    tables2d = {"disp": disp_nodes, "jac": jac_nodes}
    return StraightenedFrame(params, L, np.asarray(kept_nodes), {}, None, dim=2,
                             tables2d=tables2d)


# ----------------------------------------------------------------------------
# pulled-back symbols


class PulledBackSymbol:
    """Diagonal symbol p(sigma, y, z) = Gamma(X(y), M0(y) z) and the two-point
    amplitude behind it, with an exact derivative stack (d=1).

    ``split`` selects how the x-factor of the window symbol is distributed
    over the two spatial slots of the amplitude:
      'kn'  :  Gamma(X(y), M(y,y') z) J(y,y')
      'sym' :  sqrt(gs)(X(y)) m(M(y,y') z) J(y,y') sqrt(gs)(X(y'))
    Both have the same diagonal, hence identical Hamiltonian data.
    """

    def __init__(self, gamma: GammaH1D, frame: StraightenedFrame, split: str = "sym"):
        if split not in ("kn", "sym"):
            raise ValueError("split must be 'kn' or 'sym'")
        self.gamma = gamma
        self.frame = frame
        self.split = split
        self.params = frame.params

    # gs and sqrt(gs) values along the flow
    def _g_chain(self, node, y):
        X = self.frame.X(node, y)
        g = self.gamma.gs
        g0 = np.real(g(X))
        g1 = np.real(g(X, 1))
        g2 = np.real(g(X, 2))
        return X, g0, g1, g2

    def value(self, node, y, z):
        X = self.frame.X(node, y)
        return np.real(self.gamma.gs(X)) * self.gamma.m(self.frame.M0(node, y) * z)

    def d_z(self, node, y, z):
        X = self.frame.X(node, y)
        M0 = self.frame.M0(node, y)
        return np.real(self.gamma.gs(X)) * self.gamma.m1(M0 * z) * M0

    def d_y(self, node, y, z):
        X, g0, g1, _ = self._g_chain(node, y)
        M0 = self.frame.M0(node, y)
        M0p = self.frame.M0_dy(node, y)
        xp = self.frame.DX(node, y)
        zz = M0 * z
        return g1 * xp * self.gamma.m(zz) + g0 * self.gamma.m1(zz) * M0p * z

    def d_zz(self, node, y, z):
        X = self.frame.X(node, y)
        M0 = self.frame.M0(node, y)
        return np.real(self.gamma.gs(X)) * self.gamma.m2(M0 * z) * M0**2

    def d_yz(self, node, y, z):
        X, g0, g1, _ = self._g_chain(node, y)
        M0 = self.frame.M0(node, y)
        M0p = self.frame.M0_dy(node, y)
        xp = self.frame.DX(node, y)
        zz = M0 * z
        return g1 * xp * self.gamma.m1(zz) * M0 \
            + g0 * (self.gamma.m2(zz) * M0p * z * M0 + self.gamma.m1(zz) * M0p)

    def d_yy(self, node, y, z):
        X, g0, g1, g2 = self._g_chain(node, y)
        M0 = self.frame.M0(node, y)
        M0p = self.frame.M0_dy(node, y)
        M0pp = self.frame.M0_dyy(node, y)
        xp = self.frame.DX(node, y)
        xpp = self.frame.D2X(node, y)
        zz = M0 * z
        return (g2 * xp**2 + g1 * xpp) * self.gamma.m(zz) \
            + 2.0 * g1 * xp * self.gamma.m1(zz) * M0p * z \
            + g0 * (self.gamma.m2(zz) * (M0p * z) ** 2 + self.gamma.m1(zz) * M0pp * z)

    # two-point amplitude and the diagonal mixed derivative entering transport
    def two_point(self, node, y, y2, z):
        M = self.frame.M(node, y, y2)
        J = self.frame.J(node, y, y2)
        if self.split == "kn":
            X = self.frame.X(node, y)
            return np.real(self.gamma.gs(X)) * self.gamma.m(M * z) * J
        Xa = self.frame.X(node, y)
        Xb = self.frame.X(node, y2)
        ra = np.sqrt(np.real(self.gamma.gs(Xa)))
        rb = np.sqrt(np.real(self.gamma.gs(Xb)))
        return ra * self.gamma.m(M * z) * J * rb

    def two_point_dz2(self, node, y, y2, z):
        """Second z-derivative of the two-point amplitude (closed form)."""
        M = self.frame.M(node, y, y2)
        J = self.frame.J(node, y, y2)
        if self.split == "kn":
            X = self.frame.X(node, y)
            return np.real(self.gamma.gs(X)) * self.gamma.m2(M * z) * M**2 * J
        Xa = self.frame.X(node, y)
        Xb = self.frame.X(node, y2)
        ra = np.sqrt(np.real(self.gamma.gs(Xa)))
        rb = np.sqrt(np.real(self.gamma.gs(Xb)))
        return ra * self.gamma.m2(M * z) * M**2 * J * rb

    def dz_dy2_diag(self, node, y, z):
        """d_eta d_{y'} of the two-point amplitude on the diagonal y' = y."""
        X, g0, g1, _ = self._g_chain(node, y)
        M0 = self.frame.M0(node, y)
        xp = self.frame.DX(node, y)
        xpp = self.frame.D2X(node, y)
        Mz = -xpp / (2.0 * xp**2)
        Jz = xpp / (2.0 * xp)
        zz = M0 * z
        core = self.gamma.m2(zz) * M0 * Mz * z + self.gamma.m1(zz) * Mz \
            + self.gamma.m1(zz) * M0 * Jz
        if self.split == "kn":
            return g0 * core
        r0 = np.sqrt(g0)
        rp = g1 / (2.0 * r0)
        return g0 * core + r0 * rp * xp * self.gamma.m1(zz) * M0

    def hessian_floor(self, z_samples, n_y: int = 65) -> float:
        """min over the window lattice of |det Hess_z p| via the conjugation form."""
        best = np.inf
        y = np.linspace(0.0, self.frame.L, n_y, endpoint=False)
        for node in range(0, len(self.frame.sigma_nodes), max(1, len(self.frame.sigma_nodes) // 8)):
            for z in z_samples:
                best = min(best, float(np.min(np.abs(self.d_zz(node, y, z)))))
        return best


def pullback_symbol(gamma: GammaH1D, frame: StraightenedFrame, split: str = "sym") -> PulledBackSymbol:
    return PulledBackSymbol(gamma, frame, split)


def check_symbol_class(p: PulledBackSymbol, alpha_max: int = 3, beta_max: int = 2,
                       n_y: int = 64, z_samples=(0.6, 1.0, 1.6)):
    """Measured sup |D_y^a D_z^b p| / (1 + h^(-(a-1) delta)) per (a, b).

    y-derivatives by centered differences of the exact evaluator; z-derivatives
    closed form up to 2, centered differences beyond.
    """
    params = p.params
    h, delta = params.h, params.delta
    y = np.linspace(0.0, p.frame.L, n_y, endpoint=False)
    node = len(p.frame.sigma_nodes) - 1
    step = max(1e-4, 1e-3 * h**delta)
    table = {}
    for b in range(beta_max + 1):
        if b == 0:
            base = lambda yy, zz: p.value(node, yy, zz)
        elif b == 1:
            base = lambda yy, zz: p.d_z(node, yy, zz)
        else:
            base = lambda yy, zz: p.d_zz(node, yy, zz)
        for a in range(alpha_max + 1):
            sup = 0.0
            for z in z_samples:
                if a == 0:
                    vals = base(y, z)
                else:
                    from math import comb
                    acc = np.zeros_like(y)
                    for i in range(a + 1):
                        acc += (-1.0) ** i * comb(a, i) * base(y + (a / 2.0 - i) * step, z)
                    vals = acc / step**a
                sup = max(sup, float(np.max(np.abs(vals))))
            weight = 1.0 + h ** (-(a - 1) * delta)
            table[(a, b)] = sup / weight
    return table


# ----------------------------------------------------------------------------
# time rescaling and the regularized dyadic operator


def rescale_to_semiclassical(times: np.ndarray, params: SemiclassicalParams) -> np.ndarray:
    """t -> sigma = t / sqrt(h); a pure reindexing of time samples."""
    return np.asarray(times, dtype=float) / np.sqrt(params.h)


def unscale_from_semiclassical(sigmas: np.ndarray, params: SemiclassicalParams) -> np.ndarray:
    return np.asarray(sigmas, dtype=float) * np.sqrt(params.h)


@dataclass
class LocalizedOperator:
    """Spatial part of the regularized dyadic operator at block j.

    apply(u) returns S_d(V).grad u + i S_d(gamma)(x,D) phi1(2^-j D) u; the
    time derivative is the caller's.  Remainder diagnostics compare the
    delta-regularized coefficients with the plain dyadic regularization.
    """

    grid: PeriodicGrid
    j: int
    delta: float
    gamma_sym: SymbolField
    v_values: np.ndarray
    profile: CutoffProfile = field(default=DEFAULT_PROFILE)

    def __post_init__(self):
        if self.j < 4:
            raise ValueError("block index below the admissible floor j0 = 4")
        self._gamma_smooth = smooth_symbol(self.gamma_sym, (self.j - 3) * self.delta)
        self._gamma_plain = smooth_symbol(self.gamma_sym, float(self.j - 3))
        npts = np.prod(self.grid.points)
        spec_v = np.fft.fftn(np.asarray(self.v_values, dtype=complex)) / npts
        mask_d = self.profile.psi_plateau.val(self.grid.xi_norm * 2.0 ** (-(self.j - 3) * self.delta))
        mask_p = self.profile.psi_plateau.val(self.grid.xi_norm * 2.0 ** (-(self.j - 3)))
        self._v_smooth = np.real(np.fft.ifftn(mask_d * spec_v) * npts)
        self._v_plain = np.real(np.fft.ifftn(mask_p * spec_v) * npts)

    def _localize(self, u: SpectralField) -> SpectralField:
        mask = self.profile.phi1(self.grid.xi_norm * 2.0 ** (-self.j))
        return SpectralField.from_spectrum(self.grid, mask * u.spectrum)

    def apply(self, u: SpectralField) -> SpectralField:
        from .spectral import spectral_gradient
        loc = self._localize(u)
        trans = sum((SpectralField(self.grid, self._v_smooth * g.values)
                     for g in spectral_gradient(u)), SpectralField(self.grid, np.zeros(self.grid.shape, complex)))
        return trans + 1j * apply_pseudodiff(self._gamma_smooth, loc)

    def gamma_remainder(self, u: SpectralField) -> float:
        """||(S_{(j-3)d} - S_{j-3})(gamma)(x,D) Delta_j-localized u|| / ||u||."""
        loc = self._localize(u)
        diff = apply_pseudodiff(self._gamma_smooth, loc) - apply_pseudodiff(self._gamma_plain, loc)
        return norm_l2(diff) / max(norm_l2(u), 1e-300)

    def v_remainder(self, u: SpectralField) -> float:
        from .spectral import spectral_gradient
        g = spectral_gradient(u)
        dv = self._v_smooth - self._v_plain
        diff = sum((SpectralField(self.grid, dv * gi.values) for gi in g),
                   SpectralField(self.grid, np.zeros(self.grid.shape, complex)))
        return norm_l2(diff) / max(norm_l2(u), 1e-300)


def build_L_j(gamma_sym: SymbolField, v_values: np.ndarray, j: int, delta: float,
              omega_sym: SymbolField | None = None,
              profile: CutoffProfile = DEFAULT_PROFILE) -> LocalizedOperator:
    """Regularized dyadic operator; the half-order symbol rides in the source
    term and does not enter the localized principal part."""
    del omega_sym
    return LocalizedOperator(gamma_sym.grid, j, delta, gamma_sym, v_values, profile)
