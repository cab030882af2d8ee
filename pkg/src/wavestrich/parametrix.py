"""Oscillatory-integral parametrix for the straightened window evolution (d=1).

The construction tabulates everything on a shared sigma ladder:

    frame ladder   : spacing s_max/(8 n)   (straightening flow half-steps)
    bichar ladder  : spacing s_max/(2 n)   (Hamiltonian trajectories + action)
    phase ladder   : spacing s_max/n       (output samples of the kernel)

with n = ``n_phase``.  Trajectories start on a coarse periodic y-lattice
times Chebyshev frequency nodes; all tabulated quantities are smooth and
chi-free, so trigonometric interpolation in y and Chebyshev interpolation
in the frequency recover them anywhere to near machine precision.  The
amplitude cutoff chi is applied exactly at the frequency lattice nodes when
the operator is assembled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fitting import SlopeFit, fit_slope
from .profiles import DEFAULT_PROFILE, CutoffProfile, Plateau
from .semiclassical import (
    BandField1D,
    GammaH1D,
    PulledBackSymbol,
    SemiclassicalParams,
    StraightenedFrame,
    integrate_straightening,
    pullback_symbol,
)
from .spectral import PeriodicGrid, SpectralField, norm_l2

__all__ = [
    "ChebGrid",
    "ParametrixConfig",
    "Bicharacteristics",
    "solve_characteristics",
    "Parametrix1D",
    "build_parametrix",
    "band_data",
    "trig_eval",
    "apply_window_operator",
]


def trig_eval(grid: PeriodicGrid, values: np.ndarray, pts: np.ndarray,
              chunk: int = 1024) -> np.ndarray:
    """Evaluate the trigonometric interpolant of grid samples at arbitrary points (d=1)."""
    n = grid.points[0]
    coefs = np.fft.fft(np.asarray(values, dtype=complex)) / n
    freqs = grid.freq_axes[0]
    pts = np.asarray(pts, dtype=float).ravel()
    out = np.empty(pts.size, dtype=complex)
    for start in range(0, pts.size, chunk):
        blk = pts[start:start + chunk]
        out[start:start + chunk] = np.exp(1j * blk[:, None] * freqs) @ coefs
    return out


class ChebGrid:
    """Chebyshev-Lobatto nodes on [lo, hi] with barycentric interpolation."""

    def __init__(self, lo: float, hi: float, n: int):
        self.lo, self.hi, self.n = float(lo), float(hi), int(n)
        k = np.arange(n)
        self.unit = np.cos(np.pi * k / (n - 1))          # 1 .. -1
        self.nodes = 0.5 * (lo + hi) + 0.5 * (hi - lo) * self.unit
        w = np.ones(n)
        w[1::2] = -1.0
        w[0] *= 0.5
        w[-1] *= 0.5
        self.weights = w

    def interp_matrix(self, targets: np.ndarray) -> np.ndarray:
        """Rows map node values to target values (barycentric, exact at nodes)."""
        targets = np.asarray(targets, dtype=float).ravel()
        t_unit = (2.0 * targets - (self.lo + self.hi)) / (self.hi - self.lo)
        diff = t_unit[:, None] - self.unit[None, :]
        exact = np.isclose(diff, 0.0, atol=1e-14)
        with np.errstate(divide="ignore", invalid="ignore"):
            M = self.weights[None, :] / diff
        M[np.isnan(M) | np.isinf(M)] = 0.0
        denom = np.sum(M, axis=1, keepdims=True)
        M = M / denom
        rows = np.nonzero(exact.any(axis=1))[0]
        for r in rows:
            M[r] = 0.0
            M[r, np.argmax(exact[r])] = 1.0
        return M


@dataclass
class ParametrixConfig:
    n_tab: int = 128
    n_cheb: int = 25
    n_phase: int = 32
    n_amplitude: int = 1
    split: str = "sym"
    eta_pad: float = 0.05
    localizer_plateau: float = 1.0
    localizer_support: float = 2.8
    fd_sigma_frac: float = 5e-4
    include_counterterm: bool = True


def band_data(grid: PeriodicGrid, j: int, seed=0, kind: str = "random") -> SpectralField:
    """Window initial data: spectrum in the unit-amplitude band [3/4, 3/2] 2^j, positive side."""
    xi = grid.xi_mesh
    h = 2.0 ** (-j)
    mask = (xi * h >= 0.75) & (xi * h <= 1.5)
    if not np.any(mask):
        raise ValueError("data band not representable on this grid")
    spec = np.zeros(grid.shape, dtype=complex)
    if kind == "focus":
        spec[mask] = 1.0
    else:
        rng = np.random.default_rng(seed)
        spec[mask] = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, int(np.sum(mask))))
    f = SpectralField.from_spectrum(grid, spec)
    return f * (1.0 / norm_l2(f))


def _cumulative_integral(vals: np.ndarray, dt: float) -> np.ndarray:
    """Cumulative integral along axis 0, 4th order (cubic Newton-Cotes per cell)."""
    n = vals.shape[0]
    out = np.zeros_like(vals)
    if n < 4:
        for k in range(1, n):
            out[k] = out[k - 1] + 0.5 * dt * (vals[k - 1] + vals[k])
        return out
    inc = np.zeros_like(vals)
    inc[1] = dt / 24.0 * (9.0 * vals[0] + 19.0 * vals[1] - 5.0 * vals[2] + vals[3])
    for k in range(1, n - 2):
        inc[k + 1] = dt / 24.0 * (-vals[k - 1] + 13.0 * vals[k] + 13.0 * vals[k + 1] - vals[k + 2])
    inc[n - 1] = dt / 24.0 * (vals[n - 4] - 5.0 * vals[n - 3] + 19.0 * vals[n - 2] + 9.0 * vals[n - 1])
    np.cumsum(inc, axis=0, out=out)
    return out


def _sigma_weights(nodes: np.ndarray, s: float):
    """Indices and cubic Lagrange weights for interpolation on a uniform ladder."""
    n = len(nodes) - 1
    dt = nodes[1] - nodes[0]
    i = int(np.clip(np.floor(s / dt), 1, n - 2))
    idx = np.array([i - 1, i, i + 1, i + 2])
    idx = np.clip(idx, 0, n)
    ts = nodes[idx]
    w = np.ones(4)
    for a in range(4):
        for b in range(4):
            if a != b and ts[a] != ts[b]:
                w[a] *= (s - ts[b]) / (ts[a] - ts[b])
    return idx, w


class Bicharacteristics:
    """Hamiltonian trajectories over (y0 lattice) x (frequency Chebyshev nodes).

    Arrays are indexed [bichar node, y0, eta]; variational blocks ride in the
    same RK4 stages as the flow.
    """

    def __init__(self, p: PulledBackSymbol, cfg: ParametrixConfig,
                 eta_lo: float = 0.45, eta_hi: float = 2.05):
        self.p = p
        self.cfg = cfg
        self.frame = p.frame
        self.params = p.params
        L = self.frame.L
        self.y0 = np.arange(cfg.n_tab) * (L / cfg.n_tab)
        self.cheb = ChebGrid(eta_lo, eta_hi, cfg.n_cheb)
        self.n_nodes = 2 * cfg.n_phase + 1
        self.dt = self.params.sigma_max / (2 * cfg.n_phase)
        self.sigma_nodes = np.arange(self.n_nodes) * self.dt

        ny, ne = cfg.n_tab, cfg.n_cheb
        Y0, ETA = np.meshgrid(self.y0, self.cheb.nodes, indexing="ij")
        shape = (self.n_nodes, ny, ne)
        self.y = np.zeros(shape)
        self.zeta = np.zeros(shape)
        self.dy_dy0 = np.zeros(shape)
        self.dzeta_dy0 = np.zeros(shape)
        self.dy_deta = np.zeros(shape)
        self.dzeta_deta = np.zeros(shape)
        self.action = np.zeros(shape)
        self.coef_bound = 0.0

        state = [Y0.copy(), ETA.copy(),
                 np.ones_like(Y0), np.zeros_like(Y0),
                 np.zeros_like(Y0), np.ones_like(Y0),
                 (Y0 * ETA).copy()]

        def rhs(frame_idx, st):
            yv, zv, a11, a21, a12, a22, act = st
            pz = p.d_z(frame_idx, yv, zv)
            py = p.d_y(frame_idx, yv, zv)
            pzz = p.d_zz(frame_idx, yv, zv)
            pyz = p.d_yz(frame_idx, yv, zv)
            pyy = p.d_yy(frame_idx, yv, zv)
            self.coef_bound = max(self.coef_bound,
                                  float(np.max(np.abs(pyz))), float(np.max(np.abs(pzz))),
                                  float(np.max(np.abs(pyy))))
            return [pz, -py,
                    pyz * a11 + pzz * a21, -(pyy * a11 + pyz * a21),
                    pyz * a12 + pzz * a22, -(pyy * a12 + pyz * a22),
                    zv * pz - p.value(frame_idx, yv, zv)]

        for n in range(self.n_nodes):
            self.y[n], self.zeta[n] = state[0], state[1]
            self.dy_dy0[n], self.dzeta_dy0[n] = state[2], state[3]
            self.dy_deta[n], self.dzeta_deta[n] = state[4], state[5]
            self.action[n] = state[6]
            if n == self.n_nodes - 1:
                break
            f0, f1, f2 = 4 * n, 4 * n + 2, 4 * n + 4
            k1 = rhs(f0, state)
            k2 = rhs(f1, [s + 0.5 * self.dt * k for s, k in zip(state, k1)])
            k3 = rhs(f1, [s + 0.5 * self.dt * k for s, k in zip(state, k2)])
            k4 = rhs(f2, [s + self.dt * k for s, k in zip(state, k3)])
            state = [s + self.dt / 6.0 * (a + 2 * b + 2 * c + d)
                     for s, a, b, c, d in zip(state, k1, k2, k3, k4)]

        # trigonometric interpolants of the periodic trajectory data, per (node, eta)
        self._bf_cache: dict = {}

    def gronwall_bound(self) -> float:
        """Time-integrated coefficient bound of the variational system."""
        return self.coef_bound * self.params.sigma_max

    def _fit(self, name: str, node: int, ie: int) -> BandField1D:
        key = (name, node, ie)
        if key not in self._bf_cache:
            data = {
                "disp": self.y[node, :, ie] - self.y0,
                "zeta": self.zeta[node, :, ie] - self.cheb.nodes[ie],
                "dy_dy0": self.dy_dy0[node, :, ie] - 1.0,
                "dzeta_dy0": self.dzeta_dy0[node, :, ie],
                "dy_deta": self.dy_deta[node, :, ie],
                "dzeta_deta": self.dzeta_deta[node, :, ie] - 1.0,
                "action": self.action[node, :, ie] - self.y0 * self.cheb.nodes[ie],
            }[name]
            self._bf_cache[key] = BandField1D.fit(self.frame.L, data)
        return self._bf_cache[key]

    def kappa(self, node: int, y: np.ndarray, ie: int,
              tol: float = 1e-12, max_iter: int = 30) -> np.ndarray:
        """Invert y_h(sigma; ., eta) by Newton from the identity guess."""
        y = np.asarray(y, dtype=float)
        disp = self._fit("disp", node, ie)
        slope = self._fit("dy_dy0", node, ie)
        k = y.copy()
        for _ in range(max_iter):
            r = k + np.real(disp(k)) - y
            if np.max(np.abs(r)) < tol:
                return k
            k = k - r / (1.0 + np.real(slope(k)))
        raise RuntimeError("flow inversion Newton did not converge")

    def zeta_at(self, node: int, y0pts: np.ndarray, ie: int) -> np.ndarray:
        return self.cheb.nodes[ie] + np.real(self._fit("zeta", node, ie)(y0pts))


def solve_characteristics(p: PulledBackSymbol, cfg: ParametrixConfig | None = None,
                          eta_lo: float = 0.45, eta_hi: float = 2.05) -> Bicharacteristics:
    return Bicharacteristics(p, cfg or ParametrixConfig(), eta_lo, eta_hi)


class Parametrix1D:
    """Tabulated phase + amplitude stack and the oscillatory-sum operator."""

    def __init__(self, gamma: GammaH1D, frame: StraightenedFrame,
                 grid: PeriodicGrid, cfg: ParametrixConfig,
                 profile: CutoffProfile = DEFAULT_PROFILE):
        if grid.dim != 1:
            raise ValueError("the full parametrix lattice machinery is d=1")
        self.gamma = gamma
        self.frame = frame
        self.grid = grid
        self.cfg = cfg
        self.profile = profile
        self.params = frame.params
        self.p = pullback_symbol(gamma, frame, cfg.split)
        self.bichar = Bicharacteristics(self.p, cfg)
        self._loc_profile = Plateau(cfg.localizer_plateau, cfg.localizer_support)
        self._build_tables()
        self._loc_coef_cache = None

    # ------------------------------------------------------------------
    def _build_tables(self):
        cfg, bich = self.cfg, self.bichar
        ny, ne = cfg.n_tab, cfg.n_cheb
        nb = bich.n_nodes
        ylat = bich.y0
        h = self.params.h

        self.kappa_tab = np.zeros((nb, ny, ne))
        self.Z_tab = np.zeros((nb, ny, ne))
        self.phiyy_tab = np.zeros((nb, ny, ne))
        self.hess_eta_tab = np.zeros((nb, ny, ne))
        integrand = np.zeros((nb, ny, ne))
        self.a_tab = np.zeros((nb, ny, ne))
        self.c_tab = np.zeros((nb, ny, ne), dtype=complex)

        for n in range(nb):
            fidx = 4 * n
            for ie in range(ne):
                kap = bich.kappa(n, ylat, ie)
                self.kappa_tab[n, :, ie] = kap
                Z = bich.zeta_at(n, kap, ie)
                self.Z_tab[n, :, ie] = Z
                dzdy0 = np.real(bich._fit("dzeta_dy0", n, ie)(kap))
                dydy0 = 1.0 + np.real(bich._fit("dy_dy0", n, ie)(kap))
                dydeta = np.real(bich._fit("dy_deta", n, ie)(kap))
                dzdeta = 1.0 + np.real(bich._fit("dzeta_deta", n, ie)(kap))
                self.phiyy_tab[n, :, ie] = dzdy0 / dydy0
                # Hess_eta phi = d(kappa)/d eta = -dy_deta / dy_dy0 at kappa
                self.hess_eta_tab[n, :, ie] = -dydeta / dydy0
                del dzdeta
                integrand[n, :, ie] = self.p.value(fidx, ylat, Z)
                self.a_tab[n, :, ie] = self.p.d_z(fidx, ylat, Z)
                cgeo = self.p.dz_dy2_diag(fidx, ylat, Z) \
                    + 0.5 * self.p.d_zz(fidx, ylat, Z) * self.phiyy_tab[n, :, ie]
                self.c_tab[n, :, ie] = cgeo
            if cfg.split == "sym" and cfg.include_counterterm:
                X = self.frame.X(fidx, ylat)
                mu = 0.5 * np.real(self.frame.v_field(X, 1))
                self.c_tab[n] += np.sqrt(h) * mu[:, None]

        # phase: phi = y.eta - cumulative integral of p(s, y, Z(s,y,eta))
        self.phi_tab = (ylat[:, None] * bich.cheb.nodes[None, :])[None, :, :] \
            - _cumulative_integral(integrand, bich.dt)
        self.integrand_tab = integrand

        # transport flow Y and its inverse on the bichar ladder
        self._a_fields = [[BandField1D.fit(self.frame.L, self.a_tab[n, :, ie])
                           for ie in range(ne)] for n in range(nb)]
        self._c_fields = [[BandField1D.fit(self.frame.L, self.c_tab[n, :, ie])
                           for ie in range(ne)] for n in range(nb)]

        Yflow = np.zeros((nb, ny, ne))
        Yflow[0] = ylat[:, None]
        state = np.repeat(ylat[:, None], ne, axis=1)

        def a_at(s, pts):
            idx, w = _sigma_weights(bich.sigma_nodes, s)
            out = np.zeros_like(pts)
            for ie in range(ne):
                acc = np.zeros(pts.shape[0], dtype=complex)
                for i, wi in zip(idx, w):
                    acc += wi * self._a_fields[i][ie](pts[:, ie])
                out[:, ie] = np.real(acc)
            return out

        for n in range(nb - 1):
            s0 = bich.sigma_nodes[n]
            dt = bich.dt
            k1 = a_at(s0, state)
            k2 = a_at(s0 + dt / 2, state + 0.5 * dt * k1)
            k3 = a_at(s0 + dt / 2, state + 0.5 * dt * k2)
            k4 = a_at(s0 + dt, state + dt * k3)
            state = state + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            Yflow[n + 1] = state
        self.Yflow = Yflow

        # c along trajectories, cumulative exponent, leading amplitude
        c_along = np.zeros((nb, ny, ne), dtype=complex)
        for n in range(nb):
            for ie in range(ne):
                c_along[n, :, ie] = self._c_fields[n][ie](Yflow[n, :, ie])
        C_cum = _cumulative_integral(c_along, bich.dt)
        beta0 = np.exp(-C_cum)           # b0 along trajectories (chi factored out)

        self.b0_tab = np.zeros((nb, ny, ne), dtype=complex)
        mu_inv = np.zeros((nb, ny, ne))
        for n in range(nb):
            for ie in range(ne):
                dispY = BandField1D.fit(self.frame.L, Yflow[n, :, ie] - ylat)
                mu = ylat.copy()
                for _ in range(30):
                    r = mu + np.real(dispY(mu)) - ylat
                    if np.max(np.abs(r)) < 1e-12:
                        break
                    slope = BandField1D.fit(self.frame.L, np.gradient(Yflow[n, :, ie], ylat, edge_order=2) - 1.0)
                    mu = mu - r / (1.0 + np.real(slope(mu)))
                mu_inv[n, :, ie] = mu
                bf = BandField1D.fit(self.frame.L, beta0[n, :, ie])
                self.b0_tab[n, :, ie] = bf(mu)
        self.mu_inv = mu_inv
        self._beta0 = beta0
        self._C_cum = C_cum

        if cfg.n_amplitude >= 1:
            self._build_correction()
        else:
            self.b1_tab = np.zeros((nb, ny, ne), dtype=complex)

    # ------------------------------------------------------------------
    def _theta(self, node: int, y: np.ndarray, y2: np.ndarray, ie: int) -> np.ndarray:
        """theta(y, y') = average of the phase gradient along the chord."""
        gl_x, gl_w = StraightenedFrame._GL_NODES, StraightenedFrame._GL_WEIGHTS
        zf = self.bichar._fit("zeta", node, ie)
        kap_disp = BandField1D.fit(self.frame.L, self.kappa_tab[node, :, ie] - self.bichar.y0)
        lam = 0.5 * (gl_x + 1.0)
        acc = 0.0
        for l, w in zip(lam, gl_w):
            pts = l * y + (1.0 - l) * y2
            kap = pts + np.real(kap_disp(pts))
            acc = acc + w * (self.bichar.cheb.nodes[ie] + np.real(zf(kap)))
        return 0.5 * acc

    def theta(self, node: int, y, y2, ie: int) -> np.ndarray:
        return self._theta(node, np.asarray(y, dtype=float), np.asarray(y2, dtype=float), ie)

    def _source_f0(self, node: int, ie: int) -> np.ndarray:
        """First correction source: (i/2) h^(1-nu) d2_z[ (d2_eta ptilde)(y,z,theta(y,z)) b0(z) ] at z=y."""
        h, nu = self.params.h, self.params.nu
        params_step = 0.01 * self.params.sigma_max
        ylat = self.bichar.y0
        fidx = 4 * node
        b0f = BandField1D.fit(self.frame.L, self.b0_tab[node, :, ie])

        def term(z_off):
            z = ylat + z_off
            th = self._theta(node, ylat, z, ie)
            return self.p.two_point_dz2(fidx, ylat, z, th) * b0f(z)

        s = params_step
        d2 = (term(-s) - 2.0 * term(0.0) + term(s)) / s**2
        return 0.5j * h ** (1.0 - nu) * d2

    def _build_correction(self):
        bich = self.bichar
        nb, ny, ne = bich.n_nodes, self.cfg.n_tab, self.cfg.n_cheb
        F_tab = np.zeros((nb, ny, ne), dtype=complex)
        for n in range(nb):
            for ie in range(ne):
                F_tab[n, :, ie] = self._source_f0(n, ie)
        # along Y-trajectories: beta1(s) = e^{-C(s)} int_0^s e^{C} F(s', Y(s')) ds'
        F_along = np.zeros_like(F_tab)
        for n in range(nb):
            for ie in range(ne):
                F_along[n, :, ie] = BandField1D.fit(self.frame.L, F_tab[n, :, ie])(self.Yflow[n, :, ie])
        inner = np.exp(self._C_cum) * F_along
        beta1 = np.exp(-self._C_cum) * _cumulative_integral(inner, bich.dt)
        self.b1_tab = np.zeros((nb, ny, ne), dtype=complex)
        for n in range(nb):
            for ie in range(ne):
                bf = BandField1D.fit(self.frame.L, beta1[n, :, ie])
                self.b1_tab[n, :, ie] = bf(self.mu_inv[n, :, ie])

    # ------------------------------------------------------------------
    # interpolation of tabulated fields to the operator lattice

    def _eta_lattice(self):
        xi = self.grid.xi_mesh
        h = self.params.h
        sel = np.nonzero(self.profile.chi_data(xi * h) > 0.0)[0]
        if np.any(xi[sel] < 0):
            raise ValueError("negative-frequency data band: tabulate the mirrored branch")
        return sel

    def field_on_lattice(self, tab: np.ndarray, sigma_s: float, sel: np.ndarray) -> np.ndarray:
        """sigma-cubic + Chebyshev-in-eta + trigonometric-in-y interpolation.

        Input tab[node, y0, eta]; output [grid points, len(sel)].
        """
        idx, w = _sigma_weights(self.bichar.sigma_nodes, sigma_s)
        data = np.tensordot(w, tab[idx], axes=(0, 0))        # (ny, ne)
        h = self.params.h
        eta_t = self.grid.xi_mesh[sel] * h
        C = self._cheb_matrix(sel, eta_t)
        on_eta = data @ C.T                                   # (ny, nsel)
        n_tab = self.cfg.n_tab
        N = self.grid.points[0]
        spec = np.fft.fft(on_eta, axis=0) / n_tab
        padded = np.zeros((N, on_eta.shape[1]), dtype=complex)
        half = n_tab // 2
        padded[:half] = spec[:half]
        padded[N - half + 1:] = spec[half + 1:]
        padded[half] = 0.5 * spec[half]
        padded[N - half] = 0.5 * spec[half]
        return np.fft.ifft(padded, axis=0) * N

    def _cheb_matrix(self, sel, eta_t):
        key = ("cheb_mat", tuple(sel[:2]), len(sel))
        cache = self.__dict__.setdefault("_interp_cache", {})
        if key not in cache:
            cache[key] = self.bichar.cheb.interp_matrix(eta_t)
        return cache[key]

    def _localizer_coefs(self):
        if self._loc_coef_cache is None:
            N = self.grid.points[0]
            L = self.grid.extent[0]
            x = self.grid.x_mesh
            dist = np.minimum(x, L - x)
            vals = self._loc_profile.val(dist)
            coefs = np.real(np.fft.fft(vals)) / N
            keep = np.abs(coefs) > 1e-14
            ms = np.fft.fftfreq(N, d=1.0 / N).astype(int)
            order = np.argsort(np.abs(ms[keep]))
            self._loc_coef_cache = (ms[keep][order], coefs[keep][order])
        return self._loc_coef_cache

    # ------------------------------------------------------------------
    def kernel_fields(self, sigma_s: float, n_corrections: int | None = None):
        """phi, b, kappa on (grid x data band) at one sigma."""
        sel = self._eta_lattice()
        phi = np.real(self.field_on_lattice(self.phi_tab, sigma_s, sel))
        kap = np.real(self.field_on_lattice(self.kappa_tab, sigma_s, sel))
        b = self.field_on_lattice(self.b0_tab, sigma_s, sel)
        n_corr = self.cfg.n_amplitude if n_corrections is None else n_corrections
        if n_corr >= 1:
            b = b + self.params.h**self.params.nu * self.field_on_lattice(self.b1_tab, sigma_s, sel)
        h = self.params.h
        eta = self.grid.xi_mesh[sel] * h
        chi = self.profile.chi_data(eta)
        b = b * chi[None, :]
        return sel, phi, b, kap

    def apply(self, v: SpectralField, sigma_s: float, localizer: bool = True,
              n_corrections: int | None = None) -> SpectralField:
        """The parametrix applied to band data at one sigma."""
        if v.grid is not self.grid and v.grid.shape != self.grid.shape:
            raise ValueError("data grid mismatch")
        sel, phi, b, kap = self.kernel_fields(sigma_s, n_corrections)
        h = self.params.h
        c = v.spectrum
        chi1 = self.profile.phi1(self.grid.xi_mesh[sel] * h)
        E = np.exp(1j * phi / h) * b * chi1[None, :]
        if not localizer:
            out = E @ c[sel]
            return SpectralField(self.grid, out)
        ms, psi_hat = self._localizer_coefs()
        coef_of = dict(zip((int(m) for m in ms), psi_hat))
        m_max = int(np.max(np.abs(ms)))
        dxi = 2.0 * np.pi / self.grid.extent[0]
        E1 = np.exp(1j * dxi * kap)
        acc = coef_of.get(0, 0.0) * np.broadcast_to(c[sel][None, :],
                                                    (self.grid.points[0], len(sel))).copy()
        Ep = np.ones_like(E1)
        Em = np.ones_like(E1)
        for m in range(1, m_max + 1):
            Ep = Ep * E1
            Em = Em * np.conj(E1)
            w = coef_of.get(m, 0.0)
            wn = coef_of.get(-m, 0.0)
            if w:
                acc += w * (np.roll(c, -m)[sel][None, :] * Ep)
            if wn:
                acc += wn * (np.roll(c, m)[sel][None, :] * Em)
        out = np.sum(E * acc, axis=1)
        return SpectralField(self.grid, out)

    # ------------------------------------------------------------------
    def initial_error(self, v: SpectralField) -> SpectralField:
        """r_h = K v(0) - v."""
        return self.apply(v, 0.0) - v

    def initial_error_spectral(self, v: SpectralField) -> SpectralField:
        """Exact multiplier form of the initial error (independent oracle)."""
        ms, psi_hat = self._localizer_coefs()
        xi = self.grid.xi_mesh
        h = self.params.h
        weight = self.profile.chi_data(xi * h) * self.profile.phi1(xi * h)
        n = self.grid.points[0]
        bracket = np.zeros(n)
        for m, w in zip(ms, psi_hat):
            bracket += w * np.roll(weight, m)
        mult = np.where(np.abs(v.spectrum) > 0, bracket - 1.0, 0.0)
        return SpectralField.from_spectrum(self.grid, mult * v.spectrum)

    def phase_sigma_derivative(self, sigma_s: float, eps: float | None = None):
        """h d_sigma of the tabulated phase by centered differences (test hook)."""
        if eps is None:
            eps = self.cfg.fd_sigma_frac * self.params.h
        sel = self._eta_lattice()
        a = np.real(self.field_on_lattice(self.phi_tab, sigma_s + eps, sel))
        b = np.real(self.field_on_lattice(self.phi_tab, sigma_s - eps, sel))
        return sel, (a - b) / (2.0 * eps)

    def residual(self, v: SpectralField, sigma_s: float) -> float:
        """|| (h d_sigma + i P)(K v) ||_L2 / ||v||_L2 at one sigma."""
        h = self.params.h
        eps = self.cfg.fd_sigma_frac * h
        up = self.apply(v, sigma_s + eps)
        dn = self.apply(v, sigma_s - eps)
        mid = self.apply(v, sigma_s)
        dds = (up.values - dn.values) / (2.0 * eps)
        fidx = self._frame_index(sigma_s)
        Pu = apply_window_operator(self.frame, self.gamma, self.grid, mid.values, fidx,
                                   counterterm=self.cfg.include_counterterm and self.cfg.split == "sym")
        res = h * dds + 1j * Pu
        return float(np.sqrt(self.grid.cell_volume * np.sum(np.abs(res) ** 2)) / norm_l2(v))

    def _frame_index(self, sigma_s: float) -> int:
        nodes = self.frame.sigma_nodes
        idx = int(round(sigma_s / nodes[-1] * (len(nodes) - 1)))
        if not np.isclose(nodes[idx], sigma_s, atol=1e-10):
            raise ValueError("sigma sample must sit on the frame ladder")
        return idx

    def sigma_samples(self, n: int = 8) -> np.ndarray:
        ladder = self.bichar.sigma_nodes[2::2]
        stride = max(1, len(ladder) // n)
        return ladder[::stride]


def apply_window_operator(frame: StraightenedFrame, gamma: GammaH1D, grid: PeriodicGrid,
                          u_values: np.ndarray, frame_idx: int,
                          counterterm: bool = True) -> np.ndarray:
    """P v through the straightening conjugation: pull back to the unstraightened
    frame, apply the symmetric-split window operator spectrally, push forward."""
    h = frame.params.h
    x = grid.x_mesh
    y_of_x = frame.X_inverse(frame_idx, x)
    w = trig_eval(grid, u_values, y_of_x)
    sqg = np.sqrt(np.real(gamma.gs(x)))
    mw = np.fft.fft(sqg * w) / grid.points[0]
    mult = gamma.m(grid.xi_mesh * h)
    inner = np.fft.ifft(mult * mw) * grid.points[0]
    bw = sqg * inner
    Xy = frame.X(frame_idx, x)
    out = trig_eval(grid, bw, Xy)
    if counterterm:
        mu = 0.5 * np.real(frame.v_field(Xy, 1))
        out = out - 1j * h**1.5 * mu * np.asarray(u_values, dtype=complex)
    return out


def build_parametrix(gamma: GammaH1D, frame: StraightenedFrame, grid: PeriodicGrid,
                     cfg: ParametrixConfig | None = None) -> Parametrix1D:
    return Parametrix1D(gamma, frame, grid, cfg or ParametrixConfig())
