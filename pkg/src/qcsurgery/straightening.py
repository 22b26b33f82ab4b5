"""Numerical Beltrami solver and the straightened map E = F o psi^-1.

The solver is the classical Neumann series: with q = psi_zbar,
q = mu (1 + S q) where S is the Beurling transform, then psi = z + T q
with T the Cauchy transform.  Both transforms are spectral on a
zero-padded periodic grid.  T cannot see the mean of q on a periodic
grid, so the mean is carried by a Gaussian bump whose Cauchy transform
is known in closed form.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy.interpolate import CubicSpline, RectBivariateSpline
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from . import model_map as mm
from .dilatation import ComplexGrid, mu_field, symmetric_linspace


class SolverError(RuntimeError):
    pass


@dataclass
class SolverConfig:
    window: tuple = (-10.0, 3.0, -5.0, 5.0)
    resolution: tuple = (1024, 1024)
    max_iter: int = 400
    tol: float = 1e-10
    taper: float = 8.0  # collar width in grid cells
    taper_shape: str = "box"  # "box" or "disk"
    normalization: str = "pm1"  # "pm1" fixes -1 and 1, "01" fixes 0 and 1
    pad: int = 2
    workers: int = 1

    def __post_init__(self):
        self.window = tuple(float(v) for v in self.window)
        if np.isscalar(self.resolution):
            self.resolution = (int(self.resolution), int(self.resolution))
        self.resolution = tuple(int(v) for v in self.resolution)
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.taper < 2:
            raise ValueError("taper collar must be at least 2 grid cells")
        if self.normalization not in ("pm1", "01"):
            raise ValueError("normalization is 'pm1' or '01'")

    def grid(self):
        x0, x1, y0, y1 = self.window
        nx, ny = self.resolution
        return np.linspace(x0, x1, nx), symmetric_linspace(y0, y1, ny)

    def as_dict(self):
        return {"window": list(self.window), "resolution": list(self.resolution),
                "max_iter": self.max_iter, "tol": self.tol, "taper": self.taper,
                "taper_shape": self.taper_shape, "normalization": self.normalization,
                "pad": self.pad}


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10 - 15 * t + 6 * t * t)


def taper_mask(cfg: SolverConfig):
    """1 in the interior, smoothly 0 at the window edge."""
    xs, ys = cfg.grid()
    hx, hy = xs[1] - xs[0], ys[1] - ys[0]
    x0, x1, y0, y1 = cfg.window
    if cfg.taper_shape == "disk":
        cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
        R = min(x1 - x0, y1 - y0) / 2
        width = cfg.taper * max(hx, hy)
        r = np.hypot(xs[None, :] - cx, ys[:, None] - cy)
        return _smoothstep((R - width - r) / width)
    wx, wy = cfg.taper * hx, cfg.taper * hy
    fx = _smoothstep((np.minimum(xs - x0, x1 - xs) - wx) / wx)
    fy = _smoothstep((np.minimum(ys - y0, y1 - ys) - wy) / wy)
    return fy[:, None] * fx[None, :]


class _Spectral:
    """Beurling and zero-mean Cauchy multipliers on the padded grid."""

    def __init__(self, ny, nx, hy, hx, pad, workers=1):
        self.ny, self.nx = ny, nx
        self.Ny, self.Nx = pad * ny, pad * nx
        self.workers = workers
        kx = 2 * np.pi * sfft.fftfreq(self.Nx, hx)
        ky = 2 * np.pi * sfft.fftfreq(self.Ny, hy)
        KX, KY = np.meshgrid(kx, ky)
        den = KX + 1j * KY
        k2 = KX ** 2 + KY ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            self.beurling = np.where(k2 > 0, (KX - 1j * KY) ** 2 / k2, 0)
            self.cauchy = np.where(k2 > 0, 1 / (0.5j * den), 0)
        # Nyquist modes have no mirror partner; dropping them keeps the
        # transforms exactly compatible with reflection in the real axis
        nyq = np.zeros(KX.shape, bool)
        if self.Nx % 2 == 0:
            nyq[:, self.Nx // 2] = True
        if self.Ny % 2 == 0:
            nyq[self.Ny // 2, :] = True
        self.beurling[nyq] = 0
        self.cauchy[nyq] = 0

    def _apply(self, f, mult):
        F = sfft.fft2(f, s=(self.Ny, self.Nx), workers=self.workers)
        return sfft.ifft2(F * mult, workers=self.workers)[:self.ny, :self.nx]

    def S(self, f):
        return self._apply(f, self.beurling)

    def T0(self, f):
        return self._apply(f, self.cauchy)


def singular_transform(h, spacing=(1.0, 1.0), pad=1):
    """Beurling transform of a grid, multiplier (kx - i ky)^2/|k|^2 (0 at k=0)."""
    h = np.asarray(h, complex)
    ny, nx = h.shape
    return _Spectral(ny, nx, spacing[1], spacing[0], pad).S(h)


def gaussian_bump(Z, center, s):
    """Unit-mass Gaussian and its exact Cauchy transform."""
    d = Z - center
    r2 = np.abs(d) ** 2
    g = np.exp(-r2 / s ** 2) / (np.pi * s ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        Tg = np.where(r2 > 1e-24, -np.expm1(-r2 / s ** 2) / (np.pi * d), 0)
    return g, Tg


@dataclass
class QcSolution:
    config: SolverConfig
    psi: np.ndarray  # normalized values on the grid, shape (ny, nx)
    raw: np.ndarray  # un-normalized z + Tq
    residual: np.ndarray
    affine: tuple  # (A, B): psi = A * raw + B
    iterations: int
    history: list = field(default_factory=list)
    mu: np.ndarray = None
    mu_digest: str = ""

    def __post_init__(self):
        xs, ys = self.config.grid()
        self.xs, self.ys = xs, ys
        self._re = RectBivariateSpline(ys, xs, self.psi.real)
        self._im = RectBivariateSpline(ys, xs, self.psi.imag)
        self._tree = None

    def __call__(self, z):
        z = np.asarray(z, complex)
        v = self._re.ev(z.imag, z.real) + 1j * self._im.ev(z.imag, z.real)
        return complex(v) if v.ndim == 0 else v

    def derivatives(self, z):
        """(psi_x, psi_y) of the interpolant."""
        z = np.asarray(z, complex)
        y, x = z.imag, z.real
        px = self._re.ev(y, x, dy=1) + 1j * self._im.ev(y, x, dy=1)
        py = self._re.ev(y, x, dx=1) + 1j * self._im.ev(y, x, dx=1)
        return px, py

    @property
    def residual_max(self):
        return float(np.max(np.abs(self.residual)))

    def cell_jacobians(self):
        p = self.psi
        hx, hy = self.xs[1] - self.xs[0], self.ys[1] - self.ys[0]
        dx = (p[:-1, 1:] - p[:-1, :-1] + p[1:, 1:] - p[1:, :-1]) / (2 * hx)
        dy = (p[1:, :-1] - p[:-1, :-1] + p[1:, 1:] - p[:-1, 1:]) / (2 * hy)
        return dx.real * dy.imag - dx.imag * dy.real

    def grid(self):
        return ComplexGrid(self.config.window, self.config.resolution, self.psi)


def _digest(arr):
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def solve_mrmt(mu, config: SolverConfig = None, radius_guard=0.95):
    """Solve psi_zbar = mu psi_z on the config grid.

    ``mu`` is a ComplexGrid, an array matching the grid, or a callable of z.
    """
    cfg = config or SolverConfig()
    xs, ys = cfg.grid()
    Z = xs[None, :] + 1j * ys[:, None]
    if callable(mu):
        m = np.asarray(mu(Z), complex)
    elif isinstance(mu, ComplexGrid):
        if mu.resolution != cfg.resolution or not np.allclose(mu.window, cfg.window):
            raise ValueError("mu grid does not match the solver grid")
        m = mu.samples.copy()
    else:
        m = np.asarray(mu, complex).reshape(Z.shape)
    m = np.nan_to_num(m, nan=0.0)
    m = m * taper_mask(cfg)
    sup = float(np.max(np.abs(m)))
    if sup > radius_guard:
        raise SolverError(f"|mu| reaches {sup:.4f}; the Neumann series needs |mu| <= {radius_guard}")
    hx, hy = xs[1] - xs[0], ys[1] - ys[0]
    sp = _Spectral(len(ys), len(xs), hy, hx, cfg.pad, cfg.workers)

    h = np.zeros_like(m)
    history = []
    it = 0
    if sup > 0:
        for it in range(1, cfg.max_iter + 1):
            h_new = sp.S(m * (1 + h))
            step = float(np.max(np.abs(h_new - h)))
            history.append(step)
            h = h_new
            if step < cfg.tol:
                break
            if len(history) > 30 and step >= min(history[:-10]):
                raise SolverError(f"stalled at step {step:.3e}; resolution floor reached "
                                  f"(contraction bound {sup:.3f})")
        else:
            raise SolverError(f"no convergence in {cfg.max_iter} iterations; last step {history[-1]:.3e}, "
                              f"contraction bound {sup:.3f}")
    q = m * (1 + h)

    # Cauchy transform: Gaussian carries the mass, the rest is zero-mean
    x0, x1, y0, y1 = cfg.window
    center = complex((x0 + x1) / 2, (y0 + y1) / 2)
    s = min(x1 - x0, y1 - y0) / 12
    g, Tg = gaussian_bump(Z, center, s)
    mass = q.sum() * hx * hy
    raw = Z + sp.T0(q - mass * g) + mass * Tg
    resid = q - m * (1 + sp.S(q))

    sol = QcSolution(cfg, raw.copy(), raw, resid, (1 + 0j, 0j), it, history, m, _digest(m))
    if sup == 0:
        # the identity already satisfies both normalizations; keep it exact
        return sol
    a, b = (-1.0, 1.0) if cfg.normalization == "pm1" else (0.0, 1.0)
    pa, pb = sol(a), sol(b)
    A = (b - a) / (pb - pa)
    B = a - A * pa
    psi = A * raw + B
    out = QcSolution(cfg, psi, raw, resid * abs(A), (A, B), it, history, m, _digest(m))
    return out


def identity_solution(config: SolverConfig):
    xs, ys = config.grid()
    Z = xs[None, :] + 1j * ys[:, None]
    return solve_mrmt(np.zeros_like(Z), config)


# ------------------------------------------------------------------ inverse
class InversionError(ValueError):
    pass


def invert_map(sol: QcSolution, w, tol=None, maxiter=50):
    """z with psi(z) = w, by Newton on the interpolated psi."""
    w = np.asarray(w, complex)
    flat = w.ravel()
    x0, x1, y0, y1 = sol.config.window
    scale = max(x1 - x0, y1 - y0)
    tol = 1e-8 * scale if tol is None else tol
    if sol._tree is None:
        P = sol.psi.ravel()
        sol._tree = cKDTree(np.stack([P.real, P.imag], -1))
        sol._nodes = (sol.xs[None, :] + 1j * sol.ys[:, None]).ravel()
    _, idx = sol._tree.query(np.stack([flat.real, flat.imag], -1))
    z = sol._nodes[idx].copy()
    r = flat - sol(z)
    act = np.flatnonzero(np.abs(r) > 1e-3 * tol)
    for _ in range(maxiter):
        if act.size == 0:
            break
        za, ra, wa = z[act], r[act], flat[act]
        px, py = sol.derivatives(za)
        det = px.real * py.imag - px.imag * py.real
        dz = ((ra.real * py.imag - ra.imag * py.real) + 1j * (px.real * ra.imag - px.imag * ra.real)) / det
        # backtrack wherever the full step does not reduce the residual
        lam = np.ones(act.size)
        for _ in range(12):
            zn = za + lam * dz
            zn = np.clip(zn.real, x0, x1) + 1j * np.clip(zn.imag, y0, y1)
            rn = wa - sol(zn)
            worse = np.abs(rn) > np.abs(ra) * (1 - 1e-4 * lam)
            if not np.any(worse):
                break
            lam = np.where(worse, lam / 2, lam)
        z[act], r[act] = zn, rn
        moving = np.abs(lam * dz) > 1e-3 * tol
        act = act[moving & (np.abs(rn) > 1e-3 * tol)]
    err = np.abs(sol(z) - flat)
    bad = np.flatnonzero(~(err <= tol))
    if bad.size:
        # the cubic interpolant can overshoot where psi is only Holder
        # (next to critical points); invert the bilinear interpolant there
        zb, eb = _invert_bilinear(sol, flat[bad], tol)
        z[bad], err[bad] = zb, eb
    if np.any(~(err <= tol)):
        k = int(np.nanargmax(np.where(np.isfinite(err), err, np.inf)))
        raise InversionError(f"w = {flat[k]} not inverted (residual {err[k]:.2e}); "
                             "outside the image of the window or Newton stagnated")
    return complex(z[0]) if w.ndim == 0 else z.reshape(w.shape)


def _invert_bilinear(sol: QcSolution, w, tol, candidates=16):
    P = sol.psi
    if getattr(sol, "_ctree", None) is None:
        cc = 0.25 * (P[:-1, :-1] + P[1:, :-1] + P[:-1, 1:] + P[1:, 1:])
        sol._ctree = cKDTree(np.stack([cc.real.ravel(), cc.imag.ravel()], -1))
    nc = P.shape[1] - 1
    _, idx = sol._ctree.query(np.stack([w.real, w.imag], -1), k=candidates)
    out = np.full(w.shape, np.nan + 0j)
    err = np.full(w.shape, np.inf)
    for c in range(candidates):
        i, j = idx[:, c] // nc, idx[:, c] % nc
        p00, p10, p01, p11 = P[i, j], P[i, j + 1], P[i + 1, j], P[i + 1, j + 1]
        s = np.full(w.shape, 0.5)
        t = np.full(w.shape, 0.5)
        for _ in range(30):
            val = p00 + (p10 - p00) * s + (p01 - p00) * t + (p11 - p10 - p01 + p00) * s * t
            ds_ = (p10 - p00) + (p11 - p10 - p01 + p00) * t
            dt_ = (p01 - p00) + (p11 - p10 - p01 + p00) * s
            r = w - val
            det = ds_.real * dt_.imag - ds_.imag * dt_.real
            s = s + (r.real * dt_.imag - r.imag * dt_.real) / det
            t = t + (ds_.real * r.imag - ds_.imag * r.real) / det
        val = p00 + (p10 - p00) * s + (p01 - p00) * t + (p11 - p10 - p01 + p00) * s * t
        e = np.abs(w - val)
        inside = (s >= -1e-9) & (s <= 1 + 1e-9) & (t >= -1e-9) & (t <= 1 + 1e-9)
        take = inside & (e < err)
        zc = (sol.xs[j] + s * (sol.xs[1] - sol.xs[0])) + 1j * (sol.ys[i] + t * (sol.ys[1] - sol.ys[0]))
        out[take], err[take] = zc[take], e[take]
    return out, err


# -------------------------------------------------------------- composition
def compose_entire(tiling, sol: QcSolution, z):
    """E(z) = F(psi^-1(z)) in log-polar form."""
    return mm.eval_F(tiling, invert_map(sol, z))


def _logpolar_dbar(L, A, h):
    """log|dbar E| and log|d E| by central differences of log E on a grid."""
    lf = L + 1j * np.unwrap(np.unwrap(A, axis=0), axis=1)
    fx = (lf[1:-1, 2:] - lf[1:-1, :-2]) / (2 * h[0])
    fy = (lf[2:, 1:-1] - lf[:-2, 1:-1]) / (2 * h[1])
    dbar = 0.5 * (fx + 1j * fy)
    d = 0.5 * (fx - 1j * fy)
    base = L[1:-1, 1:-1]
    with np.errstate(divide="ignore"):
        return base + np.log(np.abs(dbar)), base + np.log(np.abs(d))


@dataclass
class ResidualReport:
    window: tuple
    log_dbar_E: np.ndarray
    log_dbar_F: np.ndarray
    median_dbar_E: float
    median_dbar_F: float
    improvement: float


def interior_window(window, fraction=0.5):
    x0, x1, y0, y1 = window
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    hw, hh = fraction * (x1 - x0) / 2, fraction * (y1 - y0) / 2
    return (cx - hw, cx + hw, cy - hh, cy + hh)


def dbar_residual(tiling, sol: QcSolution, window=None, resolution=256):
    """Finite-difference dbar of E and of F on the same window; medians and their ratio.

    Medians are taken of log|dbar|, which is the log of the median since log is
    monotone; this keeps huge strip values finite.
    """
    window = window or interior_window(sol.config.window)
    x0, x1, y0, y1 = window
    xs, ys = np.linspace(x0, x1, resolution), np.linspace(y0, y1, resolution)
    W = xs[None, :] + 1j * ys[:, None]
    h = (xs[1] - xs[0], ys[1] - ys[0])
    L, A, _ = mm.eval_logpolar(tiling, invert_map(sol, W))
    dE, _ = _logpolar_dbar(L, A, h)
    L, A, _ = mm.eval_logpolar(tiling, W)
    dF, _ = _logpolar_dbar(L, A, h)
    mE = float(np.median(dE[np.isfinite(dE)]))
    mF = float(np.median(dF[np.isfinite(dF)]))
    return ResidualReport(window, dE, dF, float(np.exp(mE)), float(np.exp(mF)), float(np.exp(mF - mE)))


def straighten(tiling, config: SolverConfig = None):
    """Solve for the tiling's own Beltrami coefficient."""
    cfg = config or SolverConfig()
    xs, ys = cfg.grid()
    Z = xs[None, :] + 1j * ys[:, None]
    mu = np.nan_to_num(mu_field(tiling, Z.ravel()).reshape(Z.shape), nan=0.0)
    return solve_mrmt(mu, cfg)


# ----------------------------------------------------------- exterior map
class CurveError(ValueError):
    pass


@dataclass
class BoundaryCorrespondence:
    theta: np.ndarray
    points: np.ndarray
    iterations: int

    def __call__(self, theta):
        return _periodic_interp(self.theta, self.points, theta)


def _periodic_interp(t, vals, tq):
    tt = np.r_[t, t[0] + 2 * np.pi]
    sr = CubicSpline(tt, np.r_[vals.real, vals[0].real], bc_type="periodic")
    si = CubicSpline(tt, np.r_[vals.imag, vals[0].imag], bc_type="periodic")
    tq = np.mod(np.asarray(tq, float) - t[0], 2 * np.pi) + t[0]
    return sr(tq) + 1j * si(tq)


def _conjugate(f):
    """Periodic conjugate function (Hilbert transform) of samples on a uniform grid."""
    n = len(f)
    k = sfft.fftfreq(n, 1.0 / n)
    F = sfft.fft(f)
    return np.real(sfft.ifft(-1j * np.sign(k) * F))


def exterior_map(boundary, n=None, tol=1e-13, maxiter=500, relax=1.0):
    """Boundary correspondence of the exterior Riemann map of a star-shaped curve.

    relax < 1 under-relaxes the Theodorsen step, which widens the class of
    curves it converges for (far from round, or with corners).

    Returns theta -> eta(e^{i theta}) with eta fixing infinity and sending 1 to
    the curve's crossing of the positive real axis.
    """
    c = np.asarray(boundary, complex)
    if len(c) < 256:
        raise CurveError("need at least 256 boundary samples")
    phi = np.unwrap(np.angle(c))
    if phi[-1] < phi[0]:
        c, phi = c[::-1], phi[::-1]
    dphi = np.diff(np.r_[phi, phi[0] + 2 * np.pi])
    if np.any(dphi <= 0) or abs(phi[-1] - phi[0] + dphi[-1] - 2 * np.pi) > 1e-9:
        raise CurveError("curve is not star-shaped about 0")
    order = np.argsort(np.mod(phi, 2 * np.pi))
    ang = np.mod(phi, 2 * np.pi)[order]
    # invert: the interior of 1/curve is star-shaped with polar angle -phi
    logr = -np.log(np.abs(c[order]))
    ang_i = np.mod(-ang, 2 * np.pi)
    o2 = np.argsort(ang_i)
    ang_i, logr = ang_i[o2], logr[o2]
    tt = np.r_[ang_i, ang_i[0] + 2 * np.pi]
    spl = CubicSpline(tt, np.r_[logr, logr[0]], bc_type="periodic")

    def logrho(a):
        return spl(np.mod(a - ang_i[0], 2 * np.pi) + ang_i[0])

    N = n or max(1024, 1 << int(np.ceil(np.log2(len(c)))))
    th = 2 * np.pi * np.arange(N) / N
    eps = np.zeros(N)
    for it in range(1, maxiter + 1):
        new = (1 - relax) * eps + relax * _conjugate(logrho(th + eps))
        step = np.max(np.abs(new - eps))
        eps = new
        if step < tol:
            break
        if not np.isfinite(step) or step > 10:
            ecc = float(np.exp(np.ptp(logr)))
            raise CurveError(f"Theodorsen iteration diverged (radius ratio {ecc:.3f})")
    else:
        raise CurveError(f"Theodorsen iteration did not converge (last step {step:.2e})")
    # interior map: boundary polar angle t + eps(t).  Exterior map g(z) = 1/f(1/z)
    # sends e^{i theta} to polar angle theta - eps(-theta).
    def ext_angle(t):
        return t - _periodic_real(th, eps, -np.asarray(t))

    a = brentq(ext_angle, -np.pi, np.pi, xtol=1e-15)
    ang_out = ext_angle(th + a)
    pts = np.exp(-logrho(-ang_out)) * np.exp(1j * ang_out)
    return BoundaryCorrespondence(th, pts, it)


def _periodic_real(t, vals, tq):
    tt = np.r_[t, t[0] + 2 * np.pi]
    s = CubicSpline(tt, np.r_[vals, vals[0]], bc_type="periodic")
    return s(np.mod(tq - t[0], 2 * np.pi) + t[0])
