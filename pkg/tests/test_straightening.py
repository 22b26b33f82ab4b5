import numpy as np
import pytest
from scipy.integrate import solve_ivp

from qcsurgery import straightening as st
from qcsurgery.tiling import Tiling


def _grid(cfg):
    xs, ys = cfg.grid()
    return xs[None, :] + 1j * ys[:, None]


def _smooth(t):
    t = np.clip(t, 0, 1)
    return t ** 3 * (10 - 15 * t + 6 * t * t)


def radial_profile(r):
    return _smooth((r - 0.2) / 0.2) * _smooth((1.7 - r) / 0.2) / 3


def radial_mu(Z):
    r = np.abs(Z)
    out = np.zeros_like(Z)
    nz = r > 0
    out[nz] = radial_profile(r[nz]) * Z[nz] / np.conj(Z[nz])
    return out


def radial_exact(Z):
    """psi = rho(|z|) z/|z| with rho'/rho = (1 + k)/((1 - k) r), rho(1) = 1."""
    g = lambda r, y: [(1 + radial_profile(r)) / ((1 - radial_profile(r)) * r)]
    up = solve_ivp(g, (1, 2.9), [0], dense_output=True, rtol=1e-12, atol=1e-14)
    dn = solve_ivp(g, (1, 1e-3), [0], dense_output=True, rtol=1e-12, atol=1e-14)
    r = np.abs(Z)
    lr = np.where(r >= 1, up.sol(np.maximum(r, 1))[0], dn.sol(np.clip(r, 1e-3, 1))[0])
    return np.exp(lr) * Z / np.maximum(r, 1e-300)


def test_zero_mu_is_exact_identity():
    cfg = st.SolverConfig(window=(-2, 2, -2, 2), resolution=128)
    sol = st.identity_solution(cfg)
    assert np.array_equal(sol.psi, _grid(cfg))
    assert sol.iterations == 0


def test_constant_mu_gives_the_affine_map():
    # a disk-tapered constant mu has the affine solution inside the disk (ellipse theorem)
    cfg = st.SolverConfig(window=(-2, 2, -2, 2), resolution=256, taper_shape="disk", tol=1e-12)
    sol = st.solve_mrmt(lambda Z: 0.3 + 0 * Z, cfg)
    Z = _grid(cfg)
    inner = (np.abs(Z.real) <= 1) & (np.abs(Z.imag) <= 1)
    aff = (Z + 0.3 * np.conj(Z)) / 1.3
    err = np.abs(sol.psi - aff)[inner].max() / np.abs(aff[inner]).max()
    assert err < 1e-2
    assert sol.residual_max < cfg.tol


def test_radial_stretch_matches_ode():
    cfg = st.SolverConfig(window=(-2, 2, -2, 2), resolution=256, tol=1e-12)
    sol = st.solve_mrmt(radial_mu, cfg)
    Z = _grid(cfg)
    inner = (np.abs(Z.real) <= 1) & (np.abs(Z.imag) <= 1)
    ex = radial_exact(Z[inner])
    assert np.abs(sol.psi[inner] - ex).max() / np.abs(ex).max() < 3e-2
    assert sol.cell_jacobians().min() > 0


@pytest.mark.parametrize("norm,a,b", [("pm1", -1, 1), ("01", 0, 1)])
def test_normalization(norm, a, b):
    cfg = st.SolverConfig(window=(-2, 2, -2, 2), resolution=128, normalization=norm)
    sol = st.solve_mrmt(radial_mu, cfg)
    assert abs(sol(a) - a) < 1e-14 and abs(sol(b) - b) < 1e-14


def test_solver_rejects_large_mu():
    cfg = st.SolverConfig(window=(-1, 1, -1, 1), resolution=64)
    with pytest.raises(st.SolverError):
        st.solve_mrmt(lambda Z: 0.99 + 0 * Z, cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        st.SolverConfig(tol=0)
    with pytest.raises(ValueError):
        st.SolverConfig(normalization="center")
    with pytest.raises(ValueError):
        st.SolverConfig(taper=1)


def test_beurling_transform_oracle():
    # S(dbar g) = d g for a Gaussian g
    n, L = 256, 16.0
    xs = np.linspace(-L / 2, L / 2, n, endpoint=False)
    h = xs[1] - xs[0]
    Z = xs[None, :] + 1j * xs[:, None]
    g = np.exp(-np.abs(Z) ** 2)
    dbar_g = -Z * g
    d_g = -np.conj(Z) * g
    out = st.singular_transform(dbar_g, (h, h), pad=1)
    assert np.abs(out - d_g).max() < 1e-10


@pytest.fixture(scope="module")
def canonical_solution():
    t = Tiling((2, 4, 2, 8))
    cfg = st.SolverConfig(window=(-10, 3, -5, 5), resolution=256)
    return t, st.straighten(t, cfg)


def test_straightening_is_a_homeomorphism_on_the_grid(canonical_solution):
    t, sol = canonical_solution
    assert sol.residual_max < sol.config.tol
    assert sol.cell_jacobians().min() > 0
    # mirror symmetry of mu gives psi(conj z) = conj psi(z)
    assert np.abs(sol.psi - np.conj(sol.psi[::-1])).max() < 1e-10


def test_inverse_round_trip(canonical_solution, rng):
    _, sol = canonical_solution
    z = rng.uniform(-4, 1, 200) + 1j * rng.uniform(-2, 2, 200)
    w = sol(z)
    assert np.abs(st.invert_map(sol, w) - z).max() < 1e-6


def test_dbar_improvement(canonical_solution):
    t, sol = canonical_solution
    rep = st.dbar_residual(t, sol, resolution=128)
    assert rep.improvement >= 10


def test_exterior_map_of_an_ellipse():
    th = np.linspace(0, 2 * np.pi, 3000, endpoint=False)
    bc = st.exterior_map(np.exp(1j * th) + 0.3 * np.exp(-1j * th))
    exact = np.exp(1j * bc.theta) + 0.3 * np.exp(-1j * bc.theta)
    assert np.abs(bc.points - exact).max() < 1e-10


def test_exterior_map_of_the_straightened_circle(canonical_solution):
    # psi(unit circle) is far from round: the plain step diverges, the relaxed one converges
    _, sol = canonical_solution
    th = np.linspace(0, 2 * np.pi, 2048, endpoint=False)
    curve = sol(np.exp(1j * th))
    with pytest.raises(st.CurveError):
        st.exterior_map(curve)
    bc = st.exterior_map(curve, maxiter=2000, relax=0.5)
    # boundary values of a conformal map fixing infinity: no Fourier modes above k = 1
    F = np.fft.fft(bc.points) / len(bc.points)
    k = np.fft.fftfreq(len(bc.points), 1 / len(bc.points))
    assert np.abs(F[k >= 2]).max() < 1e-7
