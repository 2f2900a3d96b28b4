from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.linalg import expm

from fracimpulse.errors import UnsupportedConfigurationError
from fracimpulse.gramian import (
    apply_M,
    apply_M_star,
    assemble_gramian,
    block_csv,
    gramian_summary,
    transfer_maps,
)
from fracimpulse.propagator import propagate
from fracimpulse.solops import OperatorCache
from fracimpulse.specfun import ml_array
from fracimpulse.sysmodel import ControlBundle, heat_demo_spec, inner_product_omega, make_grid

from conftest import random_spec, smooth_bundle

# smallest eigenvalue of the heat-equation Gramian (alpha = 2/3, mask on), frozen
HEAT_MIN_EIG = {1: 2.0351915818784603, 2: 0.46003182693479705, 4: 0.21765954937062781}


def _w_scalar(alpha, lam, L):
    """int_0^L x^(2 alpha - 2) E_{alpha,alpha}(-lam x^alpha)^2 dx, via y = x^alpha."""
    f = lambda y: y ** ((alpha - 1) / alpha) * ml_array(alpha, alpha, np.array([-lam * y]))[0] ** 2 / alpha
    return integrate.quad(f, 0, L**alpha, epsabs=1e-14, epsrel=1e-13, limit=200)[0]


class TestBlocks:
    def test_scalar_heat_oracle(self):
        a = 2 / 3
        g = assemble_gramian(heat_demo_spec(1))
        W = _w_scalar(a, 1.0, 0.5)
        S = ml_array(a, 1.0, np.array([-(0.5**a)]))[0]
        assert g.omega[0, 0] == pytest.approx(W, rel=1e-12)
        assert g.psi[0, 0] == pytest.approx((2 * S) ** 2 * W, rel=1e-12)
        assert g.omega_tilde[0, 0] == pytest.approx(S**2, rel=1e-12)
        assert g.psi_tilde[0, 0] == 0.0
        assert np.linalg.eigvalsh(g.gamma)[0] == pytest.approx(HEAT_MIN_EIG[1], rel=1e-10)

    @pytest.mark.parametrize("n", [2, 4])
    def test_heat_frozen(self, n):
        g = assemble_gramian(heat_demo_spec(n))
        assert np.linalg.eigvalsh(g.gamma)[0] == pytest.approx(HEAT_MIN_EIG[n], rel=1e-10)

    def test_alpha_one_oracle(self, rng):
        spec = random_spec(rng, alpha=1.0, n_imp=1)
        g = assemble_gramian(spec)
        t1 = spec.times[0]
        B = spec.B
        W = lambda L: integrate.quad_vec(lambda x: expm(spec.A * x) @ B @ B.T @ expm(spec.A.T * x), 0, L,
                                         epsabs=1e-13, epsrel=1e-13)[0]
        Phi1 = expm(spec.A * (1 - t1))
        G1 = Phi1 @ (np.eye(3) + spec.impulses[0].D)
        E = spec.impulses[0].E
        assert np.allclose(g.omega, W(1 - t1), atol=1e-11)
        assert np.allclose(g.psi, G1 @ W(t1) @ G1.T, atol=1e-11)
        assert np.allclose(g.omega_tilde, Phi1 @ E @ E.T @ Phi1.T, atol=1e-12)

    def test_structure(self, rng):
        spec = random_spec(rng, alpha=0.7, n_imp=3, mask=True)
        g = assemble_gramian(spec)
        total = g.omega + g.psi + g.omega_tilde + g.psi_tilde
        assert np.allclose(total, g.gamma, atol=1e-14)
        for name, M in g.blocks().items():
            assert np.allclose(M, M.T), name
            assert np.linalg.eigvalsh(M)[0] > -1e-12 * max(1, np.abs(M).max()), name
        summ = gramian_summary(g)
        assert set(summ) >= {"omega", "psi", "omega_tilde", "psi_tilde", "gamma", "resolution"}
        assert g.operator_norm() == pytest.approx(math.sqrt(np.linalg.eigvalsh(g.gamma)[-1]))
        assert np.allclose(g.perturbed(2.0).gamma, 2 * g.gamma)

    def test_terminal_block(self):
        g = assemble_gramian(heat_demo_spec(2, terminal_jump=True))
        assert np.allclose(g.terminal, np.eye(2))
        assert "terminal" in g.blocks()

    def test_resolution_converged(self, rng):
        spec = random_spec(rng, alpha=0.55, n_imp=2, mask=True)
        lo = assemble_gramian(spec, 256).gamma
        hi = assemble_gramian(spec, 4096).gamma
        assert np.max(np.abs(lo - hi)) < 1e-10 * max(1, np.abs(hi).max())

    def test_csv(self):
        text = block_csv(np.array([[1.0, 0.1], [0.1, 2.0]]))
        assert text.splitlines() == ["1,0.10000000000000001", "0.10000000000000001,2"]

    def test_low_order_rejected(self, rng):
        with pytest.raises(UnsupportedConfigurationError):
            assemble_gramian(random_spec(rng, alpha=0.45))


class TestOperator:
    def test_transfer_maps(self, rng):
        spec = random_spec(rng, alpha=1.0, n_imp=2)
        Phi, G = transfer_maps(spec, OperatorCache(spec))
        t1, t2 = spec.times
        D1, D2 = (ev.D for ev in spec.impulses)
        A = spec.A
        assert np.allclose(Phi[2], expm(A * (1 - t2)))
        assert np.allclose(Phi[1], expm(A * (1 - t2)) @ (np.eye(3) + D2) @ expm(A * (t2 - t1)))
        assert np.allclose(G[1], Phi[1] @ (np.eye(3) + D1))

    def test_M_matches_propagation(self, rng):
        spec = random_spec(rng, alpha=0.7, mask=True)
        b = smooth_bundle(spec, rng, 128)
        assert np.allclose(apply_M(spec, b), propagate(spec, np.zeros(3), b).final, atol=1e-13)

    @settings(max_examples=10, deadline=None)
    @given(st.sampled_from([0.55, 0.7, 0.85, 1.0]), st.integers(0, 10**6))
    def test_duality(self, alpha, seed):
        rng = np.random.default_rng(seed)
        spec = random_spec(rng, alpha=alpha, mask=bool(seed % 2))
        b = smooth_bundle(spec, rng, 128)
        phi = rng.standard_normal(3)
        lhs = float(apply_M(spec, b) @ phi)
        rhs = inner_product_omega(b, apply_M_star(spec, phi, b.grid), spec)
        assert abs(lhs - rhs) <= 1e-10 * (1 + abs(lhs))

    def test_factorization(self, rng):
        spec = random_spec(rng, alpha=0.65, n_imp=2, mask=True)
        cache = OperatorCache(spec)
        g = assemble_gramian(spec, cache=cache)
        grid = make_grid(spec, 32)
        phi, psi = rng.standard_normal((2, 3))
        ms_phi = apply_M_star(spec, phi, grid, cache)
        ms_psi = apply_M_star(spec, psi, grid, cache)
        assert inner_product_omega(ms_phi, ms_psi, spec) == pytest.approx(phi @ g.gamma @ psi, rel=1e-10)
        assert np.allclose(apply_M(spec, ms_phi, cache), g.gamma @ phi, atol=1e-10)

    def test_adjoint_control_values(self, rng):
        spec = random_spec(rng, alpha=1.0, n_imp=0)
        phi = rng.standard_normal(3)
        ms = apply_M_star(spec, phi, make_grid(spec, 8))
        t = 0.3
        assert np.allclose(ms.evaluate([t])[0], spec.B.T @ expm(spec.A.T * (1 - t)) @ phi, atol=1e-12)


def test_non_impulsive_reduction(rng):
    spec = random_spec(rng, alpha=0.7, n_imp=0)
    g = assemble_gramian(spec)
    assert not g.psi.any() and not g.omega_tilde.any() and not g.psi_tilde.any()
    assert np.array_equal(g.gamma, g.omega)
    B = spec.B
    cache = OperatorCache(spec)
    a = spec.alpha
    ref = integrate.quad_vec(lambda y: (lambda x: x ** (2 * a - 2) * cache.P(x) @ B @ B.T @ cache.P(x).T
                                        * x ** (1 - a) / a)(y ** (1 / a)), 0, 1, epsabs=1e-13)[0]
    assert np.allclose(g.omega, ref, atol=1e-10)


def test_boundedness_surrogate(rng):
    spec = random_spec(rng, alpha=0.65, n_imp=2, mask=True)
    cache = OperatorCache(spec)
    C = assemble_gramian(spec, cache=cache).operator_norm()
    grid = make_grid(spec, 32)
    for _ in range(100):
        u = rng.standard_normal((grid.size, 2)) * rng.uniform(0, 3)
        b = ControlBundle(grid, u, rng.standard_normal((2, 2)))
        bound = C * (np.sqrt(inner_product_omega(ControlBundle(grid, u, np.zeros((2, 2))),
                                                 ControlBundle(grid, u, np.zeros((2, 2)))))
                     + np.sum(np.linalg.norm(b.v, axis=1)))
        assert np.linalg.norm(apply_M(spec, b, cache)) <= bound * (1 + 1e-12)
