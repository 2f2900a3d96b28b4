from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate

from fracimpulse.errors import ContractError, UnsupportedConfigurationError, ValidationError
from fracimpulse.sysmodel import (
    ControlBundle,
    FractionalOrder,
    ImpulseEvent,
    SystemSpec,
    cell_products,
    check_bundle,
    dump_bundle,
    dump_spec,
    heat_demo_spec,
    inner_product_omega,
    load_bundle,
    load_spec,
    make_grid,
    require_gramian_order,
    validate,
    zero_bundle,
)

from conftest import random_spec


def _spec(**kw):
    base = dict(A=-np.eye(2), B=np.ones((2, 1)), impulses=(ImpulseEvent(0.5, np.zeros((2, 2)), np.ones((2, 1))),),
                horizon=1.0, order=FractionalOrder(0.75))
    base.update(kw)
    return validate(SystemSpec(**base))


class TestValidation:
    @pytest.mark.parametrize("alpha", [0.0, -0.3, 1.2, float("nan")])
    def test_bad_order(self, alpha):
        with pytest.raises(ValidationError) as info:
            FractionalOrder(alpha)
        assert info.value.field == "alpha"

    def test_gramian_order_guard(self):
        spec = _spec(order=FractionalOrder(0.5))
        with pytest.raises(UnsupportedConfigurationError):
            require_gramian_order(spec)
        require_gramian_order(_spec(order=FractionalOrder(0.51)))

    @pytest.mark.parametrize("kw,field", [
        (dict(A=np.ones((2, 3))), "A"),
        (dict(B=np.ones((3, 1))), "B"),
        (dict(horizon=-1.0), "horizon"),
        (dict(A=np.array([[np.inf, 0], [0, 1]])), "A"),
        (dict(impulses=(ImpulseEvent(1.0, np.zeros((2, 2)), np.ones((2, 1))),)), "impulses[0].time"),
        (dict(impulses=(ImpulseEvent(0.5, np.zeros((2, 3)), np.ones((2, 1))),)), "impulses[0].D"),
        (dict(impulses=(ImpulseEvent(0.5, np.zeros((2, 2)), np.ones((2, 2))),)), "impulses[0].E"),
        (dict(control_mask=((0.2, 0.4), (0.1, 0.3))), "control_mask"),
        (dict(control_mask=(((0.2, 1.4),),)), "control_mask[0]"),
        (dict(semigroup_bound=0.5), "semigroup_bound"),
    ])
    def test_named_fields(self, kw, field):
        with pytest.raises(ValidationError) as info:
            _spec(**kw)
        assert info.value.field == field

    def test_impulses_sorted(self):
        imps = tuple(ImpulseEvent(t, np.zeros((2, 2)), np.ones((2, 1))) for t in (0.7, 0.2))
        spec = _spec(impulses=imps)
        assert list(spec.times) == [0.2, 0.7]
        assert list(spec.breakpoints) == [0.0, 0.2, 0.7, 1.0]

    def test_singular_jump_is_allowed(self):
        spec = _spec(impulses=(ImpulseEvent(0.5, -np.eye(2), np.ones((2, 1))),))
        assert spec.n_impulses == 1

    def test_active_windows(self):
        spec = _spec(B=np.ones((2, 2)), impulses=(ImpulseEvent(0.5, np.zeros((2, 2)), np.ones((2, 2))),),
                     control_mask=(((0.25, 0.75),), None))
        act = spec.active([0.0, 0.25, 0.5, 0.8])
        assert act[:, 0].tolist() == [False, True, True, False]
        assert act[:, 1].all()
        assert spec.masked


class TestGridAndBundles:
    def test_grid_contains_impulses(self, rng):
        spec = random_spec(rng, n_imp=3)
        g = make_grid(spec, 64)
        assert g[0] == 0 and g[-1] == spec.horizon and np.all(np.diff(g) > 0)
        assert np.all(np.isin(spec.times, g))
        assert g.size == 64 * (spec.n_impulses + 1) + 1

    def test_check_bundle_contract(self):
        spec = _spec()
        g = make_grid(spec, 8)
        with pytest.raises(ContractError):
            check_bundle(spec, ControlBundle(g, np.zeros((g.size, 2)), np.zeros((1, 1))))
        with pytest.raises(ContractError):
            check_bundle(spec, ControlBundle(g, np.zeros((g.size, 1)), np.zeros((2, 1))))
        with pytest.raises(ContractError):
            check_bundle(spec, ControlBundle(np.linspace(0, 1, 10), np.zeros((10, 1)), np.zeros((1, 1))))

    def test_cell_products_exact_for_quadratics(self):
        g = np.linspace(0, 2, 9)
        # product of two linear functions on each cell is integrated exactly
        assert cell_products(g, g, 1 - g) == pytest.approx(2 - 8 / 3, abs=1e-14)

    @settings(max_examples=40, deadline=None)
    @given(arrays(float, (17, 2), elements=st.floats(-5, 5)), arrays(float, (17, 2), elements=st.floats(-5, 5)),
           arrays(float, (2,), elements=st.floats(-5, 5)), st.floats(-3, 3))
    def test_inner_product_bilinear_symmetric(self, ua, ub, v, c):
        g = np.linspace(0, 1, 17)
        a = ControlBundle(g, ua, v[None, :1])
        b = ControlBundle(g, ub, v[None, 1:])
        ab = inner_product_omega(a, b)
        assert ab == pytest.approx(inner_product_omega(b, a), abs=1e-9)
        assert inner_product_omega(a.scaled(c), b) == pytest.approx(c * ab, abs=1e-8)
        assert inner_product_omega(a, a) >= -1e-12

    def test_inner_product_against_fine_quadrature(self):
        g = np.linspace(0, 1, 33)
        a = ControlBundle(g, np.stack([np.sin(3 * g)], 1), np.array([[2.0]]))
        fine = np.linspace(0, 1, 200001)
        ua = np.interp(fine, g, a.u[:, 0])
        ref = integrate.trapezoid(ua * ua, fine) + 4.0
        assert inner_product_omega(a, a) == pytest.approx(ref, rel=1e-8)

    def test_kernel_pairing_needs_spec(self):
        from fracimpulse.gramian import apply_M_star

        spec = _spec()
        ms = apply_M_star(spec, np.ones(2), make_grid(spec, 8))
        with pytest.raises(ContractError):
            inner_product_omega(ms, ms)


class TestHeatSpec:
    def test_structure(self):
        spec = heat_demo_spec(3)
        assert np.allclose(np.diag(spec.A), [-1, -4, -9])
        assert spec.alpha == pytest.approx(2 / 3)
        assert spec.times.tolist() == [0.5]
        assert spec.windows(1) == [(0.75, 1.0)]
        assert spec.terminal_E is None
        assert heat_demo_spec(2, terminal_jump=True).terminal_E is not None

    def test_drop_channel(self):
        spec = heat_demo_spec(3, drop_channels=(2,))
        assert not spec.B[:, 1].any() and not spec.impulses[0].E[:, 1].any()


class TestSerialization:
    def test_spec_round_trip(self, rng):
        for mask in (False, True):
            spec = random_spec(rng, mask=mask)
            x0 = rng.standard_normal(spec.dim_state)
            h = rng.standard_normal(spec.dim_state)
            spec2, x02, h2 = load_spec(dump_spec(spec, x0, h))
            assert spec2 == spec
            assert np.array_equal(x0, x02) and np.array_equal(h, h2)

    def test_terminal_round_trip(self):
        spec = heat_demo_spec(2, terminal_jump=True)
        assert load_spec(dump_spec(spec))[0] == spec

    def test_minimal_yaml(self):
        text = """
alpha: 0.8
horizon: 2
A: [[-1, 0], [0, -2]]
B: [[1], [0]]
impulses:
  - {time: 1, D: [[0, 0], [0, 0]], E: [[0], [1]]}
target: [0, 1]
"""
        spec, x0, h = load_spec(text)
        assert spec.dim_state == 2 and spec.dim_control == 1 and x0 is None
        assert h.tolist() == [0.0, 1.0]

    @pytest.mark.parametrize("text,field", [
        ("alpha: 0.8\nhorizon: 1\nA: [[1]]\n", "B"),
        ("alpha: 1.5\nhorizon: 1\nA: [[1]]\nB: [[1]]\n", "alpha"),
        ("alpha: 0.8\nhorizon: 1\nA: [[1]]\nB: [[1]]\nx0: [1, 2]\n", "x0"),
        ("[1, 2", "config"),
        ("- 1\n- 2\n", "config"),
        ("alpha: 0.8\nhorizon: 1\nA: [[a]]\nB: [[1]]\n", "A"),
    ])
    def test_bad_yaml(self, text, field):
        with pytest.raises(ValidationError) as info:
            load_spec(text)
        assert info.value.field == field

    def test_bundle_round_trip(self, rng):
        spec = random_spec(rng)
        g = make_grid(spec, 16)
        b = ControlBundle(g, rng.standard_normal((g.size, 2)), rng.standard_normal((2, 2)))
        b2 = load_bundle(dump_bundle(b), spec)
        assert np.array_equal(b.u, b2.u) and np.array_equal(b.v, b2.v) and np.array_equal(b.grid, b2.grid)

    def test_bundle_shorthand(self):
        spec = _spec()
        b = load_bundle("grid: 16\nu: [2.0]\nv: [[1.0]]\n", spec)
        assert b.u.shape == (33, 1) and np.all(b.u == 2.0)
        with pytest.raises(ValidationError):
            load_bundle("grid: [0, 0.3, 1]\nu: [[0], [0], [0]]\nv: [[0]]\n", spec)

    def test_zero_bundle(self):
        spec = heat_demo_spec(2, terminal_jump=True)
        z = zero_bundle(spec)
        assert z.v_terminal.tolist() == [0.0, 0.0] and not z.u.any()


def test_validate_idempotent(rng):
    spec = random_spec(rng, mask=True)
    assert validate(spec) == spec


@pytest.mark.parametrize("n", [1, 3, 6])
def test_heat_eigenvalues(n):
    ev = np.sort(np.linalg.eigvals(heat_demo_spec(n).A).real)
    assert np.array_equal(ev, -np.arange(n, 0, -1, dtype=float) ** 2)
