from __future__ import annotations

import numpy as np
import pytest

from fracimpulse.sysmodel import ControlBundle, FractionalOrder, ImpulseEvent, SystemSpec, make_grid, validate


def random_spec(rng, alpha=0.75, n=3, m=2, n_imp=2, scalar_D=False, mask=False, horizon=1.0,
                lam_range=(0.2, 4.0), D_scale=0.3):
    """Diagonalizable stable system with real spectrum and well separated impulses."""
    lam = -rng.uniform(*lam_range, n)
    V = rng.standard_normal((n, n)) + 2 * np.eye(n)
    A = V @ np.diag(lam) @ np.linalg.inv(V)
    times = np.sort(rng.choice(np.arange(1, 10), n_imp, replace=False)) * horizon / 10
    imps = []
    for t in times:
        D = D_scale * rng.standard_normal() * np.eye(n) if scalar_D else D_scale * rng.standard_normal((n, n))
        imps.append(ImpulseEvent(float(t), D, rng.standard_normal((n, m))))
    control_mask = None
    if mask:
        control_mask = tuple(((0.15 * horizon, 0.85 * horizon),) if c == 0 else None for c in range(m))
    return validate(SystemSpec(A=A, B=rng.standard_normal((n, m)), impulses=tuple(imps), horizon=horizon,
                               order=FractionalOrder(alpha), control_mask=control_mask))


def smooth_bundle(spec, rng, cells=256):
    g = make_grid(spec, cells)
    m = spec.dim_control
    freq = rng.uniform(0.5, 3.0, m)
    phase = rng.uniform(0, np.pi, m)
    u = np.sin(np.outer(g, freq) + phase) + 0.5
    return ControlBundle(g, u, rng.standard_normal((spec.n_impulses, m)))


@pytest.fixture
def rng():
    return np.random.default_rng(20241016)
