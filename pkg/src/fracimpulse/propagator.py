"""Forward mild solutions, the adjoint state and the Green-type duality.

Intervals are half-open, ``I_k = (t_{k-1}, t_k]`` for ``k = 1..n+1`` with
``t_0 = 0`` and ``t_{n+1} = b``.  On ``I_k`` the mild solution is

.. math::

    x(t) = S_\\alpha(t - t_{k-1}) x(t_{k-1}^+)
         + \\int_{t_{k-1}}^t (t-s)^{\\alpha-1} P_\\alpha(t-s) B_c(s) u(s)\\, ds,

and ``x(t_k^+) = (I + D_k) x(t_k) + E_k v_k``.  The adjoint state is
``p(t) = (t_k - t)^{alpha-1} P_alpha(t_k - t)^T c_k`` on ``I_k`` with
``c_{n+1} = phi`` and ``c_k = (I + D_k)^T S_alpha(t_{k+1} - t_k)^T c_{k+1}``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from fracimpulse.errors import ContractError
from fracimpulse.solops import (
    OperatorCache,
    convolve_trajectory,
    costate_values,
    kernel_endpoint,
    kernel_kernel,
    singular_convolve,
)
from fracimpulse.sysmodel import (
    ControlBundle,
    SystemSpec,
    check_bundle,
    require_gramian_order,
)


@dataclass(frozen=True)
class Trajectory:
    """State samples; ``states[i]`` is the left value ``x(t_i)`` at impulse nodes.

    ``right[k]`` holds ``x(t_{k+1}^+)`` (0-based over impulses) and
    ``impulse_index[k]`` the grid position of that impulse.  ``final`` is
    the state at the horizon, including the terminal jump when present.
    """

    grid: np.ndarray
    states: np.ndarray
    right: np.ndarray
    impulse_index: np.ndarray
    final: np.ndarray

    def at_impulse(self, k: int):
        """``(x(t_k), x(t_k^+))`` for the 1-based impulse ``k``."""
        i = self.impulse_index[k - 1]
        return self.states[i], self.right[k - 1]

    def jump_defects(self, spec: SystemSpec, bundle: ControlBundle) -> np.ndarray:
        """``|x(t_k^+) - (I + D_k) x(t_k) - E_k v_k|`` per impulse."""
        out = []
        for k, ev in enumerate(spec.impulses, start=1):
            left, right = self.at_impulse(k)
            expect = left + ev.D @ left + ev.E @ bundle.v[k - 1]
            out.append(np.max(np.abs(right - expect)) / max(1.0, np.max(np.abs(expect))))
        return np.array(out)


@dataclass(frozen=True)
class AdjointTrajectory:
    """Adjoint state ``p`` on a grid plus its analytic interval coefficients.

    ``coefs[k-1]`` is ``c_k``.  ``costates`` follows the right-limit
    convention at impulse nodes (the node ``t_k`` is sampled from ``I_{k+1}``)
    and is ``nan`` at ``b`` where ``p`` is unbounded for ``alpha < 1``.
    """

    grid: np.ndarray
    costates: np.ndarray
    coefs: np.ndarray
    phi: np.ndarray
    alpha: float

    def rl_at_zero(self, cache: OperatorCache) -> np.ndarray:
        """``I^{1-alpha} p (0^+) = S_alpha(t_1)^T c_1`` in closed spectral form."""
        t1 = cache.spec.breakpoints[1]
        return cache.S(t1).T @ self.coefs[0]


def _interval_slices(spec: SystemSpec, grid: np.ndarray):
    bp = spec.breakpoints
    idx = np.searchsorted(grid, bp)
    if not np.all(grid[idx] == bp):
        raise ContractError("grid must contain 0, every impulse time and the horizon")
    return [(idx[k - 1], idx[k]) for k in range(1, bp.size)]


def _cache(spec, cache):
    return OperatorCache(spec) if cache is None else cache


# {{{ forward


def _endpoint_pass(spec, cache, x0, bundle, upto=None):
    """Left and right states at every impulse (and the left state at b)."""
    grid = bundle.grid
    slices = _interval_slices(spec, grid)
    bp = spec.breakpoints
    kern = bundle.kernel
    x = np.asarray(x0, dtype=float)
    lefts, rights = [], []
    last = len(slices) if upto is None else upto
    for k in range(1, last + 1):
        i0, i1 = slices[k - 1]
        left = cache.S(bp[k] - bp[k - 1]) @ x
        left = left + singular_convolve(cache, bp[k - 1], bp[k], grid[i0:i1 + 1], bundle.u[i0:i1 + 1])
        if kern is not None:
            left = left + kernel_endpoint(cache, k, kern.coefs[k - 1])
        lefts.append(left)
        if k <= spec.n_impulses:
            ev = spec.impulses[k - 1]
            x = left + ev.D @ left + ev.E @ bundle.v[k - 1]
            rights.append(x)
    return lefts, rights


def post_impulse_state(spec: SystemSpec, x0, bundle: ControlBundle, k: int,
                       cache: Optional[OperatorCache] = None) -> np.ndarray:
    """``x(t_k^+)`` by the forward recursion over the first ``k`` intervals."""
    if not 1 <= k <= spec.n_impulses:
        raise ContractError(f"impulse index must be in 1..{spec.n_impulses}, got {k}")
    bundle = check_bundle(spec, bundle)
    _, rights = _endpoint_pass(spec, _cache(spec, cache), x0, bundle, upto=k)
    return rights[k - 1]


def propagate(spec: SystemSpec, x0, bundle: ControlBundle,
              cache: Optional[OperatorCache] = None) -> Trajectory:
    """Mild solution on the bundle grid.

    Interval end states (and therefore the final state) use exact window
    handling and, for kernel-form controls, the analytic endpoint integral.
    Interior nodes of kernel-form controls use a piecewise-linear sample of
    the control and are for display only.
    """
    cache = _cache(spec, cache)
    bundle = check_bundle(spec, bundle)
    grid = bundle.grid
    bp = spec.breakpoints
    n = spec.dim_state
    x = np.asarray(x0, dtype=float).reshape(n)
    states = np.zeros((grid.size, n))
    states[0] = x
    rights = []
    kern = bundle.kernel
    for k, (i0, i1) in enumerate(_interval_slices(spec, grid), start=1):
        nodes = grid[i0:i1 + 1]
        offsets = nodes - bp[k - 1]
        Smats = cache.fn(1.0, offsets)
        seg = np.einsum("xab,b->xa", Smats, x)
        seg += convolve_trajectory(cache, nodes, bundle.u[i0:i1 + 1])
        if kern is not None and np.any(kern.coefs[k - 1]):
            samples = kern.on_interval(k, nodes[:-1])
            samples = np.vstack([samples, np.zeros((1, spec.dim_control))])
            approx = convolve_trajectory(cache, nodes, samples)
            approx[-1] = kernel_endpoint(cache, k, kern.coefs[k - 1])
            seg += approx
        states[i0 + 1:i1 + 1] = seg[1:]
        if k <= spec.n_impulses:
            ev = spec.impulses[k - 1]
            left = seg[-1]
            x = left + ev.D @ left + ev.E @ bundle.v[k - 1]
            rights.append(x)
    final = states[-1].copy()
    if spec.terminal_E is not None and bundle.v_terminal is not None:
        final = final + spec.terminal_E @ bundle.v_terminal
    idx = np.searchsorted(grid, spec.times)
    return Trajectory(grid, states, np.array(rights).reshape(-1, n), idx, final)


def propagate_commutative(spec: SystemSpec, x0, bundle: ControlBundle, times=None,
                          cache: Optional[OperatorCache] = None) -> Trajectory:
    """Mild solution by the closed form for impulse maps commuting with ``A``.

    For ``t`` in ``(t_k, t_{k+1}]``::

        x(t) = prod_{j<=k}(I + D_j) S(t) x0
             + sum_{i<=k} prod_{i<=j<=k}(I + D_j) int_{t_{i-1}}^{t_i} (t-s)^(alpha-1) P(t-s) B u ds
             + sum_{2<=i<=k} prod_{i<=j<=k}(I + D_j) S(t - t_{i-1}) E_{i-1} v_{i-1}
             + S(t - t_k) E_k v_k + int_{t_k}^t (t-s)^(alpha-1) P(t-s) B u ds

    This rearrangement moves ``S(t - t_k)`` through the earlier factors as if
    ``S(t - t_k) S(t_k - t_j) = S(t - t_j)``, which holds for ``alpha = 1``
    only.  Evaluated at ``times`` (default: interval midpoints and ends).
    Kernel-form controls are not supported here.
    """
    cache = _cache(spec, cache)
    bundle = check_bundle(spec, bundle)
    if bundle.kernel is not None:
        raise ContractError("the closed form takes sampled controls only")
    n = spec.dim_state
    A = spec.A
    for i, ev in enumerate(spec.impulses):
        if np.max(np.abs(ev.D @ A - A @ ev.D), initial=0.0) > 1e-10:
            raise ContractError(f"impulses[{i}].D does not commute with A")
    bp = spec.breakpoints
    grid = bundle.grid
    if times is None:
        times = np.concatenate([0.5 * (bp[:-1] + bp[1:]), bp[1:]])
    times = np.unique(np.concatenate([[0.0], np.asarray(times, dtype=float), spec.times]))
    x0 = np.asarray(x0, dtype=float).reshape(n)
    I = np.eye(n)
    u = bundle.u

    def conv(lo, hi, t):
        # int_lo^hi (t-s)^(alpha-1) P(t-s) B u(s) ds with the kernel anchored at t >= hi
        end = min(hi, t)
        sel = (grid >= lo) & (grid <= end)
        nodes, us = grid[sel], u[sel]
        if nodes[-1] != end:
            ue = np.array([np.interp(end, grid, u[:, c]) for c in range(u.shape[1])])
            nodes, us = np.append(nodes, end), np.vstack([us, ue])
        if t == end:
            return singular_convolve(cache, lo, t, nodes, us)
        return singular_convolve_window(cache, t, nodes, us)

    def value(t, k):
        # k: number of impulses strictly before t (t in (t_k, t_{k+1}])
        prod = lambda i: _prod([I + spec.impulses[j - 1].D for j in range(k, i - 1, -1)], n)
        out = prod(1) @ cache.S(t) @ x0
        for i in range(1, k + 1):
            out = out + prod(i) @ conv(bp[i - 1], bp[i], t)
        for i in range(2, k + 1):
            ev = spec.impulses[i - 2]
            out = out + prod(i) @ cache.S(t - bp[i - 1]) @ ev.E @ bundle.v[i - 2]
        if k >= 1:
            ev = spec.impulses[k - 1]
            out = out + cache.S(t - bp[k]) @ ev.E @ bundle.v[k - 1]
        out = out + conv(bp[k], t, t)
        return out

    states = np.zeros((times.size, n))
    rights = []
    for i, t in enumerate(times):
        if t == 0.0:
            states[i] = x0
            continue
        k = int(np.searchsorted(bp[1:-1], t, side="left"))  # impulses with t_j < t
        states[i] = value(t, k)
    for k in range(1, spec.n_impulses + 1):
        t = bp[k]
        i = int(np.searchsorted(times, t))
        ev = spec.impulses[k - 1]
        left = states[i]
        # right limit through the closed form of the next interval
        rights.append(left + ev.D @ left + ev.E @ bundle.v[k - 1])
    final = states[-1].copy()
    if spec.terminal_E is not None and bundle.v_terminal is not None:
        final = final + spec.terminal_E @ bundle.v_terminal
    return Trajectory(times, states, np.array(rights).reshape(-1, n),
                      np.searchsorted(times, spec.times), final)


def _prod(mats, n):
    out = np.eye(n)
    for M in mats:
        out = out @ M
    return out


def singular_convolve_window(cache: OperatorCache, t: float, nodes, u):
    """Convolution at ``t`` of a control supported on ``[nodes[0], nodes[-1]]``, ``nodes[-1] < t``.

    Masks are applied per cell (activity at the cell midpoint).
    """
    nodes = np.asarray(nodes, dtype=float)
    u = np.asarray(u, dtype=float)
    if nodes.size < 2:
        return np.zeros(cache.n)
    wb, wa = cache.cell_weights(t - nodes[1:], t - nodes[:-1])
    spec = cache.spec
    act = spec.active(0.5 * (nodes[:-1] + nodes[1:])).astype(float)
    zl = cache.to_basis((u[:-1] * act) @ spec.B.T)
    zr = cache.to_basis((u[1:] * act) @ spec.B.T)
    acc = cache.apply_weights(wb, zl) + cache.apply_weights(wa, zr)
    return cache.from_basis(acc[None, :])[0] if cache.spectral else acc


# }}}


# {{{ adjoint


def adjoint_coefficients(spec: SystemSpec, phi, cache: OperatorCache) -> np.ndarray:
    """``c_1, ..., c_{n+1}`` as rows."""
    n = spec.dim_state
    bp = spec.breakpoints
    nint = bp.size - 1
    coefs = np.zeros((nint, n))
    coefs[-1] = np.asarray(phi, dtype=float).reshape(n)
    for k in range(nint - 1, 0, -1):
        ev = spec.impulses[k - 1]
        c = cache.S(bp[k + 1] - bp[k]).T @ coefs[k]
        coefs[k - 1] = c + ev.D.T @ c
    return coefs


def adjoint_solve(spec: SystemSpec, phi, grid=None,
                  cache: Optional[OperatorCache] = None) -> AdjointTrajectory:
    """Mild solution of the adjoint problem with terminal datum ``phi``.

    Raises :class:`UnsupportedConfigurationError` for ``alpha <= 1/2``.
    """
    require_gramian_order(spec)
    cache = _cache(spec, cache)
    from fracimpulse.sysmodel import make_grid

    grid = make_grid(spec) if grid is None else np.asarray(grid, dtype=float)
    coefs = adjoint_coefficients(spec, phi, cache)
    bp = spec.breakpoints
    a = spec.alpha
    # right-limit convention at interior breakpoints: node t_k belongs to I_{k+1}
    k = np.clip(np.searchsorted(bp, grid, side="right"), 1, bp.size - 1)
    x = bp[k] - grid
    costates = np.full((grid.size, spec.dim_state), np.nan)
    for kk in np.unique(k):
        sel = (k == kk) & (x > 0)
        if np.any(sel):
            costates[sel] = (x[sel] ** (a - 1))[:, None] * costate_values(cache, x[sel], coefs[kk - 1])
    if a == 1.0:
        costates[-1] = coefs[-1]
    return AdjointTrajectory(grid, costates, coefs, np.asarray(phi, dtype=float), a)


def impulse_adjoint_terms(spec: SystemSpec, coefs: np.ndarray, cache: OperatorCache) -> np.ndarray:
    """``E_k^T S_alpha(t_{k+1} - t_k)^T c_{k+1}`` per impulse (rows)."""
    bp = spec.breakpoints
    out = np.zeros((spec.n_impulses, spec.dim_control))
    for k in range(1, spec.n_impulses + 1):
        ev = spec.impulses[k - 1]
        out[k - 1] = ev.E.T @ (cache.S(bp[k + 1] - bp[k]).T @ coefs[k])
    return out


# }}}


# {{{ Green identity


def green_terms(spec: SystemSpec, x0, bundle: ControlBundle, phi,
                cache: Optional[OperatorCache] = None):
    """``(lhs, rhs, scale)`` of the duality identity.

    ``lhs = <x(b), phi> - <x0, I^{1-alpha} p(0^+)>`` from forward propagation;
    ``rhs`` pairs the controls with the adjoint state by a separate route:
    after the substitution ``y = (t_k - s)^alpha`` the kernel power drops
    out and ``<B_c u, P_alpha^T c_k>`` is integrated with Simpson's rule
    on the image of every grid cell.  ``scale`` is the sum of absolute term sizes.
    """
    require_gramian_order(spec)
    cache = _cache(spec, cache)
    bundle = check_bundle(spec, bundle)
    phi = np.asarray(phi, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    lefts, _ = _endpoint_pass(spec, cache, x0, bundle)
    xb = lefts[-1]
    if spec.terminal_E is not None and bundle.v_terminal is not None:
        xb = xb + spec.terminal_E @ bundle.v_terminal
    coefs = adjoint_coefficients(spec, phi, cache)
    q0 = cache.S(spec.breakpoints[1]).T @ coefs[0]
    lhs_terms = [float(xb @ phi), -float(x0 @ q0)]

    bp = spec.breakpoints
    grid = bundle.grid
    rhs_terms = []
    for k, (i0, i1) in enumerate(_interval_slices(spec, grid), start=1):
        nodes = grid[i0:i1 + 1]
        us = bundle.u[i0:i1 + 1]
        if not np.any(us):
            continue
        # refine at window edges so that activity is constant on every cell
        edges = [e for c in range(spec.dim_control) for w in spec.windows(c) for e in w
                 if nodes[0] < e < nodes[-1] and e not in nodes]
        if edges:
            fine = np.union1d(nodes, edges)
            us = np.stack([np.interp(fine, nodes, us[:, c]) for c in range(us.shape[1])], axis=1)
            nodes = fine
        # Simpson's rule per cell in y = (t_k - s)^alpha, where P_alpha is smooth
        # and the kernel power drops out
        a = spec.alpha
        y = (bp[k] - nodes) ** a
        ymid = 0.5 * (y[:-1] + y[1:])
        smid = bp[k] - ymid ** (1.0 / a)
        frac = (smid - nodes[:-1]) / np.diff(nodes)
        umid = us[:-1] + frac[:, None] * (us[1:] - us[:-1])
        act = spec.active(0.5 * (nodes[:-1] + nodes[1:])).astype(float)
        q = costate_values(cache, bp[k] - nodes, coefs[k - 1]) @ spec.B
        qm = costate_values(cache, bp[k] - smid, coefs[k - 1]) @ spec.B
        gl = np.sum(us[:-1] * q[:-1] * act, axis=1)
        gr = np.sum(us[1:] * q[1:] * act, axis=1)
        gm = np.sum(umid * qm * act, axis=1)
        dy = y[:-1] - y[1:]
        rhs_terms.append(float(np.sum(dy * (gl + 4 * gm + gr))) / (6 * a))
    if bundle.kernel is not None:
        rhs_terms.append(kernel_kernel(cache, bundle.kernel.coefs, coefs))
    imp = impulse_adjoint_terms(spec, coefs, cache)
    rhs_terms.extend(float(bundle.v[k] @ imp[k]) for k in range(spec.n_impulses))
    if spec.terminal_E is not None and bundle.v_terminal is not None:
        rhs_terms.append(float(bundle.v_terminal @ (spec.terminal_E.T @ phi)))
    scale = sum(abs(v) for v in lhs_terms) + sum(abs(v) for v in rhs_terms)
    return sum(lhs_terms), sum(rhs_terms), scale


def green_residual(spec: SystemSpec, x0, bundle: ControlBundle, phi, relative: bool = False,
                   cache: Optional[OperatorCache] = None) -> float:
    """``|LHS - RHS|`` of the duality identity (relative to the term sizes if asked)."""
    lhs, rhs, scale = green_terms(spec, x0, bundle, phi, cache)
    res = abs(lhs - rhs)
    if relative:
        return res / scale if scale > 0 else 0.0
    return res


# }}}


# {{{ export


def trajectory_csv(traj: Trajectory) -> str:
    """CSV with columns ``time, side, x_1..x_n``; impulse instants get L and R rows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n = traj.states.shape[1]
    w.writerow(["time", "side"] + [f"x_{i + 1}" for i in range(n)])
    imp = {int(i): k for k, i in enumerate(traj.impulse_index)}
    fmt = lambda v: f"{v:.17g}"
    for i, t in enumerate(traj.grid):
        if i in imp:
            w.writerow([fmt(t), "L"] + [fmt(v) for v in traj.states[i]])
            w.writerow([fmt(t), "R"] + [fmt(v) for v in traj.right[imp[i]]])
        else:
            w.writerow([fmt(t), ""] + [fmt(v) for v in traj.states[i]])
    if not np.array_equal(traj.final, traj.states[-1]):
        w.writerow([fmt(traj.grid[-1]), "R"] + [fmt(v) for v in traj.final])
    return buf.getvalue()


# }}}
