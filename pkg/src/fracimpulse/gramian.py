"""Controllability operator, its adjoint and the four-block Gramian.

With ``Phi_i = S(b - t_n)(I + D_n) S(t_n - t_{n-1}) ... (I + D_{i+1}) S(t_{i+1} - t_i)``
(so ``Phi_n = S(b - t_n)``) and ``G_i = Phi_i (I + D_i)``, the endpoint map
from zero initial data is

.. math::

    M(u, v) = \\sum_{k=1}^{n+1} G_k \\int_{I_k} (t_k - s)^{\\alpha-1}
              P_\\alpha(t_k - s) B_c(s) u(s)\\, ds + \\sum_{k=1}^n \\Phi_k E_k v_k,

(``G_{n+1} = I``) and ``M M^*`` splits into

* ``Omega = W_{n+1}`` (distributed control after the last impulse),
* ``Psi = sum_{i<=n} G_i W_i G_i^T`` (distributed control before it),
* ``Omega~ = Phi_n E_n E_n^T Phi_n^T`` (last impulse control),
* ``Psi~ = sum_{i<n} Phi_i E_i E_i^T Phi_i^T`` (earlier impulse controls),

where ``W_k = int_{I_k} x^{2 alpha - 2} P(x) B_c B_c^T P(x)^T`` with
``x = t_k - s``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from fracimpulse.errors import ContractError
from fracimpulse.propagator import adjoint_coefficients, impulse_adjoint_terms
from fracimpulse.solops import (
    AdjointControl,
    OperatorCache,
    _window_groups,
    kernel_endpoint,
    power_quadrature,
    singular_convolve,
    spectral_rate,
)
from fracimpulse.sysmodel import (
    ControlBundle,
    SystemSpec,
    check_bundle,
    make_grid,
    require_gramian_order,
)

DEFAULT_RESOLUTION = 2**11
_NPTS = 16

BLOCK_NAMES = ("omega", "psi", "omega_tilde", "psi_tilde")


@dataclass(frozen=True)
class GramianBundle:
    """Gramian blocks; ``gamma`` is their sum (plus ``terminal`` when present)."""

    omega: np.ndarray
    psi: np.ndarray
    omega_tilde: np.ndarray
    psi_tilde: np.ndarray
    gamma: np.ndarray
    resolution: dict
    terminal: Optional[np.ndarray] = None
    interval_blocks: tuple = field(default=(), repr=False)

    def blocks(self) -> dict:
        out = {name: getattr(self, name) for name in BLOCK_NAMES}
        if self.terminal is not None:
            out["terminal"] = self.terminal
        out["gamma"] = self.gamma
        return out

    def operator_norm(self) -> float:
        """``||M||``, i.e. ``sqrt(lambda_max(Gamma))``."""
        return float(np.sqrt(max(0.0, np.linalg.eigvalsh(self.gamma)[-1])))

    def perturbed(self, factor: float) -> "GramianBundle":
        """Copy with every block scaled by ``factor`` (for sensitivity probes)."""
        sc = lambda M: None if M is None else factor * M
        return GramianBundle(sc(self.omega), sc(self.psi), sc(self.omega_tilde), sc(self.psi_tilde),
                             sc(self.gamma), dict(self.resolution), sc(self.terminal),
                             tuple(sc(W) for W in self.interval_blocks))


# {{{ propagators between impulses


def transfer_maps(spec: SystemSpec, cache: OperatorCache):
    """``(Phi, G)``: lists indexed ``k = 1..n+1`` (entry 0 unused)."""
    n = spec.dim_state
    bp = spec.breakpoints
    nimp = spec.n_impulses
    Phi = [None] * (nimp + 2)
    G = [None] * (nimp + 2)
    G[nimp + 1] = np.eye(n)
    Phi[nimp + 1] = np.eye(n)
    acc = np.eye(n)  # maps x(t_{k}^+) to x(b)
    for k in range(nimp, 0, -1):
        acc = acc @ cache.S(bp[k + 1] - bp[k])
        Phi[k] = acc.copy()
        ev = spec.impulses[k - 1]
        G[k] = acc @ (np.eye(n) + ev.D)
        acc = G[k]
    return Phi, G


# }}}


# {{{ M and M*


def apply_M(spec: SystemSpec, bundle: ControlBundle, cache: Optional[OperatorCache] = None) -> np.ndarray:
    """``M(u, v)``: terminal state from zero initial data, by the explicit block sum."""
    cache = OperatorCache(spec) if cache is None else cache
    bundle = check_bundle(spec, bundle)
    Phi, G = transfer_maps(spec, cache)
    bp = spec.breakpoints
    grid = bundle.grid
    out = np.zeros(spec.dim_state)
    for k in range(1, bp.size):
        sel = (grid >= bp[k - 1]) & (grid <= bp[k])
        conv = singular_convolve(cache, bp[k - 1], bp[k], grid[sel], bundle.u[sel])
        if bundle.kernel is not None:
            conv = conv + kernel_endpoint(cache, k, bundle.kernel.coefs[k - 1])
        out += G[k] @ conv
    for k, ev in enumerate(spec.impulses, start=1):
        out += Phi[k] @ (ev.E @ bundle.v[k - 1])
    if spec.terminal_E is not None and bundle.v_terminal is not None:
        out += spec.terminal_E @ bundle.v_terminal
    return out


def apply_M_star(spec: SystemSpec, phi, grid=None, cache: Optional[OperatorCache] = None) -> ControlBundle:
    """``M^* phi = (B_c^T p, {E_k^T S(t_{k+1} - t_k)^T c_{k+1}})``.

    The distributed part is returned in kernel form (zero samples plus an
    :class:`~fracimpulse.solops.AdjointControl`); ``bundle.evaluate`` gives
    its values away from the interval right ends.
    """
    require_gramian_order(spec)
    cache = OperatorCache(spec) if cache is None else cache
    grid = make_grid(spec) if grid is None else np.asarray(grid, dtype=float)
    phi = np.asarray(phi, dtype=float).reshape(spec.dim_state)
    coefs = adjoint_coefficients(spec, phi, cache)
    v = impulse_adjoint_terms(spec, coefs, cache)
    vt = None if spec.terminal_E is None else spec.terminal_E.T @ phi
    return ControlBundle(grid, np.zeros((grid.size, spec.dim_control)), v, vt,
                         AdjointControl(cache, coefs))


# }}}


# {{{ assembly


def interval_gramian(spec: SystemSpec, cache: OperatorCache, k: int,
                     resolution: int = DEFAULT_RESOLUTION) -> np.ndarray:
    """``W_k = int_{I_k} x^(2 alpha - 2) P(x) B_c B_c^T P(x)^T ds``, ``x = t_k - s``.

    Evaluated on the spectrum: ``W_k = V [sum_c Bhat_c Bhat_c^T o I^c] V^T``
    with ``I^c_ij = int x^(2 alpha - 2) E_i(x) E_j(x)`` over the active pieces
    of channel group ``c`` (``o`` is the elementwise product).
    """
    bp = spec.breakpoints
    tk = bp[k]
    n = spec.dim_state
    a = spec.alpha
    rate = spectral_rate(cache)
    min_panels = max(2, resolution // _NPTS)
    W = np.zeros((n, n), dtype=complex if (cache.spectral and np.iscomplexobj(cache.w)) else float)
    for pieces, chans in _window_groups(spec, bp[k - 1], tk).items():
        for lo, hi in pieces:
            x, w = power_quadrature(a, tk - hi, tk - lo, 2 * a - 2, rate, npts=_NPTS,
                                    min_panels=min_panels)
            if cache.spectral:
                E = cache.modal(a, x)  # (q, n)
                I = np.einsum("q,qi,qj->ij", w, E, E)
                Bh = cache.Bhat[:, chans]
                W += cache.V @ ((Bh @ Bh.T) * I) @ cache.V.T
            else:
                Pm = cache.fn(a, x)
                Bg = spec.B[:, chans]
                PB = Pm @ Bg
                W += np.einsum("q,qac,qbc->ab", w, PB, PB)
    W = W.real if np.iscomplexobj(W) else W
    return 0.5 * (W + W.T)


def assemble_gramian(spec: SystemSpec, resolution: int = DEFAULT_RESOLUTION,
                     cache: Optional[OperatorCache] = None) -> GramianBundle:
    """All Gramian blocks; ``resolution`` is the quadrature node budget per interval."""
    require_gramian_order(spec)
    if resolution < _NPTS:
        raise ContractError(f"resolution must be at least {_NPTS}")
    cache = OperatorCache(spec) if cache is None else cache
    n = spec.dim_state
    nimp = spec.n_impulses
    Phi, G = transfer_maps(spec, cache)
    Ws = tuple(interval_gramian(spec, cache, k, resolution) for k in range(1, nimp + 2))

    sym = lambda M: 0.5 * (M + M.T)
    omega = Ws[-1]
    psi = np.zeros((n, n))
    for i in range(1, nimp + 1):
        psi += G[i] @ Ws[i - 1] @ G[i].T
    omega_t = np.zeros((n, n))
    psi_t = np.zeros((n, n))
    if nimp:
        En = spec.impulses[-1].E
        omega_t = Phi[nimp] @ En @ En.T @ Phi[nimp].T
        for i in range(1, nimp):
            Ei = spec.impulses[i - 1].E
            psi_t += Phi[i] @ Ei @ Ei.T @ Phi[i].T
    terminal = None
    if spec.terminal_E is not None:
        terminal = sym(spec.terminal_E @ spec.terminal_E.T)
    omega, psi, omega_t, psi_t = sym(omega), sym(psi), sym(omega_t), sym(psi_t)
    gamma = omega + psi + omega_t + psi_t
    if terminal is not None:
        gamma = gamma + terminal
    res = {"nodes_per_interval": int(resolution), "rule": f"Gauss-Jacobi/Legendre {_NPTS}-point panels in x^alpha"}
    return GramianBundle(omega, psi, omega_t, psi_t, gamma, res, terminal, Ws)


# }}}


# {{{ export


def block_csv(M: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in np.atleast_2d(M):
        w.writerow([f"{v:.17g}" for v in row])
    return buf.getvalue()


def gramian_summary(gram: GramianBundle) -> dict:
    """Min/max eigenvalues per block."""
    out = {}
    for name, M in gram.blocks().items():
        ev = np.linalg.eigvalsh(M)
        out[name] = {"min_eig": float(ev[0]), "max_eig": float(ev[-1])}
    out["resolution"] = gram.resolution
    return out


def gramian_json(gram: GramianBundle) -> str:
    return json.dumps(gramian_summary(gram), indent=2, sort_keys=True)


# }}}
