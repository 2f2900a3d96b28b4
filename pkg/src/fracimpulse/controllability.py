"""Regularized steering controls and controllability certificates.

For ``eps > 0`` the functional

.. math::

    J_\\varepsilon(\\varphi) = \\tfrac12 \\|M^*\\varphi\\|_1^2 + \\tfrac{\\varepsilon}{2}\\|\\varphi\\|^2
        - \\langle \\varphi, h - x_{\\mathrm{free}}(b) \\rangle

is minimized by ``phi_eps = (eps I + Gamma)^{-1}(h - x_free(b))``; the
control ``M^* phi_eps`` then reaches ``x(b) = h - eps phi_eps``.

All verdicts concern the truncated finite-dimensional model only.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import linalg

from fracimpulse.errors import ContractError, NumericalError
from fracimpulse.gramian import GramianBundle, apply_M_star, transfer_maps
from fracimpulse.propagator import propagate
from fracimpulse.solops import OperatorCache
from fracimpulse.sysmodel import ControlBundle, SystemSpec, inner_product_omega, require_gramian_order

DEFAULT_LADDER = tuple(10.0**-k for k in range(1, 9))
KERNEL_TOL = 1e-10
RANK_TOL = 1e-10


@dataclass(frozen=True)
class SynthesisResult:
    epsilon: float
    phi_eps: np.ndarray
    bundle: ControlBundle
    achieved_final: np.ndarray
    terminal_residual: float
    target: np.ndarray
    free_final: np.ndarray = field(default=None)


@dataclass(frozen=True)
class SweepReport:
    epsilons: np.ndarray
    norms: np.ndarray
    residuals: np.ndarray
    controllable: bool
    kernel_projection: float
    target_norm: float

    @property
    def tail_norm(self) -> float:
        return float(self.norms[-1])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epsilon", "norm", "residual"])
        for e, nrm, r in zip(self.epsilons, self.norms, self.residuals):
            w.writerow([f"{e:.17g}", f"{nrm:.17g}", f"{r:.17g}"])
        return buf.getvalue()


class KernelTest(NamedTuple):
    min_eig: float
    min_singular: float
    strictly_positive: bool


# {{{ synthesis


def free_final(spec: SystemSpec, x0, cache: Optional[OperatorCache] = None) -> np.ndarray:
    """Uncontrolled final state ``S(b - t_n) prod (I + D_j) S(t_j - t_{j-1}) x0``."""
    cache = OperatorCache(spec) if cache is None else cache
    x0 = np.asarray(x0, dtype=float).reshape(spec.dim_state)
    if spec.n_impulses == 0:
        return cache.S(spec.horizon) @ x0
    _, G = transfer_maps(spec, cache)
    return G[1] @ (cache.S(spec.breakpoints[1]) @ x0)


def regularized_solve(gamma: np.ndarray, rhs: np.ndarray, epsilon: float) -> np.ndarray:
    """``(eps I + Gamma)^{-1} rhs`` by Cholesky, with a symmetric eigensolve as fallback."""
    if not epsilon > 0:
        raise ContractError(f"epsilon must be positive, got {epsilon}")
    K = gamma + epsilon * np.eye(gamma.shape[0])
    try:
        return linalg.cho_solve(linalg.cho_factor(K), rhs)
    except linalg.LinAlgError:
        w, Q = np.linalg.eigh(K)
        if w[0] <= 0.5 * epsilon:
            raise NumericalError(
                f"eps I + Gamma is numerically indefinite (smallest eigenvalue {w[0]:.3e})")
        return Q @ ((Q.T @ rhs) / w)


def synthesize(spec: SystemSpec, gramian: GramianBundle, x0, h, epsilon: float, grid=None,
               cache: Optional[OperatorCache] = None) -> SynthesisResult:
    """Regularized steering control and its independently propagated endpoint."""
    require_gramian_order(spec)
    cache = OperatorCache(spec) if cache is None else cache
    h = np.asarray(h, dtype=float).reshape(spec.dim_state)
    x0 = np.asarray(x0, dtype=float).reshape(spec.dim_state)
    free = free_final(spec, x0, cache)
    phi = regularized_solve(gramian.gamma, h - free, epsilon)
    bundle = apply_M_star(spec, phi, grid, cache)
    achieved = propagate(spec, x0, bundle, cache).final
    resid = float(np.linalg.norm(achieved - h + epsilon * phi))
    return SynthesisResult(float(epsilon), phi, bundle, achieved, resid, h, free)


def verify_terminal_identity(result: SynthesisResult) -> float:
    """``||x_eps(b) - h + eps phi_eps|| / max(eps ||phi_eps||, ||h||)``."""
    scale = max(result.epsilon * np.linalg.norm(result.phi_eps), np.linalg.norm(result.target))
    if scale == 0:
        return float(np.linalg.norm(result.achieved_final))
    return float(np.linalg.norm(result.achieved_final - result.target + result.epsilon * result.phi_eps) / scale)


def objective_value(spec: SystemSpec, gramian: GramianBundle, x0, h, phi, epsilon: float,
                    cache: Optional[OperatorCache] = None, direct: bool = False) -> float:
    """``J_eps(phi)``; ``||M^* phi||^2`` from the Gramian, or from ``M^*`` itself if ``direct``."""
    phi = np.asarray(phi, dtype=float)
    free = free_final(spec, x0, cache)
    if direct:
        ms = apply_M_star(spec, phi, cache=cache)
        quad = inner_product_omega(ms, ms, spec)
    else:
        quad = float(phi @ gramian.gamma @ phi)
    return 0.5 * quad + 0.5 * epsilon * float(phi @ phi) - float(phi @ (np.asarray(h, dtype=float) - free))


def stationarity_residual(gramian: GramianBundle, phi, rhs, epsilon: float) -> float:
    """``||Gamma phi + eps phi - rhs||``."""
    return float(np.linalg.norm(gramian.gamma @ phi + epsilon * phi - rhs))


# }}}


# {{{ certificates


def kernel_test(gramian: GramianBundle, tol: float = KERNEL_TOL) -> KernelTest:
    """Smallest eigenvalue of ``Gamma`` and the induced bound on ``min ||M^* phi||``.

    Strictly positive when ``min_eig > tol * trace(Gamma) / n``.
    """
    G = gramian.gamma
    w = np.linalg.eigvalsh(G)
    n = G.shape[0]
    thr = tol * max(np.trace(G), 0.0) / n
    return KernelTest(float(w[0]), float(np.sqrt(max(w[0], 0.0))), bool(w[0] > thr and np.trace(G) > 0))


def kernel_projection(gamma: np.ndarray, h, tol: float = KERNEL_TOL) -> float:
    """``||P_ker h||`` with the numerical kernel ``{lambda <= tol trace / n}``."""
    w, Q = np.linalg.eigh(gamma)
    thr = tol * max(np.trace(gamma), 0.0) / gamma.shape[0]
    ker = Q[:, w <= thr]
    return float(np.linalg.norm(ker.T @ np.asarray(h, dtype=float)))


def epsilon_sweep(spec: Optional[SystemSpec], gramian: GramianBundle, h,
                  epsilons: Sequence[float] = DEFAULT_LADDER) -> SweepReport:
    """``||eps (eps I + Gamma)^{-1} h||`` along a decreasing ladder of ``eps``.

    Verdict: controllable-indicated when the last norm is at most
    ``1e-3 ||h||``; otherwise the limit is estimated by the kernel projection.
    """
    eps = np.asarray(list(epsilons), dtype=float)
    if eps.size == 0 or np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
        raise ContractError("epsilons must be positive and strictly decreasing")
    h = np.asarray(h, dtype=float)
    norms, resid = [], []
    for e in eps:
        y = regularized_solve(gramian.gamma, h, e)
        norms.append(float(np.linalg.norm(e * y)))
        resid.append(float(np.linalg.norm(gramian.gamma @ y + e * y - h)))
    hn = float(np.linalg.norm(h))
    ok = bool(norms[-1] <= 1e-3 * hn) if hn > 0 else True
    return SweepReport(eps, np.array(norms), np.array(resid), ok,
                       kernel_projection(gramian.gamma, h), hn)


def rank_condition(spec: SystemSpec, tol: float = RANK_TOL):
    """Rank of ``[B, AB, ..., A^(n-1) B]`` by pivoted QR; returns ``(rank, controllable)``."""
    A, B = spec.A, spec.B
    n = spec.dim_state
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    K = np.hstack(blocks)
    if not np.any(K):
        return 0, False
    R = linalg.qr(K, mode="r", pivoting=True)[0]
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > tol * d[0]))
    return rank, rank == n


# }}}


# {{{ reports


def verdict_document(gramian: GramianBundle, kt: KernelTest, rank, sweep: SweepReport) -> dict:
    positive = kt.strictly_positive and sweep.controllable
    return {
        "verdict": "controllable-indicated" if positive else "not-indicated",
        "scope": "truncated finite-dimensional model",
        "min_eig": kt.min_eig,
        "rank": int(rank[0]),
        "rank_full": bool(rank[1]),
        "sweep_tail_norm": sweep.tail_norm,
        "kernel_projection": sweep.kernel_projection,
        "resolutions": gramian.resolution,
    }


def synthesis_csv(results: Sequence[SynthesisResult]) -> str:
    """Columns ``epsilon, norm, residual``: ``eps ||phi||`` and the relative terminal residual."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epsilon", "norm", "residual"])
    for r in results:
        w.writerow([f"{r.epsilon:.17g}", f"{r.epsilon * np.linalg.norm(r.phi_eps):.17g}",
                    f"{verify_terminal_identity(r):.17g}"])
    return buf.getvalue()


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True)


# }}}
