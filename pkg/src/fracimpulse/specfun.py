"""Gamma, Mittag-Leffler and Wright functions in binary64.

The two-parameter Mittag-Leffler function

.. math::

    E_{\\alpha,\\beta}(z) = \\sum_{k\\ge 0} \\frac{z^k}{\\Gamma(\\alpha k + \\beta)}

is evaluated by one of four routes, chosen per point:

* the power series with compensated summation, whenever its rounding error
  estimate (a multiple of machine epsilon times the sum of absolute terms)
  is below ``tol``;
* the algebraic asymptotic expansion on the negative real axis for
  ``0 < alpha < 1`` and ``|z| >= switch_radius`` when its smallest term is
  below ``tol``;
* for ``0 < alpha < 1`` and negative ``z`` in between, a real-line integral
  representation with a smooth, exponentially decaying integrand;
* for ``alpha == 1`` and integer ``beta``, closed forms built from ``exp``.

Everything else raises :class:`~fracimpulse.errors.NumericalError`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from fracimpulse.errors import DomainError, NumericalError

EPS = np.finfo(float).eps

#: default absolute accuracy target
DEFAULT_TOL = 1e-12
#: |z| above which the asymptotic expansion is tried (negative axis, alpha < 1)
SWITCH_RADIUS = 15.0
#: upper end of the Wright evaluation range
THETA_MAX = 50.0
#: eigenvector condition number above which eigendecomposition is not trusted
SPECTRAL_GUARD = 1e8

# terms whose log-magnitude drops below this are negligible in binary64
_LOG_NEGLIGIBLE = math.log(1e-18)
_MAX_SERIES_TERMS = 4000


@dataclass(frozen=True)
class MLParams:
    """Parameters of :math:`E_{\\alpha,\\beta}`."""

    alpha: float
    beta: float = 1.0
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError(f"alpha must be positive, got {self.alpha}")
        if not self.tol > 0:
            raise DomainError(f"tol must be positive, got {self.tol}")


@dataclass(frozen=True)
class WrightParams:
    """Parameters of the Wright function :math:`\\Psi_\\alpha` (the M-Wright density)."""

    alpha: float
    tol: float = DEFAULT_TOL
    theta_max: float = THETA_MAX

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise DomainError(f"Wright function needs 0 < alpha < 1, got {self.alpha}")
        if not self.tol > 0:
            raise DomainError(f"tol must be positive, got {self.tol}")


# {{{ gamma


def gamma(x: float) -> float:
    """Gamma function; raises :class:`DomainError` at the poles 0, -1, -2, ..."""
    x = float(x)
    if x <= 0 and x == math.floor(x):
        raise DomainError(f"Gamma has a pole at {x}")
    return float(special.gamma(x))


# }}}


# {{{ Mittag-Leffler, scalar kernels


class _Neumaier:
    """Vectorised compensated summation."""

    def __init__(self, shape, dtype):
        self.s = np.zeros(shape, dtype=dtype)
        self.c = np.zeros(shape, dtype=dtype)

    def add(self, x):
        t = self.s + x
        big = np.abs(self.s) >= np.abs(x)
        self.c += np.where(big, (self.s - t) + x, (x - t) + self.s)
        self.s = t

    @property
    def value(self):
        return self.s + self.c


def _series(alpha: float, beta: float, z: np.ndarray):
    """Power series; returns (value, error estimate)."""
    z = np.asarray(z)
    cplx = np.iscomplexobj(z)
    dtype = complex if cplx else float
    acc = _Neumaier(z.shape, dtype)
    abs_sum = np.zeros(z.shape)

    absz = np.abs(z)
    with np.errstate(divide="ignore"):
        logabs = np.log(absz)
    phase = np.angle(z) if cplx else np.where(z < 0, np.pi, 0.0)

    log_max = -np.inf
    for k in range(_MAX_SERIES_TERMS):
        arg = alpha * k + beta
        sgn = special.gammasgn(arg)
        if sgn == 0 or (arg <= 0 and arg == math.floor(arg)):
            continue  # 1/Gamma vanishes at the poles
        lg = special.gammaln(arg)
        if k == 0:
            mag = np.full(z.shape, math.exp(-lg))
        else:
            with np.errstate(invalid="ignore"):
                logmag = np.where(absz > 0, k * logabs - lg, -np.inf)
            mag = np.exp(logmag)
        if cplx:
            term = sgn * mag * np.exp(1j * k * phase)
        else:
            term = sgn * mag * np.where(np.cos(k * phase) < 0, -1.0, 1.0)
        acc.add(term)
        abs_sum += mag

        # stop once past the peak and every term is negligible
        cur = float(np.max(mag)) if mag.size else 0.0
        logcur = math.log(cur) if cur > 0 else -np.inf
        log_max = max(log_max, logcur)
        if k > 2 and logcur < _LOG_NEGLIGIBLE + max(0.0, log_max) and logcur < log_max:
            break
        if not np.all(np.isfinite(abs_sum)):
            break
    else:
        raise NumericalError(
            f"Mittag-Leffler series did not converge in {_MAX_SERIES_TERMS} terms",
            partial=acc.value,
        )
    value = acc.value
    if not cplx:
        value = value.real
    err = 4 * EPS * abs_sum + EPS * np.abs(value)
    return value, err


def _asymptotic(alpha: float, beta: float, z: np.ndarray):
    """Algebraic expansion for 0 < alpha < 1 on the negative axis.

    Returns the optimally truncated sum and an error bound taken from the
    envelope Gamma(1 + alpha k - beta) / (pi |z|^k) of the first omitted term
    (1/Gamma oscillates in k, so the raw terms are not a reliable guide).
    """
    K = 200
    k = np.arange(1, K + 1)
    logz = np.log(np.abs(z))[:, None]
    env_arg = 1.0 + alpha * k - beta
    log_env = np.where(env_arg > 0, special.gammaln(np.maximum(env_arg, 1e-300)), 0.0)[None, :]
    log_env = log_env - k[None, :] * logz - math.log(math.pi)
    stop = np.argmin(log_env, axis=1)  # index of first omitted term
    mask = k[None, :] <= stop[:, None]
    sign = np.where(k % 2 == 0, 1.0, -1.0) if np.all(z < 0) else None
    if sign is not None:
        # |z|^-k in log form; the masked-out tail would otherwise overflow to 0 * inf
        mag = np.exp(np.where(mask, -k[None, :] * logz, 0.0))
        terms = -sign[None, :] * mag * special.rgamma(beta - alpha * k)[None, :]
    else:
        with np.errstate(over="ignore", invalid="ignore"):
            terms = -(z[:, None] ** -k[None, :].astype(float)) * special.rgamma(beta - alpha * k)[None, :]
    acc = np.sum(np.where(mask, terms, 0.0), axis=1)
    err = np.exp(log_env[np.arange(z.size), stop]) + 4 * EPS * np.abs(acc)
    return acc, err


def _integral_rep(alpha: float, beta: float, z: np.ndarray, tol: float):
    """Real-line integral representation for 0 < alpha < 1, beta < 1 + alpha, z < 0.

    E_{a,b}(z) = 1/(a pi) int_0^inf chi^{(1-b)/a} exp(-chi^{1/a})
                 [chi sin(pi(1-b)) - z sin(pi(1-b+a))] / (chi^2 - 2 chi z cos(a pi) + z^2) dchi
    """
    c = (1.0 - beta) / alpha
    k = 1.0 / (1.0 + c) if c < 0 else 1.0  # chi = v^k removes the endpoint singularity
    chi_max = 46.0**alpha  # exp(-chi^{1/alpha}) < 1e-20 beyond
    v_max = chi_max ** (1.0 / k)
    s1 = math.sin(math.pi * (1.0 - beta))
    s2 = math.sin(math.pi * (1.0 - beta + alpha))
    ca = math.cos(alpha * math.pi)
    pref = 1.0 / (alpha * math.pi)

    def f(v):
        chi = v**k
        w = k if c < 0 else chi**c
        num = chi * s1 - z * s2
        den = chi * chi - 2.0 * chi * z * ca + z * z
        return pref * w * math.exp(-(chi ** (1.0 / alpha))) * num / den

    val, err = integrate.quad_vec(
        f, 0.0, v_max, epsabs=tol / 10, epsrel=0.0, norm="max", limit=10000
    )
    if not err <= tol:
        raise NumericalError("Mittag-Leffler integral did not reach tolerance", partial=val)
    return val


def _contour_rep(alpha: float, beta: float, z: np.ndarray, tol: float):
    """Laplace inversion on the rays ``arg s = +-phi`` for 0 < alpha < 1, beta < 1 + alpha.

    E_{a,b}(z) = 1/(2 pi i) int_C e^s s^(a-b) / (s^a - z) ds + [residue (1/a) s*^(1-b) e^s*],

    where ``C`` runs in along ``arg s = -phi`` and out along ``arg s = phi``
    (pi/2 < phi < pi) and the residue term is present when the pole
    ``s* = z^(1/a)`` lies in ``|arg s| < phi``.  ``phi`` is chosen per point
    to stay clear of the pole.
    """
    z = np.asarray(z, dtype=complex)
    out = np.zeros(z.shape, dtype=complex)
    psi = np.abs(np.angle(z)) / alpha  # pole angle; no pole in the principal sheet if >= pi
    cands = np.linspace(0.55, 0.95, 9) * math.pi
    # stay at least 0.3 rad from the pole, otherwise prefer fast decay near 3 pi / 4
    score = np.minimum(np.abs(cands[None, :] - psi[:, None]), 0.3) - 1e-3 * np.abs(cands - 0.75 * math.pi)
    phis = cands[np.argmax(score, axis=1)]
    c = alpha - beta
    k = 1.0 / (1.0 + c) if c < 0 else 1.0  # r = v^k removes the r^(a-b) endpoint singularity
    for phi in np.unique(phis):
        sel = phis == phi
        zz = z[sel]
        R = 50.0 / abs(math.cos(phi))  # |e^s| < e^-50 beyond
        e_up, e_dn = np.exp(1j * phi), np.exp(-1j * phi)

        def f(v, zz=zz, e_up=e_up, e_dn=e_dn):
            r = v**k
            w = k if c < 0 else r**c  # r^(a-b) dr expressed in v
            su, sd = r * e_up, r * e_dn
            up = np.exp(su) * e_up ** (c + 1) / (su**alpha - zz)
            dn = np.exp(sd) * e_dn ** (c + 1) / (sd**alpha - zz)
            return w * (up - dn) / (2j * math.pi)

        val, err = integrate.quad_vec(f, 0.0, R ** (1.0 / k), epsabs=tol / 10, epsrel=0.0, norm="max",
                                      limit=10000)
        if not err <= tol:
            raise NumericalError("Mittag-Leffler contour integral did not reach tolerance", partial=val)
        inside = np.abs(np.angle(zz)) / alpha < phi
        if np.any(inside):
            sstar = zz[inside] ** (1.0 / alpha)
            val[inside] += sstar ** (1.0 - beta) * np.exp(sstar) / alpha
        out[sel] = val
    return out


def _closed_form_alpha1(beta: int, z: np.ndarray):
    """E_{1,m}(z) = (e^z - sum_{j<m-1} z^j/j!) / z^{m-1}."""
    m = int(beta)
    acc = np.exp(z)
    for j in range(m - 1):
        acc = acc - z**j / math.factorial(j)
    return acc / z ** (m - 1)


def ml_array(alpha: float, beta: float, z, tol: float = DEFAULT_TOL,
             switch_radius: float = SWITCH_RADIUS) -> np.ndarray:
    """Vectorised :math:`E_{\\alpha,\\beta}(z)` for real or complex ``z``.

    Raises
    ------
    NumericalError
        if some point cannot be evaluated to ``tol``; ``partial`` carries the
        array with ``nan`` at the failing points.
    """
    z = np.asarray(z)
    cplx = np.iscomplexobj(z)
    if cplx and np.all(z.imag == 0):
        z = z.real
        cplx = False
    z = z.astype(complex if cplx else float)
    out = np.full(z.shape, np.nan, dtype=z.dtype)
    todo = np.ones(z.shape, dtype=bool)

    # series where the cancellation is tolerable
    absz = np.abs(z)
    with np.errstate(over="ignore", divide="ignore"):
        growth = absz ** (1.0 / alpha)
    neg_like = (np.real(z) < 0) | (np.abs(np.imag(z)) > 0) if cplx else (z < 0)
    # exp(|z|^{1/alpha}) bounds the absolute series; cap attempts accordingly
    cap = np.where(neg_like, math.log(1e4 * tol / EPS) + 5.0, 700.0)
    try_series = growth <= cap
    if np.any(try_series):
        vals, err = _series(alpha, beta, z[try_series])
        ok = (err <= tol) & np.isfinite(vals)
        idx = np.flatnonzero(try_series)
        out.flat[idx[ok]] = vals[ok]
        todo.flat[idx[ok]] = False

    if np.any(todo) and alpha == 1.0 and float(beta).is_integer() and beta >= 1:
        zz = z[todo]
        out[todo] = _closed_form_alpha1(int(beta), zz)
        todo[todo] = False

    if np.any(todo) and 0 < alpha < 1 and not cplx:
        neg = todo & (z < 0)
        if np.any(neg):
            zz = z[neg]
            res = np.full(zz.shape, np.nan)
            pending = np.ones(zz.shape, dtype=bool)
            far = np.abs(zz) >= switch_radius
            if np.any(far):
                a_val, a_err = _asymptotic(alpha, beta, zz[far])
                good = a_err <= tol
                fi = np.flatnonzero(far)
                res[fi[good]] = a_val[good]
                pending[fi[good]] = False
            if np.any(pending):
                res[pending] = _ml_negative_integral(alpha, beta, zz[pending], tol)
            out[neg] = res
            todo[neg] = False

    if np.any(todo) and 0 < alpha < 1:
        # complex arguments (and large positive reals): Laplace inversion on two rays
        vals = _ml_negative_integral(alpha, beta, z[todo].astype(complex), tol, rep=_contour_rep)
        out[todo] = vals if cplx else vals.real
        todo[todo] = False

    if np.any(todo):
        raise NumericalError(
            f"E_{{{alpha},{beta}}} cannot be evaluated to tol={tol} at "
            f"{np.count_nonzero(todo)} point(s), e.g. z={z[todo].flat[0]}",
            partial=out,
        )
    return out


def _ml_negative_integral(alpha, beta, z, tol, rep=None):
    """Integral route with the recurrence E_{a,b} = (E_{a,b-a} - 1/Gamma(b-a)) / z."""
    rep = _integral_rep if rep is None else rep
    shifts = []
    b = beta
    while b >= 1.0 + alpha:
        b -= alpha
        shifts.append(b)
    val = rep(alpha, b, z, tol * min(1.0, float(np.min(np.abs(z))) ** len(shifts)))
    for b_prev in shifts[::-1]:
        # b_prev is the lower parameter; move up by alpha
        val = (val - special.rgamma(b_prev)) / z
    return val


def mittag_leffler(p: MLParams, z: float) -> float:
    """Scalar :math:`E_{\\alpha,\\beta}(z)` with absolute error at most ``p.tol``."""
    return float(ml_array(p.alpha, p.beta, np.array([float(z)]), p.tol)[0])


# }}}


# {{{ matrix functions


def ml_from_eig(alpha: float, beta: float, w, V, Vinv, scale: float = 1.0,
                tol: float = DEFAULT_TOL) -> np.ndarray:
    """E_{alpha,beta}(M * scale) from an eigendecomposition M = V diag(w) V^{-1}."""
    vals = ml_array(alpha, beta, np.asarray(w) * scale, tol)
    out = (V * vals) @ Vinv
    if np.iscomplexobj(out) and np.all(np.isreal(V)) and np.all(np.isreal(w)):
        out = out.real
    return out


def eig_guarded(M: np.ndarray, guard: float = SPECTRAL_GUARD):
    """Eigendecomposition with a condition-number check; returns (w, V, Vinv) or None."""
    M = np.asarray(M, dtype=float)
    if np.count_nonzero(M - np.diag(np.diag(M))) == 0:
        n = M.shape[0]
        return np.diag(M).copy(), np.eye(n), np.eye(n)
    w, V = np.linalg.eig(M)
    if np.linalg.cond(V) > guard:
        return None
    if np.all(np.abs(w.imag) == 0):
        w, V = w.real, V.real
    return w, V, np.linalg.inv(V)


def mittag_leffler_matrix(p: MLParams, M, scale: float = 1.0) -> np.ndarray:
    """Matrix Mittag-Leffler function :math:`E_{\\alpha,\\beta}(M \\cdot scale)`.

    Uses the eigendecomposition when the eigenvector matrix is well conditioned
    and a truncated power series when it is not but ``||M scale|| <= 1``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if scale < 0:
        raise DomainError("scale must be non-negative")
    n = M.shape[0]
    if scale == 0 or not np.any(M):
        return np.eye(n) * special.rgamma(p.beta)
    dec = eig_guarded(M)
    if dec is not None:
        out = ml_from_eig(p.alpha, p.beta, *dec, scale=scale, tol=p.tol)
        return np.real_if_close(out, tol=1e6).astype(float) if np.iscomplexobj(out) else out
    X = M * scale
    if np.linalg.norm(X, 2) > 1.0:
        raise NumericalError("matrix is ill-conditioned for eigendecomposition and too large "
                             "for the power series")
    acc = np.zeros_like(X)
    power = np.eye(n)
    for k in range(400):
        term = power * special.rgamma(p.alpha * k + p.beta)
        acc = acc + term
        if k > 3 and np.max(np.abs(term)) < p.tol * 1e-3:
            return acc
        power = power @ X
    raise NumericalError("matrix power series did not converge", partial=acc)


# }}}


# {{{ Wright function


def _wright_terms(alpha: float, theta: float):
    """Sum of the series in the reflected form; returns (value, rounding error bound).

    Term ``n >= 1`` is ``(-theta)^(n-1) Gamma(1 + alpha n) sin(n pi alpha) / (pi alpha n!)``,
    which equals term ``n - 1`` of the defining series after the reflection
    formula is applied to ``1 / Gamma(1 - alpha n)``.  Truncation is decided on
    the envelope without the sine factor, since the sine can be arbitrarily
    small for individual terms.
    """
    a = alpha
    acc = _Neumaier((), float)
    abs_sum = 0.0
    log_theta = math.log(theta) if theta > 0 else -np.inf
    for n in range(1, _MAX_SERIES_TERMS):
        logmag = special.gammaln(1 + a * n) - special.gammaln(n + 1.0) - math.log(math.pi * a)
        if n > 1:
            if theta == 0:
                break
            logmag += (n - 1) * log_theta
        if logmag > 700:
            return math.nan, math.inf
        envelope = math.exp(logmag)
        if n > 5 and envelope < 1e-18 * max(1.0, abs_sum) and (n - 1) * a > a * theta:
            break
        sn = math.sin(math.pi * math.fmod(n * a, 2.0))
        term = (-1.0) ** (n - 1) * envelope * sn
        acc.add(term)
        abs_sum += abs(term)
    value = float(acc.value)
    return value, 4 * EPS * abs_sum + EPS * abs(value)


def _wright_series(alpha: float, theta: float):
    return _wright_terms(alpha, theta)


def _wright_integral(alpha: float, theta: float, tol: float) -> float:
    """Zolotarev-type integral of the M-Wright density (positive integrand)."""
    a = alpha
    q = 1.0 / (1.0 - a)
    x = theta**q

    def A(phi):
        return (math.sin(a * phi) / math.sin(phi)) ** q * math.sin((1 - a) * phi) / math.sin(a * phi)

    def f(phi):
        av = A(phi)
        return av * math.exp(-x * av)

    eps_phi = 1e-12
    val, err = integrate.quad(f, eps_phi, math.pi - eps_phi, epsabs=tol / 10, epsrel=1e-13, limit=400)
    return theta ** (a * q) / ((1 - a) * math.pi) * val


def wright(p: WrightParams, theta: float) -> float:
    """:math:`\\Psi_\\alpha(\\theta)` for ``0 <= theta <= p.theta_max``.

    The alternating series is used where its rounding error stays under
    ``p.tol``; past that point the value comes from a positive integral
    representation.
    """
    theta = float(theta)
    if theta < 0:
        raise DomainError("theta must be non-negative")
    if theta > p.theta_max:
        raise NumericalError(f"theta={theta} outside the evaluation range [0, {p.theta_max}]")
    if theta == 0.0:
        return float(special.rgamma(1.0 - p.alpha))
    value, err = _wright_series(p.alpha, theta)
    if err <= p.tol and math.isfinite(value):
        return value
    return _wright_integral(p.alpha, theta, p.tol)


def wright_remark_series(p: WrightParams, theta: float) -> float:
    """Reflected series form of the Wright function, without the integral fallback.

    Term ``n`` is ``(-theta)^(n-1) Gamma(1 + alpha n) sin(n pi alpha) / (pi alpha n!)``.
    It is a reindexing of the defining series, so it has the same
    cancellation for large ``theta``; it is kept for cross-checks.
    """
    return _wright_terms(p.alpha, float(theta))[0]


# }}}
