"""System specification, control bundles and their serialization.

A :class:`SystemSpec` describes

.. math::

    {}^C D^\\alpha_t x = A x + B_c(t) u(t), \\quad t \\in (0, b] \\setminus \\{t_k\\},
    \\qquad x(t_k^+) = (I + D_k) x(t_k) + E_k v_k,

where ``B_c(t) = B diag(active(t))`` applies an optional per-channel time mask.
An optional ``terminal_E`` adds ``E_T v_T`` to the state at the horizon
without propagation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import yaml

from fracimpulse.errors import ContractError, ValidationError

Window = tuple[float, float]

DEFAULT_CELLS = 2**10  # cells per inter-impulse interval


@dataclass(frozen=True)
class FractionalOrder:
    """Order ``0 < alpha <= 1`` of the Caputo derivative."""

    alpha: float

    def __post_init__(self):
        a = self.alpha
        if not (isinstance(a, (int, float, np.floating)) and math.isfinite(a)):
            raise ValidationError("alpha", f"must be a finite real, got {a!r}")
        if not 0 < a <= 1:
            raise ValidationError("alpha", f"must lie in (0, 1], got {a}")
        object.__setattr__(self, "alpha", float(a))

    @property
    def gramian_ready(self) -> bool:
        """Whether ``(b - s)^(2 alpha - 2)`` is integrable, i.e. ``alpha > 1/2``."""
        return self.alpha > 0.5


@dataclass(frozen=True, eq=False)
class ImpulseEvent:
    time: float
    D: np.ndarray
    E: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, ImpulseEvent):
            return NotImplemented
        return (self.time == other.time and np.array_equal(self.D, other.D)
                and np.array_equal(self.E, other.E))


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """Finite-dimensional impulsive fractional system.

    Parameters
    ----------
    A, B
        generator (n x n) and control map (n x m).
    impulses
        impulse events, strictly increasing in time and interior to ``(0, b)``.
    horizon
        final time ``b``.
    order
        fractional order.
    semigroup_bound
        user-declared constant ``M >= 1`` bounding the solution operators; only
        used for diagnostics.
    control_mask
        ``None`` (all channels always active) or one entry per channel, each
        ``None`` (always active) or a tuple of ``(lo, hi)`` windows in ``[0, b]``.
    terminal_E
        optional n x m map of a control jump applied at ``b``.
    """

    A: np.ndarray
    B: np.ndarray
    impulses: tuple = ()
    horizon: float = 1.0
    order: FractionalOrder = field(default_factory=lambda: FractionalOrder(1.0))
    semigroup_bound: float = 1.0
    control_mask: Optional[tuple] = None
    terminal_E: Optional[np.ndarray] = None

    @property
    def dim_state(self) -> int:
        return self.A.shape[0]

    @property
    def dim_control(self) -> int:
        return self.B.shape[1]

    @property
    def alpha(self) -> float:
        return self.order.alpha

    @property
    def n_impulses(self) -> int:
        return len(self.impulses)

    @property
    def times(self) -> np.ndarray:
        """Impulse instants ``t_1 < ... < t_n``."""
        return np.array([ev.time for ev in self.impulses], dtype=float)

    @property
    def breakpoints(self) -> np.ndarray:
        """``[0, t_1, ..., t_n, b]``; interval ``k`` (1-based) is ``(bp[k-1], bp[k]]``."""
        return np.concatenate([[0.0], self.times, [self.horizon]])

    def windows(self, channel: int) -> list[Window]:
        """Activation windows of a control channel (the full horizon if unmasked)."""
        if self.control_mask is None or self.control_mask[channel] is None:
            return [(0.0, self.horizon)]
        return [tuple(w) for w in self.control_mask[channel]]

    def active(self, t) -> np.ndarray:
        """Activity flags, shape ``(len(t), m)``, for closed windows."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros((t.size, self.dim_control), dtype=bool)
        for c in range(self.dim_control):
            for lo, hi in self.windows(c):
                out[:, c] |= (t >= lo) & (t <= hi)
        return out

    @property
    def masked(self) -> bool:
        return self.control_mask is not None and any(w is not None for w in self.control_mask)

    def __eq__(self, other):
        if not isinstance(other, SystemSpec):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is b
            return np.array_equal(a, b)

        return (same(self.A, other.A) and same(self.B, other.B)
                and self.impulses == other.impulses and self.horizon == other.horizon
                and self.order == other.order and self.semigroup_bound == other.semigroup_bound
                and _norm_mask(self.control_mask) == _norm_mask(other.control_mask)
                and same(self.terminal_E, other.terminal_E))

    __hash__ = None


def _norm_mask(mask):
    if mask is None:
        return None
    return tuple(None if w is None else tuple(tuple(map(float, x)) for x in w) for w in mask)


# {{{ validation


def _matrix(name, value, shape=None) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError(name, f"not a numeric matrix ({exc})") from None
    if arr.ndim == 1 and shape is not None and shape[1] == 1 and arr.size == shape[0]:
        arr = arr.reshape(shape)
    if arr.ndim == 0 and shape == (1, 1):
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise ValidationError(name, f"must be two-dimensional, got shape {arr.shape}")
    if shape is not None and arr.shape != shape:
        raise ValidationError(name, f"expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(name, "contains non-finite entries")
    arr.setflags(write=False)
    return arr


def validate(spec: SystemSpec) -> SystemSpec:
    """Check every invariant of ``spec`` and return a normalized copy.

    Impulses are sorted by time; matrices become read-only float arrays.

    Raises
    ------
    ValidationError
        naming the offending field.
    """
    order = spec.order
    if not isinstance(order, FractionalOrder):
        order = FractionalOrder(order)
    A = _matrix("A", spec.A)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValidationError("A", f"must be square, got shape {A.shape}")
    B = np.array(spec.B, dtype=float)
    if B.ndim == 1 and B.size == n:
        B = B.reshape(n, 1)
    B = _matrix("B", B)
    if B.shape[0] != n:
        raise ValidationError("B", f"must have {n} rows, got {B.shape[0]}")
    m = B.shape[1]
    if m < 1:
        raise ValidationError("B", "needs at least one control channel")

    b = spec.horizon
    if not (isinstance(b, (int, float, np.floating)) and math.isfinite(b) and b > 0):
        raise ValidationError("horizon", f"must be a positive real, got {b!r}")
    b = float(b)

    if not (math.isfinite(spec.semigroup_bound) and spec.semigroup_bound >= 1):
        raise ValidationError("semigroup_bound", f"must be >= 1, got {spec.semigroup_bound}")

    events = []
    for i, ev in enumerate(spec.impulses):
        t = float(ev.time)
        if not (math.isfinite(t) and 0 < t < b):
            raise ValidationError(f"impulses[{i}].time", f"must lie strictly inside (0, {b}), got {t}")
        D = _matrix(f"impulses[{i}].D", ev.D, (n, n))
        E = _matrix(f"impulses[{i}].E", ev.E, (n, m))
        events.append(ImpulseEvent(t, D, E))
    events.sort(key=lambda ev: ev.time)
    for i in range(1, len(events)):
        if events[i].time <= events[i - 1].time:
            raise ValidationError(f"impulses[{i}].time", "impulse times must be distinct")

    mask = spec.control_mask
    if mask is not None:
        if len(mask) != m:
            raise ValidationError("control_mask", f"needs one entry per channel ({m}), got {len(mask)}")
        norm = []
        for c, wins in enumerate(mask):
            if wins is None:
                norm.append(None)
                continue
            cleaned = []
            for w in wins:
                if len(w) != 2:
                    raise ValidationError(f"control_mask[{c}]", f"window {w!r} is not a pair")
                lo, hi = float(w[0]), float(w[1])
                if not (0 <= lo <= hi <= b):
                    raise ValidationError(f"control_mask[{c}]", f"window ({lo}, {hi}) not inside [0, {b}]")
                cleaned.append((lo, hi))
            norm.append(tuple(cleaned))
        mask = tuple(norm)

    TE = None if spec.terminal_E is None else _matrix("terminal_E", spec.terminal_E, (n, m))

    return SystemSpec(A=A, B=B, impulses=tuple(events), horizon=b, order=order,
                      semigroup_bound=float(spec.semigroup_bound), control_mask=mask, terminal_E=TE)


def require_gramian_order(spec: SystemSpec):
    from fracimpulse.errors import UnsupportedConfigurationError

    if not spec.order.gramian_ready:
        raise UnsupportedConfigurationError(
            f"alpha = {spec.alpha} <= 1/2: the adjoint kernel (b - s)^(alpha - 1) is not "
            "square integrable, so M*, the Gramian and the synthesis are undefined")


# }}}


# {{{ grids and control bundles


def make_grid(spec: SystemSpec, cells: int = DEFAULT_CELLS) -> np.ndarray:
    """Uniform grid with ``cells`` cells on every inter-impulse interval."""
    if cells < 1:
        raise ContractError("cells must be positive")
    bp = spec.breakpoints
    parts = [np.linspace(bp[k], bp[k + 1], cells + 1)[:-1] for k in range(len(bp) - 1)]
    parts.append([bp[-1]])
    grid = np.concatenate(parts)
    # make sure impulse instants are represented exactly
    for k in range(1, len(bp) - 1):
        grid[k * cells] = bp[k]
    return grid


@dataclass(frozen=True, eq=False)
class ControlBundle:
    """Control pair ``(u, {v_k})``.

    The distributed part is ``u(t) = sampled(t) + kernel(t)``: ``u`` holds
    samples (one m-vector per grid node) interpolated linearly between nodes,
    and ``kernel`` is an optional analytically represented part (see
    :class:`fracimpulse.solops.AdjointControl`), used for controls of the form
    ``B_c(s)^T p(s)`` whose weak singularity a piecewise-linear sample cannot
    capture.  ``v_terminal`` is the control of the optional terminal jump.
    """

    grid: np.ndarray
    u: np.ndarray
    v: np.ndarray
    v_terminal: Optional[np.ndarray] = None
    kernel: Optional[object] = None

    @property
    def dim_control(self) -> int:
        return self.u.shape[1]

    def evaluate(self, t) -> np.ndarray:
        """Values of the distributed control at times ``t``, shape ``(len(t), m)``.

        The kernel part follows the half-open convention ``(t_{k-1}, t_k]``
        and is infinite at interval right ends; callers that need values there
        should use the analytic representation instead.
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.stack([np.interp(t, self.grid, self.u[:, c]) for c in range(self.u.shape[1])], axis=1)
        if self.kernel is not None:
            out = out + self.kernel.evaluate(t)
        return out

    def scaled(self, factor: float) -> "ControlBundle":
        return ControlBundle(
            self.grid, factor * self.u, factor * self.v,
            None if self.v_terminal is None else factor * self.v_terminal,
            None if self.kernel is None else self.kernel.scaled(factor))


def zero_bundle(spec: SystemSpec, grid: Optional[np.ndarray] = None) -> ControlBundle:
    grid = make_grid(spec) if grid is None else np.asarray(grid, dtype=float)
    m = spec.dim_control
    vt = None if spec.terminal_E is None else np.zeros(m)
    return ControlBundle(grid, np.zeros((grid.size, m)), np.zeros((spec.n_impulses, m)), vt)


def check_bundle(spec: SystemSpec, bundle: ControlBundle) -> ControlBundle:
    """Check that ``bundle`` fits ``spec``; raises :class:`ContractError`."""
    g = np.asarray(bundle.grid, dtype=float)
    if g.ndim != 1 or g.size < 2 or np.any(np.diff(g) <= 0):
        raise ContractError("grid must be strictly increasing with at least two nodes")
    if g[0] != 0.0 or g[-1] != spec.horizon:
        raise ContractError(f"grid must cover [0, {spec.horizon}] exactly")
    if not np.all(np.isin(spec.times, g)):
        raise ContractError("grid must contain every impulse time")
    u = np.asarray(bundle.u, dtype=float)
    if u.shape != (g.size, spec.dim_control):
        raise ContractError(f"u must have shape {(g.size, spec.dim_control)}, got {u.shape}")
    v = np.asarray(bundle.v, dtype=float).reshape(-1, spec.dim_control) if spec.n_impulses else \
        np.zeros((0, spec.dim_control))
    if v.shape[0] != spec.n_impulses:
        raise ContractError(f"expected {spec.n_impulses} impulse controls, got {v.shape[0]}")
    vt = bundle.v_terminal
    if vt is not None:
        vt = np.asarray(vt, dtype=float).reshape(spec.dim_control)
    return ControlBundle(g, u, v, vt, bundle.kernel)


def cell_products(grid: np.ndarray, f: np.ndarray, g: np.ndarray) -> float:
    """Exact integral of the product of two continuous piecewise-linear functions."""
    h = np.diff(grid)
    f0, f1 = f[:-1], f[1:]
    g0, g1 = g[:-1], g[1:]
    cell = (2 * f0 * g0 + f0 * g1 + f1 * g0 + 2 * f1 * g1) / 6.0
    return float(np.sum(h[:, None] * cell) if cell.ndim > 1 else np.sum(h * cell))


def inner_product_omega(a: ControlBundle, b: ControlBundle, spec: Optional[SystemSpec] = None) -> float:
    """``<a, b>_1 = int <u_a, u_b> dt + sum_k <v_ak, v_bk>`` (+ terminal controls).

    Piecewise-linear samples are multiplied exactly cell by cell.  Pairings
    that involve kernel parts need ``spec`` (they are evaluated by
    :mod:`fracimpulse.solops`).
    """
    if a.grid.shape != b.grid.shape or not np.array_equal(a.grid, b.grid):
        raise ContractError("bundles live on different grids")
    va, vb = np.asarray(a.v), np.asarray(b.v)
    if va.shape != vb.shape:
        raise ContractError("bundles have different impulse counts")
    total = cell_products(a.grid, a.u, b.u) + float(np.sum(va * vb))
    if a.v_terminal is not None and b.v_terminal is not None:
        total += float(np.dot(a.v_terminal, b.v_terminal))
    if a.kernel is not None or b.kernel is not None:
        if spec is None:
            raise ContractError("pairing kernel-form controls needs the system spec")
        from fracimpulse import solops

        total += solops.kernel_pairings(spec, a, b)
    return total


# }}}


# {{{ heat example


def heat_demo_spec(n_modes: int, with_mask: bool = True, terminal_jump: bool = False,
                   drop_channels: Sequence[int] = ()) -> SystemSpec:
    """Spectral truncation of the impulsive fractional heat equation on ``(0, pi)``.

    ``A = diag(-1, -4, ..., -n_modes^2)``, ``alpha = 2/3``, ``b = 1``, one
    impulse at ``t = 1/2`` with ``D = E = I``.  With ``with_mask`` channel
    ``j`` (1-based) is active only on ``[1 - 1/j^2, 1]``.  ``terminal_jump``
    adds the control jump at ``t = 1`` with ``E_T = I``.  ``drop_channels``
    (1-based) zeroes columns of ``B`` and ``E``.
    """
    if n_modes < 1:
        raise ValidationError("n_modes", "must be at least 1")
    k = np.arange(1, n_modes + 1, dtype=float)
    A = np.diag(-(k**2))
    B = np.eye(n_modes)
    E = np.eye(n_modes)
    for j in drop_channels:
        B[:, j - 1] = 0.0
        E[:, j - 1] = 0.0
    mask = None
    if with_mask:
        mask = tuple(((1.0 - 1.0 / j**2, 1.0),) for j in range(1, n_modes + 1))
    spec = SystemSpec(A=A, B=B, impulses=(ImpulseEvent(0.5, np.eye(n_modes), E),), horizon=1.0,
                      order=FractionalOrder(2.0 / 3.0), control_mask=mask,
                      terminal_E=E.copy() if terminal_jump else None)
    return validate(spec)


# }}}


# {{{ serialization


class _Dumper(yaml.SafeDumper):
    pass


def _float_repr(dumper, value):
    if math.isnan(value):
        s = ".nan"
    elif math.isinf(value):
        s = ".inf" if value > 0 else "-.inf"
    else:
        s = f"{value:.17g}"
        mant, _, exp = s.partition("e")
        if "." not in mant:
            mant += ".0"  # keep the plain scalar resolvable as a YAML float
        s = mant + ("e" + exp if exp else "")
    return dumper.represent_scalar("tag:yaml.org,2002:float", s)


_Dumper.add_representer(float, _float_repr)


def _as_list(arr):
    return None if arr is None else np.asarray(arr, dtype=float).tolist()


def spec_to_dict(spec: SystemSpec, x0=None, target=None) -> dict:
    d = {
        "alpha": float(spec.alpha),
        "horizon": float(spec.horizon),
        "A": _as_list(spec.A),
        "B": _as_list(spec.B),
        "impulses": [{"time": float(ev.time), "D": _as_list(ev.D), "E": _as_list(ev.E)}
                     for ev in spec.impulses],
        "semigroup_bound": float(spec.semigroup_bound),
    }
    if spec.control_mask is not None:
        d["mask"] = [None if w is None else [[float(lo), float(hi)] for lo, hi in w]
                     for w in spec.control_mask]
    if spec.terminal_E is not None:
        d["terminal_E"] = _as_list(spec.terminal_E)
    if x0 is not None:
        d["x0"] = _as_list(x0)
    if target is not None:
        d["target"] = _as_list(target)
    return d


def dump_spec(spec: SystemSpec, x0=None, target=None) -> str:
    """YAML text for ``spec`` with 17 significant digits per float."""
    return yaml.dump(spec_to_dict(spec, x0, target), Dumper=_Dumper, sort_keys=False,
                     default_flow_style=None)


def _require(d, key):
    if key not in d:
        raise ValidationError(key, "missing")
    return d[key]


def _floats(name, value):
    try:
        return np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError(name, f"not numeric: {value!r}") from None


def spec_from_dict(d: dict) -> tuple[SystemSpec, Optional[np.ndarray], Optional[np.ndarray]]:
    """Build and validate a spec from a config mapping; returns ``(spec, x0, target)``."""
    if not isinstance(d, dict):
        raise ValidationError("config", "top level must be a mapping")
    alpha = float(_floats("alpha", _require(d, "alpha")))
    A = _floats("A", _require(d, "A"))
    if A.ndim == 0:
        A = A.reshape(1, 1)
    n = A.shape[0]
    B = _floats("B", _require(d, "B"))
    if B.ndim == 0:
        B = B.reshape(1, 1)
    elif B.ndim == 1:
        B = B.reshape(n, -1)
    m = B.shape[1] if B.ndim == 2 else 1
    impulses = []
    for i, item in enumerate(d.get("impulses") or []):
        if not isinstance(item, dict):
            raise ValidationError(f"impulses[{i}]", "must be a mapping with time, D, E")
        D = _floats(f"impulses[{i}].D", _require(item, "D"))
        E = _floats(f"impulses[{i}].E", _require(item, "E"))
        if D.ndim == 0:
            D = D.reshape(1, 1)
        if E.ndim < 2 and E.size == n * m:
            E = E.reshape(n, m)
        impulses.append(ImpulseEvent(float(_floats(f"impulses[{i}].time", _require(item, "time"))), D, E))
    mask = d.get("mask")
    TE = d.get("terminal_E")
    if TE is not None:
        TE = _floats("terminal_E", TE)
        if TE.ndim < 2 and TE.size == n * m:
            TE = TE.reshape(n, m)
    spec = SystemSpec(A=A, B=B, impulses=tuple(impulses),
                      horizon=float(_floats("horizon", _require(d, "horizon"))),
                      order=FractionalOrder(alpha),
                      semigroup_bound=float(d.get("semigroup_bound", 1.0)),
                      control_mask=None if mask is None else tuple(mask), terminal_E=TE)
    spec = validate(spec)

    def vec(name):
        if d.get(name) is None:
            return None
        x = _floats(name, d[name]).reshape(-1)
        if x.size != n:
            raise ValidationError(name, f"expected {n} entries, got {x.size}")
        return x

    return spec, vec("x0"), vec("target")


def load_spec(text: str):
    """Parse YAML config text; returns ``(spec, x0, target)``."""
    try:
        d = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValidationError("config", f"malformed YAML ({exc})") from None
    return spec_from_dict(d)


def bundle_to_dict(bundle: ControlBundle) -> dict:
    if bundle.kernel is not None:
        raise ContractError("kernel-form controls cannot be serialized as samples")
    d = {"grid": _as_list(bundle.grid), "u": _as_list(bundle.u), "v": _as_list(bundle.v)}
    if bundle.v_terminal is not None:
        d["v_terminal"] = _as_list(bundle.v_terminal)
    return d


def dump_bundle(bundle: ControlBundle) -> str:
    return yaml.dump(bundle_to_dict(bundle), Dumper=_Dumper, sort_keys=False, default_flow_style=None)


def load_bundle(text: str, spec: SystemSpec) -> ControlBundle:
    """Parse a bundle document: ``grid``, ``u`` (samples), ``v``, optional ``v_terminal``.

    ``grid`` may be an integer (cells per interval); ``u`` may be a single
    m-vector, meaning a constant control.
    """
    try:
        d = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValidationError("bundle", f"malformed YAML ({exc})") from None
    if not isinstance(d, dict):
        raise ValidationError("bundle", "top level must be a mapping")
    g = d.get("grid", DEFAULT_CELLS)
    grid = make_grid(spec, int(g)) if np.ndim(g) == 0 else _floats("grid", g)
    m = spec.dim_control
    u = _floats("u", d.get("u", np.zeros(m)))
    if u.ndim <= 1 and u.size == m:
        u = np.tile(u.reshape(1, m), (grid.size, 1))
    v = _floats("v", d.get("v", np.zeros((spec.n_impulses, m)))).reshape(-1, m) \
        if spec.n_impulses else np.zeros((0, m))
    vt = d.get("v_terminal")
    vt = None if vt is None else _floats("v_terminal", vt).reshape(m)
    if vt is None and spec.terminal_E is not None:
        vt = np.zeros(m)
    try:
        return check_bundle(spec, ControlBundle(grid, u, v, vt))
    except ContractError as exc:
        raise ValidationError("bundle", str(exc)) from None


# }}}
