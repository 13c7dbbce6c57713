"""Rational transfer-function algebra, state-space realization and simulation.

Everything downstream (participation factors, desired behaviors, closed
loops) is carried by :class:`RationalTF`, a ratio of real polynomials in
the Laplace variable stored as ascending coefficient tuples.  Time-domain
work happens on :class:`StateSpaceModel` realizations discretized with the
bilinear (Tustin) rule, which is A-stable and preserves DC gains exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import numpy.polynomial.polynomial as npp
import scipy.linalg
import scipy.signal

from .errors import (
    DegreeCapExceeded,
    DimensionMismatch,
    ImproperTransferFunction,
    InverseOfZero,
    PoleAtQueryPoint,
    UnstableDiscretization,
)

# Degree cap: every model in this domain is degree <= 3 before composition,
# so anything past 16 signals a runaway composition bug, not a real plant.
MAX_DEGREE = 16

# Root-cluster matching tolerance for pole/zero cancellation.  Scale-aware:
# at |root| ~ 1e3 double precision cannot locate roots to 1e-9 absolute, so
# the tolerance is relative above magnitude one.
CANCEL_TOL = 1e-9

_TRIM_REL = 1e-12


def _trim(coeffs: np.ndarray) -> np.ndarray:
    """Drop trailing (highest-order) coefficients that are numerically zero."""
    c = np.atleast_1d(np.asarray(coeffs, dtype=float))
    scale = np.max(np.abs(c)) if c.size else 0.0
    if scale == 0.0:
        return np.zeros(1)
    keep = c.size
    while keep > 1 and abs(c[keep - 1]) <= _TRIM_REL * scale:
        keep -= 1
    return c[:keep].copy()


def _match_tol(root: complex) -> float:
    return CANCEL_TOL * max(1.0, abs(root))


def _pair_roots(ra: np.ndarray, rb: np.ndarray) -> list[tuple[int, int]]:
    """Greedy nearest-neighbour pairing of root sets within the cluster tolerance."""
    pairs: list[tuple[int, int]] = []
    used_b: set[int] = set()
    for i, r in enumerate(ra):
        best_j, best_d = -1, np.inf
        for j, q in enumerate(rb):
            if j in used_b:
                continue
            d = abs(r - q)
            if d < best_d:
                best_j, best_d = j, d
        if best_j >= 0 and best_d <= _match_tol(rb[best_j]):
            pairs.append((i, best_j))
            used_b.add(best_j)
    return pairs


def _from_roots(roots: np.ndarray, lead: float) -> np.ndarray:
    if len(roots) == 0:
        return np.array([lead])
    poly = npp.polyfromroots(roots)
    return np.real(poly) * lead


def _cancel(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cancel exactly-matching root clusters between numerator and denominator."""
    num = _trim(num)
    den = _trim(den)
    if num.size <= 1 or den.size <= 1 or np.all(num == 0.0):
        return num, den
    rn = npp.polyroots(num)
    rd = npp.polyroots(den)
    pairs = _pair_roots(rn, rd)
    if not pairs:
        return num, den
    drop_n = {i for i, _ in pairs}
    drop_d = {j for _, j in pairs}
    rn_keep = np.array([r for i, r in enumerate(rn) if i not in drop_n])
    rd_keep = np.array([r for j, r in enumerate(rd) if j not in drop_d])
    return _from_roots(rn_keep, num[-1]), _from_roots(rd_keep, den[-1])


@dataclass(frozen=True)
class RationalTF:
    """Ratio of real polynomials in s, ascending coefficients, monic denominator."""

    num: tuple[float, ...]
    den: tuple[float, ...]

    def __post_init__(self):
        num = _trim(np.asarray(self.num, dtype=float))
        den = _trim(np.asarray(self.den, dtype=float))
        if np.all(den == 0.0):
            raise ZeroDivisionError("denominator is the zero polynomial")
        lead = den[-1]
        den = den / lead
        num = num / lead
        if len(num) - 1 > MAX_DEGREE or len(den) - 1 > MAX_DEGREE:
            raise DegreeCapExceeded(
                f"degree {max(len(num), len(den)) - 1} exceeds cap {MAX_DEGREE}"
            )
        object.__setattr__(self, "num", tuple(num))
        object.__setattr__(self, "den", tuple(den))

    # -- basic queries -------------------------------------------------

    @property
    def degree_num(self) -> int:
        return len(self.num) - 1

    @property
    def degree_den(self) -> int:
        return len(self.den) - 1

    @property
    def is_proper(self) -> bool:
        return self.degree_num <= self.degree_den

    @property
    def is_zero(self) -> bool:
        return all(c == 0.0 for c in self.num)

    def poles(self) -> np.ndarray:
        if self.degree_den == 0:
            return np.array([])
        return npp.polyroots(np.asarray(self.den))

    def zeros(self) -> np.ndarray:
        if self.degree_num == 0:
            return np.array([])
        return npp.polyroots(np.asarray(self.num))

    def is_stable(self) -> bool:
        p = self.poles()
        return bool(len(p) == 0 or np.all(p.real < 0.0))

    def dc_gain(self) -> float:
        if self.den[0] == 0.0:
            return np.inf if self.num[0] != 0.0 else np.nan
        return self.num[0] / self.den[0]

    # -- evaluation ----------------------------------------------------

    def __call__(self, s: complex) -> complex:
        return tf_eval(self, s)

    # -- algebra ---------------------------------------------------------

    def __add__(self, other: "RationalTF | float") -> "RationalTF":
        return tf_add(self, _as_tf(other))

    __radd__ = __add__

    def __sub__(self, other: "RationalTF | float") -> "RationalTF":
        return tf_add(self, tf_scale(_as_tf(other), -1.0))

    def __rsub__(self, other: "RationalTF | float") -> "RationalTF":
        return tf_add(_as_tf(other), tf_scale(self, -1.0))

    def __mul__(self, other: "RationalTF | float") -> "RationalTF":
        if isinstance(other, (int, float)):
            return tf_scale(self, float(other))
        return tf_mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> "RationalTF":
        return tf_scale(self, -1.0)

    def inverse(self) -> "RationalTF":
        return tf_inverse(self)

    def almost_equal(self, other: "RationalTF", tol: float = 1e-9) -> bool:
        """Coefficient-level equality after canonicalization."""
        if len(self.num) != len(other.num) or len(self.den) != len(other.den):
            return False
        scale = max(max(abs(c) for c in self.num), 1.0)
        return bool(
            np.allclose(self.num, other.num, rtol=tol, atol=tol * scale)
            and np.allclose(self.den, other.den, rtol=tol, atol=tol)
        )


def _as_tf(x: "RationalTF | float") -> RationalTF:
    if isinstance(x, RationalTF):
        return x
    return RationalTF((float(x),), (1.0,))


def constant(gain: float) -> RationalTF:
    """Static gain as a transfer function."""
    return RationalTF((gain,), (1.0,))


def first_order(gain: float, tau: float) -> RationalTF:
    """gain / (tau s + 1)."""
    return RationalTF((gain,), (1.0, tau))


def tf_eval(tf: RationalTF, s: complex) -> complex:
    """Evaluate num(s)/den(s); refuses evaluation on a pole."""
    d = npp.polyval(s, np.asarray(tf.den))
    if abs(d) < 1e-300:
        raise PoleAtQueryPoint(f"denominator vanishes at s={s}")
    return complex(npp.polyval(s, np.asarray(tf.num)) / d)


def tf_scale(tf: RationalTF, k: float) -> RationalTF:
    return RationalTF(tuple(k * c for c in tf.num), tf.den)


def tf_add(a: RationalTF, b: RationalTF) -> RationalTF:
    """Sum over a least common denominator found by root matching.

    Sharing denominator factors before multiplying out keeps repeated poles
    out of the product, which is what lets exact complement constructions
    collapse back to low degree.
    """
    na, da = np.asarray(a.num), np.asarray(a.den)
    nb, db = np.asarray(b.num), np.asarray(b.den)
    if len(da) == len(db) and np.allclose(da, db, rtol=1e-12, atol=1e-12):
        num, den = _cancel(npp.polyadd(na, nb), da)
        return RationalTF(tuple(num), tuple(den))
    if len(da) == 1:
        num = npp.polyadd(npp.polymul(na, db) / da[0], nb)
        num, den = _cancel(num, db)
        return RationalTF(tuple(num), tuple(den))
    if len(db) == 1:
        num = npp.polyadd(na, npp.polymul(nb, da) / db[0])
        num, den = _cancel(num, da)
        return RationalTF(tuple(num), tuple(den))
    ra = npp.polyroots(da)
    rb = npp.polyroots(db)
    pairs = _pair_roots(ra, rb)
    matched_b = {j for _, j in pairs}
    matched_a = {i for i, _ in pairs}
    rb_extra = np.array([r for j, r in enumerate(rb) if j not in matched_b])
    ra_extra = np.array([r for i, r in enumerate(ra) if i not in matched_a])
    # lcd = da * (db with shared factors removed); both dens are monic here
    db_rem = _from_roots(rb_extra, 1.0)
    da_rem = _from_roots(ra_extra, 1.0)
    den = npp.polymul(da, db_rem)
    num = npp.polyadd(npp.polymul(na, db_rem), npp.polymul(nb, da_rem))
    num, den = _cancel(num, den)
    return RationalTF(tuple(num), tuple(den))


def tf_mul(a: RationalTF, b: RationalTF) -> RationalTF:
    """Product with cross-cancellation so inverse chains do not accumulate."""
    na, da = _cancel(np.asarray(a.num), np.asarray(b.den))
    nb, db = _cancel(np.asarray(b.num), np.asarray(a.den))
    num = npp.polymul(na, nb)
    den = npp.polymul(db, da)
    num, den = _cancel(num, den)
    return RationalTF(tuple(num), tuple(den))


def tf_inverse(a: RationalTF) -> RationalTF:
    if a.is_zero:
        raise InverseOfZero("cannot invert a transfer function with zero numerator")
    return RationalTF(a.den, a.num)


# ---------------------------------------------------------------------------
# state space
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StateSpaceModel:
    """Minimal A/B/C/D realization with named inputs/outputs."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    states: tuple[str, ...] = ()
    inputs: tuple[str, ...] = ("u",)
    outputs: tuple[str, ...] = ("y",)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.size == 0:
            A = A.reshape(0, 0)
        n = A.shape[0]
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        p, m = D.shape
        B = np.asarray(self.B, dtype=float).reshape(n, m)
        C = np.asarray(self.C, dtype=float).reshape(p, n)
        if A.shape != (n, n):
            raise DimensionMismatch("A must be square")
        for name, arr in (("A", A), ("B", B), ("C", C), ("D", D)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        states = self.states or tuple(f"x{i}" for i in range(n))
        inputs = self.inputs if len(self.inputs) == m else tuple(f"u{i}" for i in range(m))
        outputs = self.outputs if len(self.outputs) == p else tuple(f"y{i}" for i in range(p))
        object.__setattr__(self, "states", tuple(states))
        object.__setattr__(self, "inputs", tuple(inputs))
        object.__setattr__(self, "outputs", tuple(outputs))

    @property
    def order(self) -> int:
        return self.A.shape[0]

    def freq_response(self, s: complex) -> np.ndarray:
        """Transfer matrix C (sI - A)^-1 B + D at one complex frequency."""
        n = self.order
        if n == 0:
            return self.D.astype(complex)
        M = s * np.eye(n) - self.A
        X = np.linalg.solve(M, self.B.astype(complex))
        return self.C @ X + self.D

    def is_stable(self) -> bool:
        if self.order == 0:
            return True
        return bool(np.all(np.linalg.eigvals(self.A).real < 0.0))


def to_state_space(tf: RationalTF, name: str = "y") -> StateSpaceModel:
    """Controllable-canonical realization of a proper transfer function."""
    if not tf.is_proper:
        raise ImproperTransferFunction(
            f"degree {tf.degree_num} over {tf.degree_den}; roll off first"
        )
    n = tf.degree_den
    den = np.asarray(tf.den)  # monic by construction
    b = np.zeros(n + 1)
    b[: len(tf.num)] = tf.num
    d = b[n]
    if n == 0:
        return StateSpaceModel(
            np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[d]], outputs=(name,)
        )
    A = np.zeros((n, n))
    A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -den[:n]
    B = np.zeros((n, 1))
    B[-1, 0] = 1.0
    C = (b[:n] - den[:n] * d).reshape(1, n)
    return StateSpaceModel(A, B, C, [[d]], outputs=(name,))


# ---------------------------------------------------------------------------
# time series and simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly sampled named channels."""

    t: np.ndarray
    channels: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.size < 2:
            raise ValueError("need at least two samples")
        steps = np.diff(t)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12) or steps[0] <= 0:
            raise ValueError("time grid must be uniform and increasing")
        object.__setattr__(self, "t", t)
        chans = {}
        for k, v in self.channels.items():
            v = np.asarray(v, dtype=float)
            if v.shape != t.shape:
                raise DimensionMismatch(f"channel {k!r} length {v.size} != {t.size}")
            chans[k] = v
        object.__setattr__(self, "channels", chans)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def __getitem__(self, key: str) -> np.ndarray:
        return self.channels[key]

    def names(self) -> tuple[str, ...]:
        return tuple(self.channels)

    def with_channels(self, extra: dict[str, np.ndarray]) -> "TimeSeries":
        merged = dict(self.channels)
        merged.update(extra)
        return TimeSeries(self.t, merged)

    def to_csv(self) -> str:
        """First column t, then channels, %.9e everywhere."""
        names = list(self.channels)
        lines = [",".join(["t"] + names)]
        cols = [self.t] + [self.channels[k] for k in names]
        for row in zip(*cols):
            lines.append(",".join(f"{v:.9e}" for v in row))
        return "\n".join(lines) + "\n"


def step_series(t_end: float, dt: float, steps: list[tuple[float, float]],
                name: str = "u") -> TimeSeries:
    """Sum of persistent steps (time, amplitude) on a uniform grid from 0."""
    n = int(round(t_end / dt)) + 1
    t = np.arange(n) * dt
    u = np.zeros(n)
    for t0, amp in steps:
        u[t >= t0 - 1e-12] += amp
    return TimeSeries(t, {name: u})


def discretize_bilinear(model: StateSpaceModel, dt: float):
    """Tustin discretization with the stable-pole guard."""
    n = model.order
    if n == 0:
        return None, None, None, model.D
    Ad, Bd, Cd, Dd, _ = scipy.signal.cont2discrete(
        (model.A, model.B, model.C, model.D), dt, method="bilinear"
    )
    if model.is_stable():
        mags = np.abs(np.linalg.eigvals(Ad))
        if np.any(mags >= 1.0 + 1e-9):
            raise UnstableDiscretization(
                f"discrete pole magnitude {mags.max():.6f} at dt={dt}"
            )
    return Ad, Bd, Cd, Dd


def simulate(model: StateSpaceModel, input_ts: TimeSeries, dt: float,
             x0: np.ndarray | None = None) -> TimeSeries:
    """Fixed-step closed-form simulation, zero initial state by default.

    Input channels are matched to model inputs by name when all names are
    present, otherwise by order.
    """
    if abs(input_ts.dt - dt) > 1e-9 * dt:
        raise DimensionMismatch(f"dt {dt} does not match input spacing {input_ts.dt}")
    m = model.B.shape[1] if model.order else model.D.shape[1]
    names = input_ts.names()
    if len(names) != m:
        raise DimensionMismatch(f"model expects {m} inputs, series has {len(names)}")
    if set(model.inputs) <= set(names):
        u = np.column_stack([input_ts[k] for k in model.inputs])
    else:
        u = np.column_stack([input_ts[k] for k in names])
    Ad, Bd, Cd, Dd = discretize_bilinear(model, dt)
    nt = len(input_ts.t)
    p = model.D.shape[0]
    y = np.empty((nt, p))
    if model.order == 0:
        y = u @ Dd.T
    else:
        x = np.zeros(model.order) if x0 is None else np.asarray(x0, dtype=float).copy()
        for k in range(nt):
            uk = u[k]
            y[k] = Cd @ x + Dd @ uk
            x = Ad @ x + Bd @ uk
    return TimeSeries(input_ts.t, {name: y[:, i] for i, name in enumerate(model.outputs)})


# ---------------------------------------------------------------------------
# parameter-varying gain wrapper
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LpvGain:
    """Piecewise-constant gain applied after a fixed proper base filter."""

    base: RationalTF
    schedule: tuple[tuple[float, float], ...]  # (time, value), increasing times

    def __post_init__(self):
        if not self.schedule:
            raise ValueError("schedule needs at least one breakpoint")
        times = [t for t, _ in self.schedule]
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise ValueError("schedule breakpoints must be strictly increasing")
        object.__setattr__(self, "schedule", tuple((float(t), float(v)) for t, v in self.schedule))

    def value_at(self, t: np.ndarray) -> np.ndarray:
        times = np.array([tb for tb, _ in self.schedule])
        vals = np.array([v for _, v in self.schedule])
        idx = np.searchsorted(times, t + 1e-12, side="right") - 1
        idx = np.clip(idx, 0, len(vals) - 1)
        return vals[idx]


def lpv_track(gain: LpvGain, input_ts: TimeSeries, dt: float) -> TimeSeries:
    """Run the base filter, then scale its output by the gain schedule."""
    if not gain.base.is_proper or not gain.base.is_stable():
        raise ImproperTransferFunction("base filter must be proper and stable")
    base_out = simulate(to_state_space(gain.base), input_ts, dt)
    mu = gain.value_at(input_ts.t)
    name = base_out.names()[0]
    return TimeSeries(input_ts.t, {name: mu * base_out[name]})
