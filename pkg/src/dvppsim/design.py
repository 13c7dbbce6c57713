"""Fleet design: desired behavior, participation factors, disaggregation.

A fleet of heterogeneous devices is coordinated to present one desired
aggregate frequency/voltage behavior at its coupling bus.  The aggregate
specification is split across devices by dynamic participation factors
(transfer functions summing to one), and each device realizes the local
reference model implied by its factor:

* grid-forming, power -> frequency:   ref = m(s)^-1 * T_pf(s)
* grid-forming, voltage -> reactive:  ref = m(s) * T_qv(s)^-1
* grid-following, frequency -> power: ref = m(s) * T_pf(s)^-1 / (tau_pll s + 1)^d

The roll-off filter on grid-following devices keeps their reference models
causal; the mismatch it introduces is tolerated above a threshold frequency
and reported separately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import (
    InvalidBandSplit,
    InvalidGain,
    InverseOfZero,
    MissingFactor,
    NonPositiveDroop,
    OverSubscribed,
    SemanticError,
    UnrealizedDevice,
)
from .lti import RationalTF, constant, first_order, tf_add, tf_eval, tf_inverse, tf_mul, tf_scale

FORMING = "forming"
FOLLOWING = "following"

# Measurement (PLL) roll-off time constant for grid-following reference
# models.  Small enough that the first-order magnitude perturbation
# tau_pll * omega stays below 1e-3 for all frequencies up to 10 rad/s,
# two decades above the desired aggregate dynamics.
DEFAULT_TAU_PLL = 1e-4

# Poles appended when a derived reference model comes out improper,
# a decade above every plant time constant used here.
PROPRIETY_FIX_TAU = 1e-3

# Below rel/tau_pll the roll-off filter perturbs the aggregate response by
# at most rel (relative); mismatch above it is reported, not gated.
def tolerated_mismatch_omega(tau_pll: float, rel: float = 1e-3) -> float:
    return rel / tau_pll


# ---------------------------------------------------------------------------
# desired aggregate behavior
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DesiredBehavior:
    """Diagonal aggregate specification: power->frequency and reactive->voltage."""

    tf_pf: RationalTF
    tf_qv: RationalTF
    direction_vq: bool = False  # True: spec given voltage -> reactive power

    def __post_init__(self):
        if not self.tf_pf.is_stable():
            raise ValueError("power->frequency specification must be stable")

    def qv_inverse(self, augment_tau: float | None = None) -> RationalTF:
        """Causal inverse of the voltage channel, optionally low-pass augmented.

        The raw inverse is used when it is proper and no augmentation is
        requested; augmentation trades exact inversion for noise roll-off.
        """
        inv = self.tf_qv if self.direction_vq else tf_inverse(self.tf_qv)
        if augment_tau is not None:
            inv = tf_mul(inv, first_order(1.0, augment_tau))
        guard = 0
        while not inv.is_proper:
            inv = tf_mul(inv, first_order(1.0, augment_tau or PROPRIETY_FIX_TAU))
            guard += 1
            if guard > 32:  # pragma: no cover - degree cap trips first
                from .errors import ImproperAfterAugmentation

                raise ImproperAfterAugmentation("voltage inverse stayed improper")
        return inv


def make_tdes(h_p: float, d_p: float, d_q: float) -> DesiredBehavior:
    """Virtual inertia/droop frequency channel plus droop voltage channel."""
    if d_p <= 0 or d_q <= 0:
        raise NonPositiveDroop(f"droops must be positive, got d_p={d_p}, d_q={d_q}")
    if h_p < 0:
        raise ValueError("inertia must be nonnegative")
    tf_pf = RationalTF((1.0,), (d_p, h_p) if h_p > 0 else (d_p,))
    return DesiredBehavior(tf_pf=tf_pf, tf_qv=constant(d_q))


# ---------------------------------------------------------------------------
# participation factors
# ---------------------------------------------------------------------------

LPF = "lpf"
HPF = "hpf"
BPF = "bpf"
COMPLEMENT = "complement"

CHANNELS = ("fp", "vq", "fpp")


@dataclass(frozen=True)
class ParticipationFactor:
    """One device's share m(s) of the aggregate specification on a channel."""

    kind: str
    tf: RationalTF
    channel: str
    tau: float | tuple[float, float] | None = None
    mu: float = 0.0  # DC gain; zero for high-pass/band-pass shapes
    completes: tuple["ParticipationFactor", ...] = ()

    def dc(self) -> float:
        return self.tf.dc_gain()

    def scaled(self, k: float) -> "ParticipationFactor":
        return replace(self, tf=tf_scale(self.tf, k), mu=self.mu * k)


def make_adpf(kind: str, tau, mu: float = 0.0, channel: str = "fp") -> ParticipationFactor:
    """Build a low-pass, high-pass or band-pass participation factor."""
    if channel not in CHANNELS:
        raise ValueError(f"unknown channel {channel!r}")
    if kind == LPF:
        if not 0.0 <= mu <= 1.0:
            raise InvalidGain(f"low-pass DC gain must lie in [0, 1], got {mu}")
        if tau <= 0:
            raise ValueError("time constant must be positive")
        return ParticipationFactor(LPF, first_order(mu, tau), channel, tau, mu)
    if kind == HPF:
        if tau <= 0:
            raise ValueError("time constant must be positive")
        tf = RationalTF((0.0, tau), (1.0, tau))
        return ParticipationFactor(HPF, tf, channel, tau, 0.0)
    if kind == BPF:
        tau_low, tau_high = tau
        if tau_low <= tau_high:
            raise InvalidBandSplit(
                f"band-pass needs tau_low > tau_high, got {tau_low} <= {tau_high}"
            )
        tf = tf_mul(
            RationalTF((0.0, tau_low), (1.0, tau_low)), first_order(1.0, tau_high)
        )
        return ParticipationFactor(BPF, tf, channel, (tau_low, tau_high), 0.0)
    raise ValueError(f"unknown participation factor kind {kind!r}")


def _snap_zero_dc(tf: RationalTF) -> RationalTF:
    """Zero out a numerically-vanished constant coefficient.

    The complement construction must close the participation identity
    exactly, so a DC term at rounding level is float debris, not dynamics.
    """
    num = np.asarray(tf.num)
    scale = max(np.max(np.abs(num)), 1.0)
    if num.size > 1 and 0 < abs(num[0]) <= 1e-12 * scale:
        num = num.copy()
        num[0] = 0.0
        return RationalTF(tuple(num), tf.den)
    return tf


def complete_fleet(factors: list[ParticipationFactor], channel: str) -> ParticipationFactor:
    """Complement factor 1 - sum(m_i) closing the participation condition."""
    if not factors:
        raise ValueError("need at least one factor to complete")
    total_mu = sum(f.mu for f in factors)
    if total_mu > 1.0 + 1e-12:
        raise OverSubscribed(f"low-pass DC gains sum to {total_mu} > 1")
    acc = factors[0].tf
    for f in factors[1:]:
        acc = tf_add(acc, f.tf)
    comp = _snap_zero_dc(tf_add(constant(1.0), tf_scale(acc, -1.0)))
    return ParticipationFactor(
        COMPLEMENT, comp, channel, mu=comp.dc_gain(), completes=tuple(factors)
    )


# ---------------------------------------------------------------------------
# devices and fleets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeviceSpec:
    """One distributed energy resource with its realized reference models."""

    name: str
    role: str
    rating: float  # MVA
    tau_dc: float  # s, resource-delay bandwidth bound
    p_capacity: float  # pu active-power limit
    factor_fp: ParticipationFactor | None = None
    factor_vq: ParticipationFactor | None = None
    ref_pf: RationalTF | None = None  # power->freq (forming) or freq->power (following)
    ref_vq: RationalTF | None = None
    pll_d: int = 0
    is_dvpp: bool = True  # False for plain swing-equation environment machines


@dataclass(frozen=True)
class Fleet:
    devices: tuple[DeviceSpec, ...]
    desired: DesiredBehavior
    tau_pll: float = DEFAULT_TAU_PLL
    vq_augment_tau: float | None = None

    def __post_init__(self):
        if not self.devices:
            raise ValueError("fleet needs at least one device")
        names = [d.name for d in self.devices]
        if len(set(names)) != len(names):
            raise SemanticError(f"duplicate device names in {names}")

    def dvpp(self) -> tuple[DeviceSpec, ...]:
        return tuple(d for d in self.devices if d.is_dvpp)

    def forming(self) -> tuple[DeviceSpec, ...]:
        return tuple(d for d in self.devices if d.role == FORMING)

    def following(self) -> tuple[DeviceSpec, ...]:
        return tuple(d for d in self.devices if d.role == FOLLOWING)

    def device(self, name: str) -> DeviceSpec:
        for d in self.devices:
            if d.name == name:
                return d
        raise KeyError(name)

    def vq_target(self) -> RationalTF:
        """Effective voltage-channel design target (inverse, maybe augmented)."""
        return self.desired.qv_inverse(self.vq_augment_tau)


# ---------------------------------------------------------------------------
# disaggregation
# ---------------------------------------------------------------------------


def _fix_propriety(tf: RationalTF) -> RationalTF:
    while not tf.is_proper:
        tf = tf_mul(tf, first_order(1.0, PROPRIETY_FIX_TAU))
    return tf


def disaggregate_forming(
    desired: DesiredBehavior,
    factor_fp: ParticipationFactor,
    factor_vq: ParticipationFactor,
    vq_augment_tau: float | None = None,
) -> tuple[RationalTF, RationalTF]:
    """Local reference models for a grid-forming device."""
    if factor_fp.tf.is_zero:
        raise InverseOfZero(f"factor on fp channel of kind {factor_fp.kind} is zero")
    ref_pf = _fix_propriety(tf_mul(tf_inverse(factor_fp.tf), desired.tf_pf))
    ref_vq = tf_mul(factor_vq.tf, desired.qv_inverse(vq_augment_tau))
    return ref_pf, ref_vq


class FollowingRefs(NamedTuple):
    ref_fp: RationalTF
    ref_vq: RationalTF
    d: int


def realize_device(
    desired: DesiredBehavior,
    role: str,
    factor_fp: ParticipationFactor,
    factor_vq: ParticipationFactor,
    tau_pll: float = DEFAULT_TAU_PLL,
    vq_augment_tau: float | None = None,
) -> tuple[RationalTF | None, RationalTF, int]:
    """Reference models for one device; a zero-participation forming device
    has no frequency reference (it contributes zero admittance)."""
    if role == FORMING:
        if factor_fp.tf.is_zero:
            ref_vq = tf_mul(factor_vq.tf, desired.qv_inverse(vq_augment_tau))
            return None, ref_vq, 0
        ref_pf, ref_vq = disaggregate_forming(desired, factor_fp, factor_vq, vq_augment_tau)
        return ref_pf, ref_vq, 0
    if role == FOLLOWING:
        return disaggregate_following(
            desired, factor_fp, factor_vq, tau_pll, "auto", vq_augment_tau
        )
    raise SemanticError(f"unknown role {role!r}")


def disaggregate_following(
    desired: DesiredBehavior,
    factor_fp: ParticipationFactor,
    factor_vq: ParticipationFactor,
    tau_pll: float = DEFAULT_TAU_PLL,
    d: int | str = "auto",
    vq_augment_tau: float | None = None,
) -> FollowingRefs:
    """Local reference models for a grid-following device (inverse causality)."""
    base = tf_mul(factor_fp.tf, tf_inverse(desired.tf_pf))
    if d == "auto":
        d = max(1, base.degree_num - base.degree_den)
    d = int(d)
    roll = first_order(1.0, tau_pll)
    ref_fp = base
    ref_vq = tf_mul(factor_vq.tf, desired.qv_inverse(vq_augment_tau))
    for _ in range(d):
        ref_fp = tf_mul(ref_fp, roll)
        ref_vq = tf_mul(ref_vq, roll)
    return FollowingRefs(ref_fp, ref_vq, d)


# ---------------------------------------------------------------------------
# condition checks
# ---------------------------------------------------------------------------


class ParticipationReport(NamedTuple):
    max_deviation: float  # worst |sum m(jw) - 1| over the grid
    dc_residual: float  # |sum of low-pass DC gains - 1|


def check_participation(fleet: Fleet, channel: str, freq_grid) -> ParticipationReport:
    factors = []
    for dev in fleet.dvpp():
        f = dev.factor_fp if channel in ("fp", "fpp") else dev.factor_vq
        if f is None:
            raise MissingFactor(f"device {dev.name!r} has no {channel} factor")
        factors.append(f)
    worst = 0.0
    for w in freq_grid:
        s = 1j * float(w)
        total = sum(tf_eval(f.tf, s) for f in factors)
        worst = max(worst, abs(total - 1.0))
    dc = sum(f.mu for f in factors if f.kind == LPF)
    return ParticipationReport(worst, abs(dc - 1.0))


@dataclass(frozen=True)
class AggregationReport:
    """Worst-case relative aggregation errors, split at the tolerated-mismatch edge."""

    freq_low: float
    freq_high: float
    volt_low: float
    volt_high: float
    split_omega: float
    has_following: bool

    def worst_gated(self) -> float:
        return max(self.freq_low, self.volt_low)


def verify_aggregation(fleet: Fleet, freq_grid) -> AggregationReport:
    devices = fleet.dvpp()
    if not devices:
        return AggregationReport(math.inf, math.inf, math.inf, math.inf, math.inf, False)
    for dev in devices:
        zero_share = dev.factor_fp is not None and dev.factor_fp.tf.is_zero
        if (dev.ref_pf is None and not zero_share) or dev.ref_vq is None:
            raise UnrealizedDevice(f"device {dev.name!r} has unrealized reference models")
    has_following = any(d.role == FOLLOWING for d in devices)
    split = tolerated_mismatch_omega(fleet.tau_pll) if has_following else math.inf
    vq_target = fleet.vq_target()
    freq_err = {True: 0.0, False: 0.0}  # keyed by "below split"
    volt_err = {True: 0.0, False: 0.0}
    for w in freq_grid:
        s = 1j * float(w)
        below = float(w) < split
        acc = 0j
        for dev in devices:
            if dev.ref_pf is None:
                continue  # zero participation: zero admittance
            if dev.role == FORMING:
                acc += 1.0 / tf_eval(dev.ref_pf, s)
            else:
                acc += tf_eval(dev.ref_pf, s)
        target_f = tf_eval(fleet.desired.tf_pf, s)
        achieved_f = 1.0 / acc if acc != 0 else math.inf
        err_f = abs(achieved_f - target_f) / max(abs(target_f), 1e-30)
        freq_err[below] = max(freq_err[below], err_f)
        total_vq = sum(tf_eval(dev.ref_vq, s) for dev in devices)
        target_v = tf_eval(vq_target, s)
        err_v = abs(total_vq - target_v) / max(abs(target_v), 1e-30)
        volt_err[below] = max(volt_err[below], err_v)
    return AggregationReport(
        freq_low=freq_err[True],
        freq_high=freq_err[False],
        volt_low=volt_err[True],
        volt_high=volt_err[False],
        split_omega=split,
        has_following=has_following,
    )


# ---------------------------------------------------------------------------
# fleet construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeviceDesign:
    """Declarative device request, before gains are resolved and refs realized."""

    name: str
    role: str = FORMING
    kind: str = LPF  # lpf | hpf | bpf | complement | swing
    tau: float | tuple[float, float] | None = None
    mu: float | None = None  # None: proportional to capacity
    rating: float = 0.0  # MVA
    tau_dc: float = 0.0
    p_capacity: float | None = None  # pu, defaults to rating / base
    h_inertia: float | None = None  # swing machines only
    droop: float | None = None  # swing machines only


def _resolve_gains(designs: list[DeviceDesign], caps: dict[str, float]) -> dict[str, float]:
    """Fill in capacity-proportional DC gains so low-pass gains sum to one."""
    explicit = sum(d.mu for d in designs if d.kind == LPF and d.mu is not None)
    if explicit > 1.0 + 1e-12:
        raise OverSubscribed(f"explicit low-pass gains sum to {explicit} > 1")
    autos = [d for d in designs if d.kind == LPF and d.mu is None]
    gains = {d.name: d.mu for d in designs if d.kind == LPF and d.mu is not None}
    if autos:
        budget = 1.0 - explicit
        weights = np.array([caps[d.name] for d in autos], dtype=float)
        if weights.sum() <= 0:
            raise InvalidGain("capacity-proportional gains need positive capacities")
        share = budget * weights / weights.sum()
        # make the identity exact in floating point: last gain takes the remainder
        for d, g in zip(autos[:-1], share[:-1]):
            gains[d.name] = float(g)
        gains[autos[-1].name] = budget - float(sum(share[:-1]))
    return gains


def design_fleet(
    desired: DesiredBehavior,
    designs: list[DeviceDesign],
    base_mva: float = 100.0,
    tau_pll: float = DEFAULT_TAU_PLL,
    vq_augment_tau: float | None = None,
) -> Fleet:
    """Resolve gains, build both factor channels, realize all reference models."""
    adpf = [d for d in designs if d.kind != "swing"]
    swings = [d for d in designs if d.kind == "swing"]
    caps = {
        d.name: (d.p_capacity if d.p_capacity is not None else d.rating / base_mva)
        for d in designs
    }
    complements = [d for d in adpf if d.kind == COMPLEMENT]
    if len(complements) > 1:
        raise SemanticError("at most one complement device per fleet")
    plain = [d for d in adpf if d.kind != COMPLEMENT]
    gains = _resolve_gains(plain, caps)

    factors: dict[str, dict[str, ParticipationFactor]] = {}
    for d in plain:
        mu = gains.get(d.name, 0.0)
        if d.kind == LPF and d.tau is not None and d.tau < d.tau_dc - 1e-12:
            raise SemanticError(
                f"device {d.name!r}: participation faster than its resource "
                f"(tau {d.tau} < tau_dc {d.tau_dc})"
            )
        factors[d.name] = {
            "fp": make_adpf(d.kind, d.tau, mu, "fp"),
            "vq": make_adpf(d.kind, d.tau, mu, "vq"),
        }
    for d in complements:
        factors[d.name] = {
            ch: complete_fleet([factors[p.name][ch] for p in plain], ch)
            for ch in ("fp", "vq")
        }

    devices: list[DeviceSpec] = []
    for d in adpf:
        f_fp, f_vq = factors[d.name]["fp"], factors[d.name]["vq"]
        ref_pf, ref_vq, pll_d = realize_device(
            desired, d.role, f_fp, f_vq, tau_pll, vq_augment_tau
        )
        devices.append(
            DeviceSpec(
                name=d.name,
                role=d.role,
                rating=d.rating,
                tau_dc=d.tau_dc,
                p_capacity=caps[d.name],
                factor_fp=f_fp,
                factor_vq=f_vq,
                ref_pf=ref_pf,
                ref_vq=ref_vq,
                pll_d=pll_d,
            )
        )
    for d in swings:
        if d.h_inertia is None or d.droop is None:
            raise SemanticError(f"swing device {d.name!r} needs inertia and droop")
        devices.append(
            DeviceSpec(
                name=d.name,
                role=FORMING,
                rating=d.rating,
                tau_dc=d.tau_dc,
                p_capacity=caps[d.name],
                ref_pf=RationalTF((1.0,), (d.droop, 2.0 * d.h_inertia)),
                ref_vq=constant(0.0),
                is_dvpp=False,
            )
        )
    return Fleet(tuple(devices), desired, tau_pll, vq_augment_tau)


# ---------------------------------------------------------------------------
# hybrid split
# ---------------------------------------------------------------------------


def hybrid_split(fleet: Fleet, epsilon: float) -> Fleet:
    """Split every device into a forming share eps and a following share 1-eps."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if any(d.role != FORMING for d in fleet.dvpp()):
        raise SemanticError("hybrid split starts from an all-forming fleet")
    if epsilon == 1.0:
        return fleet
    devices: list[DeviceSpec] = []
    for dev in fleet.devices:
        if not dev.is_dvpp:
            devices.append(dev)
            continue
        shares = [(FORMING, epsilon, "_form"), (FOLLOWING, 1.0 - epsilon, "_foll")]
        if epsilon == 0.0:
            shares = [(FOLLOWING, 1.0, "")]
        for role, w, suffix in shares:
            if w == 0.0:
                continue
            f_fp = dev.factor_fp.scaled(w)
            f_vq = dev.factor_vq.scaled(w)
            ref_pf, ref_vq, pll_d = realize_device(
                fleet.desired, role, f_fp, f_vq, fleet.tau_pll, fleet.vq_augment_tau
            )
            devices.append(
                DeviceSpec(
                    name=dev.name + suffix,
                    role=role,
                    rating=w * dev.rating,
                    tau_dc=dev.tau_dc,
                    p_capacity=w * dev.p_capacity,
                    factor_fp=f_fp,
                    factor_vq=f_vq,
                    ref_pf=ref_pf,
                    ref_vq=ref_vq,
                    pll_d=pll_d,
                )
            )
    return Fleet(tuple(devices), fleet.desired, fleet.tau_pll, fleet.vq_augment_tau)
