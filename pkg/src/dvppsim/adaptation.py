"""Online adaptation of participation gains to time-varying device capacities.

Low-pass DC gains track the available headroom: active-power capacity on
the frequency channel, reactive headroom from the converter capability
circle on the voltage channel.  The complement factor and every reference
model are rebuilt after an update, which redistributes duty across devices
while leaving the aggregate response unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .design import (
    COMPLEMENT,
    LPF,
    DeviceSpec,
    Fleet,
    ParticipationFactor,
    complete_fleet,
    make_adpf,
    realize_device,
)
from .errors import (
    AllCapacitiesZero,
    CapacityExceedsRating,
    UnknownDevice,
)
from .lti import tf_eval


def q_capability(s_rating: float, p_capacity: float) -> float:
    """Reactive headroom on the circular converter capability curve."""
    if p_capacity < 0 or p_capacity > s_rating + 1e-12:
        raise CapacityExceedsRating(
            f"p_capacity {p_capacity} outside [0, {s_rating}]"
        )
    return math.sqrt(max(s_rating**2 - p_capacity**2, 0.0))


@dataclass(frozen=True)
class DeviceCapacity:
    p_capacity: float  # pu
    s_rating: float  # pu

    @property
    def q_capacity(self) -> float:
        return q_capability(self.s_rating, self.p_capacity)


@dataclass(frozen=True)
class CapacityState:
    entries: dict[str, DeviceCapacity]

    @classmethod
    def nominal(cls, fleet: Fleet, base_mva: float = 100.0) -> "CapacityState":
        return cls(
            {
                d.name: DeviceCapacity(d.p_capacity, d.rating / base_mva)
                for d in fleet.dvpp()
            }
        )

    def with_update(self, device: str, p_capacity: float) -> "CapacityState":
        if device not in self.entries:
            raise UnknownDevice(device)
        new = dict(self.entries)
        new[device] = replace(new[device], p_capacity=p_capacity)
        return CapacityState(new)


@dataclass(frozen=True)
class CapacityEvent:
    time: float
    device: str
    p_capacity: float

    def __post_init__(self):
        if self.time < 0:
            raise ValueError("event time must be nonnegative")


def _rebuild_device(dev: DeviceSpec, f_fp, f_vq, fleet: Fleet) -> DeviceSpec:
    ref_pf, ref_vq, pll_d = realize_device(
        fleet.desired, dev.role, f_fp, f_vq, fleet.tau_pll, fleet.vq_augment_tau
    )
    return replace(
        dev, factor_fp=f_fp, factor_vq=f_vq, ref_pf=ref_pf, ref_vq=ref_vq, pll_d=pll_d
    )


def update_dc_gains(fleet: Fleet, caps: CapacityState, channel: str) -> Fleet:
    """Renormalize low-pass gains in proportion to capacity on one channel.

    The last low-pass gain takes the exact remainder so the DC-gain
    condition closes in floating point, and the complement factor plus all
    reference models are rebuilt against the new split.
    """
    if channel not in ("fp", "vq"):
        raise ValueError(f"unknown channel {channel!r}")
    lpf_devs = [
        d
        for d in fleet.dvpp()
        if (d.factor_fp if channel == "fp" else d.factor_vq).kind == LPF
    ]
    if not lpf_devs:
        raise AllCapacitiesZero("no low-pass device on this channel")

    def headroom(d: DeviceSpec) -> float:
        cap = caps.entries[d.name]
        return cap.p_capacity if channel == "fp" else cap.q_capacity

    weights = np.array([headroom(d) for d in lpf_devs])
    if weights.sum() <= 0:
        raise AllCapacitiesZero(f"all {channel} capacities zero")
    gains = weights / weights.sum()
    gains[-1] = 1.0 - float(gains[:-1].sum())
    new_mu = dict(zip((d.name for d in lpf_devs), gains))

    updated: dict[str, dict[str, ParticipationFactor]] = {}
    plain_factors: dict[str, ParticipationFactor] = {}
    complement_devs = []
    for dev in fleet.dvpp():
        factor = dev.factor_fp if channel == "fp" else dev.factor_vq
        if factor.kind == COMPLEMENT:
            complement_devs.append(dev)
            continue
        if dev.name in new_mu:
            factor = make_adpf(LPF, factor.tau, float(new_mu[dev.name]), factor.channel)
        plain_factors[dev.name] = factor
        updated[dev.name] = {channel: factor}
    for dev in complement_devs:
        comp = complete_fleet(list(plain_factors.values()), channel)
        updated[dev.name] = {channel: comp}

    devices = []
    for dev in fleet.devices:
        if not dev.is_dvpp:
            devices.append(dev)
            continue
        f_fp, f_vq = dev.factor_fp, dev.factor_vq
        if channel == "fp":
            f_fp = updated[dev.name]["fp"]
        else:
            f_vq = updated[dev.name]["vq"]
        devices.append(_rebuild_device(dev, f_fp, f_vq, fleet))
    return Fleet(tuple(devices), fleet.desired, fleet.tau_pll, fleet.vq_augment_tau)


def apply_capacity_event(
    fleet: Fleet, caps: CapacityState, event: CapacityEvent
) -> tuple[Fleet, CapacityState]:
    """Apply one capacity change and re-run both gain updates.

    The aggregate response is invariant under the update; only the split
    across devices moves.  A no-op event returns the inputs untouched.
    """
    if event.device not in caps.entries:
        raise UnknownDevice(event.device)
    if caps.entries[event.device].p_capacity == event.p_capacity:
        return fleet, caps
    new_caps = caps.with_update(event.device, event.p_capacity)
    new_fleet = update_dc_gains(fleet, new_caps, "fp")
    try:
        new_fleet = update_dc_gains(new_fleet, new_caps, "vq")
    except AllCapacitiesZero:
        pass  # every device fully loaded: keep the previous reactive split
    return new_fleet, new_caps


def adpf_snapshot(fleet: Fleet, freq_grid) -> dict[str, np.ndarray]:
    """Magnitude table of every participation factor over a frequency grid.

    Returns columns keyed 'omega' and '<device>.<channel>'; the complex sum
    across devices stays one per channel at every frequency.
    """
    grid = np.asarray(list(freq_grid), dtype=float)
    table: dict[str, np.ndarray] = {"omega": grid}
    for dev in fleet.dvpp():
        for channel, factor in (("fp", dev.factor_fp), ("vq", dev.factor_vq)):
            if factor is None:
                continue
            vals = np.array([abs(tf_eval(factor.tf, 1j * w)) for w in grid])
            table[f"{dev.name}.{channel}"] = vals
    return table


def snapshot_to_csv(table: dict[str, np.ndarray]) -> str:
    names = list(table)
    lines = [",".join(names)]
    for row in zip(*(table[k] for k in names)):
        lines.append(",".join(f"{v:.9e}" for v in row))
    return "\n".join(lines) + "\n"
