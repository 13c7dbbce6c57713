"""Spatially distributed plants over non-inductive networks.

Resistive lines couple frequency and voltage control.  Rotating the power
pair (p, q) by the line impedance angle yields rotational powers whose
transmission is lossless when all lines share one R/X ratio, so the
frequency loop carries over unchanged with rotational active power in
place of active power.  The physical injections are recovered by the
inverse rotation and checked against device limits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .design import Fleet
from .errors import (
    DimensionMismatch,
    HeterogeneousRatioWithStrictMode,
    ZeroImpedance,
)
from .lti import RationalTF, StateSpaceModel, tf_scale
from .network import (
    ClosedLoopModel,
    Edge,
    KronMaps,
    NetworkGraph,
    build_frequency_loop,
    build_laplacian,
    kron_maps,
)


@dataclass(frozen=True)
class RotationParams:
    """Line impedance split; the rotation decouples frequency from voltage."""

    r: float
    x: float

    def __post_init__(self):
        if self.z <= 0.0:
            raise ZeroImpedance(f"impedance magnitude is zero for r={self.r}, x={self.x}")

    @property
    def z(self) -> float:
        return math.hypot(self.r, self.x)

    @property
    def ratio(self) -> float:
        return self.r / self.x if self.x != 0 else math.inf

    def matrix(self) -> np.ndarray:
        z = self.z
        return np.array([[self.x / z, -self.r / z], [self.r / z, self.x / z]])

    @classmethod
    def from_ratio(cls, ratio: float, x: float = 1.0) -> "RotationParams":
        return cls(r=ratio * x, x=x)


def rotate_power(p: float, q: float, params: RotationParams) -> tuple[float, float]:
    """(p, q) -> rotational (p', q')."""
    out = params.matrix() @ np.array([p, q])
    return float(out[0]), float(out[1])


def rotate_back(p_rot: float, q_rot: float, params: RotationParams) -> tuple[float, float]:
    """Inverse transform (the rotation is orthogonal)."""
    out = params.matrix().T @ np.array([p_rot, q_rot])
    return float(out[0]), float(out[1])


def lossless_flow_residual(
    delta: float, v_l: float, v_m: float, z: float, p_rot: float, q_rot: float
) -> tuple[float, float]:
    """Residuals of the lossless two-bus flow equations in rotational powers.

    Used as a verification oracle: both residuals vanish when the angle,
    voltages and rotational powers are mutually consistent.
    """
    if v_l <= 0 or v_m <= 0:
        raise ValueError("bus voltages must be positive")
    r1 = math.sin(delta) - z * p_rot / (v_l * v_m)
    r2 = (v_l - v_m * math.cos(delta)) - z * q_rot / v_l
    return r1, r2


def poc_coupled_spec(
    tdes_pf_prime: RationalTF, params: RotationParams
) -> tuple[RationalTF, RationalTF]:
    """Coupled (p, q) -> frequency row realized by rotational power control.

    In the purely inductive limit the q column vanishes and the row reduces
    to the decoupled specification.
    """
    z = params.z
    return (
        tf_scale(tdes_pf_prime, params.x / z),
        tf_scale(tdes_pf_prime, -params.r / z),
    )


# ---------------------------------------------------------------------------
# area model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AreaModel:
    """A fleet spread over an internal network with boundary coupling buses."""

    graph: NetworkGraph  # edges carry 1/x couplings; rx per edge optional
    fleet: Fleet  # devices placed at graph nodes carrying their names
    pocs: tuple[str, ...]
    homogeneous_ratio: float | None = 1.0
    vq_prime_droop: float = 0.5  # conservative local q' droop, x 1/D_q

    def __post_init__(self):
        if not self.pocs:
            raise ValueError("area needs at least one coupling bus")
        known = set(self.graph.nodes)
        for p in self.pocs:
            if p not in known:
                raise ValueError(f"coupling bus {p!r} not in graph")
        names = {d.name for d in self.fleet.devices}
        missing = names - known
        if missing:
            raise DimensionMismatch(f"devices without buses: {sorted(missing)}")


def _edge_weight(e: Edge, ratio: float) -> float:
    """Coupling 1/Z from the inductive coupling 1/X and the R/X ratio."""
    x = 1.0 / e.weight
    z = x * math.sqrt(1.0 + ratio * ratio)
    return 1.0 / z


def area_laplacian(area: AreaModel, ratios: dict[tuple[str, str], float] | None = None):
    """Laplacian over 1/Z edge weights plus the reduction bookkeeping.

    ratios overrides the homogeneous design ratio per edge (Monte Carlo
    mode); otherwise every edge must carry the common design ratio.
    """
    edges = []
    for e in area.graph.edges:
        if ratios is not None:
            ratio = ratios.get((e.a, e.b), ratios.get((e.b, e.a), e.rx))
        else:
            ratio = e.rx if e.rx is not None else area.homogeneous_ratio
            if area.homogeneous_ratio is not None and ratio != area.homogeneous_ratio:
                raise HeterogeneousRatioWithStrictMode(
                    f"edge {e.a}-{e.b} ratio {ratio} differs from the design "
                    f"ratio {area.homogeneous_ratio}; heterogeneous plants are "
                    "a Monte Carlo evaluation mode"
                )
        if ratio is None:
            ratio = 0.0
        edges.append(Edge(e.a, e.b, _edge_weight(e, ratio), ratio))
    graph = NetworkGraph(area.graph.nodes, tuple(edges), area.pocs)
    lap = build_laplacian(graph)
    device_names = [d.name for d in area.fleet.devices]
    return kron_maps(lap, device_names)


@dataclass(frozen=True)
class AreaClosedLoop:
    """Frequency loop in rotational-power coordinates plus recovery maps."""

    loop: ClosedLoopModel
    maps: KronMaps
    rotation: RotationParams
    pocs: tuple[str, ...]
    vq_prime_droop_gain: float

    @property
    def ss(self) -> StateSpaceModel:
        return self.loop.ss


def build_area_model(
    area: AreaModel, ratios: dict[tuple[str, str], float] | None = None
) -> AreaClosedLoop:
    """Assemble the rotational-power frequency loop over the reduced area.

    The returned loop takes per-device rotational power disturbances; POC
    frequencies are reconstructed from device frequencies through the
    eliminated-bus map, and physical injections follow by inverse rotation.
    """
    if area.homogeneous_ratio is None and ratios is None:
        raise HeterogeneousRatioWithStrictMode(
            "area has no common design ratio; provide Monte Carlo ratios"
        )
    maps = area_laplacian(area, ratios)
    loop = build_frequency_loop(area.fleet, maps.reduced)
    rotation = RotationParams.from_ratio(area.homogeneous_ratio or 0.0)
    droop_gain = area.vq_prime_droop / area.fleet.desired.tf_qv.dc_gain()
    return AreaClosedLoop(loop, maps, rotation, area.pocs, droop_gain)


def recover_physical(
    model: AreaClosedLoop,
    p_rot: np.ndarray,
    q_rot: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Physical (p, q) from rotational injections at one device.

    Local voltage control output q' is zero without voltage disturbances.
    """
    if q_rot is None:
        q_rot = np.zeros_like(p_rot)
    m = model.rotation.matrix().T
    p = m[0, 0] * p_rot + m[0, 1] * q_rot
    q = m[1, 0] * p_rot + m[1, 1] * q_rot
    return p, q


def sample_rx(
    min_ratio: float,
    max_ratio: float,
    n_lines: int,
    n_samples: int,
    seed: int,
) -> list[np.ndarray]:
    """Deterministic uniform per-line R/X draws, one stream per sample."""
    if not 0 < min_ratio <= max_ratio:
        raise ValueError("need 0 < min_ratio <= max_ratio")
    if n_samples < 1:
        raise ValueError("need at least one sample")
    out = []
    for i in range(n_samples):
        rng = np.random.default_rng(seed + i)
        out.append(rng.uniform(min_ratio, max_ratio, size=n_lines))
    return out
