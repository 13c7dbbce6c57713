"""Scenario drivers: build, simulate, verify, Monte Carlo.

Events that change the fleet (capacity updates, outages) cut the horizon
into segments; device states are carried across the cut in physical
coordinates, gains switch instantaneously.  Loads are tracked per bus and
re-allocated onto the retained device buses through the reduction maps of
whichever plant is active, so a bus that loses its device keeps its load.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .adaptation import CapacityEvent, CapacityState, apply_capacity_event
from .design import (
    FORMING,
    AggregationReport,
    Fleet,
    ParticipationReport,
    check_participation,
    design_fleet,
    hybrid_split,
    make_tdes,
    verify_aggregation,
)
from .errors import SemanticError
from .lti import TimeSeries, discretize_bilinear, to_state_space
from .metrics import MetricsReport, compute_metrics
from .network import (
    ClosedLoopModel,
    Edge,
    KronMaps,
    NetworkGraph,
    build_laplacian,
    build_frequency_loop,
    coherent_response,
    kron_maps,
)
from .scenario import (
    DEFAULT_STAR_COUPLING,
    LoadEvent,
    MonteCarloBlock,
    OutageEvent,
    Scenario,
)
from .spatial import AreaModel, build_area_model, sample_rx

VERIFY_GRID = np.logspace(-2, 3, 200)
HYBRID_GATE = 1e-3  # tolerated aggregation residual below the mismatch edge
SYNC_LAG = 1.0  # s after the first disturbance before trace comparison starts


def build_fleet(sc: Scenario) -> Fleet:
    fleet = design_fleet(
        make_tdes(sc.hp, sc.dp, sc.dq),
        list(sc.devices),
        base_mva=sc.base_mva,
        tau_pll=sc.tau_pll,
        vq_augment_tau=sc.vq_augment_tau,
    )
    if sc.epsilon is not None:
        fleet = hybrid_split(fleet, sc.epsilon)
    return fleet


def build_graph(sc: Scenario, fleet: Fleet) -> NetworkGraph:
    if sc.edges:
        nodes: dict[str, None] = {}
        for e in sc.edges:
            nodes.setdefault(e.a)
            nodes.setdefault(e.b)
        return NetworkGraph(tuple(nodes), sc.edges, sc.pocs)
    names = tuple(d.name for d in fleet.devices)
    return NetworkGraph(
        names + ("pcc",),
        tuple(Edge(nm, "pcc", DEFAULT_STAR_COUPLING) for nm in names),
    )


@dataclass
class _Plant:
    fleet: Fleet
    graph: NetworkGraph
    maps: KronMaps
    loop: ClosedLoopModel


def _build_plant(sc: Scenario, fleet: Fleet, ratios=None) -> _Plant:
    graph = build_graph(sc, fleet)
    if sc.is_area:
        # load magnitudes in area scenarios are rotational-power injections,
        # the quantity the distributed control balances losslessly
        area = AreaModel(graph, fleet, sc.pocs, sc.rx)
        model = build_area_model(area, ratios)
        return _Plant(fleet, graph, model.maps, model.loop)
    device_names = [d.name for d in fleet.devices]
    maps = kron_maps(build_laplacian(graph), device_names)
    loop = build_frequency_loop(fleet, maps.reduced)
    return _Plant(fleet, graph, maps, loop)


def _step_array(t: np.ndarray, steps: list[tuple[float, float]]) -> np.ndarray:
    u = np.zeros_like(t)
    for t0, amp in steps:
        u[t >= t0 - 1e-12] += amp
    return u


def _device_inputs(plant: _Plant, t, bus_steps: dict[str, list]) -> np.ndarray:
    """Per-device input columns from bus-level steps via the reduction maps."""
    names = plant.loop.device_names
    u = np.zeros((len(t), len(names)))
    for bus, steps in bus_steps.items():
        arr = _step_array(t, steps)
        if bus in names:
            u[:, names.index(bus)] += arr
        elif bus in plant.maps.eliminated:
            col = plant.maps.inject[:, plant.maps.eliminated.index(bus)]
            u += arr[:, None] * col[None, :]
        else:
            raise SemanticError(f"load bus {bus!r} not in the network")
    return u


def _march(loop: ClosedLoopModel, u: np.ndarray, dt: float, x0: np.ndarray):
    """Discrete march returning outputs and the final state."""
    ss = loop.ss
    Ad, Bd, Cd, Dd = discretize_bilinear(ss, dt)
    nt = u.shape[0]
    y = np.empty((nt, ss.D.shape[0]))
    if ss.order == 0:
        return u @ Dd.T, x0
    x = x0.copy()
    for k in range(nt):
        y[k] = Cd @ x + Dd @ u[k]
        x = Ad @ x + Bd @ u[k]
    return y, x


def _carry_state(old: _Plant, x_old: np.ndarray, new: _Plant) -> np.ndarray:
    """Device states survive a rebuild; network states restart if shape changes."""
    if x_old.size == new.loop.ss.order and old.loop.device_names == new.loop.device_names:
        return new.loop.from_physical(old.loop.to_physical(x_old))
    x_new = np.zeros(new.loop.ss.order)
    phys_old = old.loop.to_physical(x_old)
    for name, sl_new in new.loop.state_slices.items():
        sl_old = old.loop.state_slices.get(name)
        if sl_old is None:
            continue
        if (sl_old.stop - sl_old.start) == (sl_new.stop - sl_new.start):
            x_new[sl_new] = phys_old[sl_old]
    return new.loop.from_physical(x_new)


@dataclass
class RunResult:
    series: TimeSeries
    metrics: MetricsReport
    scenario: Scenario
    fleet: Fleet  # final configuration
    dp_total: float


def run(sc: Scenario) -> RunResult:
    """Simulate a scenario end to end, emitting the standard channel set."""
    sc.validate()
    fleet = build_fleet(sc)
    if not [d for d in fleet.devices if d.role == FORMING]:
        raise SemanticError("no forming device present; refusing to simulate")
    caps = CapacityState.nominal(fleet, sc.base_mva)
    plant = _build_plant(sc, fleet)

    n = int(round(sc.t_end / sc.dt)) + 1
    t = np.arange(n) * sc.dt
    bus_steps: dict[str, list] = {}
    cuts: list = []
    flags: list[str] = []
    for ev in sc.events:
        if isinstance(ev, LoadEvent):
            bus_steps.setdefault(ev.bus, []).append((ev.time, ev.dp))
        else:
            cuts.append(ev)

    # march through segments, rebuilding the plant at fleet-changing events
    all_names: list[str] = list(plant.loop.device_names)
    y_parts: list[tuple[_Plant, int, int, np.ndarray]] = []
    x = np.zeros(plant.loop.ss.order)
    k0 = 0
    for ev in cuts + [None]:
        k1 = n if ev is None else int(round(ev.time / sc.dt))
        if k1 > k0:
            # steps are persistent, so evaluating them on the segment's own
            # time slice keeps earlier disturbances active
            u = _device_inputs(plant, t[k0:k1], bus_steps)
            y, x = _march(plant.loop, u, sc.dt, x)
            y_parts.append((plant, k0, k1, y))
        if ev is None:
            break
        old_plant = plant
        if isinstance(ev, CapacityEvent):
            old_cap = caps.entries[ev.device].p_capacity
            fleet, caps = apply_capacity_event(fleet, caps, ev)
            if ev.p_capacity < old_cap:  # curtailment appears as lost injection
                bus_steps.setdefault(ev.device, []).append(
                    (ev.time, ev.p_capacity - old_cap)
                )
        elif isinstance(ev, OutageEvent):
            survivors = tuple(d for d in fleet.devices if d.name != ev.device)
            if not survivors:
                raise SemanticError("outage removed the last device")
            fleet = Fleet(survivors, fleet.desired, fleet.tau_pll, fleet.vq_augment_tau)
            if not [d for d in fleet.devices if d.role == FORMING]:
                raise SemanticError(
                    f"no forming device present after outage of {ev.device!r}; "
                    "refusing to simulate"
                )
            flags.append(f"outage {ev.device} at t={ev.time:g}")
        plant = _build_plant(sc, fleet)
        if isinstance(ev, OutageEvent):
            agg_dc = coherent_response(fleet).dc_gain()
            flags.append(
                f"post-outage operating point: {agg_dc:.6e} pu frequency per pu disturbance"
            )
        x = _carry_state(old_plant, x, plant)
        k0 = k1

    channels = _stitch_channels(sc, t, y_parts, all_names, bus_steps, flags)
    series = TimeSeries(t, channels)
    dp_total = sum(amp for steps in bus_steps.values() for _, amp in steps)
    metrics = compute_metrics(series, dp_total)
    metrics.flags.extend(flags)
    _trace_check(sc, series, metrics, bus_steps)
    _limit_check(plant, series, metrics)
    series = _select_outputs(sc, series)
    return RunResult(series, metrics, sc, fleet, dp_total)


def _stitch_channels(sc, t, y_parts, all_names, bus_steps, flags) -> dict[str, np.ndarray]:
    n = len(t)
    channels: dict[str, np.ndarray] = {}
    first = y_parts[0][0]
    out_names = list(first.loop.ss.outputs)
    for name in out_names:
        channels[name] = np.zeros(n)
    bus_names = [b for b in first.maps.eliminated]
    for b in bus_names:
        channels[f"f_{b}"] = np.zeros(n)
    for plant, k0, k1, y in y_parts:
        names = plant.loop.ss.outputs
        for j, name in enumerate(names):
            if name in channels:
                channels[name][k0:k1] = y[:, j]
        # reconstruct eliminated-bus frequencies from device frequencies
        f_idx = [list(names).index(f"f_{nm}") for nm in plant.loop.device_names]
        f_dev = y[:, f_idx].T
        for b in bus_names:
            if b in plant.maps.eliminated:
                row = plant.maps.reconstruct[plant.maps.eliminated.index(b)]
                channels[f"f_{b}"][k0:k1] = row @ f_dev
    _append_reference_channels(sc, t, channels, y_parts, bus_steps)
    if sc.is_area:
        _append_physical_channels(sc, t, channels, y_parts, bus_steps)
    return channels


def _append_reference_channels(sc, t, channels, y_parts, bus_steps):
    """Desired-behavior and aggregate-fleet traces driven by the total step."""
    total_steps = [s for steps in bus_steps.values() for s in steps]
    u_tot = _step_array(t, total_steps)
    des = to_state_space(y_parts[0][0].fleet.desired.tf_pf)
    channels["f_des"] = _march_siso(des, u_tot, sc.dt)
    agg_vals = np.zeros(len(t))
    x = None
    for plant, k0, k1, _ in y_parts:
        agg = to_state_space(coherent_response(plant.fleet))
        if x is None or x.size != agg.order:
            x = np.zeros(agg.order)
        seg, x = _march_ss(agg, u_tot[k0:k1], sc.dt, x)
        agg_vals[k0:k1] = seg
    channels["f_agg"] = agg_vals


def _march_siso(ss, u, dt):
    y, _ = _march_ss(ss, u, dt, np.zeros(ss.order))
    return y


def _march_ss(ss, u, dt, x0):
    Ad, Bd, Cd, Dd = discretize_bilinear(ss, dt)
    y = np.empty(len(u))
    if ss.order == 0:
        return Dd[0, 0] * u, x0
    x = x0.copy()
    for k in range(len(u)):
        y[k] = Cd[0] @ x + Dd[0, 0] * u[k]
        x = Ad @ x + Bd[:, 0] * u[k]
    return y, x


def _append_physical_channels(sc, t, channels, y_parts, bus_steps):
    """Recover physical injections from rotational ones (q' locally zero)."""
    plant = y_parts[0][0]
    from .spatial import RotationParams

    rot = RotationParams.from_ratio(sc.rx or 0.0)
    mt = rot.matrix().T
    for nm in plant.loop.device_names:
        if f"p_{nm}" in channels:
            p_rot = channels[f"p_{nm}"]
            channels[f"pphys_{nm}"] = mt[0, 0] * p_rot
            channels[f"qphys_{nm}"] = mt[1, 0] * p_rot
    poc_steps = [s for b, steps in bus_steps.items() if b in sc.pocs for s in steps]
    channels["pprime_poc_total"] = _step_array(t, poc_steps)


def _trace_check(sc, series, metrics, bus_steps):
    """Synchronized-window match between the bus frequency and the target."""
    ref = series.channels.get("f_des")
    probe = None
    for name in ("f_pcc", "f_coi"):
        if name in series.channels:
            probe = series[name]
            break
    if ref is None or probe is None or not np.any(ref):
        return
    first_event = min(
        (t0 for steps in bus_steps.values() for t0, _ in steps), default=0.0
    )
    k = min(int(round((first_event + SYNC_LAG) / sc.dt)), len(ref) - 1)
    scale = np.max(np.abs(ref))
    metrics.trace_error = float(np.max(np.abs(probe[k:] - ref[k:])) / scale)
    metrics.trace_tol = sc.tol_trace


def _limit_check(plant, series, metrics):
    for dev in plant.fleet.dvpp():
        ch = f"pphys_{dev.name}" if f"pphys_{dev.name}" in series.channels else f"p_{dev.name}"
        if ch not in series.channels:
            continue
        peak = float(np.max(np.abs(series[ch])))
        if peak > dev.p_capacity + 1e-9:
            metrics.flags.append(
                f"limit: |{ch}| peak {peak:.4f} pu exceeds capacity {dev.p_capacity:.4f} pu"
            )


def _select_outputs(sc: Scenario, series: TimeSeries) -> TimeSeries:
    if not sc.outputs:
        return series
    missing = [name for name in sc.outputs if name not in series.channels]
    if missing:
        raise SemanticError(
            f"unknown output channels {missing}; available: {sorted(series.channels)}"
        )
    return TimeSeries(series.t, {name: series[name] for name in sc.outputs})


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


@dataclass
class VerifyReport:
    participation_fp: ParticipationReport
    participation_vq: ParticipationReport
    aggregation: AggregationReport
    condition_tol: float
    hybrid_gate: float = HYBRID_GATE
    flags: list[str] = field(default_factory=list)

    def gated_residual(self) -> float:
        return max(self.aggregation.freq_low, self.aggregation.volt_low)

    def passed(self) -> bool:
        # participation identities hold exactly whatever the role split;
        # aggregation of realized models is relaxed below the mismatch edge
        gate = self.hybrid_gate if self.aggregation.has_following else self.condition_tol
        conditions_ok = (
            self.participation_fp.dc_residual <= self.condition_tol
            and self.participation_vq.dc_residual <= self.condition_tol
            and self.participation_fp.max_deviation <= self.condition_tol
            and self.participation_vq.max_deviation <= self.condition_tol
        )
        return self.gated_residual() <= gate and conditions_ok

    def rows(self) -> list[tuple[str, str]]:
        a = self.aggregation
        out = [
            ("participation_fp_dev", f"{self.participation_fp.max_deviation:.9e}"),
            ("participation_fp_dc", f"{self.participation_fp.dc_residual:.9e}"),
            ("participation_vq_dev", f"{self.participation_vq.max_deviation:.9e}"),
            ("participation_vq_dc", f"{self.participation_vq.dc_residual:.9e}"),
            ("aggregation_freq_gated", f"{a.freq_low:.9e}"),
            ("aggregation_volt_gated", f"{a.volt_low:.9e}"),
            ("aggregation_freq_tolerated", f"{a.freq_high:.9e}"),
            ("aggregation_volt_tolerated", f"{a.volt_high:.9e}"),
            ("mismatch_edge_rad_s", f"{a.split_omega:.9e}"),
            ("passed", str(self.passed()).lower()),
        ]
        for flag in self.flags:
            out.append(("flag", flag))
        return out

    def to_csv(self) -> str:
        return "\n".join(f"{k},{v}" for k, v in self.rows()) + "\n"


def verify(sc: Scenario, freq_grid=None) -> VerifyReport:
    """Frequency-domain checks of the participation and aggregation conditions."""
    sc.validate()
    fleet = build_fleet(sc)
    grid = VERIFY_GRID if freq_grid is None else freq_grid
    rep = VerifyReport(
        participation_fp=check_participation(fleet, "fp", grid),
        participation_vq=check_participation(fleet, "vq", grid),
        aggregation=verify_aggregation(fleet, grid),
        condition_tol=sc.tol_condition,
    )
    if not [d for d in fleet.devices if d.role == FORMING]:
        rep.flags.append("no forming device present")
    return rep


# ---------------------------------------------------------------------------
# Monte Carlo over heterogeneous R/X ratios
# ---------------------------------------------------------------------------


@dataclass
class MonteCarloResult:
    baseline: RunResult
    rows: list[dict]  # per sample: deviation + per-device peaks
    seed: int

    def to_csv(self) -> str:
        if not self.rows:
            return "sample\n"
        keys = list(self.rows[0])
        lines = [",".join(keys)]
        for row in self.rows:
            lines.append(
                ",".join(
                    f"{row[k]:.9e}" if isinstance(row[k], float) else str(row[k])
                    for k in keys
                )
            )
        return "\n".join(lines) + "\n"

    def max_deviation(self) -> float:
        return max(r["poc_freq_deviation"] for r in self.rows)


def _mc_sample_run(args):
    sc, ratios_list, idx = args
    fleet = build_fleet(sc)
    graph = build_graph(sc, fleet)
    ratios = {
        (e.a, e.b): float(r) for e, r in zip(graph.edges, ratios_list)
    }
    plant = _build_plant(sc, fleet, ratios)
    n = int(round(sc.t_end / sc.dt)) + 1
    t = np.arange(n) * sc.dt
    bus_steps: dict[str, list] = {}
    for ev in sc.events:
        if isinstance(ev, LoadEvent):
            bus_steps.setdefault(ev.bus, []).append((ev.time, ev.dp))
    u = _device_inputs(plant, t, bus_steps)
    y, _ = _march(plant.loop, u, sc.dt, np.zeros(plant.loop.ss.order))
    names = plant.loop.ss.outputs
    eig = np.linalg.eigvals(plant.loop.ss.A)
    stable = bool(np.max(eig.real) < 1e-8 and np.all(np.isfinite(y)))
    out = {"sample": idx, "stable": stable}
    # poc frequencies via the reduction map
    f_idx = [list(names).index(f"f_{nm}") for nm in plant.loop.device_names]
    f_dev = y[:, f_idx].T
    for poc in sc.pocs:
        row = plant.maps.reconstruct[plant.maps.eliminated.index(poc)]
        out[f"f_{poc}"] = row @ f_dev
    for nm in plant.loop.device_names:
        out[f"p_{nm}"] = y[:, list(names).index(f"p_{nm}")]
    return out


def montecarlo(
    sc: Scenario,
    samples: int | None = None,
    seed: int | None = None,
    jobs: int = 1,
) -> MonteCarloResult:
    """Evaluate the homogeneous design against ratio-perturbed plants.

    Per-sample seeds are base_seed + i, so extending the sample count
    prefix-preserves earlier draws.
    """
    sc.validate()
    if not sc.is_area:
        raise SemanticError("Monte Carlo needs a spatially distributed scenario")
    block = sc.montecarlo or MonteCarloBlock()
    n_samples = samples if samples is not None else block.samples
    base_seed = seed if seed is not None else block.seed
    baseline = run(sc)
    fleet = build_fleet(sc)
    graph = build_graph(sc, fleet)
    draws = sample_rx(block.rx_min, block.rx_max, len(graph.edges), n_samples, base_seed)
    args = [(sc, list(draws[i]), i) for i in range(n_samples)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            raw = list(pool.map(_mc_sample_run, args))
    else:
        raw = [_mc_sample_run(a) for a in args]

    rows = []
    base_traces = {
        p: baseline.series[f"f_{p}"] for p in sc.pocs if f"f_{p}" in baseline.series.channels
    }
    from .spatial import RotationParams

    mt = RotationParams.from_ratio(sc.rx or 0.0).matrix().T
    for res in raw:
        dev = max(
            float(np.max(np.abs(res[f"f_{p}"] - base_traces[p]))) for p in sc.pocs
        )
        row = {
            "sample": res["sample"],
            "seed": base_seed + res["sample"],
            "stable": int(res["stable"]),
            "poc_freq_deviation": dev,
        }
        for nm in (d.name for d in fleet.devices):
            p_rot = res[f"p_{nm}"]
            row[f"peak_p_{nm}"] = float(np.max(np.abs(mt[0, 0] * p_rot)))
            row[f"peak_q_{nm}"] = float(np.max(np.abs(mt[1, 0] * p_rot)))
        rows.append(row)
    return MonteCarloResult(baseline, rows, base_seed)
