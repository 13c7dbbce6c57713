"""Scenario files: a line-oriented format for full experiments.

Sections, each introduced by a bracketed header:

    [system]      base_mva / base_kv / freq_hz keys
    [tdes]        hp / dp / dq, optional tau_pll and vq_augment
    [devices]     one device per line: name role kind tau mu rating tau_dc
    [network]     edge lines "from to b [r_over_x]"; "poc <bus>" marks
                  boundary buses; "rx <ratio>" sets the common design ratio
                  (making the scenario a spatially distributed area)
    [events]      "load t bus dp" | "capacity t device p_cap" | "outage t device"
    [sim]         dt / tend
    [tolerances]  condition / trace
    [montecarlo]  samples / rx_min / rx_max / seed
    [outputs]     whitespace-separated channel names

A file may instead consist of a single "preset <name> [key=value ...]" line;
presets case1, case2 (epsilon=...) and case3 reproduce the bundled case
studies.  Device kinds: lpf, hpf (mu ignored), bpf (tau as low:high),
complement, sg (tau = inertia constant, mu = damping).  Without a [network]
section, devices are strung to a stiff star around a bus named "pcc".
"""

from __future__ import annotations

from dataclasses import dataclass

from .adaptation import CapacityEvent
from .design import DEFAULT_TAU_PLL, DeviceDesign
from .errors import ParseError, SemanticError
from .network import Edge

DEFAULT_STAR_COUPLING = 1000.0  # pu, same-busbar electrical distance


@dataclass(frozen=True)
class LoadEvent:
    time: float
    bus: str
    dp: float


@dataclass(frozen=True)
class OutageEvent:
    time: float
    device: str


@dataclass(frozen=True)
class MonteCarloBlock:
    samples: int = 24
    rx_min: float = 0.4
    rx_max: float = 2.0
    seed: int = 1


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    base_mva: float = 100.0
    base_kv: float = 230.0
    freq_hz: float = 50.0
    hp: float = 5.55
    dp: float = 33.33
    dq: float = 0.01
    tau_pll: float = DEFAULT_TAU_PLL
    vq_augment_tau: float | None = None
    devices: tuple[DeviceDesign, ...] = ()
    epsilon: float | None = None  # split every device into forming/following shares
    edges: tuple[Edge, ...] = ()
    pocs: tuple[str, ...] = ()
    rx: float | None = None  # common design R/X; set for area scenarios
    events: tuple = ()
    dt: float = 1e-3
    t_end: float = 30.0
    tol_condition: float = 1e-6
    tol_trace: float = 0.02
    montecarlo: MonteCarloBlock | None = None
    outputs: tuple[str, ...] = ()

    @property
    def is_area(self) -> bool:
        return self.rx is not None or bool(self.pocs)

    def validate(self) -> None:
        if not self.devices:
            raise SemanticError("scenario has no devices")
        if self.dt <= 0:
            raise SemanticError("dt must be positive")
        times = [e.time for e in self.events]
        if any(t2 < t1 for t1, t2 in zip(times, times[1:])):
            raise SemanticError("events must be time-sorted")
        if times and self.t_end <= max(times):
            raise SemanticError("t_end must exceed the last event time")
        names = {d.name for d in self.devices}
        if self.edges:
            buses = set(self._edge_nodes())
        else:
            buses = set(names) | {"pcc"}
            if self.epsilon is not None:
                buses |= {f"{n}_form" for n in names} | {f"{n}_foll" for n in names}
        for ev in self.events:
            if isinstance(ev, LoadEvent) and ev.bus not in buses:
                raise SemanticError(f"load event at unknown bus {ev.bus!r}")
            if isinstance(ev, (CapacityEvent, OutageEvent)) and ev.device not in names:
                raise SemanticError(f"event targets unknown device {ev.device!r}")
        if self.is_area and not self.pocs:
            raise SemanticError("area scenario needs at least one poc")

    def _edge_nodes(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for e in self.edges:
            seen.setdefault(e.a)
            seen.setdefault(e.b)
        return tuple(seen)


_SECTIONS = (
    "system", "tdes", "devices", "network", "events", "sim",
    "tolerances", "montecarlo", "outputs",
)

_KIND_ALIASES = {"lpf": "lpf", "hpf": "hpf", "bpf": "bpf",
                 "complement": "complement", "sg": "swing", "swing": "swing"}


def _parse_float(tok: str, what: str, ln: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"{what}: expected a number, got {tok!r}", ln) from None


def _parse_device(tokens: list[str], ln: int) -> DeviceDesign:
    if len(tokens) != 7:
        raise ParseError(
            "device line needs: name role kind tau mu rating tau_dc", ln
        )
    name, role, kind_tok, tau_tok, mu_tok, rating_tok, taudc_tok = tokens
    kind = _KIND_ALIASES.get(kind_tok.lower())
    if kind is None:
        raise ParseError(f"unknown device kind {kind_tok!r}", ln)
    if role not in ("forming", "following"):
        raise ParseError(f"unknown role {role!r}", ln)
    rating = _parse_float(rating_tok, "rating", ln)
    tau_dc = _parse_float(taudc_tok, "tau_dc", ln)
    if kind == "swing":
        return DeviceDesign(
            name, role, "swing", rating=rating, tau_dc=tau_dc,
            h_inertia=_parse_float(tau_tok, "inertia", ln),
            droop=_parse_float(mu_tok, "damping", ln),
        )
    tau: float | tuple[float, float] | None
    if kind == "complement":
        tau = None if tau_tok in ("-", "_") else _parse_float(tau_tok, "tau", ln)
    elif kind == "bpf":
        parts = tau_tok.split(":")
        if len(parts) != 2:
            raise ParseError("bpf tau must be tau_low:tau_high", ln)
        tau = (_parse_float(parts[0], "tau_low", ln), _parse_float(parts[1], "tau_high", ln))
    else:
        tau = _parse_float(tau_tok, "tau", ln)
    mu = None if mu_tok in ("auto", "-", "_") else _parse_float(mu_tok, "mu", ln)
    return DeviceDesign(name, role, kind, tau, mu, rating, tau_dc)


def _parse_event(tokens: list[str], ln: int):
    kind = tokens[0]
    if kind == "load":
        if len(tokens) != 4:
            raise ParseError("load event needs: load t bus dp", ln)
        return LoadEvent(_parse_float(tokens[1], "time", ln), tokens[2],
                         _parse_float(tokens[3], "dp", ln))
    if kind == "capacity":
        if len(tokens) != 4:
            raise ParseError("capacity event needs: capacity t device p_cap", ln)
        return CapacityEvent(_parse_float(tokens[1], "time", ln), tokens[2],
                             _parse_float(tokens[3], "p_cap", ln))
    if kind == "outage":
        if len(tokens) != 3:
            raise ParseError("outage event needs: outage t device", ln)
        return OutageEvent(_parse_float(tokens[1], "time", ln), tokens[2])
    raise ParseError(f"unknown event type {kind!r}", ln)


_KEYED = {
    ("system", "base_mva"): "base_mva",
    ("system", "base_kv"): "base_kv",
    ("system", "freq_hz"): "freq_hz",
    ("tdes", "hp"): "hp",
    ("tdes", "dp"): "dp",
    ("tdes", "dq"): "dq",
    ("tdes", "tau_pll"): "tau_pll",
    ("tdes", "vq_augment"): "vq_augment_tau",
    ("sim", "dt"): "dt",
    ("sim", "tend"): "t_end",
    ("tolerances", "condition"): "tol_condition",
    ("tolerances", "trace"): "tol_trace",
}

_MC_KEYS = {"samples": int, "rx_min": float, "rx_max": float, "seed": int}


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    """Parse scenario text; a lone preset line delegates to the preset table."""
    fields: dict = {"name": name}
    devices: list[DeviceDesign] = []
    edges: list[Edge] = []
    pocs: list[str] = []
    events: list = []
    outputs: list[str] = []
    mc: dict = {}
    section: str | None = None
    saw_content = False

    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0] == "preset":
            if saw_content:
                raise ParseError("preset line must stand alone", ln)
            return preset(tokens[1:], ln)
        saw_content = True
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError("unterminated section header", ln)
            section = line[1:-1].strip().lower()
            if section not in _SECTIONS:
                raise ParseError(f"unknown section [{section}]", ln)
            continue
        if section is None:
            raise ParseError("content before first section header", ln)
        if section == "devices":
            devices.append(_parse_device(tokens, ln))
        elif section == "network":
            if tokens[0] == "poc":
                if len(tokens) != 2:
                    raise ParseError("poc line needs one bus name", ln)
                pocs.append(tokens[1])
            elif tokens[0] == "rx":
                fields["rx"] = _parse_float(tokens[1], "rx", ln)
            elif len(tokens) in (3, 4):
                ratio = _parse_float(tokens[3], "r_over_x", ln) if len(tokens) == 4 else None
                edges.append(Edge(tokens[0], tokens[1],
                                  _parse_float(tokens[2], "coupling", ln), ratio))
            else:
                raise ParseError("edge line needs: from to b [r_over_x]", ln)
        elif section == "events":
            events.append(_parse_event(tokens, ln))
        elif section == "outputs":
            outputs.extend(tokens)
        elif section == "montecarlo":
            if tokens[0] not in _MC_KEYS or len(tokens) != 2:
                raise ParseError(f"unknown montecarlo key {tokens[0]!r}", ln)
            mc[tokens[0]] = _MC_KEYS[tokens[0]](_parse_float(tokens[1], tokens[0], ln))
        else:
            key = (section, tokens[0])
            if key not in _KEYED or len(tokens) != 2:
                raise ParseError(f"unknown key {tokens[0]!r} in [{section}]", ln)
            fields[_KEYED[key]] = _parse_float(tokens[1], tokens[0], ln)

    sc = Scenario(
        devices=tuple(devices),
        edges=tuple(edges),
        pocs=tuple(pocs),
        events=tuple(events),
        outputs=tuple(outputs),
        montecarlo=MonteCarloBlock(**mc) if mc else None,
        **fields,
    )
    sc.validate()
    return sc


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------


def _base_devices() -> tuple[DeviceDesign, ...]:
    return (
        DeviceDesign("wind", "forming", "lpf", 1.5, None, 46.0, 1.5),
        DeviceDesign("pv", "forming", "lpf", 0.6, None, 73.0, 0.6),
        DeviceDesign("bess", "forming", "complement", None, None, 60.0, 0.2),
    )


def preset_case1() -> Scenario:
    """Base plant at one bus replacing a thermal unit's fast services."""
    return Scenario(
        name="case1",
        devices=_base_devices(),
        events=(LoadEvent(1.0, "pcc", -0.28),),
        t_end=30.0,
    )


def preset_case2(epsilon: float = 0.5) -> Scenario:
    """Hybrid variant: every device split into forming/following shares."""
    return Scenario(
        name=f"case2_eps{epsilon:g}",
        devices=_base_devices(),
        epsilon=float(epsilon),
        events=(LoadEvent(1.0, "pcc", -0.42),),
        t_end=30.0,
    )


def preset_case3() -> Scenario:
    """Spatially distributed variant over a two-feeder distribution area."""
    b = 500.0  # 1/x per line segment; stiff enough for a coherent area
    edges = (
        Edge("poc1", "d1", b),
        Edge("d1", "d2", b),
        Edge("d2", "pv", b),
        Edge("d1", "d5", b),
        Edge("d5", "bess", b),
        Edge("poc2", "d5", b),
        Edge("d5", "wind", b),
        Edge("d2", "d5", b),
    )
    return Scenario(
        name="case3",
        devices=_base_devices(),
        edges=edges,
        pocs=("poc1", "poc2"),
        rx=1.0,
        events=(LoadEvent(1.0, "d5", -0.2),),
        t_end=30.0,
        montecarlo=MonteCarloBlock(),
    )


PRESETS = {"case1": preset_case1, "case2": preset_case2, "case3": preset_case3}


def preset(tokens: list[str], ln: int = 0) -> Scenario:
    if not tokens:
        raise ParseError("preset line needs a name", ln)
    name, *args = tokens
    if name not in PRESETS:
        raise ParseError(f"unknown preset {name!r}", ln)
    kwargs = {}
    for arg in args:
        if "=" not in arg:
            raise ParseError(f"preset arguments look like key=value, got {arg!r}", ln)
        k, v = arg.split("=", 1)
        kwargs[k] = float(v)
    try:
        sc = PRESETS[name](**kwargs)
    except TypeError as exc:
        raise ParseError(f"bad preset arguments: {exc}", ln) from None
    sc.validate()
    return sc


def load_scenario(target: str) -> Scenario:
    """Path to a scenario file, or an inline preset spec like 'case2 epsilon=0.5'."""
    import os

    if os.path.exists(target):
        with open(target) as fh:
            base = os.path.splitext(os.path.basename(target))[0]
            return parse_scenario(fh.read(), name=base)
    tokens = target.split()
    if tokens and tokens[0] in PRESETS:
        return preset(tokens)
    if tokens and tokens[0] == "preset":
        return preset(tokens[1:])
    raise ParseError(f"no such scenario file or preset: {target!r}")
