"""Post-run metrics: nadir, rate-of-change-of-frequency, steady state, peaks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MissingChannel
from .lti import TimeSeries

ROCOF_WINDOW = 0.1  # s, sliding mean applied to the finite-difference derivative


@dataclass
class MetricsReport:
    nadir: float = 0.0  # max |f_coi| deviation, pu
    rocof: float = 0.0  # max |windowed derivative|, pu/s
    rocof_raw: float = 0.0  # max |raw finite-difference derivative|, pu/s
    steady_state: float = 0.0  # final f_coi, pu
    nadir_normalized: float | None = None  # per pu of disturbance
    rocof_normalized: float | None = None
    peak_powers: dict[str, float] = field(default_factory=dict)
    trace_error: float | None = None  # worst relative gap to the desired trace
    trace_tol: float | None = None
    residuals: dict[str, float] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    @property
    def trace_ok(self) -> bool | None:
        if self.trace_error is None or self.trace_tol is None:
            return None
        return self.trace_error <= self.trace_tol

    def rows(self) -> list[tuple[str, str]]:
        out = [
            ("nadir_pu", f"{self.nadir:.9e}"),
            ("rocof_pu_per_s", f"{self.rocof:.9e}"),
            ("rocof_raw_pu_per_s", f"{self.rocof_raw:.9e}"),
            ("steady_state_pu", f"{self.steady_state:.9e}"),
        ]
        if self.nadir_normalized is not None:
            out.append(("nadir_per_pu_load", f"{self.nadir_normalized:.9e}"))
        if self.rocof_normalized is not None:
            out.append(("rocof_per_pu_load", f"{self.rocof_normalized:.9e}"))
        for name, val in self.peak_powers.items():
            out.append((f"peak_{name}", f"{val:.9e}"))
        if self.trace_error is not None:
            out.append(("trace_error", f"{self.trace_error:.9e}"))
            out.append(("trace_ok", str(self.trace_ok).lower()))
        for name, val in self.residuals.items():
            out.append((name, f"{val:.9e}"))
        for flag in self.flags:
            out.append(("flag", flag))
        return out

    def to_csv(self) -> str:
        return "\n".join(f"{k},{v}" for k, v in self.rows()) + "\n"


def sliding_mean(x: np.ndarray, width: int) -> np.ndarray:
    if width <= 1:
        return x
    kernel = np.ones(width) / width
    return np.convolve(x, kernel, mode="valid")


def compute_metrics(series: TimeSeries, dp_load: float = 0.0) -> MetricsReport:
    """Frequency metrics from a run; dp_load enables the normalized variants."""
    if "f_coi" not in series.channels:
        raise MissingChannel("metrics need an f_coi channel")
    f = series["f_coi"]
    dt = series.dt
    deriv = np.diff(f) / dt
    width = max(1, int(round(ROCOF_WINDOW / dt)))
    rep = MetricsReport(
        nadir=float(np.max(np.abs(f))),
        rocof=float(np.max(np.abs(sliding_mean(deriv, width)))) if deriv.size else 0.0,
        rocof_raw=float(np.max(np.abs(deriv))) if deriv.size else 0.0,
        steady_state=float(f[-1]),
    )
    if dp_load != 0.0:
        rep.nadir_normalized = rep.nadir / abs(dp_load)
        rep.rocof_normalized = rep.rocof / abs(dp_load)
    for name, vals in series.channels.items():
        if name.startswith("p_") or name.startswith("q_"):
            rep.peak_powers[name] = float(np.max(np.abs(vals)))
    return rep
