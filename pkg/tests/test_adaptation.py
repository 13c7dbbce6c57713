import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvppsim.adaptation import (
    CapacityEvent,
    CapacityState,
    adpf_snapshot,
    apply_capacity_event,
    q_capability,
    snapshot_to_csv,
    update_dc_gains,
)
from dvppsim.design import COMPLEMENT, LPF, DeviceDesign, design_fleet, make_tdes
from dvppsim.errors import AllCapacitiesZero, CapacityExceedsRating, UnknownDevice
from dvppsim.lti import tf_eval
from dvppsim.network import coherent_response


def case_fleet():
    return design_fleet(
        make_tdes(5.55, 33.33, 0.01),
        [
            DeviceDesign("wind", kind=LPF, tau=1.5, rating=46.0, tau_dc=1.5),
            DeviceDesign("pv", kind=LPF, tau=0.6, rating=73.0, tau_dc=0.6),
            DeviceDesign("bess", kind=COMPLEMENT, rating=60.0, tau_dc=0.2),
        ],
    )


class TestQCapability:
    def test_fully_loaded(self):
        assert q_capability(1.0, 1.0) == 0.0

    def test_unloaded(self):
        assert q_capability(1.0, 0.0) == 1.0

    def test_partial(self):
        # Pythagorean oracle
        assert q_capability(0.73, 0.45) == pytest.approx(
            math.sqrt(0.73**2 - 0.45**2), rel=1e-15
        )
        assert q_capability(0.73, 0.45) == pytest.approx(0.5748, abs=1e-4)

    def test_over_rating_rejected(self):
        with pytest.raises(CapacityExceedsRating):
            q_capability(1.0, 1.1)

    @given(st.floats(0.1, 2.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    @settings(max_examples=60, deadline=None)
    def test_monotone_in_p(self, s, f1, f2):
        p_hi, p_lo = s * max(f1, f2), s * min(f1, f2)
        assert q_capability(s, p_lo) >= q_capability(s, p_hi)


class TestGainUpdate:
    def test_rating_proportional(self):
        fleet = case_fleet()
        caps = CapacityState.nominal(fleet)
        out = update_dc_gains(fleet, caps, "fp")
        assert out.device("wind").factor_fp.mu == pytest.approx(46 / 119, rel=1e-12)
        assert out.device("pv").factor_fp.mu == pytest.approx(73 / 119, rel=1e-12)

    def test_degenerate_single_survivor(self):
        fleet = case_fleet()
        caps = CapacityState.nominal(fleet).with_update("pv", 0.0)
        out = update_dc_gains(fleet, caps, "fp")
        assert out.device("wind").factor_fp.mu == 1.0
        assert out.device("pv").factor_fp.mu == 0.0

    def test_equal_capacities_equal_gains(self):
        fleet = case_fleet()
        caps = CapacityState(
            {n: CapacityState.nominal(fleet).entries[n] for n in ("wind", "pv", "bess")}
        )
        caps = caps.with_update("wind", 0.5).with_update("pv", 0.5)
        out = update_dc_gains(fleet, caps, "fp")
        assert out.device("wind").factor_fp.mu == pytest.approx(0.5)
        assert out.device("pv").factor_fp.mu == pytest.approx(0.5)

    def test_exact_closure_after_update(self):
        fleet = case_fleet()
        caps = CapacityState.nominal(fleet).with_update("pv", 0.45)
        out = update_dc_gains(fleet, caps, "fp")
        mus = [d.factor_fp.mu for d in out.dvpp() if d.factor_fp.kind == LPF]
        assert sum(mus) == 1.0
        assert out.device("bess").factor_fp.tf.num[0] == 0.0

    def test_all_zero_rejected(self):
        fleet = case_fleet()
        caps = CapacityState.nominal(fleet)
        caps = caps.with_update("wind", 0.0).with_update("pv", 0.0)
        with pytest.raises(AllCapacitiesZero):
            update_dc_gains(fleet, caps, "fp")


class TestCapacityEvent:
    def test_pv_drop_redistributes_both_channels(self):
        fleet = case_fleet()
        caps = CapacityState.nominal(fleet)
        before_vq = fleet.device("pv").factor_vq.mu
        out, new_caps = apply_capacity_event(
            fleet, caps, CapacityEvent(5.0, "pv", 0.45)
        )
        # active split: wind picks up, pv drops, closure exact
        assert out.device("wind").factor_fp.mu == pytest.approx(0.46 / 0.91, rel=1e-12)
        assert out.device("pv").factor_fp.mu == pytest.approx(0.45 / 0.91, rel=1e-12)
        total = sum(d.factor_fp.mu for d in out.dvpp() if d.factor_fp.kind == LPF)
        assert total == 1.0
        # reactive split: pv headroom grew from zero, so its share rises
        assert new_caps.entries["pv"].q_capacity == pytest.approx(
            math.sqrt(0.73**2 - 0.45**2)
        )
        assert out.device("pv").factor_vq.mu > before_vq

    def test_aggregate_response_invariant(self):
        fleet = case_fleet()
        caps = CapacityState.nominal(fleet)
        before = coherent_response(fleet)
        out, _ = apply_capacity_event(fleet, caps, CapacityEvent(5.0, "pv", 0.45))
        after = coherent_response(out)
        assert after.almost_equal(before, tol=1e-9)
        # while individual reference models moved
        assert not out.device("pv").ref_pf.almost_equal(fleet.device("pv").ref_pf)

    def test_noop_event_returns_same_objects(self):
        fleet = case_fleet()
        caps = CapacityState.nominal(fleet)
        out, out_caps = apply_capacity_event(
            fleet, caps, CapacityEvent(1.0, "pv", caps.entries["pv"].p_capacity)
        )
        assert out is fleet
        assert out_caps is caps

    def test_unknown_device(self):
        fleet = case_fleet()
        caps = CapacityState.nominal(fleet)
        with pytest.raises(UnknownDevice):
            apply_capacity_event(fleet, caps, CapacityEvent(1.0, "nope", 0.1))

    def test_invariance_under_event_sequence(self):
        fleet = case_fleet()
        caps = CapacityState.nominal(fleet)
        before = coherent_response(fleet)
        for ev in (
            CapacityEvent(1.0, "pv", 0.45),
            CapacityEvent(2.0, "wind", 0.30),
            CapacityEvent(3.0, "pv", 0.60),
        ):
            fleet, caps = apply_capacity_event(fleet, caps, ev)
        assert coherent_response(fleet).almost_equal(before, tol=1e-9)


class TestSnapshot:
    def test_dc_and_asymptotic_rows(self):
        fleet = case_fleet()
        table = adpf_snapshot(fleet, [1e-9, 1e3])
        assert table["wind.fp"][0] == pytest.approx(46 / 119, rel=1e-6)
        assert table["bess.fp"][0] == pytest.approx(0.0, abs=1e-9)
        assert table["bess.fp"][1] == pytest.approx(1.0, abs=2e-3)
        assert table["wind.fp"][1] == pytest.approx(0.0, abs=1e-3)

    def test_complex_sum_is_one(self):
        fleet = case_fleet()
        for w in np.logspace(-2, 3, 40):
            total = sum(
                tf_eval(d.factor_fp.tf, 1j * w) for d in fleet.dvpp()
            )
            assert abs(total - 1.0) < 1e-9

    def test_csv_shape(self):
        fleet = case_fleet()
        text = snapshot_to_csv(adpf_snapshot(fleet, np.logspace(-2, 2, 5)))
        lines = text.strip().split("\n")
        assert lines[0].split(",")[0] == "omega"
        assert len(lines) == 6
