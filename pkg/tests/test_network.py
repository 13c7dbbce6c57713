import numpy as np
import pytest

from dvppsim.design import (
    COMPLEMENT,
    LPF,
    DeviceDesign,
    design_fleet,
    hybrid_split,
    make_tdes,
)
from dvppsim.errors import (
    AlgebraicLoopUnstable,
    DegenerateSum,
    DisconnectedGraph,
    ZeroWeightSum,
)
from dvppsim.lti import step_series, simulate, tf_eval
from dvppsim.network import (
    Edge,
    LaplacianMatrix,
    NetworkGraph,
    build_frequency_loop,
    build_laplacian,
    coherent_response,
    coi_frequency,
    kron_maps,
    kron_reduce,
    voltage_loop,
)


def star(b=1.0, leaves=3):
    nodes = ("c",) + tuple(f"l{i}" for i in range(leaves))
    edges = tuple(Edge("c", f"l{i}", b) for i in range(leaves))
    return NetworkGraph(nodes, edges)


def case_fleet(**kw):
    return design_fleet(
        make_tdes(5.55, 33.33, 0.01),
        [
            DeviceDesign("wind", kind=LPF, tau=1.5, rating=46.0, tau_dc=1.5),
            DeviceDesign("pv", kind=LPF, tau=0.6, rating=73.0, tau_dc=0.6),
            DeviceDesign("bess", kind=COMPLEMENT, rating=60.0, tau_dc=0.2),
        ],
        **kw,
    )


def device_star_lap(fleet, b=10.0):
    names = tuple(d.name for d in fleet.devices)
    g = NetworkGraph(names + ("pcc",), tuple(Edge(n, "pcc", b) for n in names))
    return kron_reduce(build_laplacian(g), list(names))


def random_connected_graph(rng, n):
    nodes = tuple(f"n{i}" for i in range(n))
    edges = []
    for i in range(1, n):
        j = int(rng.integers(0, i))
        edges.append(Edge(nodes[i], nodes[j], float(rng.uniform(0.5, 5.0))))
    for _ in range(int(rng.integers(0, n))):
        i, j = rng.choice(n, size=2, replace=False)
        edges.append(Edge(nodes[int(i)], nodes[int(j)], float(rng.uniform(0.5, 5.0))))
    return NetworkGraph(nodes, tuple(edges))


class TestLaplacian:
    def test_star_matrix(self):
        lap = build_laplacian(star())
        m = lap.matrix
        assert np.allclose(np.diag(m), [3, 1, 1, 1])
        assert m[0, 1] == -1.0
        lap.validate()

    def test_single_edge(self):
        g = NetworkGraph(("a", "b"), (Edge("a", "b", 2.0),))
        m = build_laplacian(g).matrix
        assert np.allclose(m, [[2, -2], [-2, 2]])

    def test_triangle_eigenvalues(self):
        g = NetworkGraph(
            ("a", "b", "c"),
            (Edge("a", "b", 1.0), Edge("b", "c", 1.0), Edge("a", "c", 1.0)),
        )
        eig = np.sort(np.linalg.eigvalsh(build_laplacian(g).matrix))
        assert np.allclose(eig, [0.0, 3.0, 3.0], atol=1e-12)

    def test_disconnected_rejected(self):
        g = NetworkGraph(("a", "b", "c"), (Edge("a", "b", 1.0),))
        with pytest.raises(DisconnectedGraph):
            build_laplacian(g)

    def test_invariants_on_random_graphs(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            lap = build_laplacian(random_connected_graph(rng, int(rng.integers(2, 7))))
            lap.validate()


class TestKron:
    def test_star_center_elimination(self):
        lap = build_laplacian(star(b=1.0, leaves=3))
        red = kron_reduce(lap, ["l0", "l1", "l2"])
        # Schur-complement oracle by direct matrix arithmetic
        m = lap.matrix
        keep = [1, 2, 3]
        oracle = m[np.ix_(keep, keep)] - np.outer(m[keep, 0], m[0, keep]) / m[0, 0]
        assert np.allclose(red.matrix, oracle, atol=1e-14)
        assert np.allclose(red.matrix, np.eye(3) - np.ones((3, 3)) / 3.0)
        red.validate()

    def test_keep_all_unchanged(self):
        lap = build_laplacian(star())
        red = kron_reduce(lap, list(lap.labels))
        assert np.allclose(red.matrix, lap.matrix)

    def test_three_chain_series(self):
        g = NetworkGraph(("a", "m", "b"), (Edge("a", "m", 1.0), Edge("m", "b", 1.0)))
        red = kron_reduce(build_laplacian(g), ["a", "b"])
        # series-impedance oracle: 1/(1/1 + 1/1) = 0.5 effective coupling
        assert red.matrix[0, 1] == pytest.approx(-0.5)

    def test_boundary_equivalence_random(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            n = int(rng.integers(2, 7))
            g = random_connected_graph(rng, n)
            lap = build_laplacian(g)
            k = int(rng.integers(1, n))
            keep = list(rng.choice(g.nodes, size=k, replace=False))
            red = kron_reduce(lap, keep)
            # dense-solve oracle: boundary injections, interior zero
            p_keep = rng.normal(size=k)
            p_keep -= p_keep.mean()
            p_full = np.zeros(n)
            for name, val in zip(keep, p_keep):
                p_full[lap.index(name)] = val
            x_full = np.linalg.lstsq(lap.matrix, p_full, rcond=None)[0]
            x_red = np.linalg.lstsq(red.matrix, p_keep, rcond=None)[0]
            got = np.array([x_full[lap.index(nm)] for nm in keep])
            got -= got.mean()
            x_red -= x_red.mean()
            assert np.allclose(got, x_red, atol=1e-9)

    def test_injection_map_distributes_center_load(self):
        maps = kron_maps(build_laplacian(star(b=2.0)), ["l0", "l1", "l2"])
        assert np.allclose(maps.inject[:, 0], [1 / 3, 1 / 3, 1 / 3])
        assert np.allclose(maps.reconstruct.sum(axis=1), 1.0)


class TestFrequencyLoop:
    def test_single_device_steady_state(self):
        # final-value oracle: f_ss = dp * dc_gain of the aggregate behavior
        from dvppsim.design import DeviceSpec, Fleet, ParticipationFactor
        from dvppsim.design import disaggregate_forming
        from dvppsim.lti import constant

        des = make_tdes(5.55, 33.33, 0.01)
        one = ParticipationFactor(LPF, constant(1.0), "fp", None, 1.0)
        ref_pf, ref_vq = disaggregate_forming(des, one, one)
        dev = DeviceSpec("solo", "forming", 96.0, 0.0, 0.96, one, one, ref_pf, ref_vq)
        fleet = Fleet((dev,), des)
        lap = LaplacianMatrix(np.zeros((1, 1)), ("solo",))
        loop = build_frequency_loop(fleet, lap)
        u = step_series(30.0, 1e-3, [(1.0, -0.28)], name="pd_solo")
        out = simulate(loop.ss, u, 1e-3)
        assert out["f_solo"][-1] == pytest.approx(-0.28 / 33.33, abs=1e-6)

    def test_permutation_symmetry(self):
        fleet = design_fleet(
            make_tdes(5.55, 33.33, 0.01),
            [
                DeviceDesign("a", kind=LPF, tau=1.0, rating=50.0),
                DeviceDesign("b", kind=LPF, tau=1.0, rating=50.0),
            ],
        )
        names = ("a", "b")
        g = NetworkGraph(names, (Edge("a", "b", 5.0),))
        loop = build_frequency_loop(fleet, build_laplacian(g))
        u = step_series(10.0, 1e-3, [(0.5, -0.1)], name="pd_a")
        u = u.with_channels({"pd_b": u["pd_a"].copy()})
        out = simulate(loop.ss, u, 1e-3)
        assert np.allclose(out["f_a"], out["f_b"], atol=1e-12)

    def test_fleet_steady_state_and_coherency(self):
        # same-busbar coupling: stiff lines between paralleled devices
        fleet = case_fleet()
        lap = device_star_lap(fleet, b=1000.0)
        loop = build_frequency_loop(fleet, lap)
        t_end, dt = 30.0, 1e-3
        u = step_series(t_end, dt, [(1.0, -0.28 / 3)], name="pd_wind")
        u = u.with_channels(
            {"pd_pv": u["pd_wind"].copy(), "pd_bess": u["pd_wind"].copy()}
        )
        out = simulate(loop.ss, u, dt)
        # synchronous steady state independent of topology
        for ch in ("f_wind", "f_pv", "f_bess", "f_coi"):
            assert out[ch][-1] == pytest.approx(-0.28 / 33.33, abs=1e-4)
        # devices coherent within 2% of each other once synchronized (1 s after
        # the step; the instant after a step is outside the coherent regime)
        k1 = int(round(2.0 / dt))
        scale = np.max(np.abs(out["f_coi"]))
        for ch in ("f_pv", "f_bess"):
            spread = np.max(np.abs(out["f_wind"][k1:] - out[ch][k1:])) / scale
            assert spread < 0.02

    def test_coherency_gap_shrinks_with_coupling(self):
        fleet = case_fleet()
        agg = coherent_response(fleet)
        from dvppsim.lti import to_state_space

        dt, t_end, t_step = 1e-3, 20.0, 1.0
        u_total = step_series(t_end, dt, [(t_step, -0.28)], name="u")
        ref = simulate(to_state_space(agg), u_total, dt)["y"]
        k1 = int(round((t_step + 1.0) / dt))  # synchronized window
        gaps = []
        for scale in (1.0, 10.0, 100.0):
            lap = device_star_lap(fleet, b=10.0 * scale)
            loop = build_frequency_loop(fleet, lap)
            u = step_series(t_end, dt, [(t_step, -0.28 / 3)], name="pd_wind")
            u = u.with_channels(
                {"pd_pv": u["pd_wind"].copy(), "pd_bess": u["pd_wind"].copy()}
            )
            out = simulate(loop.ss, u, dt)
            gap = max(
                np.linalg.norm(out[f"f_{nm}"][k1:] - ref[k1:])
                / np.linalg.norm(ref[k1:])
                for nm in ("wind", "pv", "bess")
            )
            gaps.append(gap)
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[2] < 0.005

    def test_hybrid_loop_runs_stable(self):
        fleet = hybrid_split(case_fleet(), 0.5)
        names = tuple(d.name for d in fleet.devices)
        g = NetworkGraph(
            names + ("pcc",), tuple(Edge(nm, "pcc", 10.0) for nm in names)
        )
        lap = kron_reduce(build_laplacian(g), list(names))
        loop = build_frequency_loop(fleet, lap)
        # no growing mode; the exact-zero eigenvalue is the common angle ramp
        eig = np.linalg.eigvals(loop.ss.A)
        assert np.max(eig.real) < 1e-8
        dt = 1e-3
        u = step_series(30.0, dt, [(1.0, -0.42 / len(names))], name=f"pd_{names[0]}")
        u = u.with_channels({f"pd_{nm}": u[f"pd_{names[0]}"].copy() for nm in names[1:]})
        out = simulate(loop.ss, u, dt)
        assert out["f_coi"][-1] == pytest.approx(-0.42 / 33.33, abs=1e-4)


class TestCoherentResponse:
    def test_two_identical_parallel(self):
        from dvppsim.design import DeviceSpec, Fleet, ParticipationFactor
        from dvppsim.lti import RationalTF, constant

        des = make_tdes(5.55, 33.33, 0.01)
        tf = RationalTF((1.0,), (2.0, 1.0))
        half = ParticipationFactor(LPF, constant(0.5), "fp", None, 0.5)
        devs = tuple(
            DeviceSpec(nm, "forming", 10.0, 0.0, 0.1, half, half, tf, constant(1.0))
            for nm in ("a", "b")
        )
        agg = coherent_response(Fleet(devs, des))
        for w in (0.1, 1.0, 10.0):
            assert tf_eval(agg, 1j * w) == pytest.approx(tf_eval(tf, 1j * w) / 2.0)

    def test_constructive_fleet_matches_target(self):
        fleet = case_fleet()
        agg = coherent_response(fleet)
        assert agg.almost_equal(fleet.desired.tf_pf, tol=1e-9)

    def test_degenerate_sum(self):
        from dvppsim.design import DeviceSpec, Fleet, ParticipationFactor
        from dvppsim.lti import RationalTF, constant

        des = make_tdes(5.55, 33.33, 0.01)
        f = ParticipationFactor(LPF, constant(1.0), "fp", None, 1.0)
        tf = RationalTF((1.0,), (1.0, 1.0))
        devs = (
            DeviceSpec("a", "following", 1.0, 0.0, 0.01, f, f, tf, constant(1.0)),
            DeviceSpec("b", "following", 1.0, 0.0, 0.01, f, f, -1.0 * tf, constant(1.0)),
        )
        with pytest.raises(DegenerateSum):
            coherent_response(Fleet(devs, des))


class TestVoltageLoop:
    def test_open_loop_reactive_response(self):
        fleet = case_fleet()
        u = step_series(5.0, 1e-3, [(0.5, 0.01)], name="v_ext")
        out = voltage_loop(fleet, 0.0, u)
        # sum T_vq = 1/D_q = 100 at DC: q_agg -> -1.0 for a 0.01 step
        assert out["q_agg"][-1] == pytest.approx(-1.0, abs=1e-6)
        assert np.allclose(out["v_pcc"], u["v_ext"])

    def test_zero_disturbance(self):
        fleet = case_fleet()
        u = step_series(1.0, 1e-3, [], name="v_ext")
        out = voltage_loop(fleet, 0.0, u)
        for ch in out.names():
            assert np.all(out[ch] == 0.0)

    def test_static_feedback_algebra(self):
        from dvppsim.design import DeviceSpec, Fleet, ParticipationFactor
        from dvppsim.lti import constant

        des = make_tdes(5.55, 33.33, 0.01)
        f = ParticipationFactor(LPF, constant(1.0), "vq", None, 1.0)
        dev = DeviceSpec(
            "s", "forming", 10.0, 0.0, 0.1, f, f, des.tf_pf, constant(100.0)
        )
        fleet = Fleet((dev,), des)
        u = step_series(2.0, 1e-3, [(0.0, 0.01)], name="v_ext")
        out = voltage_loop(fleet, 0.005, u)
        assert out["v_pcc"][-1] == pytest.approx(0.01 / 1.5, rel=1e-9)

    def test_ill_posed_loop_rejected(self):
        from dvppsim.design import DeviceSpec, Fleet, ParticipationFactor
        from dvppsim.lti import constant

        des = make_tdes(5.55, 33.33, 0.01)
        f = ParticipationFactor(LPF, constant(1.0), "vq", None, 1.0)
        dev = DeviceSpec(
            "s", "forming", 10.0, 0.0, 0.1, f, f, des.tf_pf, constant(-100.0)
        )
        u = step_series(1.0, 1e-3, [(0.0, 0.01)], name="v_ext")
        with pytest.raises(AlgebraicLoopUnstable):
            voltage_loop(Fleet((dev,), des), 0.05, u)

    def test_steady_aggregate_matches_target_in_time_domain(self):
        fleet = case_fleet()
        u = step_series(5.0, 1e-3, [(0.0, 0.01)], name="v_ext")
        out = voltage_loop(fleet, 0.0, u)
        assert out["q_agg"][-1] == pytest.approx(-0.01 / 0.01, abs=1e-6)


class TestCoi:
    def test_identical_channels(self):
        ts = step_series(1.0, 0.1, [(0.0, 1.0)], name="f_a")
        ts = ts.with_channels({"f_b": ts["f_a"].copy()})
        coi = coi_frequency(ts, ["f_a", "f_b"], [1.0, 1.0])
        assert np.allclose(coi, ts["f_a"])

    def test_degenerate_weight(self):
        ts = step_series(1.0, 0.1, [(0.0, 1.0)], name="f_a")
        ts = ts.with_channels({"f_b": 2.0 * ts["f_a"]})
        coi = coi_frequency(ts, ["f_a", "f_b"], [1.0, 0.0])
        assert np.allclose(coi, ts["f_a"])

    def test_mean(self):
        ts = step_series(1.0, 0.1, [(0.0, 0.9)], name="f_a")
        ts = ts.with_channels({"f_b": ts["f_a"] / 0.9 * 1.1})
        coi = coi_frequency(ts, ["f_a", "f_b"], [1.0, 1.0])
        assert coi[-1] == pytest.approx(1.0)

    def test_zero_weights_rejected(self):
        ts = step_series(1.0, 0.1, [(0.0, 1.0)], name="f_a")
        with pytest.raises(ZeroWeightSum):
            coi_frequency(ts, ["f_a"], [0.0])
