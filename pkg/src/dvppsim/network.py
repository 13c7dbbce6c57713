"""Interconnection graphs, Kron reduction and closed-loop assembly.

The frequency loop couples device dynamics through the linearized power
flow of the interconnection network, p_e = (L / s) f.  The marginally
stable 1/s block is realized on the subspace orthogonal to the all-ones
vector (the Laplacian null space), so the synchronous drift never enters
the state and the uniform-frequency mode stays numerically exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .design import FOLLOWING, FORMING, Fleet
from .errors import (
    AlgebraicLoopUnstable,
    DegenerateSum,
    DimensionMismatch,
    DisconnectedGraph,
    ImproperDevice,
    SingularInteriorBlock,
    UnrealizedDevice,
    ZeroWeightSum,
)
from .lti import (
    RationalTF,
    StateSpaceModel,
    TimeSeries,
    simulate,
    tf_add,
    tf_inverse,
    to_state_space,
)


@dataclass(frozen=True)
class Edge:
    a: str
    b: str
    weight: float  # susceptance-like coupling, pu power per pu frequency-s
    rx: float | None = None  # resistance-to-reactance ratio, spatial models only


@dataclass(frozen=True)
class NetworkGraph:
    nodes: tuple[str, ...]
    edges: tuple[Edge, ...]
    boundary: tuple[str, ...] = ()

    def __post_init__(self):
        if len(set(self.nodes)) != len(self.nodes):
            raise ValueError("duplicate node names")
        known = set(self.nodes)
        for e in self.edges:
            if e.a == e.b:
                raise ValueError(f"self-loop at {e.a!r}")
            if e.a not in known or e.b not in known:
                raise ValueError(f"edge {e.a}-{e.b} references unknown node")
            if e.weight <= 0:
                raise ValueError(f"edge {e.a}-{e.b} needs positive coupling")
        for b in self.boundary:
            if b not in known:
                raise ValueError(f"boundary node {b!r} unknown")

    def is_connected(self) -> bool:
        if len(self.nodes) <= 1:
            return True
        adj: dict[str, set[str]] = {n: set() for n in self.nodes}
        for e in self.edges:
            adj[e.a].add(e.b)
            adj[e.b].add(e.a)
        seen = {self.nodes[0]}
        stack = [self.nodes[0]]
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return len(seen) == len(self.nodes)


@dataclass(frozen=True)
class LaplacianMatrix:
    matrix: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (len(self.labels), len(self.labels)):
            raise DimensionMismatch("laplacian shape does not match labels")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def n(self) -> int:
        return len(self.labels)

    def validate(self, tol: float = 1e-9) -> None:
        m = self.matrix
        scale = max(np.max(np.abs(m)), 1.0)
        assert np.allclose(m, m.T, atol=1e-12 * scale), "not symmetric"
        assert np.max(np.abs(m.sum(axis=1))) <= 1e-12 * scale, "row sums nonzero"
        off = m - np.diag(np.diag(m))
        assert np.all(off <= tol * scale), "positive off-diagonal entry"
        eig = np.linalg.eigvalsh(m)
        assert eig[0] >= -tol * scale, "not positive semidefinite"
        assert np.sum(np.abs(eig) <= tol * scale) == 1, "zero eigenvalue not simple"

    def index(self, label: str) -> int:
        return self.labels.index(label)


def build_laplacian(graph: NetworkGraph) -> LaplacianMatrix:
    """Weighted graph Laplacian; rejects disconnected graphs."""
    if not graph.is_connected():
        raise DisconnectedGraph("interconnection graph is not connected")
    n = len(graph.nodes)
    idx = {name: i for i, name in enumerate(graph.nodes)}
    m = np.zeros((n, n))
    for e in graph.edges:
        i, j = idx[e.a], idx[e.b]
        m[i, j] -= e.weight
        m[j, i] -= e.weight
        m[i, i] += e.weight
        m[j, j] += e.weight
    return LaplacianMatrix(m, graph.nodes)


@dataclass(frozen=True)
class KronMaps:
    """Schur-complement reduction plus the exact boundary bookkeeping.

    inject maps eliminated-bus injections onto kept buses; reconstruct
    recovers eliminated-bus potentials (or, between events, frequencies)
    from kept-bus values.
    """

    reduced: LaplacianMatrix
    eliminated: tuple[str, ...]
    inject: np.ndarray  # kept x eliminated
    reconstruct: np.ndarray  # eliminated x kept


def kron_maps(lap: LaplacianMatrix, keep: list[str]) -> KronMaps:
    keep_idx = [lap.index(k) for k in keep]
    elim = [name for name in lap.labels if name not in set(keep)]
    elim_idx = [lap.index(k) for k in elim]
    m = lap.matrix
    L_kk = m[np.ix_(keep_idx, keep_idx)]
    if not elim:
        return KronMaps(
            LaplacianMatrix(L_kk, tuple(keep)), (), np.zeros((len(keep), 0)),
            np.zeros((0, len(keep))),
        )
    L_ke = m[np.ix_(keep_idx, elim_idx)]
    L_ee = m[np.ix_(elim_idx, elim_idx)]
    try:
        sol = scipy.linalg.solve(L_ee, np.hstack([L_ke.T, np.eye(len(elim))]),
                                 assume_a="sym")
    except scipy.linalg.LinAlgError as exc:
        raise SingularInteriorBlock(str(exc)) from None
    if not np.all(np.isfinite(sol)):
        raise SingularInteriorBlock("interior block is numerically singular")
    inv_Lee_Lek = sol[:, : len(keep)]
    inv_Lee = sol[:, len(keep):]
    reduced = L_kk - L_ke @ inv_Lee_Lek
    reduced = 0.5 * (reduced + reduced.T)
    return KronMaps(
        reduced=LaplacianMatrix(reduced, tuple(keep)),
        eliminated=tuple(elim),
        inject=-L_ke @ inv_Lee,
        reconstruct=-inv_Lee_Lek,
    )


def kron_reduce(lap: LaplacianMatrix, keep: list[str]) -> LaplacianMatrix:
    """Eliminate all buses outside keep, preserving boundary behavior."""
    return kron_maps(lap, keep).reduced


# ---------------------------------------------------------------------------
# closed-loop frequency model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClosedLoopModel:
    """State-space frequency loop: disturbances in, device frequencies out.

    States are diagonally balanced; balance holds the (exact, power-of-two)
    scaling back to physical coordinates so state can be handed across
    rebuilds at event instants.
    """

    ss: StateSpaceModel
    device_names: tuple[str, ...]
    coi_weights: np.ndarray
    state_slices: dict[str, slice] = field(default_factory=dict)
    balance: np.ndarray | None = None

    @property
    def inputs(self) -> tuple[str, ...]:
        return self.ss.inputs

    @property
    def outputs(self) -> tuple[str, ...]:
        return self.ss.outputs

    def to_physical(self, x: np.ndarray) -> np.ndarray:
        return x if self.balance is None else self.balance * x

    def from_physical(self, x: np.ndarray) -> np.ndarray:
        return x if self.balance is None else x / self.balance


def _coi_vector(devices, coi_weights) -> np.ndarray:
    if coi_weights is None:
        w = np.array([max(d.rating, 0.0) for d in devices])
        if w.sum() == 0:
            w = np.ones(len(devices))
    else:
        w = np.asarray(coi_weights, dtype=float)
    return w / w.sum()


def _wrap_loop(devices, A, B, C_f, D_f, C_p, D_p, w, state_slices) -> ClosedLoopModel:
    names = tuple(d.name for d in devices)
    C = np.vstack([C_f, C_p, w @ C_f])
    D = np.vstack([D_f, D_p, w @ D_f])
    # order-preserving diagonal balancing keeps the discretization solve
    # well conditioned despite the fast measurement-lag states
    if A.shape[0]:
        Ab, T = scipy.linalg.matrix_balance(A, permute=False)
        t = np.diag(T)
        A, B, C = Ab, B / t[:, None], C * t[None, :]
    else:
        t = np.ones(0)
    ss = StateSpaceModel(
        A,
        B,
        C,
        D,
        inputs=tuple(f"pd_{nm}" for nm in names),
        outputs=tuple(f"f_{nm}" for nm in names)
        + tuple(f"p_{nm}" for nm in names)
        + ("f_coi",),
    )
    return ClosedLoopModel(ss, names, w, state_slices, t)


def _forming_loop(devices, lap, w_coi) -> ClosedLoopModel:
    """All-forming loop with the network integrator deflated onto 1-perp.

    Deflation removes the unobservable uniform-angle mode exactly, so the
    synchronized steady state carries no marginal integrator state.
    """
    n = len(devices)
    blocks = [to_state_space(d.ref_pf) for d in devices]
    orders = [b.order for b in blocks]
    nx = sum(orders)
    U = scipy.linalg.null_space(np.ones((1, n))) if n > 1 else np.zeros((1, 0))
    nxi = U.shape[1]
    P = lap.matrix @ U  # pe = P xi

    blkA = np.zeros((nx, nx))
    blkB = np.zeros((nx, n))
    blkC = np.zeros((n, nx))
    blkD = np.zeros((n, n))
    state_slices: dict[str, slice] = {}
    pos = 0
    for i, (dev, b, ni) in enumerate(zip(devices, blocks, orders)):
        sl = slice(pos, pos + ni)
        state_slices[dev.name] = sl
        blkA[sl, sl] = b.A
        blkB[sl, i] = b.B[:, 0]
        blkC[i, sl] = b.C[0, :]
        blkD[i, i] = b.D[0, 0]
        pos += ni

    # states: [device states, xi];  w = pd - P xi
    A = np.zeros((nx + nxi, nx + nxi))
    A[:nx, :nx] = blkA
    A[:nx, nx:] = -blkB @ P
    A[nx:, :nx] = U.T @ blkC
    A[nx:, nx:] = -U.T @ blkD @ P
    B = np.vstack([blkB, U.T @ blkD])
    C_f = np.hstack([blkC, -blkD @ P])
    D_f = blkD
    C_p = np.hstack([np.zeros((n, nx)), P])  # device response p = pe - pd
    D_p = -np.eye(n)
    return _wrap_loop(devices, A, np.asarray(B), C_f, D_f, C_p, D_p, w_coi, state_slices)


def _angle_coupling(dev, tau_pll: float):
    """Following-device map from bus angle: T_fp(s) * s, made biproper.

    Realizing from the angle keeps the loop free of impulsive node
    frequencies.  A reference model with direct frequency feedthrough gets
    one extra tau_pll measurement lag so the angle coupling stays proper;
    the lag sits far below every dynamic of interest.  Zero-participation
    devices are passive buses.
    """
    from .lti import RationalTF as TF
    from .lti import constant, first_order, tf_mul

    if dev.ref_pf is None:
        return to_state_space(constant(0.0))
    coupling = tf_mul(dev.ref_pf, TF((0.0, 1.0), (1.0,)))
    while not coupling.is_proper:
        coupling = tf_mul(coupling, first_order(1.0, tau_pll))
    return to_state_space(coupling)


def _mixed_loop(devices, lap, w_coi, tau_pll: float) -> ClosedLoopModel:
    """Hybrid loop: forming buses carry angle states, following buses are
    algebraic nodes whose measured frequency is a washout of the bus angle."""
    n = len(devices)
    L = lap.matrix
    idxF = [i for i, d in enumerate(devices) if d.role == FORMING and d.ref_pf is not None]
    idxG = [i for i in range(n) if i not in idxF]
    nF, nG = len(idxF), len(idxG)
    LFF = L[np.ix_(idxF, idxF)]
    LFG = L[np.ix_(idxF, idxG)]
    LGF = L[np.ix_(idxG, idxF)]
    LGG = L[np.ix_(idxG, idxG)]

    form_blocks = [to_state_space(devices[i].ref_pf) for i in idxF]
    foll_blocks = [_angle_coupling(devices[i], tau_pll) for i in idxG]
    nx = sum(b.order for b in form_blocks)
    nz = sum(b.order for b in foll_blocks)
    nX = nx + nz + nF + nG  # x, z, eta_F, washout chi
    sx, sz = slice(0, nx), slice(nx, nx + nz)
    se = slice(nx + nz, nx + nz + nF)
    sc = slice(nx + nz + nF, nX)

    state_slices: dict[str, slice] = {}
    Ax = np.zeros((nx, nx))
    Bx = np.zeros((nx, nF))
    Cx = np.zeros((nF, nx))
    Dx = np.zeros((nF, nF))
    pos = 0
    for k, (i, b) in enumerate(zip(idxF, form_blocks)):
        sl = slice(pos, pos + b.order)
        state_slices[devices[i].name] = slice(sx.start + sl.start, sx.start + sl.stop)
        Ax[sl, sl] = b.A
        Bx[sl, k] = b.B[:, 0]
        Cx[k, sl] = b.C[0, :]
        Dx[k, k] = b.D[0, 0]
        pos += b.order
    Az = np.zeros((nz, nz))
    Bz = np.zeros((nz, nG))
    Cz = np.zeros((nG, nz))
    Dz = np.zeros(nG)
    pos = 0
    for k, (i, b) in enumerate(zip(idxG, foll_blocks)):
        sl = slice(pos, pos + b.order)
        state_slices[devices[i].name] = slice(sz.start + sl.start, sz.start + sl.stop)
        Az[sl, sl] = b.A
        Bz[sl, k] = b.B[:, 0]
        Cz[k, sl] = b.C[0, :]
        Dz[k] = b.D[0, 0]
        pos += b.order

    # algebraic bus angles: (LGG + Dz) eta_G = pd_G - Cz z - LGF eta_F
    S = np.linalg.inv(LGG + np.diag(Dz))
    etaG_X = np.zeros((nG, nX))
    etaG_X[:, sz] = -S @ Cz
    etaG_X[:, se] = -S @ LGF
    etaG_u = np.zeros((nG, n))
    etaG_u[:, idxG] = S

    peF_X = LFG @ etaG_X
    peF_X[:, se] += LFF
    peF_u = LFG @ etaG_u
    w_X = -peF_X
    w_u = -peF_u
    for k, i in enumerate(idxF):
        w_u[k, i] += 1.0

    A = np.zeros((nX, nX))
    B = np.zeros((nX, n))
    A[sx] = Bx @ w_X
    A[sx, sx] += Ax
    B[sx] = Bx @ w_u
    A[sz] = Bz @ etaG_X
    A[sz, sz] += Az
    B[sz] = Bz @ etaG_u
    fF_X = Dx @ w_X
    fF_X[:, sx] += Cx
    fF_u = Dx @ w_u
    A[se] = fF_X
    B[se] = fF_u
    A[sc] = etaG_X / tau_pll
    A[sc, sc] -= np.eye(nG) / tau_pll
    B[sc] = etaG_u / tau_pll

    fG_X = etaG_X / tau_pll
    fG_X[:, sc] -= np.eye(nG) / tau_pll
    fG_u = etaG_u / tau_pll
    peG_X = LGG @ etaG_X
    peG_X[:, se] += LGF
    peG_u = LGG @ etaG_u

    C_f = np.zeros((n, nX))
    D_f = np.zeros((n, n))
    C_p = np.zeros((n, nX))
    D_p = -np.eye(n)
    for k, i in enumerate(idxF):
        C_f[i], D_f[i] = fF_X[k], fF_u[k]
        C_p[i], D_p[i] = peF_X[k], peF_u[k] - (np.arange(n) == i)
    for k, i in enumerate(idxG):
        C_f[i], D_f[i] = fG_X[k], fG_u[k]
        C_p[i], D_p[i] = peG_X[k], peG_u[k] - (np.arange(n) == i)

    return _wrap_loop(devices, A, B, C_f, D_f, C_p, D_p, w_coi, state_slices)


def build_frequency_loop(
    fleet: Fleet, lap: LaplacianMatrix, coi_weights: np.ndarray | None = None
) -> ClosedLoopModel:
    """Assemble the network-coupled frequency dynamics of a fleet.

    One device per network node, matched by name when the Laplacian labels
    are device names.  Outputs are per-device frequency and power-response
    channels plus the weighted average frequency.
    """
    devices = list(fleet.devices)
    n = len(devices)
    if lap.n != n:
        raise DimensionMismatch(f"{lap.n} nodes for {n} devices")
    by_name = {d.name: d for d in devices}
    if set(lap.labels) == set(by_name):
        devices = [by_name[name] for name in lap.labels]
    for dev in devices:
        if dev.ref_pf is None:
            zero_share = dev.factor_fp is not None and dev.factor_fp.tf.is_zero
            if not zero_share:
                raise UnrealizedDevice(
                    f"device {dev.name!r} has no frequency reference model"
                )
        elif not dev.ref_pf.is_proper:
            raise ImproperDevice(f"device {dev.name!r} reference model is improper")
    w_coi = _coi_vector(devices, coi_weights)
    if all(d.role == FORMING and d.ref_pf is not None for d in devices):
        return _forming_loop(devices, lap, w_coi)
    return _mixed_loop(devices, lap, w_coi, fleet.tau_pll)


def coherent_response(fleet: Fleet) -> RationalTF:
    """Aggregate response under the synchronized-frequency approximation."""
    acc: RationalTF | None = None
    for dev in fleet.dvpp():
        if dev.ref_pf is None:
            if dev.factor_fp is not None and dev.factor_fp.tf.is_zero:
                continue  # zero participation contributes zero admittance
            raise UnrealizedDevice(f"device {dev.name!r} has no frequency reference model")
        term = tf_inverse(dev.ref_pf) if dev.role == FORMING else dev.ref_pf
        acc = term if acc is None else tf_add(acc, term)
    if acc is None or acc.is_zero:
        raise DegenerateSum("aggregate sum has zero numerator")
    return tf_inverse(acc)


# ---------------------------------------------------------------------------
# voltage loop at the coupling bus
# ---------------------------------------------------------------------------


def voltage_loop(fleet: Fleet, k_g: float, v_disturbance: TimeSeries) -> TimeSeries:
    """Close the bus-voltage loop v = v_ext + k_g * q_agg, q_agg = -sum T_vq v.

    k_g = 0 reproduces the open-loop structure where the bus voltage is the
    exogenous input itself.
    """
    if k_g < 0:
        raise ValueError("grid sensitivity must be nonnegative")
    devices = [d for d in fleet.dvpp()]
    for dev in devices:
        if dev.ref_vq is None:
            raise UnrealizedDevice(f"device {dev.name!r} has no voltage reference model")
    blocks = [to_state_space(d.ref_vq) for d in devices]
    orders = [b.order for b in blocks]
    nx = sum(orders)
    sumD = sum(b.D[0, 0] for b in blocks)
    denom = 1.0 + k_g * sumD
    if denom <= 1e-9:
        raise AlgebraicLoopUnstable(
            f"static voltage feedback ill-posed: 1 + k_g * sum D = {denom}"
        )
    kappa = 1.0 / denom

    blkA = np.zeros((nx, nx)) if nx else np.zeros((0, 0))
    blkB = np.zeros((nx, 1))
    rowsC = np.zeros((len(devices), nx))
    pos = 0
    for i, b in enumerate(blocks):
        sl = slice(pos, pos + b.order)
        blkA[sl, sl] = b.A
        blkB[sl, 0] = b.B[:, 0]
        rowsC[i, sl] = b.C[0, :] if b.order else 0.0
        pos += b.order
    sumC = rowsC.sum(axis=0)

    # v = kappa * (v_ext - k_g * sumC x)
    v_row = -kappa * k_g * sumC
    v_feed = kappa
    A = blkA + blkB @ v_row[None, :]
    B = blkB * v_feed
    # q_i = -(C_i x + D_i v)
    Ds = np.array([b.D[0, 0] for b in blocks])
    C_q = -(rowsC + Ds[:, None] @ v_row[None, :])
    D_q = -(Ds * v_feed)[:, None]
    C_out = np.vstack([v_row[None, :], C_q.sum(axis=0, keepdims=True), C_q])
    D_out = np.vstack([[v_feed], D_q.sum(axis=0, keepdims=True), D_q])
    names = tuple(d.name for d in devices)
    ss = StateSpaceModel(
        A,
        B,
        C_out,
        D_out,
        inputs=("v_ext",),
        outputs=("v_pcc", "q_agg") + tuple(f"q_{nm}" for nm in names),
    )
    return simulate(ss, v_disturbance, v_disturbance.dt)


def coi_frequency(series: TimeSeries, channels: list[str], weights) -> np.ndarray:
    """Weighted average of frequency channels."""
    w = np.asarray(weights, dtype=float)
    if len(w) != len(channels):
        raise DimensionMismatch("one weight per channel")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if w.sum() == 0:
        raise ZeroWeightSum("all weights zero")
    w = w / w.sum()
    acc = np.zeros_like(series.t)
    for wi, ch in zip(w, channels):
        acc += wi * series[ch]
    return acc
