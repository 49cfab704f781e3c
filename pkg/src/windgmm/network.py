"""Wind-farm communication graph and the average-consensus engine.

Farms are nodes; two farms are linked when their distance is below a
threshold.  Every node repeatedly averages with its neighbors so that all
local payloads converge to the network-wide mean, which scaled by the node
count recovers the network sum.  A virtual node (the distribution control
center) can be attached to the highest-coreness "key" nodes; it holds no
payload of its own and tracks the plain average of its neighbors'
estimates.

Update semantics: the state starts at the local payloads (the virtual
node at zero) and each synchronous round applies

    x_m  +=  eta * sum_{n in neighbors(m)}  (x_n - x_m)        (farms)
    x_vn  =  mean_{n in key nodes} x_n                         (virtual)

All right-hand sides are read at the previous round, so results do not
depend on intra-round scheduling.  Farm update sums never include the
virtual node's estimate: feeding it back would shift the consensus limit
away from the true mean of the payloads, breaking the exactness that the
distributed fit relies on (information flows farms -> virtual node only).
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import (
    DisconnectedGraphError,
    NonConvergenceError,
    ParameterError,
    ValidationError,
)


@dataclass(frozen=True)
class Topology:
    """Communication graph over farm nodes, plus an optional virtual node.

    coordinates : (M, 2) farm positions in km.
    neighbors : adjacency lists; row M (when present) belongs to the
        virtual node and lists the key nodes, which in turn list it back.
    """

    coordinates: np.ndarray
    threshold_km: float
    neighbors: tuple
    key_nodes: tuple = ()
    has_virtual_node: bool = False

    def __post_init__(self):
        coords = np.array(self.coordinates, dtype=float)
        coords.setflags(write=False)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ParameterError("coordinates must have shape (M, 2)")
        object.__setattr__(self, "coordinates", coords)
        object.__setattr__(self, "neighbors",
                           tuple(tuple(int(n) for n in row)
                                 for row in self.neighbors))
        object.__setattr__(self, "key_nodes",
                           tuple(int(k) for k in self.key_nodes))
        expect = self.n_real + (1 if self.has_virtual_node else 0)
        if len(self.neighbors) != expect:
            raise ParameterError(
                f"expected {expect} adjacency rows, got {len(self.neighbors)}"
            )
        for m, row in enumerate(self.neighbors):
            if m in row:
                raise ParameterError(f"node {m} has a self-loop")
            for n in row:
                if m not in self.neighbors[n]:
                    raise ParameterError(f"adjacency not symmetric at ({m}, {n})")

    @property
    def n_real(self):
        return self.coordinates.shape[0]

    @property
    def n_nodes(self):
        return self.n_real + (1 if self.has_virtual_node else 0)

    @property
    def virtual_index(self):
        return self.n_real if self.has_virtual_node else None

    def degree(self, m):
        return len(self.neighbors[m])

    @property
    def max_degree(self):
        return max(len(row) for row in self.neighbors)

    def real_neighbors(self, m):
        """Adjacent farm nodes of farm m (virtual node excluded)."""
        vn = self.virtual_index
        return tuple(n for n in self.neighbors[m] if n != vn)

    def edges(self):
        """Undirected edges (m, n) with m < n, including virtual links."""
        out = []
        for m, row in enumerate(self.neighbors):
            out.extend((m, n) for n in row if n > m)
        return out

    def real_edges(self):
        vn = self.virtual_index
        return [(m, n) for (m, n) in self.edges() if n != vn]

    def components(self):
        """Connected components of the farm subgraph, each sorted."""
        unseen = set(range(self.n_real))
        comps = []
        while unseen:
            stack = [unseen.pop()]
            comp = {stack[0]}
            while stack:
                m = stack.pop()
                for n in self.real_neighbors(m):
                    if n in unseen:
                        unseen.discard(n)
                        comp.add(n)
                        stack.append(n)
            comps.append(tuple(sorted(comp)))
        return comps

    def is_connected(self):
        return len(self.components()) == 1

    def _update_csr(self):
        """CSR adjacency as consumed by the consensus kernel.

        Farm rows list only farm neighbors (one-way virtual link); the
        virtual row lists the key nodes it averages over.
        """
        rows = [self.real_neighbors(m) for m in range(self.n_real)]
        if self.has_virtual_node:
            rows.append(self.neighbors[self.virtual_index])
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        for m, row in enumerate(rows):
            indptr[m + 1] = indptr[m] + len(row)
        indices = np.fromiter(
            (n for row in rows for n in row), dtype=np.int64,
            count=int(indptr[-1]),
        )
        return indptr, indices


def build_topology(coordinates, threshold_km, allow_disconnected=False):
    """Distance-threshold graph over farm coordinates.

    Links every pair closer than ``threshold_km`` (strictly).  Raises
    :class:`DisconnectedGraphError` listing the components when the
    resulting graph is not connected, unless ``allow_disconnected``.
    """
    coords = np.asarray(coordinates, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ParameterError("coordinates must have shape (M, 2)")
    m_count = coords.shape[0]
    if m_count < 2:
        raise ParameterError("a topology needs at least 2 nodes")
    if not threshold_km > 0:
        raise ParameterError("distance threshold must be positive")
    dist = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=2)
    neighbors = tuple(
        tuple(int(n) for n in np.flatnonzero((dist[m] < threshold_km))
              if n != m)
        for m in range(m_count)
    )
    topo = Topology(coordinates=coords, threshold_km=float(threshold_km),
                    neighbors=neighbors)
    comps = topo.components()
    if len(comps) > 1 and not allow_disconnected:
        raise DisconnectedGraphError(
            f"graph is disconnected at threshold {threshold_km} km: "
            + "; ".join(str(list(c)) for c in comps),
            components=comps,
        )
    return topo


# ---------------------------------------------------------------------------
# Coreness and key nodes


def k_shell(topology):
    """Coreness of every farm node (largest k-core containing it).

    Peels nodes of degree <= k for increasing k over the farm subgraph;
    virtual links never count.
    """
    m_count = topology.n_real
    degrees = {m: len(topology.real_neighbors(m)) for m in range(m_count)}
    alive = set(range(m_count))
    coreness = np.zeros(m_count, dtype=int)
    k = 0
    while alive:
        peel = [m for m in alive if degrees[m] <= k]
        if not peel:
            k += 1
            continue
        while peel:
            m = peel.pop()
            if m not in alive:
                continue
            alive.discard(m)
            coreness[m] = k
            for n in topology.real_neighbors(m):
                if n in alive:
                    degrees[n] -= 1
                    if degrees[n] <= k:
                        peel.append(n)
    return coreness


def select_key_nodes(topology, fraction, coreness=None):
    """Top-coreness farm nodes, ceil(fraction * M) of them.

    Ties break toward higher degree, then lower node index.  Returns a
    sorted tuple.
    """
    if not 0 < fraction <= 1:
        raise ParameterError("key-node fraction must be in (0, 1]")
    if coreness is None:
        coreness = k_shell(topology)
    m_count = topology.n_real
    count = math.ceil(fraction * m_count)
    order = sorted(
        range(m_count),
        key=lambda m: (-int(coreness[m]), -len(topology.real_neighbors(m)), m),
    )
    return tuple(sorted(order[:count]))


def attach_virtual_node(topology, key_nodes):
    """Add the control-center node, linked to the given key nodes."""
    if topology.has_virtual_node:
        raise ValidationError("topology already carries a virtual node")
    keys = tuple(sorted({int(k) for k in key_nodes}))
    if not keys:
        raise ValidationError("key node set must not be empty")
    if any(k < 0 or k >= topology.n_real for k in keys):
        raise ValidationError("key nodes must be existing farm nodes")
    vn = topology.n_real
    rows = [list(row) for row in topology.neighbors]
    for k in keys:
        rows[k] = sorted(rows[k] + [vn])
    rows.append(list(keys))
    return Topology(
        coordinates=topology.coordinates,
        threshold_km=topology.threshold_km,
        neighbors=tuple(tuple(r) for r in rows),
        key_nodes=keys,
        has_virtual_node=True,
    )


# ---------------------------------------------------------------------------
# Consensus engine


@dataclass(frozen=True)
class ConsensusConfig:
    """Controls for a consensus run.

    eta : updating rate; None picks 0.9 / (1 + max degree), which keeps
        the synchronous update strictly averaging.  Must satisfy
        0 < eta < 1 / (1 + max degree).
    tol : convergence threshold on the max per-entry change per round,
        measured relative to max(1, largest state magnitude) so that it
        stays meaningful for large-magnitude statistics payloads.
    max_iter : round cap.
    """

    eta: float | None = None
    tol: float = 1e-8
    max_iter: int = 20000

    def __post_init__(self):
        if self.tol <= 0:
            raise ParameterError("consensus tolerance must be positive")
        if self.max_iter < 1:
            raise ParameterError("consensus round cap must be >= 1")

    def resolve_eta(self, topology):
        bound = 1.0 / (1.0 + topology.max_degree)
        eta = 0.9 * bound if self.eta is None else float(self.eta)
        if not 0 < eta < bound:
            raise ParameterError(
                f"updating rate {eta} outside (0, {bound:.6g}) for max "
                f"degree {topology.max_degree}"
            )
        return eta


@dataclass(frozen=True)
class ConsensusResult:
    """Converged per-node estimates plus run accounting."""

    estimates: np.ndarray
    rounds: int
    converged: bool
    residual: float
    message_count: int


def _messages_per_round(topology):
    per_round = sum(len(topology.real_neighbors(m))
                    for m in range(topology.n_real))
    if topology.has_virtual_node:
        per_round += len(topology.neighbors[topology.virtual_index])
    return per_round


def _run(state, topology, config, message_log):
    eta = config.resolve_eta(topology)
    indptr, indices = topology._update_csr()
    vn = topology.virtual_index if topology.has_virtual_node else -1
    vn = -1 if vn is None else vn

    if message_log is None:
        rounds, converged, residual = kernels.consensus_rounds(
            state, indptr, indices, eta, config.tol, config.max_iter, vn)
    else:
        rounds = 0
        converged = False
        residual = float("inf")
        for _ in range(config.max_iter):
            for receiver in range(state.shape[0]):
                for k in range(indptr[receiver], indptr[receiver + 1]):
                    sender = int(indices[k])
                    message_log.append(
                        (rounds + 1, sender, receiver, state[sender].copy()))
            step, converged, residual = kernels.consensus_rounds(
                state, indptr, indices, eta, config.tol, 1, vn)
            rounds += step
            if converged:
                break

    message_count = rounds * _messages_per_round(topology)
    result = ConsensusResult(estimates=state, rounds=rounds,
                             converged=converged, residual=residual,
                             message_count=message_count)
    if not converged:
        raise NonConvergenceError(
            f"consensus did not reach tol {config.tol} within "
            f"{config.max_iter} rounds (residual {residual:.3e})",
            residual=residual, rounds=rounds, result=result,
        )
    return result


def acf_consensus(payloads, topology, config=None, message_log=None):
    """Average consensus over per-farm payload vectors.

    Every farm's estimate converges to the arithmetic mean of all
    payloads; multiply by the farm count (:func:`scale_to_sum`) for the
    network sum.  The topology must not carry a virtual node here; use
    :func:`acf_with_vn` for that.
    """
    if topology.has_virtual_node:
        raise ParameterError("topology has a virtual node; use acf_with_vn")
    if not topology.is_connected():
        raise DisconnectedGraphError("consensus requires a connected graph",
                                     components=topology.components())
    config = config or ConsensusConfig()
    payloads = np.asarray(payloads, dtype=float)
    if payloads.ndim == 1:
        payloads = payloads[:, None]
    if payloads.shape[0] != topology.n_real:
        raise ParameterError(
            f"expected {topology.n_real} payload rows, got {payloads.shape[0]}"
        )
    state = np.ascontiguousarray(payloads, dtype=float).copy()
    return _run(state, topology, config, message_log)


def acf_with_vn(payloads, topology, config=None, message_log=None):
    """Consensus including the virtual node (no payload of its own).

    Returns estimates with one extra row: the virtual node's, which
    converges to the same mean through its key-node neighbors.
    """
    if not topology.has_virtual_node:
        raise ParameterError("topology has no virtual node attached")
    if not topology.is_connected():
        raise DisconnectedGraphError("consensus requires a connected graph",
                                     components=topology.components())
    config = config or ConsensusConfig()
    payloads = np.asarray(payloads, dtype=float)
    if payloads.ndim == 1:
        payloads = payloads[:, None]
    if payloads.shape[0] != topology.n_real:
        raise ParameterError(
            f"expected {topology.n_real} payload rows, got {payloads.shape[0]}"
        )
    state = np.zeros((topology.n_nodes, payloads.shape[1]))
    state[: topology.n_real] = payloads
    return _run(state, topology, config, message_log)


def scale_to_sum(average_estimate, n_nodes):
    """Network sum from a converged average estimate (entrywise)."""
    return np.asarray(average_estimate, dtype=float) * n_nodes
