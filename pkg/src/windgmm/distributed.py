"""Distributed posterior-mode fitting across farm nodes.

Raw observations never leave their farm.  Instead:

1. every farm runs consensus over its observation block to estimate the
   network-aggregated output series;
2. the highest-coreness farms are selected as key nodes and the virtual
   control-center node is linked to them;
3. each outer iteration, every farm summarizes its estimated aggregates
   into per-component statistics, the network averages those statistics
   by consensus, and every node (virtual one included) reconstructs the
   global statistics and applies the posterior-mode update to its own
   parameter copy;
4. at convergence each node holds a full mixture fit; the virtual node's
   is the designated decision output.

With exact consensus the global statistics equal the pooled-data E-step
exactly, so the whole pipeline coincides with the centralized fit; that
equivalence is the correctness anchor of the test suite.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegeneracyError,
    InsufficientDataError,
    ParameterError,
    ValidationError,
    WindgmmError,
)
from .fitting import (
    FitConfig,
    FitReport,
    SufficientStats,
    covariance_floor,
    fit_map,
    log_posterior,
    m_step_map,
    permute_components,
    responsibilities,
)
from .mixture import GmmParams
from .network import (
    ConsensusConfig,
    acf_consensus,
    acf_with_vn,
    attach_virtual_node,
    k_shell,
    scale_to_sum,
    select_key_nodes,
)

_D = 2
# entries per component in a packed statistics payload:
# count, weighted sum (2), its transpose copy (2), weighted outer sums (4),
# weighted mean (2)
_FIELDS_PER_COMPONENT = 11
_DEGENERATE_FRACTION = 1e-8


@dataclass(frozen=True)
class LocalStats:
    """One farm's per-component statistics of its estimated aggregates.

    counts : (J,) responsibility mass.
    sum_z : (J, 2) responsibility-weighted sums of the estimates.
    sum_z_row : (J, 2) the same numbers as ``sum_z`` (the row-vector copy
        that travels in the wire format; kept equal by construction).
    sum_outer : (J, 2, 2) responsibility-weighted outer-product sums.
    mean_z : (J, 2) sum_z / counts, zero where a component holds no mass.
    """

    counts: np.ndarray
    sum_z: np.ndarray
    sum_z_row: np.ndarray
    sum_outer: np.ndarray
    mean_z: np.ndarray

    def pack(self):
        """Flatten to the consensus payload layout (11 entries/component)."""
        j = self.counts.shape[0]
        out = np.empty(j * _FIELDS_PER_COMPONENT)
        block = out.reshape(j, _FIELDS_PER_COMPONENT)
        block[:, 0] = self.counts
        block[:, 1:3] = self.sum_z
        block[:, 3:5] = self.sum_z_row
        block[:, 5:9] = self.sum_outer.reshape(j, 4)
        block[:, 9:11] = self.mean_z
        return out


@dataclass(frozen=True)
class GlobalStats:
    """Network totals of every local-statistics field.

    ``mean_z_sum`` is the sum of per-farm means from the wire format; the
    reconstruction below derives the global weighted mean from
    sum_z / counts instead, which makes the scatter identity exact.
    """

    counts: np.ndarray
    sum_z: np.ndarray
    sum_z_row: np.ndarray
    sum_outer: np.ndarray
    mean_z_sum: np.ndarray

    @classmethod
    def unpack(cls, payload):
        payload = np.asarray(payload, dtype=float)
        if payload.ndim != 1 or payload.size % _FIELDS_PER_COMPONENT:
            raise ParameterError("statistics payload has the wrong length")
        block = payload.reshape(-1, _FIELDS_PER_COMPONENT)
        return cls(
            counts=block[:, 0].copy(),
            sum_z=block[:, 1:3].copy(),
            sum_z_row=block[:, 3:5].copy(),
            sum_outer=block[:, 5:9].reshape(-1, 2, 2).copy(),
            mean_z_sum=block[:, 9:11].copy(),
        )

    @classmethod
    def from_locals(cls, locals_):
        """Exact field-wise sum over farms (the consensus-free oracle path)."""
        return cls(
            counts=np.sum([s.counts for s in locals_], axis=0),
            sum_z=np.sum([s.sum_z for s in locals_], axis=0),
            sum_z_row=np.sum([s.sum_z_row for s in locals_], axis=0),
            sum_outer=np.sum([s.sum_outer for s in locals_], axis=0),
            mean_z_sum=np.sum([s.mean_z for s in locals_], axis=0),
        )


def local_statistics(estimates, params):
    """Per-component statistics of one farm's estimated aggregates.

    Responsibilities come from the same posterior form as the centralized
    E-step; no communication is involved.
    """
    estimates = np.asarray(estimates, dtype=float)
    if estimates.ndim != 2 or estimates.shape[1] != _D:
        raise ParameterError(f"estimates must be (N, 2), got {estimates.shape}")
    resp, _ = responsibilities(estimates, params)
    counts = resp.sum(axis=0)
    sum_z = resp.T @ estimates
    sum_outer = np.einsum("nj,na,nb->jab", resp, estimates, estimates)
    sum_outer = 0.5 * (sum_outer + np.transpose(sum_outer, (0, 2, 1)))
    safe = np.maximum(counts, np.finfo(float).tiny)
    mean_z = np.where(counts[:, None] > 0, sum_z / safe[:, None], 0.0)
    return LocalStats(counts=counts, sum_z=sum_z, sum_z_row=sum_z.copy(),
                      sum_outer=sum_outer, mean_z=mean_z)


def reconstruct_global(global_stats, total_count, on_degenerate="error"):
    """Global E-step statistics from network totals.

    Sets the global weighted mean to sum_z / counts, then recovers the
    scatter through

        scatter = sum_outer + mean mean^T count - sum_z mean^T - mean sum_z_row

    which matches the centralized scatter exactly when the totals are
    exact sums.  Components with counts below 1e-8 of ``total_count`` are
    degenerate: error out or prune them per ``on_degenerate``.

    Returns (stats, kept_indices).
    """
    if on_degenerate not in ("error", "prune"):
        raise ParameterError("on_degenerate must be 'error' or 'prune'")
    counts = global_stats.counts
    degenerate = counts <= _DEGENERATE_FRACTION * max(1.0, float(total_count))
    if np.any(degenerate):
        if on_degenerate == "error":
            raise DegeneracyError(
                f"component {int(np.flatnonzero(degenerate)[0])} is globally "
                f"degenerate (count {counts[degenerate][0]:.3e})"
            )
        if np.all(degenerate):
            raise DegeneracyError("every component is globally degenerate")
    keep = np.flatnonzero(~degenerate)
    counts = counts[keep]
    sum_z = global_stats.sum_z[keep]
    sum_z_row = global_stats.sum_z_row[keep]
    sum_outer = global_stats.sum_outer[keep]

    mean = sum_z / counts[:, None]
    scatter = (
        sum_outer
        + np.einsum("ja,jb->jab", mean, mean) * counts[:, None, None]
        - np.einsum("ja,jb->jab", sum_z, mean)
        - np.einsum("ja,jb->jab", mean, sum_z_row)
    )
    scatter = 0.5 * (scatter + np.transpose(scatter, (0, 2, 1)))
    stats = SufficientStats(counts=counts, means=mean, scatters=scatter,
                            responsibilities=None)
    return stats, keep


# ---------------------------------------------------------------------------
# Pipeline


@dataclass(frozen=True)
class NodeEstimate:
    """One node's outcome: its estimated aggregates and its fitted mixture.

    ``estimates`` is None for the virtual node, which holds no series of
    its own.
    """

    node: int
    is_virtual: bool
    estimates: np.ndarray | None
    params: GmmParams
    report: FitReport


@dataclass(frozen=True)
class DmapResult:
    """Everything a distributed fit produces.

    nodes : one :class:`NodeEstimate` per farm, virtual node last; the
        virtual node's parameters are the designated decision output.
    consensus_rounds : statistics-consensus rounds per outer iteration.
    messages : message accounting, including the raw-value count a
        centralized collection would have transmitted instead.
    """

    nodes: tuple
    key_nodes: tuple
    coreness: np.ndarray
    aggregation_rounds: int
    consensus_rounds: tuple
    outer_iterations: int
    converged: bool
    messages: dict

    @property
    def decision_params(self):
        return self.nodes[-1].params

    def farm_nodes(self):
        """The per-farm fits (single-point-failure backups of the VN)."""
        return tuple(n for n in self.nodes if not n.is_virtual)


def estimate_aggregated_outputs(observations, topology, config=None,
                                message_log=None):
    """Per-farm estimates of the aggregated output series.

    Runs consensus with each farm's (N, 2) observation block as payload
    and scales the converged average by the farm count.  Farm m's result
    rows play the role of the true aggregated series; only consensus
    states are ever exchanged, never another farm's raw observations.
    """
    observations = np.asarray(observations, dtype=float)
    if observations.ndim != 3 or observations.shape[2] != _D:
        raise ParameterError(
            f"observations must be (M, N, 2), got {observations.shape}"
        )
    m_count, n_obs, _ = observations.shape
    if m_count != topology.n_real:
        raise ParameterError(
            f"{m_count} observation blocks for {topology.n_real} nodes"
        )
    if n_obs < 1:
        raise InsufficientDataError("farms carry no observations")
    payloads = observations.reshape(m_count, n_obs * _D)
    result = acf_consensus(payloads, topology, config, message_log=message_log)
    estimates = scale_to_sum(result.estimates, m_count)
    return estimates.reshape(m_count, n_obs, _D), result


def _series_scale_stats(stats, m_count):
    """Rescale network-total statistics to single-series strength.

    Every farm's estimate series approximates the same aggregated series,
    so the network totals describe that series ``m_count`` times over,
    not a partition of fresh data.  Feeding the raw totals to the M-step
    would overstate the sample size by a factor of ``m_count`` and wash
    out the priors; dividing counts and scatters by ``m_count`` (weighted
    means are scale-invariant) restores the balance of the centralized
    fit on the aggregate series, which the distributed procedure then
    matches exactly when consensus is exact.
    """
    return SufficientStats(
        counts=stats.counts / m_count,
        means=stats.means,
        scatters=stats.scatters / m_count,
        responsibilities=None,
    )


def _rel_change(new, old):
    return abs(new - old) / max(1.0, abs(new))


def fit_dmap(observations, topology, key_fraction, hyper, init,
             consensus_config=None, fit_config=None):
    """Full distributed fit; see the module docstring for the procedure.

    observations : (M, N, 2) per-farm (actual, forecast) pairs.
    topology : connected farm graph without a virtual node (one is
        attached internally to the selected key nodes).
    init, hyper : shared starting parameters and priors, distributed to
        all nodes as configuration.

    Errors from consensus or an M-step are re-raised with the offending
    node and outer iteration attached.
    """
    consensus_config = consensus_config or ConsensusConfig()
    fit_config = fit_config or FitConfig()
    if topology.has_virtual_node:
        raise ValidationError(
            "topology already has a virtual node; pass the farm graph"
        )

    observations = np.asarray(observations, dtype=float)
    m_count, n_obs = observations.shape[0], observations.shape[1]
    total_count = m_count * n_obs

    # step 1: every farm estimates the aggregated output series
    estimates, agg_result = estimate_aggregated_outputs(
        observations, topology, consensus_config)

    # step 2: key nodes by coreness, virtual node linked to them
    coreness = k_shell(topology)
    keys = select_key_nodes(topology, key_fraction, coreness)
    topo_vn = attach_virtual_node(topology, keys)

    # step 3: iterate local statistics -> consensus -> per-node update
    n_nodes = m_count + 1
    vn = m_count
    params = [init] * n_nodes
    floors = [covariance_floor(estimates[m]) for m in range(m_count)]
    floors.append(float(np.median(floors)))
    traces = [[log_posterior(estimates[m], init, hyper)]
              for m in range(m_count)]
    stats_rounds = []
    stats_messages = 0
    converged = False
    outer = 0
    for outer in range(1, fit_config.max_iter + 1):
        payloads = np.empty((m_count,
                             hyper.n_components * _FIELDS_PER_COMPONENT))
        for m in range(m_count):
            try:
                payloads[m] = local_statistics(estimates[m], params[m]).pack()
            except WindgmmError as exc:
                raise type(exc)(
                    f"node {m}, outer iteration {outer}: {exc}") from exc

        result = acf_with_vn(payloads, topo_vn, consensus_config)
        stats_rounds.append(result.rounds)
        stats_messages += result.message_count

        keeps = []
        new_params = []
        for node in range(n_nodes):
            totals = GlobalStats.unpack(
                scale_to_sum(result.estimates[node], m_count))
            try:
                stats, keep = reconstruct_global(
                    totals, total_count,
                    on_degenerate="prune" if fit_config.on_collapse == "prune"
                    else "error")
                updated, _ = m_step_map(_series_scale_stats(stats, m_count),
                                        hyper.select(keep),
                                        cov_floor=floors[node])
            except WindgmmError as exc:
                raise type(exc)(
                    f"node {node}, outer iteration {outer}: {exc}") from exc
            keeps.append(keep)
            new_params.append(updated)

        # pruning must stay aligned across nodes or the payload widths
        # diverge; keep only components every node kept
        common = keeps[0]
        for keep in keeps[1:]:
            common = np.intersect1d(common, keep)
        if common.size != hyper.n_components:
            hyper = hyper.select(common)
            remap = [np.searchsorted(keep, common) for keep in keeps]
            new_params = [permute_components(p, r)
                          for p, r in zip(new_params, remap)]

        change = max(_param_change(params[node], new_params[node])
                     for node in range(n_nodes))
        params = new_params
        for m in range(m_count):
            traces[m].append(log_posterior(estimates[m], params[m], hyper))
        if change < fit_config.tol:
            converged = True
            break

    nodes = []
    for m in range(m_count):
        nodes.append(NodeEstimate(
            node=m, is_virtual=False, estimates=estimates[m],
            params=params[m],
            report=FitReport(params=params[m], iterations=outer,
                             trace=np.array(traces[m]), converged=converged)))
    nodes.append(NodeEstimate(
        node=vn, is_virtual=True, estimates=None, params=params[vn],
        report=FitReport(params=params[vn], iterations=outer,
                         trace=np.array([]), converged=converged)))

    raw_values_centralized = total_count  # (N, 2) pairs shipped to a center
    messages = {
        "aggregation_consensus": agg_result.message_count,
        "statistics_consensus": stats_messages,
        "total": agg_result.message_count + stats_messages,
        "centralized_raw_pairs": raw_values_centralized,
    }
    return DmapResult(
        nodes=tuple(nodes), key_nodes=keys, coreness=coreness,
        aggregation_rounds=agg_result.rounds,
        consensus_rounds=tuple(stats_rounds), outer_iterations=outer,
        converged=converged, messages=messages,
    )


def fit_naive_single_node(estimates, hyper, init, fit_config=None):
    """Posterior-mode fit of one node's estimated aggregates alone.

    This is the degraded baseline: without pooling statistics across the
    network, a sparsely connected node's estimates are biased by whatever
    consensus error remains, and so is its fit.
    """
    return fit_map(np.asarray(estimates, dtype=float), hyper, init,
                   fit_config or FitConfig())
