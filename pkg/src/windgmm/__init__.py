"""Probability models of aggregated wind power forecast error.

Builds Gaussian-mixture joint densities of the aggregated actual and
forecast wind output, fits them with limited data via conjugate-prior
posterior-mode estimation, and distributes the fitting across simulated
farm nodes with an average-consensus filter and a virtual
control-center node.
"""

from .datasets import (
    LoadResult,
    SyntheticResult,
    WindSeries,
    aggregate_observations,
    aggregate_truth,
    generate_synthetic,
    load_csv,
    observation_blocks,
    write_csv,
)
from .distributed import (
    DmapResult,
    GlobalStats,
    LocalStats,
    NodeEstimate,
    estimate_aggregated_outputs,
    fit_dmap,
    fit_naive_single_node,
    local_statistics,
    reconstruct_global,
)
from .evaluation import (
    BinScore,
    ConditionalBins,
    EmpiricalPdf,
    conditional_empirical,
    cut_links,
    density_grid,
    empirical_marginal_rmse,
    evaluate_conditional_fit,
    long_links,
    marginal_rmse,
    rmse,
)
from .fitting import (
    FitConfig,
    FitReport,
    Hyperparams,
    SufficientStats,
    align_components,
    aligned_param_distance,
    default_hyperparams,
    e_step_statistics,
    fit_em,
    fit_map,
    init_params,
    log_likelihood,
    log_posterior,
    m_step_map,
    permute_components,
)
from .kernels import BACKEND
from .mixture import ConditionalGmm, Gmm1d, GmmParams
from .network import (
    ConsensusConfig,
    ConsensusResult,
    Topology,
    acf_consensus,
    acf_with_vn,
    attach_virtual_node,
    build_topology,
    k_shell,
    scale_to_sum,
    select_key_nodes,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BinScore",
    "ConditionalBins",
    "ConditionalGmm",
    "ConsensusConfig",
    "ConsensusResult",
    "DmapResult",
    "EmpiricalPdf",
    "FitConfig",
    "FitReport",
    "Gmm1d",
    "GmmParams",
    "GlobalStats",
    "Hyperparams",
    "LoadResult",
    "LocalStats",
    "NodeEstimate",
    "SufficientStats",
    "SyntheticResult",
    "Topology",
    "WindSeries",
    "acf_consensus",
    "acf_with_vn",
    "aggregate_observations",
    "aggregate_truth",
    "align_components",
    "aligned_param_distance",
    "attach_virtual_node",
    "build_topology",
    "conditional_empirical",
    "cut_links",
    "default_hyperparams",
    "density_grid",
    "e_step_statistics",
    "empirical_marginal_rmse",
    "estimate_aggregated_outputs",
    "evaluate_conditional_fit",
    "fit_dmap",
    "fit_em",
    "fit_map",
    "fit_naive_single_node",
    "generate_synthetic",
    "init_params",
    "k_shell",
    "load_csv",
    "local_statistics",
    "log_likelihood",
    "log_posterior",
    "long_links",
    "m_step_map",
    "marginal_rmse",
    "observation_blocks",
    "permute_components",
    "reconstruct_global",
    "rmse",
    "scale_to_sum",
    "select_key_nodes",
    "write_csv",
]
