"""Empirical densities, RMSE scoring, conditional binning, link cuts.

The evaluation vocabulary of the case studies: histogram densities from
held-out records, root-mean-square differences between density curves on
a shared grid, forecast-value bins for conditional error distributions,
and single-link cuts for communication-failure scenarios.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegeneracyError,
    DisconnectedGraphError,
    GridMismatchError,
    InsufficientDataError,
    ParameterError,
    ValidationError,
    WindgmmError,
)
from .network import Topology


@dataclass(frozen=True)
class EmpiricalPdf:
    """Normalized histogram density: equal-width bins spanning the data."""

    edges: np.ndarray
    densities: np.ndarray
    n_samples: int

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        densities = np.asarray(self.densities, dtype=float)
        if edges.ndim != 1 or edges.size != densities.size + 1:
            raise ParameterError("edges must be one longer than densities")
        if np.any(densities < 0):
            raise ParameterError("densities must be non-negative")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "densities", densities)

    @classmethod
    def from_samples(cls, samples, bins):
        """Histogram density over [min, max] with ``bins`` equal widths."""
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 1:
            samples = samples.ravel()
        if samples.size < 2:
            raise InsufficientDataError("need at least 2 samples")
        if not np.all(np.isfinite(samples)):
            raise ParameterError("samples must be finite")
        if int(bins) < 1:
            raise ParameterError("bin count must be >= 1")
        lo, hi = float(samples.min()), float(samples.max())
        if lo == hi:
            raise DegeneracyError(
                "all samples identical; a single-point histogram has no "
                "well-defined density"
            )
        counts, edges = np.histogram(samples, bins=int(bins), range=(lo, hi))
        widths = np.diff(edges)
        densities = counts / (samples.size * widths)
        return cls(edges=edges, densities=densities, n_samples=samples.size)

    @property
    def bin_centers(self):
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def integral(self):
        return float(np.sum(self.densities * np.diff(self.edges)))

    def density_at(self, x):
        """Step-function lookup; zero outside the histogram range."""
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.edges, x, side="right") - 1
        idx = np.where(x == self.edges[-1], len(self.densities) - 1, idx)
        inside = (idx >= 0) & (idx < len(self.densities))
        return np.where(inside, self.densities[np.clip(idx, 0,
                                                       len(self.densities) - 1)],
                        0.0)


def rmse(model, reference, grid):
    """Root mean squared pointwise difference of two curves on one grid."""
    model = np.asarray(model, dtype=float)
    reference = np.asarray(reference, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if model.shape != grid.shape or reference.shape != grid.shape:
        raise GridMismatchError(
            f"curve lengths {model.shape}, {reference.shape} do not match "
            f"grid {grid.shape}"
        )
    return float(np.sqrt(np.mean((model - reference) ** 2)))


def density_grid(lo, hi, points=100):
    """Equally spaced evaluation grid (the RMSE convention: 100 points)."""
    if not hi > lo:
        raise ParameterError("grid upper bound must exceed lower bound")
    return np.linspace(lo, hi, int(points))


def marginal_rmse(params_a, params_b, axis, points=100, span=5.0):
    """RMSE between two fitted marginal densities.

    The grid spans the union support of both marginals (means +- span
    standard deviations, 100 points by default).
    """
    ma = params_a.marginal(axis)
    mb = params_b.marginal(axis)
    lo_a, hi_a = ma.support(span)
    lo_b, hi_b = mb.support(span)
    grid = density_grid(min(lo_a, lo_b), max(hi_a, hi_b), points)
    return rmse(ma.pdf(grid), mb.pdf(grid), grid)


def empirical_marginal_rmse(params, axis, empirical, points=100, span=5.0):
    """RMSE between a fitted marginal and an empirical density.

    Grid spans the union of the model support and the histogram range.
    """
    marg = params.marginal(axis)
    lo_m, hi_m = marg.support(span)
    lo = min(lo_m, float(empirical.edges[0]))
    hi = max(hi_m, float(empirical.edges[-1]))
    grid = density_grid(lo, hi, points)
    return rmse(marg.pdf(grid), empirical.density_at(grid), grid)


# ---------------------------------------------------------------------------
# Conditional (forecast-binned) evaluation


@dataclass(frozen=True)
class ConditionalBins:
    """Forecast-value bins with the error samples that fell into each.

    Bin n (1-based) covers [n*center_step - half_width,
    n*center_step + half_width) with center_step = 0.1 * forecast_max and
    half_width = 0.05 * forecast_max, so consecutive bins tile the range
    without overlap.  Pairs outside every bin are counted, not dropped
    silently.
    """

    n_bins: int
    forecast_max: float
    center_step: float
    half_width: float
    errors_per_bin: tuple
    histograms: tuple
    out_of_range: int

    def bin_center(self, n):
        return n * self.center_step

    def bin_interval(self, n):
        c = self.bin_center(n)
        return c - self.half_width, c + self.half_width

    def occupancy(self):
        return tuple(len(e) for e in self.errors_per_bin)


def conditional_empirical(errors, forecasts, n_bins, hist_bins=30):
    """Allocate (error, forecast) pairs to forecast bins and histogram them.

    errors, forecasts : aggregated forecast errors and the forecasts they
        belong to, equal length.
    n_bins : number of forecast bins.
    hist_bins : histogram resolution inside each bin.

    Bins with fewer than 2 samples get no histogram (None) and are
    reported as empty by downstream scoring.
    """
    errors = np.asarray(errors, dtype=float)
    forecasts = np.asarray(forecasts, dtype=float)
    if errors.shape != forecasts.shape or errors.ndim != 1:
        raise ParameterError("errors and forecasts must be equal-length 1-D")
    if errors.size == 0:
        raise InsufficientDataError("no data pairs to allocate")
    if int(n_bins) < 1:
        raise ParameterError("need at least one forecast bin")
    n_bins = int(n_bins)
    fmax = float(forecasts.max())
    if fmax <= 0:
        raise ParameterError("maximum forecast must be positive to form bins")
    step = 0.1 * fmax
    half = 0.05 * fmax

    # consecutive bins share endpoints; allocate half-open [lo, hi), with
    # the last bin closed so the forecast maximum is not dropped
    idx = np.floor((forecasts - (step - half)) / (2 * half)).astype(int) + 1
    idx[forecasts == n_bins * step + half] = n_bins
    in_range = (idx >= 1) & (idx <= n_bins)

    per_bin = []
    hists = []
    for n in range(1, n_bins + 1):
        values = errors[in_range & (idx == n)]
        per_bin.append(values)
        if values.size >= 2 and values.min() < values.max():
            hists.append(EmpiricalPdf.from_samples(values, hist_bins))
        else:
            hists.append(None)
    return ConditionalBins(
        n_bins=n_bins, forecast_max=fmax, center_step=step, half_width=half,
        errors_per_bin=tuple(per_bin), histograms=tuple(hists),
        out_of_range=int(np.sum(~in_range)),
    )


@dataclass(frozen=True)
class BinScore:
    """Per-bin comparison outcome; rmse is None for skipped (empty) bins."""

    bin_index: int
    rmse: float | None
    n_samples: int
    skipped: str | None = None


def evaluate_conditional_fit(params, bins):
    """Score a fit against each bin's empirical conditional density.

    Conditions the mixture at the bin's central forecast value and
    compares the error density on the bin's histogram grid.  Empty bins
    are skipped with a report entry; conditioning failures propagate with
    the bin index attached.
    """
    scores = []
    for n in range(1, bins.n_bins + 1):
        hist = bins.histograms[n - 1]
        count = len(bins.errors_per_bin[n - 1])
        if hist is None:
            reason = "empty bin" if count == 0 else "too few distinct samples"
            scores.append(BinScore(bin_index=n, rmse=None, n_samples=count,
                                   skipped=reason))
            continue
        try:
            conditional = params.condition_on_forecast(bins.bin_center(n))
        except WindgmmError as exc:
            raise type(exc)(f"bin {n}: {exc}") from exc
        grid = hist.bin_centers
        scores.append(BinScore(
            bin_index=n,
            rmse=rmse(conditional.pdf(grid), hist.densities, grid),
            n_samples=count,
        ))
    return scores


# ---------------------------------------------------------------------------
# Robustness scenarios


def cut_links(topology, edge_list):
    """Topology with the listed farm-farm edges removed.

    Every edge must exist, and the graph must stay connected; the error
    names the first edge whose removal disconnects it.
    """
    if topology.has_virtual_node:
        raise ValidationError("cut links on the farm graph, before the "
                              "virtual node is attached")
    rows = [set(row) for row in topology.neighbors]
    for (a, b) in edge_list:
        a, b = int(a), int(b)
        if b not in rows[a] or a not in rows[b]:
            raise ValidationError(f"edge ({a}, {b}) does not exist")
        rows[a].discard(b)
        rows[b].discard(a)
        probe = Topology(
            coordinates=topology.coordinates,
            threshold_km=topology.threshold_km,
            neighbors=tuple(tuple(sorted(r)) for r in rows),
        )
        if not probe.is_connected():
            raise DisconnectedGraphError(
                f"removing edge ({a}, {b}) disconnects the graph",
                components=probe.components(),
            )
    return Topology(
        coordinates=topology.coordinates,
        threshold_km=topology.threshold_km,
        neighbors=tuple(tuple(sorted(r)) for r in rows),
    )


def long_links(topology, min_km):
    """Farm-farm edges longer than ``min_km`` (candidates for failure)."""
    coords = topology.coordinates
    out = []
    for (a, b) in topology.real_edges():
        if float(np.linalg.norm(coords[a] - coords[b])) > min_km:
            out.append((a, b))
    return out
