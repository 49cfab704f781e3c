"""Mixture parameter estimation from observation pairs.

Two fitters share the same two-step iteration: a maximum-likelihood one
(EM) and a posterior-mode one (MAP) that regularizes the weights with a
Dirichlet prior and each mean/precision pair with a Normal-Wishart prior.
The MAP M-step is the exact joint mode of the conjugate posterior given
the current responsibilities, so the (unnormalized) log posterior is
non-decreasing across iterations; the fitters verify that.

The MAP updates, given per-component responsibility statistics
(count C, weighted mean chi, weighted scatter psi) and prior
hyperparameters (pseudo-count v, prior mean lambda with strength tau,
scale matrix sigma with dof alpha):

    weight   w = (v + C - 1) / sum_k (v_k + C_k - 1)
    mean     mu = (tau * lambda + C * chi) / (tau + C)
    scale    B = sigma + psi + [tau*C/(tau+C)] (lambda-chi)(lambda-chi)^T
    precision rho = (alpha + C - d) * B^{-1}      (covariance = inv(rho))
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import (
    DegeneracyError,
    InsufficientDataError,
    InternalConsistencyError,
    InvalidPosteriorError,
    ParameterError,
)
from .mixture import GmmParams, _as_readonly

_D = 2
_MONOTONE_SLACK = 1e-8
_COLLAPSE_FRACTION = 1e-8


@dataclass(frozen=True)
class Hyperparams:
    """Conjugate prior hyperparameters, one entry per mixture component.

    weight_pseudocounts : (J,) Dirichlet pseudo-counts (> 0).
    prior_means : (J, 2) prior component means, MW.
    mean_strengths : (J,) strength of the prior mean (>= 0; 0 ignores it).
    scale_dofs : (J,) Wishart degrees of freedom (> d - 1).
    scale_matrices : (J, 2, 2) symmetric positive definite scales, MW^2.
    """

    weight_pseudocounts: np.ndarray
    prior_means: np.ndarray
    mean_strengths: np.ndarray
    scale_dofs: np.ndarray
    scale_matrices: np.ndarray

    def __post_init__(self):
        v = _as_readonly(self.weight_pseudocounts)
        lam = _as_readonly(self.prior_means)
        tau = _as_readonly(self.mean_strengths)
        alpha = _as_readonly(self.scale_dofs)
        sigma = _as_readonly(self.scale_matrices)

        j = v.shape[0]
        if v.ndim != 1 or j == 0:
            raise ParameterError("weight_pseudocounts must be a 1-D array")
        if lam.shape != (j, _D) or tau.shape != (j,) or alpha.shape != (j,):
            raise ParameterError("hyperparameter arrays have inconsistent shapes")
        if sigma.shape != (j, _D, _D):
            raise ParameterError(f"scale_matrices must have shape ({j}, 2, 2)")
        if np.any(v <= 0):
            raise ParameterError("weight pseudo-counts must be > 0")
        if np.any(tau < 0):
            raise ParameterError("mean strengths must be >= 0")
        if np.any(alpha <= _D - 1):
            raise ParameterError(f"scale dofs must exceed d - 1 = {_D - 1}")
        sym = np.max(np.abs(sigma - np.transpose(sigma, (0, 2, 1))))
        if sym > 1e-12:
            raise ParameterError("scale matrices must be symmetric")
        for idx in range(j):
            a, b, c = sigma[idx, 0, 0], sigma[idx, 0, 1], sigma[idx, 1, 1]
            if not (a > 0 and a * c - b * b > 0):
                raise ParameterError(
                    f"scale matrix of component {idx} is not positive definite"
                )

        object.__setattr__(self, "weight_pseudocounts", v)
        object.__setattr__(self, "prior_means", lam)
        object.__setattr__(self, "mean_strengths", tau)
        object.__setattr__(self, "scale_dofs", alpha)
        object.__setattr__(self, "scale_matrices", sigma)

    @property
    def n_components(self):
        return self.weight_pseudocounts.shape[0]

    def select(self, keep):
        """Sub-prior restricted to the kept component indices."""
        keep = np.asarray(keep)
        return Hyperparams(
            weight_pseudocounts=self.weight_pseudocounts[keep],
            prior_means=self.prior_means[keep],
            mean_strengths=self.mean_strengths[keep],
            scale_dofs=self.scale_dofs[keep],
            scale_matrices=self.scale_matrices[keep],
        )

    def to_dict(self):
        return {
            "weight_pseudocounts": self.weight_pseudocounts.tolist(),
            "prior_means": self.prior_means.tolist(),
            "mean_strengths": self.mean_strengths.tolist(),
            "scale_dofs": self.scale_dofs.tolist(),
            "scale_matrices": self.scale_matrices.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            weight_pseudocounts=doc["weight_pseudocounts"],
            prior_means=doc["prior_means"],
            mean_strengths=doc["mean_strengths"],
            scale_dofs=doc["scale_dofs"],
            scale_matrices=doc["scale_matrices"],
        )


@dataclass(frozen=True)
class SufficientStats:
    """Per-component responsibility statistics of one E-step.

    responsibilities : (N, J) posterior component probabilities, or None
        when the statistics were reconstructed from network sums.
    counts : (J,) responsibility mass per component.
    means : (J, 2) responsibility-weighted means.
    scatters : (J, 2, 2) responsibility-weighted scatter around the means.
    """

    counts: np.ndarray
    means: np.ndarray
    scatters: np.ndarray
    responsibilities: np.ndarray | None = None

    def validate(self, n_obs, tol_rows=1e-10, tol_total=1e-8):
        if self.responsibilities is not None:
            rows = np.abs(self.responsibilities.sum(axis=1) - 1.0)
            if np.max(rows) > tol_rows:
                raise InternalConsistencyError(
                    f"responsibilities of point {int(np.argmax(rows))} do not "
                    "sum to 1"
                )
        if abs(float(self.counts.sum()) - n_obs) > tol_total:
            raise InternalConsistencyError(
                f"component counts sum to {self.counts.sum()!r}, expected {n_obs}"
            )
        sym = np.max(np.abs(self.scatters - np.transpose(self.scatters, (0, 2, 1))))
        if sym > 1e-10:
            raise InternalConsistencyError("scatter matrices are not symmetric")


@dataclass(frozen=True)
class FitConfig:
    """Iteration controls shared by the fitters.

    on_collapse : what to do when a component's responsibility mass drops
        below 1e-8 of the sample size during EM: "error" or "prune".
    """

    tol: float = 1e-6
    max_iter: int = 500
    on_collapse: str = "error"

    def __post_init__(self):
        if self.tol <= 0 or self.max_iter < 1:
            raise ParameterError("fit tolerance and max_iter must be positive")
        if self.on_collapse not in ("error", "prune"):
            raise ParameterError("on_collapse must be 'error' or 'prune'")


@dataclass(frozen=True)
class FitReport:
    """Outcome of a fit: final parameters plus the objective trace.

    For the centralized fitters the trace (log likelihood, plus the log
    prior for MAP, both up to additive constants) is non-decreasing within
    a small slack except on iterations where a covariance floor or a
    component prune intervened; those are listed in ``interventions``.
    """

    params: GmmParams
    iterations: int
    trace: np.ndarray
    converged: bool
    interventions: tuple = ()

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "log_posterior_trace": [float(x) for x in self.trace],
            "interventions": [list(map(int, i)) if isinstance(i, tuple) else i
                              for i in self.interventions],
        }


# ---------------------------------------------------------------------------
# E-step


def responsibilities(data, params):
    """Posterior component probabilities and per-point log likelihoods.

    Raises :class:`DegeneracyError` naming the first data point whose
    likelihood underflows to zero under every component.
    """
    data = np.asarray(data, dtype=float)
    loglik = params._loglik_matrix(data)
    point_loglik = logsumexp(loglik, axis=1)
    bad = ~np.isfinite(point_loglik)
    if np.any(bad):
        raise DegeneracyError(
            f"data point {int(np.flatnonzero(bad)[0])} has zero likelihood "
            "under every component"
        )
    resp = np.exp(loglik - point_loglik[:, None])
    return resp, point_loglik


def e_step_statistics(data, params):
    """Responsibility statistics of the data under the current parameters."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != _D:
        raise ParameterError(f"data must have shape (N, 2), got {data.shape}")
    if data.shape[0] < 1:
        raise InsufficientDataError("at least one observation is required")
    resp, _ = responsibilities(data, params)
    counts = resp.sum(axis=0)
    safe = np.maximum(counts, np.finfo(float).tiny)
    means = (resp.T @ data) / safe[:, None]
    diff = data[:, None, :] - means[None, :, :]
    scatters = np.einsum("nj,nja,njb->jab", resp, diff, diff)
    scatters = 0.5 * (scatters + np.transpose(scatters, (0, 2, 1)))
    return SufficientStats(counts=counts, means=means, scatters=scatters,
                           responsibilities=resp)


# ---------------------------------------------------------------------------
# M-steps


def _min_eigenvalues(mats):
    a = mats[:, 0, 0]
    b = mats[:, 0, 1]
    c = mats[:, 1, 1]
    half_trace = 0.5 * (a + c)
    radius = np.sqrt((0.5 * (a - c)) ** 2 + b * b)
    return half_trace - radius


def _apply_cov_floor(covs, floor):
    """Add floor * I to any component whose smallest eigenvalue is below it."""
    if floor <= 0:
        return covs, False
    low = _min_eigenvalues(covs) < floor
    if not np.any(low):
        return covs, False
    covs = covs.copy()
    covs[low, 0, 0] += floor
    covs[low, 1, 1] += floor
    return covs, True


def covariance_floor(data):
    """Floor used after every M-step: 1e-8 * trace(data covariance) / d."""
    data = np.asarray(data, dtype=float)
    if data.shape[0] < 2:
        return 1e-6
    cov = np.cov(data.T, ddof=0)
    return max(1e-8 * float(np.trace(cov)) / _D, 1e-300)


def m_step_map(stats, hyper, cov_floor=0.0):
    """Posterior-mode parameter update from statistics and priors.

    The sample size enters only through the statistics' counts, so it is
    not a separate argument.  Returns the updated parameters (covariance
    form) and whether the floor fired.  ``cov_floor`` > 0 additionally
    floors the smallest covariance eigenvalue; the fitters pass the
    data-derived floor, direct callers get the exact update.
    """
    if hyper.n_components != stats.counts.shape[0]:
        raise ParameterError("statistics and hyperparameters disagree on J")
    v = hyper.weight_pseudocounts
    tau = hyper.mean_strengths
    lam = hyper.prior_means
    alpha = hyper.scale_dofs
    sigma = hyper.scale_matrices
    counts = stats.counts
    chi = stats.means

    raw = v + counts - 1.0
    if np.any(raw <= 0):
        raise InvalidPosteriorError(
            f"weight update undefined: v_j + C_j - 1 <= 0 for component "
            f"{int(np.argmax(raw <= 0))}"
        )
    denom = float(raw.sum())
    if denom <= 0:
        raise InvalidPosteriorError("weight update undefined: sum of "
                                    "(v_j + C_j - 1) is not positive")
    weights = raw / denom

    strength = tau + counts
    if np.any(strength <= 0):
        raise InvalidPosteriorError("mean update undefined: tau_j + C_j = 0")
    means = (tau[:, None] * lam + counts[:, None] * chi) / strength[:, None]

    dof = alpha + counts - _D
    if np.any(dof <= 0):
        raise InvalidPosteriorError(
            f"precision update undefined: alpha_j + C_j - d <= 0 for "
            f"component {int(np.argmax(dof <= 0))}"
        )
    shrink = np.where(strength > 0, tau * counts / strength, 0.0)
    pull = lam - chi
    scale = (
        sigma
        + stats.scatters
        + shrink[:, None, None] * np.einsum("ja,jb->jab", pull, pull)
    )
    if np.any(_min_eigenvalues(scale) <= 0):
        raise DegeneracyError("posterior scale matrix is not positive definite")
    covariances = scale / dof[:, None, None]
    covariances, floored = _apply_cov_floor(covariances, cov_floor)
    params = GmmParams(weights=weights, means=means, covariances=covariances)
    return params, floored


def m_step_ml(stats, n_obs, cov_floor, on_collapse):
    """Maximum-likelihood M-step; may prune collapsed components.

    Returns (params, kept_indices, floored).
    """
    counts = stats.counts
    collapsed = counts < _COLLAPSE_FRACTION * n_obs
    keep = np.flatnonzero(~collapsed)
    if np.any(collapsed):
        if on_collapse == "error":
            raise DegeneracyError(
                f"component {int(np.flatnonzero(collapsed)[0])} collapsed "
                f"(mass {counts[collapsed][0]:.3e} of {n_obs} points)"
            )
        if keep.size == 0:
            raise DegeneracyError("every component collapsed")
    counts = counts[keep]
    weights = counts / counts.sum()
    means = stats.means[keep]
    covariances = stats.scatters[keep] / counts[:, None, None]
    covariances, floored = _apply_cov_floor(covariances, cov_floor)
    if np.any(_min_eigenvalues(covariances) <= 0):
        raise DegeneracyError("ML covariance is singular; raise the floor "
                              "or reduce the component count")
    params = GmmParams(weights=weights, means=means, covariances=covariances)
    return params, keep, floored


# ---------------------------------------------------------------------------
# Objectives


def log_likelihood(data, params):
    """Total log likelihood of the data under the mixture."""
    data = np.asarray(data, dtype=float)
    return float(logsumexp(params._loglik_matrix(data), axis=1).sum())


def log_prior(params, hyper):
    """Unnormalized log prior density of the parameters (precision form)."""
    w = np.maximum(params.weights, 1e-300)
    rho = params.precisions()
    sign, logdet_rho = np.linalg.slogdet(rho)
    if np.any(sign <= 0):
        raise ParameterError("precision matrices must be positive definite")
    diff = params.means - hyper.prior_means
    quad = np.einsum("ja,jab,jb->j", diff, rho, diff)
    trace_term = np.einsum("jab,jba->j", hyper.scale_matrices, rho)
    return float(
        np.sum((hyper.weight_pseudocounts - 1.0) * np.log(w))
        + np.sum(0.5 * (hyper.scale_dofs - _D) * logdet_rho)
        - np.sum(0.5 * hyper.mean_strengths * quad)
        - 0.5 * np.sum(trace_term)
    )


def log_posterior(data, params, hyper):
    """Fitting objective: log likelihood plus unnormalized log prior."""
    return log_likelihood(data, params) + log_prior(params, hyper)


# ---------------------------------------------------------------------------
# Fitters


def _check_monotone(trace, step, intervened):
    if intervened or len(trace) < 2:
        return
    if trace[-1] < trace[-2] - _MONOTONE_SLACK:
        raise InternalConsistencyError(
            f"objective decreased by {trace[-2] - trace[-1]:.3e} at "
            f"iteration {step}"
        )


def _rel_change(new, old):
    return abs(new - old) / max(1.0, abs(new))


def fit_map(data, hyper, init, config=None):
    """Posterior-mode fit by alternating E-step and MAP M-step.

    Iterates until the relative change of the log posterior drops below
    ``config.tol`` or ``config.max_iter`` is reached; the report carries
    the full objective trace.
    """
    config = config or FitConfig()
    data = np.asarray(data, dtype=float)
    floor = covariance_floor(data)
    params = init
    trace = [log_posterior(data, params, hyper)]
    converged = False
    interventions = []
    iterations = 0
    for step in range(1, config.max_iter + 1):
        stats = e_step_statistics(data, params)
        params, floored = m_step_map(stats, hyper, cov_floor=floor)
        if floored:
            interventions.append(("floor", step))
        trace.append(log_posterior(data, params, hyper))
        _check_monotone(trace, step, floored)
        iterations = step
        if _rel_change(trace[-1], trace[-2]) < config.tol:
            converged = True
            break
    return FitReport(params=params, iterations=iterations,
                     trace=np.array(trace), converged=converged,
                     interventions=tuple(interventions))


def fit_em(data, init, config=None):
    """Maximum-likelihood fit (EM baseline, prone to overfit on small N)."""
    config = config or FitConfig()
    data = np.asarray(data, dtype=float)
    floor = covariance_floor(data)
    n_obs = data.shape[0]
    params = init
    trace = [log_likelihood(data, params)]
    converged = False
    interventions = []
    iterations = 0
    for step in range(1, config.max_iter + 1):
        stats = e_step_statistics(data, params)
        params, keep, floored = m_step_ml(stats, n_obs, floor,
                                          config.on_collapse)
        intervened = floored or keep.size != stats.counts.shape[0]
        if floored:
            interventions.append(("floor", step))
        if keep.size != stats.counts.shape[0]:
            interventions.append(("prune", step))
        trace.append(log_likelihood(data, params))
        _check_monotone(trace, step, intervened)
        iterations = step
        if _rel_change(trace[-1], trace[-2]) < config.tol:
            converged = True
            break
    return FitReport(params=params, iterations=iterations,
                     trace=np.array(trace), converged=converged,
                     interventions=tuple(interventions))


# ---------------------------------------------------------------------------
# Defaults and initialization


def default_hyperparams(data, n_components, *, weight_pseudocount=1.01,
                        mean_strength=0.01, scale_dof=None, prior_mean=None,
                        scale_matrix=None):
    """Weakly informative priors derived from sample moments.

    Per component: pseudo-count 1.01, prior mean at the sample mean with
    strength 0.01, scale dof d + 2, and scale matrix
    (trace(sample covariance) / (2 J^(2/d))) * I, floored at 1e-6 * I for
    degenerate data.  Every value can be overridden.
    """
    data = np.asarray(data, dtype=float)
    if data.shape[0] < 2:
        raise InsufficientDataError("need at least 2 observations for priors")
    j = int(n_components)
    if j < 1:
        raise ParameterError("component count must be >= 1")
    center = data.mean(axis=0) if prior_mean is None else np.asarray(prior_mean)
    if scale_matrix is None:
        trace = float(np.trace(np.cov(data.T, ddof=0)))
        unit = trace / (2.0 * j ** (2.0 / _D))
        if unit < 1e-6:
            unit = 1e-6
        scale = unit * np.eye(_D)
    else:
        scale = np.asarray(scale_matrix, dtype=float)
    dof = _D + 2 if scale_dof is None else float(scale_dof)
    return Hyperparams(
        weight_pseudocounts=np.full(j, float(weight_pseudocount)),
        prior_means=np.tile(center, (j, 1)),
        mean_strengths=np.full(j, float(mean_strength)),
        scale_dofs=np.full(j, dof),
        scale_matrices=np.tile(scale, (j, 1, 1)),
    )


def init_params(data, n_components, seed):
    """Spread initial means over the data (k-means++-style seeding).

    Uniform weights, every covariance set to the sample covariance.
    Deterministic for a given seed.
    """
    data = np.asarray(data, dtype=float)
    n_obs = data.shape[0]
    j = int(n_components)
    if n_obs < j:
        raise InsufficientDataError(
            f"cannot place {j} components on {n_obs} observations"
        )
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n_obs))]
    d2 = np.sum((data - data[chosen[0]]) ** 2, axis=1)
    while len(chosen) < j:
        total = float(d2.sum())
        if total <= 0:
            # duplicate points: fall back to the first unchosen index
            remaining = sorted(set(range(n_obs)) - set(chosen))
            chosen.append(remaining[0])
        else:
            chosen.append(int(rng.choice(n_obs, p=d2 / total)))
        d2 = np.minimum(d2, np.sum((data - data[chosen[-1]]) ** 2, axis=1))
    means = data[np.array(chosen)]

    if n_obs >= 2:
        cov = np.cov(data.T, ddof=0)
    else:
        cov = np.eye(_D)
    floor = max(1e-6, 1e-6 * float(np.trace(cov)))
    if _min_eigenvalues(cov[None])[0] < floor:
        cov = cov + floor * np.eye(_D)
    weights = np.full(j, 1.0 / j)
    weights = weights / weights.sum()
    return GmmParams(weights=weights, means=means,
                     covariances=np.tile(cov, (j, 1, 1)))


# ---------------------------------------------------------------------------
# Component alignment (label switching makes raw order meaningless)


def align_components(reference, other):
    """Greedy matching of ``other``'s components onto ``reference``'s.

    Repeatedly pairs the closest (Euclidean distance of means) unmatched
    components.  Returns an index array ``perm`` with
    ``other.means[perm[k]]`` matched to ``reference.means[k]``.
    """
    if reference.n_components != other.n_components:
        raise ParameterError("component counts differ; cannot align")
    dist = np.linalg.norm(
        reference.means[:, None, :] - other.means[None, :, :], axis=2
    )
    j = reference.n_components
    perm = np.full(j, -1)
    used_ref = np.zeros(j, dtype=bool)
    used_oth = np.zeros(j, dtype=bool)
    work = dist.copy()
    for _ in range(j):
        idx = np.unravel_index(np.argmin(np.where(
            used_ref[:, None] | used_oth[None, :], np.inf, work)), work.shape)
        perm[idx[0]] = idx[1]
        used_ref[idx[0]] = True
        used_oth[idx[1]] = True
    return perm


def permute_components(params, perm):
    """Reorder mixture components by the given index array."""
    perm = np.asarray(perm)
    return GmmParams(weights=params.weights[perm], means=params.means[perm],
                     covariances=params.covariances[perm])


def aligned_param_distance(reference, other):
    """Max absolute parameter difference after greedy component alignment."""
    perm = align_components(reference, other)
    aligned = permute_components(other, perm)
    return max(
        float(np.max(np.abs(reference.weights - aligned.weights))),
        float(np.max(np.abs(reference.means - aligned.means))),
        float(np.max(np.abs(reference.covariances - aligned.covariances))),
    )
