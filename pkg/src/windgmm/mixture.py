"""Bivariate Gaussian mixtures over (actual, forecast) aggregated wind power.

The joint density of the aggregated actual wind output (AWO) and forecast
wind output (FWO) is a weighted sum of bivariate Gaussians.  From it the
package derives the two marginals and, for a given forecast value, the
conditional density of the aggregated forecast error (actual minus
forecast).  Densities are computed in log space and exponentiated at the
boundary so that points far from every component do not underflow.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .errors import OutOfSupportError, ParameterError

AXIS_ACTUAL = "awo"
AXIS_FORECAST = "fwo"

_LOG_2PI = math.log(2.0 * math.pi)
# below this, a mixture likelihood is treated as numerically zero
_UNDERFLOW = 1e-300

_SYM_TOL = 1e-12
_WEIGHT_TOL = 1e-12


def _as_readonly(arr, dtype=float):
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


def _axis_index(axis):
    normalized = {AXIS_ACTUAL: 0, "a": 0, AXIS_FORECAST: 1, "f": 1}.get(
        str(axis).lower()
    )
    if normalized is None:
        raise ParameterError(f"unknown axis {axis!r}; expected 'awo' or 'fwo'")
    return normalized


def _check_weights(weights):
    if weights.ndim != 1 or weights.size == 0:
        raise ParameterError("weights must be a non-empty 1-D array")
    if not np.all(np.isfinite(weights)):
        raise ParameterError("weights must be finite")
    if np.any(weights < 0):
        raise ParameterError("weights must be non-negative")
    total = float(weights.sum())
    if abs(total - 1.0) > _WEIGHT_TOL:
        raise ParameterError(f"weights must sum to 1 (got {total!r})")


def _format_float(x):
    # 17 significant digits round-trip any IEEE-754 double exactly
    return format(float(x), ".17g")


@dataclass(frozen=True)
class GmmParams:
    """Parameters of a bivariate (actual, forecast) Gaussian mixture.

    weights : (J,) mixture weights, non-negative, summing to 1.
    means : (J, 2) component means in MW, columns [actual, forecast].
    covariances : (J, 2, 2) symmetric positive definite matrices in MW^2.

    Instances are immutable and safe to share between threads.  The
    precision (inverse-covariance) form of the same parameters is an
    exact one-to-one conversion, see :meth:`precisions` and
    :meth:`from_precisions`.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    d: int = field(default=2, init=False)

    def __post_init__(self):
        weights = _as_readonly(self.weights)
        means = _as_readonly(self.means)
        covs = np.array(self.covariances, dtype=float)

        _check_weights(weights)
        j = weights.shape[0]
        if means.shape != (j, 2):
            raise ParameterError(f"means must have shape ({j}, 2), got {means.shape}")
        if covs.shape != (j, 2, 2):
            raise ParameterError(
                f"covariances must have shape ({j}, 2, 2), got {covs.shape}"
            )
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(covs))):
            raise ParameterError("means and covariances must be finite")

        asym = np.max(np.abs(covs - np.transpose(covs, (0, 2, 1))))
        if asym > _SYM_TOL:
            raise ParameterError(f"covariance not symmetric (max asymmetry {asym:g})")
        # store exactly symmetric matrices so the off-diagonal blocks are
        # each other's transpose bit for bit
        covs = 0.5 * (covs + np.transpose(covs, (0, 2, 1)))
        for idx in range(j):
            a, b, c = covs[idx, 0, 0], covs[idx, 0, 1], covs[idx, 1, 1]
            if not (a > 0 and a * c - b * b > 0):
                raise ParameterError(
                    f"covariance of component {idx} is not positive definite"
                )
        covs = _as_readonly(covs)

        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)

    @property
    def n_components(self):
        return self.weights.shape[0]

    # -- parametrisation ------------------------------------------------

    def precisions(self):
        """Inverse covariance matrix per component, shape (J, 2, 2)."""
        return np.linalg.inv(self.covariances)

    @classmethod
    def from_precisions(cls, weights, means, precisions):
        """Build from the precision form; inverts each precision matrix."""
        precisions = np.asarray(precisions, dtype=float)
        return cls(weights=weights, means=means,
                   covariances=np.linalg.inv(precisions))

    def _log_dets(self):
        c = self.covariances
        return np.log(c[:, 0, 0] * c[:, 1, 1] - c[:, 0, 1] ** 2)

    def _loglik_matrix(self, points):
        """(N, J) matrix of log( w_j * N(point_i; mean_j, cov_j) )."""
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        log_norms = log_w - _LOG_2PI - 0.5 * self._log_dets()
        points = np.ascontiguousarray(points, dtype=float)
        return kernels.component_loglik(
            points, np.ascontiguousarray(self.means),
            np.ascontiguousarray(self.precisions()), log_norms)

    # -- densities ------------------------------------------------------

    def log_pdf(self, points):
        """Log joint density at one (2,) point or a batch of (N, 2) points."""
        points = np.asarray(points, dtype=float)
        single = points.ndim == 1
        pts = np.atleast_2d(points)
        if pts.shape[1] != 2:
            raise ParameterError(f"points must be 2-vectors, got shape {points.shape}")
        if not np.all(np.isfinite(pts)):
            raise ParameterError("points must be finite")
        out = logsumexp(self._loglik_matrix(pts), axis=1)
        return float(out[0]) if single else out

    def pdf(self, points):
        """Joint density (1/MW^2) at one point or a batch of points."""
        return np.exp(self.log_pdf(points))

    # -- derived distributions -------------------------------------------

    def marginal(self, axis):
        """Marginal mixture of the selected axis ('awo' or 'fwo')."""
        k = _axis_index(axis)
        return Gmm1d(weights=self.weights,
                     means=self.means[:, k],
                     variances=self.covariances[:, k, k])

    def condition_on_forecast(self, z_forecast):
        """Conditional mixture of the forecast error given the forecast.

        Reweights each component by its likelihood of the given forecast,
        and shifts mean/variance to the conditional (Schur complement)
        values.  Raises :class:`OutOfSupportError` when the forecast has
        numerically zero likelihood under every component, instead of
        silently renormalizing zeros.
        """
        z_forecast = float(z_forecast)
        if not math.isfinite(z_forecast):
            raise ParameterError("forecast value must be finite")
        mu_f = self.means[:, 1]
        var_f = self.covariances[:, 1, 1]
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        log_lik = (
            log_w
            - 0.5 * (_LOG_2PI + np.log(var_f))
            - 0.5 * (z_forecast - mu_f) ** 2 / var_f
        )
        total = logsumexp(log_lik)
        if not np.isfinite(total) or total < math.log(_UNDERFLOW):
            raise OutOfSupportError(
                f"forecast {z_forecast!r} MW has vanishing likelihood under "
                "every mixture component"
            )
        cond_weights = np.exp(log_lik - total)
        cond_weights = cond_weights / cond_weights.sum()

        cov_af = self.covariances[:, 0, 1]
        gain = cov_af / var_f
        cond_means = self.means[:, 0] + gain * (z_forecast - mu_f)
        cond_vars = self.covariances[:, 0, 0] - gain * cov_af
        if np.any(cond_vars <= 0):
            raise ParameterError(
                "conditional variance not positive; covariance is numerically "
                "indefinite"
            )
        return ConditionalGmm(given_forecast=z_forecast, weights=cond_weights,
                              means=cond_means, variances=cond_vars)

    # -- sampling ---------------------------------------------------------

    def sample(self, n, seed):
        """Draw n i.i.d. (actual, forecast) pairs; deterministic per seed.

        ``seed`` may be an int or a numpy Generator.
        """
        if n < 1:
            raise ParameterError("sample size must be >= 1")
        rng = np.random.default_rng(seed)
        counts = rng.multinomial(n, self.weights)
        chols = np.linalg.cholesky(self.covariances)
        out = np.empty((n, 2))
        pos = 0
        for j, cnt in enumerate(counts):
            if cnt == 0:
                continue
            normals = rng.standard_normal((cnt, 2))
            out[pos:pos + cnt] = self.means[j] + normals @ chols[j].T
            pos += cnt
        # components were drawn in blocks; shuffle to make draws exchangeable
        rng.shuffle(out, axis=0)
        return out

    # -- moments and support ----------------------------------------------

    def mean(self):
        """Mixture mean, shape (2,)."""
        return self.weights @ self.means

    def covariance(self):
        """Mixture covariance, shape (2, 2)."""
        mu = self.mean()
        diff = self.means - mu
        return np.einsum("j,jab->ab", self.weights, self.covariances) + np.einsum(
            "j,ja,jb->ab", self.weights, diff, diff
        )

    def support_box(self, n_sigma=8.0):
        """Axis-aligned box containing every component mean +- n_sigma stds."""
        stds = np.sqrt(np.stack(
            [self.covariances[:, 0, 0], self.covariances[:, 1, 1]], axis=1))
        lo = np.min(self.means - n_sigma * stds, axis=0)
        hi = np.max(self.means + n_sigma * stds, axis=0)
        return lo, hi

    # -- serialization ------------------------------------------------------

    def to_json(self):
        """Serialize to the canonical JSON document (17 significant digits)."""
        def fmt_vec(v):
            return "[" + ", ".join(_format_float(x) for x in v) + "]"

        def fmt_mat(m):
            return "[" + ", ".join(fmt_vec(row) for row in m) + "]"

        weights = fmt_vec(self.weights)
        means = fmt_mat(self.means)
        covs = "[" + ", ".join(fmt_mat(c) for c in self.covariances) + "]"
        return ('{"weights": %s, "means": %s, "covariances": %s}'
                % (weights, means, covs))

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        try:
            return cls(weights=doc["weights"], means=doc["means"],
                       covariances=doc["covariances"])
        except KeyError as exc:
            raise ParameterError(f"missing field {exc} in parameter JSON") from exc


@dataclass(frozen=True)
class Gmm1d:
    """One-dimensional Gaussian mixture (a marginal of :class:`GmmParams`)."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        weights = _as_readonly(self.weights)
        means = _as_readonly(self.means)
        variances = _as_readonly(self.variances)
        _check_weights(weights)
        if means.shape != weights.shape or variances.shape != weights.shape:
            raise ParameterError("weights, means, variances must share shape")
        if not np.all(np.isfinite(means)) or not np.all(np.isfinite(variances)):
            raise ParameterError("means and variances must be finite")
        if np.any(variances <= 0):
            raise ParameterError("variances must be positive")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)

    @property
    def n_components(self):
        return self.weights.shape[0]

    def log_pdf(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 0
        xs = np.atleast_1d(x)[:, None]
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)[None, :]
        ll = (
            log_w
            - 0.5 * (_LOG_2PI + np.log(self.variances))[None, :]
            - 0.5 * (xs - self.means[None, :]) ** 2 / self.variances[None, :]
        )
        out = logsumexp(ll, axis=1)
        return float(out[0]) if single else out

    def pdf(self, x):
        return np.exp(self.log_pdf(x))

    def mean(self):
        return float(self.weights @ self.means)

    def support(self, n_sigma=8.0):
        stds = np.sqrt(self.variances)
        return (float(np.min(self.means - n_sigma * stds)),
                float(np.max(self.means + n_sigma * stds)))


@dataclass(frozen=True)
class ConditionalGmm:
    """Mixture density of the aggregated forecast error given a forecast.

    The density is over the error e = actual - forecast and each Gaussian
    is evaluated at (e + given_forecast) against its conditional mean, so
    shifting the forecast and all conditional means together leaves the
    error density unchanged.
    """

    given_forecast: float
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        weights = _as_readonly(self.weights)
        means = _as_readonly(self.means)
        variances = _as_readonly(self.variances)
        _check_weights(weights)
        if means.shape != weights.shape or variances.shape != weights.shape:
            raise ParameterError("weights, means, variances must share shape")
        if np.any(variances <= 0):
            raise ParameterError("conditional variances must be positive")
        object.__setattr__(self, "given_forecast", float(self.given_forecast))
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)

    @property
    def n_components(self):
        return self.weights.shape[0]

    def log_pdf(self, error):
        error = np.asarray(error, dtype=float)
        single = error.ndim == 0
        at = np.atleast_1d(error)[:, None] + self.given_forecast
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)[None, :]
        ll = (
            log_w
            - 0.5 * (_LOG_2PI + np.log(self.variances))[None, :]
            - 0.5 * (at - self.means[None, :]) ** 2 / self.variances[None, :]
        )
        out = logsumexp(ll, axis=1)
        return float(out[0]) if single else out

    def pdf(self, error):
        """Density (1/MW) of the aggregated forecast error."""
        return np.exp(self.log_pdf(error))

    def support(self, n_sigma=8.0):
        """Error-axis interval covering all components +- n_sigma stds."""
        stds = np.sqrt(self.variances)
        centers = self.means - self.given_forecast
        return (float(np.min(centers - n_sigma * stds)),
                float(np.max(centers + n_sigma * stds)))
