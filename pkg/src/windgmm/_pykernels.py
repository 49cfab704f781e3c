"""Pure-numpy reference implementations of the hot kernels.

Same call signatures as the compiled ``_ckernels`` extension.  These are
the import-time fallback and the ground truth the compiled kernels are
tested against.
"""

import numpy as np

BACKEND_NAME = "python"


def component_loglik(points, means, precisions, log_norms, out=None):
    """Weighted per-component Gaussian log-densities on 2-D points.

    points : (N, 2) float64
    means : (J, 2) float64
    precisions : (J, 2, 2) float64, inverse covariance per component
    log_norms : (J,) float64, log w_j - log(2*pi) - 0.5*log det(cov_j)

    Returns an (N, J) matrix whose [i, j] entry is
    log( w_j * N(points[i]; mean_j, cov_j) ).
    """
    dx = points[:, None, 0] - means[None, :, 0]
    dy = points[:, None, 1] - means[None, :, 1]
    quad = (
        precisions[None, :, 0, 0] * dx * dx
        + 2.0 * precisions[None, :, 0, 1] * dx * dy
        + precisions[None, :, 1, 1] * dy * dy
    )
    result = log_norms[None, :] - 0.5 * quad
    if out is not None:
        out[...] = result
        return out
    return result


def consensus_rounds(state, indptr, indices, eta, tol, max_iter, vn_index):
    """Synchronous neighbor-averaging rounds until the state settles.

    state : (n_nodes, width) float64, modified in place; row m holds node
        m's current estimate.  Ordinary nodes apply the update
        ``x_m += eta * sum_{n in neighbors(m)} (x_n - x_m)``; the node at
        ``vn_index`` (if >= 0) is replaced by the plain average of its
        neighbors' previous-round states and takes no part in their sums.
    indptr, indices : CSR adjacency over the rows of ``state`` (the
        ``vn_index`` row's neighbor list is its incoming set).
    tol : convergence threshold on the max per-entry change, relative to
        max(1, largest state magnitude).
    max_iter : round cap.

    Returns (rounds, converged, last_change) where last_change is the
    final relative per-entry change.
    """
    n_nodes, width = state.shape
    if width == 0 or n_nodes == 1:
        return 0, True, 0.0

    rounds = 0
    last_change = np.inf
    new = np.empty_like(state)
    for _ in range(max_iter):
        for m in range(n_nodes):
            nbrs = indices[indptr[m]:indptr[m + 1]]
            if m == vn_index:
                if len(nbrs) == 0:
                    new[m] = state[m]
                else:
                    new[m] = state[nbrs].mean(axis=0)
            else:
                acc = state[nbrs].sum(axis=0) if len(nbrs) else 0.0
                new[m] = state[m] + eta * (acc - len(nbrs) * state[m])
        rounds += 1
        scale = max(1.0, float(np.max(np.abs(new))))
        last_change = float(np.max(np.abs(new - state))) / scale
        state[...] = new
        if last_change <= tol:
            return rounds, True, last_change
    return rounds, False, last_change
