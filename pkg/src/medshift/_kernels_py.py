"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def irls_pass(X, y, w, offset, beta):
    """Weighted Bernoulli log-likelihood, score and information at ``beta``.

    Returns (loglik, grad, hess) with hess the positive definite information
    matrix X' diag(w p (1 - p)) X.
    """
    eta = offset + X @ beta
    p = 0.5 * (1.0 + np.tanh(0.5 * eta))
    loglik = float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))
    grad = X.T @ (w * (y - p))
    hess = (X * (w * p * (1.0 - p))[:, None]).T @ X
    return loglik, grad, hess


def stratum_sums(key, y, w, n_keys):
    """Per-key totals of w and w*y for integer keys in [0, n_keys)."""
    sw = np.bincount(key, weights=w, minlength=n_keys)
    swy = np.bincount(key, weights=w * y, minlength=n_keys)
    return sw, swy
