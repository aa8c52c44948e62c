"""Model abstraction: datasets, weights, and the weighted log posterior.

A model is any object exposing

    dim : int               parameter dimension D
    gamma_dim : int         leading global-parameter dimension (<= dim)
    q : int                 dimension of the quantity of interest g(theta)
    log_lik(x, theta)       per-datum log-likelihood, -inf outside the domain
    log_prior(theta)        log prior density, -inf outside the domain
    g(theta)                quantity of interest, shape (q,)

and optionally, for speed and for derivative-based routines:

    loglik_vector(data, theta)        all N per-datum log-likelihoods at once
    sum_loglik_grid(data, thetas)     sum_n log_lik over a 1-D grid of thetas
    score(x, theta) / hessian(x, theta)
    prior_score(theta) / prior_hessian(theta)
    loglik_d3(x, theta) / prior_d3(theta)   third derivatives (1-D models)
    g_grad(theta)                     Jacobian of g, shape (q, dim)

All evaluations must be pure; they are called concurrently on shared
immutable data.  Per-datum constants may be dropped from log_lik: posterior
covariances of (g, log_lik) are invariant to theta-constant shifts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError

__all__ = [
    "Dataset",
    "ones_weights",
    "validate_weights",
    "weighted_log_posterior",
    "log_lik_matrix",
]


@dataclass(frozen=True)
class Dataset:
    """Ordered, index-addressable collection of exchangeable datapoints.

    ``units`` is a numpy array whose rows (or scalars, for 1-D payloads) are
    the datapoints x_n in a model-defined layout.  N >= 2 because covariances
    over datapoints need at least two units.
    """

    units: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.units)
        object.__setattr__(self, "units", arr)
        if arr.shape[0] < 2:
            raise ValueError("Dataset needs at least 2 units")

    @property
    def n(self) -> int:
        return int(self.units.shape[0])

    def unit(self, i: int):
        return self.units[i]

    def permuted(self, order) -> "Dataset":
        order = np.asarray(order)
        return Dataset(self.units[order])


def ones_weights(n: int) -> np.ndarray:
    """The 1-vector: reproduces the unweighted posterior."""
    return np.ones(n, dtype=np.float64)


def validate_weights(w, n: int) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (n,):
        raise DimensionMismatchError(
            f"weight vector has shape {w.shape}, expected ({n},)"
        )
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and nonnegative")
    return w


def weighted_log_posterior(model, data: Dataset, w, theta) -> float:
    """Sum_n w_n * log_lik(x_n | theta) + log_prior(theta).

    The per-datum terms are accumulated with math.fsum, so the value is
    exactly rounded and invariant under permuting (data, weights) together.
    Returns -inf when theta is outside the model domain (not an error).
    Datapoints with w_n == 0 contribute nothing even where log_lik is -inf.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (model.dim,):
        raise DimensionMismatchError(
            f"theta has shape {theta.shape}, expected ({model.dim},)"
        )
    w = validate_weights(w, data.n)
    lp = float(model.log_prior(theta))
    if lp == -math.inf:
        return -math.inf
    if hasattr(model, "loglik_vector"):
        ll = np.asarray(model.loglik_vector(data, theta), dtype=np.float64)
    else:
        ll = np.array(
            [model.log_lik(data.unit(i), theta) for i in range(data.n)],
            dtype=np.float64,
        )
    active = w > 0
    if np.any(ll[active] == -math.inf):
        return -math.inf
    return math.fsum((w[active] * ll[active]).tolist()) + lp


def log_lik_matrix(model, data: Dataset, draws) -> np.ndarray:
    """M x N matrix with entry (m, n) = log_lik(x_n | theta^m).

    Requires M >= 2 draws; raises NumericalError naming (m, n) if any entry
    is non-finite (draws are expected to lie inside the model domain).
    """
    from .errors import NumericalError

    draws = np.asarray(draws, dtype=np.float64)
    if draws.ndim == 1:
        draws = draws[:, None]
    m_count = draws.shape[0]
    if m_count < 2:
        raise ValueError("log_lik_matrix needs at least 2 draws")
    out = np.empty((m_count, data.n), dtype=np.float64)
    has_vec = hasattr(model, "loglik_vector")
    for m in range(m_count):
        theta = draws[m]
        if has_vec:
            out[m] = model.loglik_vector(data, theta)
        else:
            out[m] = [model.log_lik(data.unit(i), theta) for i in range(data.n)]
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(out))[0]
        raise NumericalError(
            f"non-finite log-likelihood at draw {bad[0]}, datum {bad[1]}"
        )
    return out
