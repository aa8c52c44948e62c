"""Posterior samplers and the Newton MAP optimizer.

Three sampling paths share one entry point, :func:`sample_posterior`:

* exact IID draws for the conjugate models (NormalMeanModel,
  PoissonGammaConjugateModel);
* a Gibbs sweep for the Poisson random-effects model, using the derived
  conjugate conditionals
      u_g | rest ~ Gamma(alpha + sum_{n: a_n=g} w_n y_n,
                         beta + e^gamma sum_{n: a_n=g} w_n)
      e^gamma | rest ~ Gamma(sum_n w_n y_n, sum_g u_g sum_{n: a_n=g} w_n)
  with u_g = exp(lambda_g) (the flat prior on gamma contributes the -1 in
  the e^gamma shape through the Jacobian of c = e^gamma; the conditional is
  improper when sum w_n y_n = 0, which is an error);
* a random-walk Metropolis fallback for any other model, with Robbins-Monro
  step adaptation toward 0.44 acceptance (1-D) or 0.23 (>= 2-D) during
  burn-in only.

Burn-in and thinning apply to the Markov samplers; the exact samplers return
``m_draws`` IID draws as-is.  One chain is strictly sequential; independent
chains derive their own RNG streams from (seed, replicate-index).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import DimensionMismatchError, NumericalError
from .models import Dataset, log_lik_matrix, ones_weights, validate_weights, weighted_log_posterior
from .reference import (
    NormalMeanModel,
    PoissonGammaConjugateModel,
    PoissonGammaREModel,
    exact_normal_posterior,
)
from .rng import KIND_CHAIN, stream

__all__ = [
    "ChainConfig",
    "PosteriorSample",
    "MapFit",
    "sample_posterior",
    "map_optimize",
    "ess",
]


@dataclass
class ChainConfig:
    """Sampler settings.

    ``m_draws`` counts total sampler iterations; Markov samplers discard
    ``burn_in`` of them (default m_draws // 2) and keep every ``thin``-th of
    the remainder, which must leave at least 2 retained draws.  Exact IID
    samplers ignore burn_in/thin.  ``adapt=False`` freezes the MH step at
    ``mh_step_scale`` (used by bootstrap replicates reusing an adapted step).
    """

    m_draws: int
    burn_in: int | None = None
    thin: int = 1
    rng_seed: Any = 0
    mh_step_scale: float = 0.5
    init: Any = "auto"
    adapt: bool = True

    def __post_init__(self):
        if self.m_draws < 2:
            raise ValueError("m_draws must be >= 2")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.burn_in is not None and not (0 <= self.burn_in < self.m_draws):
            raise ValueError("burn_in must lie in [0, m_draws)")
        if self.mh_step_scale <= 0:
            raise ValueError("mh_step_scale must be positive")

    @property
    def resolved_burn_in(self) -> int:
        return self.m_draws // 2 if self.burn_in is None else self.burn_in

    def retained(self) -> int:
        kept = (self.m_draws - self.resolved_burn_in + self.thin - 1) // self.thin
        if kept < 2:
            raise ValueError("fewer than 2 draws retained after burn-in/thinning")
        return kept


@dataclass
class PosteriorSample:
    """M retained draws with per-draw g values and (optionally) the M x N
    per-datum log-likelihood matrix, plus per-parameter effective sample
    sizes when computed."""

    draws: np.ndarray
    g_values: np.ndarray
    loglik: np.ndarray | None
    n_data: int
    ess_per_param: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.atleast_2d(np.asarray(self.draws, dtype=np.float64))
        self.g_values = np.atleast_2d(np.asarray(self.g_values, dtype=np.float64))
        if self.g_values.shape[0] != self.draws.shape[0]:
            raise DimensionMismatchError("draws and g_values row counts differ")
        if not np.all(np.isfinite(self.draws)) or not np.all(
            np.isfinite(self.g_values)
        ):
            raise ValueError("draws and g_values must be finite")
        if self.loglik is not None:
            self.loglik = np.asarray(self.loglik, dtype=np.float64)
            if self.loglik.shape != (self.draws.shape[0], self.n_data):
                raise DimensionMismatchError(
                    f"loglik has shape {self.loglik.shape}, expected "
                    f"({self.draws.shape[0]}, {self.n_data})"
                )
            if not np.all(np.isfinite(self.loglik)):
                raise ValueError("loglik entries must be finite")

    @property
    def m(self) -> int:
        return self.draws.shape[0]

    @property
    def q(self) -> int:
        return self.g_values.shape[1]

    def subset(self, rows) -> "PosteriorSample":
        """Row-reindexed copy (used by the block bootstrap)."""
        rows = np.asarray(rows)
        return PosteriorSample(
            draws=self.draws[rows],
            g_values=self.g_values[rows],
            loglik=None if self.loglik is None else self.loglik[rows],
            n_data=self.n_data,
            ess_per_param=None,
            meta=dict(self.meta),
        )


def _group_fsum(values: np.ndarray, groups: np.ndarray, g_count: int) -> np.ndarray:
    """Per-group exact sums (fsum), so data permutations cannot change bits."""
    out = np.empty(g_count, dtype=np.float64)
    for g in range(g_count):
        out[g] = math.fsum(values[groups == g].tolist())
    return out


def sample_posterior(
    model,
    data: Dataset,
    w=None,
    cfg: ChainConfig | None = None,
    *,
    method: str = "auto",
    want_loglik: bool = True,
    compute_ess: bool = True,
) -> PosteriorSample:
    """Draw from the w-weighted posterior of `model` given `data`.

    Dispatch: exact conjugate draws for NormalMeanModel and
    PoissonGammaConjugateModel, the Gibbs sweep for PoissonGammaREModel, and
    random-walk Metropolis otherwise; ``method`` in {"auto", "exact",
    "gibbs", "mh"} overrides.  The sample carries g(theta^m) per draw, the
    M x N log-likelihood matrix when ``want_loglik``, and per-parameter ESS
    when ``compute_ess``.
    """
    if cfg is None:
        raise ValueError("cfg is required")
    if w is None:
        w = ones_weights(data.n)
    w = validate_weights(w, data.n)
    rng = stream(cfg.rng_seed, KIND_CHAIN)

    if method == "auto":
        if isinstance(model, (NormalMeanModel, PoissonGammaConjugateModel)):
            method = "exact"
        elif isinstance(model, PoissonGammaREModel):
            method = "gibbs"
        else:
            method = "mh"

    meta: dict = {"method": method, "seed": cfg.rng_seed, "weights": w.copy()}
    if method == "exact":
        draws = _exact_draws(model, data, w, cfg, rng)
    elif method == "gibbs":
        draws = _gibbs_poisson_re(model, data, w, cfg, rng)
    elif method == "mh":
        draws, step, rate = _mh_chain(model, data, w, cfg, rng)
        meta["mh_step"] = step
        meta["accept_rate"] = rate
    else:
        raise ValueError(f"unknown method {method!r}")

    if hasattr(model, "g_vector"):
        g_values = np.asarray(model.g_vector(draws), dtype=np.float64)
    else:
        g_values = np.array([model.g(row) for row in draws], dtype=np.float64)
    loglik = log_lik_matrix(model, data, draws) if want_loglik else None

    ess_pp = None
    if compute_ess and draws.shape[0] >= 10:
        ess_pp = np.array([ess(col) for col in draws.T])

    return PosteriorSample(
        draws=draws,
        g_values=g_values,
        loglik=loglik,
        n_data=data.n,
        ess_per_param=ess_pp,
        meta=meta,
    )


def _exact_draws(model, data, w, cfg, rng) -> np.ndarray:
    m = cfg.m_draws
    if isinstance(model, NormalMeanModel):
        mu, var = exact_normal_posterior(model, data, w)
        return (mu + math.sqrt(var) * rng.standard_normal(m))[:, None]
    if isinstance(model, PoissonGammaConjugateModel):
        shape, rate = model.posterior_params(data, w)
        return rng.gamma(shape, 1.0 / rate, size=m)[:, None]
    raise ValueError("exact sampling is only available for the conjugate models")


def _gibbs_poisson_re(model: PoissonGammaREModel, data, w, cfg, rng) -> np.ndarray:
    g_count = model.group_count
    y = data.units[:, 0].astype(np.float64)
    groups = data.units[:, 1].astype(np.int64)
    if groups.min() < 0 or groups.max() >= g_count:
        raise ValueError("group labels outside [0, group_count)")

    wy_g = _group_fsum(w * y, groups, g_count)
    w_g = _group_fsum(w, groups, g_count)
    s_wy = math.fsum((w * y).tolist())
    if s_wy <= 0:
        raise NumericalError(
            "improper conditional for gamma: sum of weighted counts is zero "
            "under the flat prior"
        )

    shape_u = model.alpha + wy_g
    burn = cfg.resolved_burn_in
    m_ret = cfg.retained()
    draws = np.empty((m_ret, 1 + g_count))

    if isinstance(cfg.init, str) and cfg.init == "auto":
        u = np.full(g_count, model.alpha / model.beta)
        c = s_wy / float(u @ w_g)
    else:
        theta0 = np.asarray(cfg.init, dtype=np.float64).reshape(-1)
        if theta0.size != 1 + g_count:
            raise DimensionMismatchError("init has wrong length")
        c = math.exp(theta0[0])
        u = np.exp(theta0[1:])

    k = 0
    for it in range(cfg.m_draws):
        u = rng.gamma(shape_u, 1.0 / (model.beta + c * w_g))
        c = rng.gamma(s_wy, 1.0 / float(u @ w_g))
        if it >= burn and (it - burn) % cfg.thin == 0:
            draws[k, 0] = math.log(c)
            draws[k, 1:] = np.log(u)
            k += 1
    return draws[:k]


def _mh_chain(model, data, w, cfg, rng):
    d = model.dim
    if isinstance(cfg.init, str) and cfg.init == "auto":
        if hasattr(model, "mh_init"):
            theta = np.asarray(model.mh_init(data), dtype=np.float64).copy()
        else:
            theta = np.zeros(d)
    else:
        theta = np.asarray(cfg.init, dtype=np.float64).reshape(-1).copy()
        if theta.size != d:
            raise DimensionMismatchError("init has wrong length")

    logp = weighted_log_posterior(model, data, w, theta)
    if not math.isfinite(logp):
        raise NumericalError("MH initialization has zero posterior density")

    target = 0.44 if d == 1 else 0.23
    step = cfg.mh_step_scale
    burn = cfg.resolved_burn_in
    m_ret = cfg.retained()
    draws = np.empty((m_ret, d))
    accepted_after = 0
    k = 0
    for it in range(cfg.m_draws):
        prop = theta + step * rng.standard_normal(d)
        lp = weighted_log_posterior(model, data, w, prop)
        accept = math.log(max(rng.random(), 1e-300)) < lp - logp
        if accept:
            theta, logp = prop, lp
        if it < burn and cfg.adapt:
            step = math.exp(
                math.log(step) + (float(accept) - target) / (it + 1) ** 0.6
            )
        if it >= burn:
            accepted_after += int(accept)
            if (it - burn) % cfg.thin == 0:
                draws[k] = theta
                k += 1
    rate = accepted_after / max(cfg.m_draws - burn, 1)
    if not (0.05 <= rate <= 0.95):
        warnings.warn(
            f"MH acceptance rate {rate:.3f} outside [0.05, 0.95] after adaptation",
            RuntimeWarning,
        )
    return draws[:k], step, rate


@dataclass
class MapFit:
    """MAP estimate with the likelihood-only information and score
    covariance needed by the sandwich estimator."""

    theta_hat: np.ndarray
    info_hat: np.ndarray
    score_cov_hat: np.ndarray
    converged: bool
    newton_iters: int
    objective: float
    grad_norm: float
    n_data: int = 0


def _fd_grad(f, theta, h=1e-6):
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.empty(theta.size)
    for i in range(theta.size):
        e = np.zeros(theta.size)
        e[i] = h * (1.0 + abs(theta[i]))
        grad[i] = (f(theta + e) - f(theta - e)) / (2 * e[i])
    return grad


def _fd_hess(grad_f, theta, h=1e-5):
    theta = np.asarray(theta, dtype=np.float64)
    d = theta.size
    hess = np.empty((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h * (1.0 + abs(theta[i]))
        hess[:, i] = (grad_f(theta + e) - grad_f(theta - e)) / (2 * e[i])
    return 0.5 * (hess + hess.T)


def _loglik_sums(model, data, theta):
    """Sum over data of (log_lik, score, hessian), with FD fallbacks."""
    n = data.n
    if hasattr(model, "score"):
        s = np.zeros(model.dim)
        h = np.zeros((model.dim, model.dim))
        for i in range(n):
            x = data.unit(i)
            s += model.score(x, theta)
            h += model.hessian(x, theta)
        return s, h

    def ll_sum(t):
        return math.fsum(
            model.log_lik(data.unit(i), t) for i in range(n)
        )

    s = _fd_grad(ll_sum, theta)
    h = _fd_hess(lambda t: _fd_grad(ll_sum, t), theta)
    return s, h


def map_optimize(model, data: Dataset, *, max_iter: int = 100) -> MapFit:
    """Newton ascent with backtracking on the MAP objective

        L(theta) = (1/N) [ sum_n log_lik(x_n|theta) + log_prior(theta) ].

    Returns the fit with Î = -(1/N) sum_n hessian(x_n|theta_hat) (likelihood
    only; the prior enters the objective but not the information) and
    Σ̂ = covariance of the per-datum scores with divisor N.  Raises
    NumericalError("singular fit") when Î has min eigenvalue <= 1e-10 times
    its max eigenvalue.
    """
    n = data.n

    def objective(theta):
        return weighted_log_posterior(model, data, ones_weights(n), theta) / n

    def grad(theta):
        if hasattr(model, "score"):
            s, _ = _loglik_sums(model, data, theta)
            ps = (
                model.prior_score(theta)
                if hasattr(model, "prior_score")
                else _fd_grad(lambda t: float(model.log_prior(t)), theta)
            )
            return (s + ps) / n
        return _fd_grad(objective, theta)

    def hess(theta):
        if hasattr(model, "hessian"):
            _, h = _loglik_sums(model, data, theta)
            ph = (
                model.prior_hessian(theta)
                if hasattr(model, "prior_hessian")
                else _fd_hess(
                    lambda t: _fd_grad(lambda u: float(model.log_prior(u)), t), theta
                )
            )
            return (h + ph) / n
        return _fd_hess(grad, theta)

    if hasattr(model, "map_init"):
        theta = np.asarray(model.map_init(data), dtype=np.float64).copy()
    else:
        theta = np.zeros(model.dim)

    f = objective(theta)
    if not math.isfinite(f):
        raise NumericalError("MAP initialization outside the model domain")

    converged = False
    iters = 0
    g = grad(theta)
    for iters in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= 1e-8 * (1.0 + abs(f)):
            converged = True
            break
        h = hess(theta)
        try:
            direction = np.linalg.solve(-h, g)
            if float(direction @ g) <= 0:
                direction = g.copy()
        except np.linalg.LinAlgError:
            direction = g.copy()
        # Backtracking line search (Armijo); objective never decreases
        # across accepted steps.
        t = 1.0
        slope = float(direction @ g)
        improved = False
        for _ in range(60):
            cand = theta + t * direction
            fc = objective(cand)
            if math.isfinite(fc) and fc >= f + 1e-4 * t * slope:
                theta, f = cand, fc
                improved = True
                break
            t *= 0.5
        if not improved:
            break
        g = grad(theta)
    else:
        iters = max_iter

    gnorm = float(np.linalg.norm(g))
    converged = converged or gnorm <= 1e-8 * (1.0 + abs(f))

    score_sum, hess_sum = _sums_for_sandwich(model, data, theta)
    info = -hess_sum / n
    info = 0.5 * (info + info.T)
    evals = np.linalg.eigvalsh(info)
    if evals.min() <= 1e-10 * max(evals.max(), 0.0):
        raise NumericalError("singular fit")

    scores = _per_datum_scores(model, data, theta)
    centered = scores - scores.mean(axis=0, keepdims=True)
    sigma = centered.T @ centered / n
    sigma = 0.5 * (sigma + sigma.T)

    return MapFit(
        theta_hat=theta,
        info_hat=info,
        score_cov_hat=sigma,
        converged=converged,
        newton_iters=iters,
        objective=f,
        grad_norm=gnorm,
        n_data=n,
    )


def _per_datum_scores(model, data, theta) -> np.ndarray:
    if hasattr(model, "score"):
        return np.array([model.score(data.unit(i), theta) for i in range(data.n)])
    return np.array(
        [
            _fd_grad(lambda t, i=i: float(model.log_lik(data.unit(i), t)), theta)
            for i in range(data.n)
        ]
    )


def _sums_for_sandwich(model, data, theta):
    if hasattr(model, "hessian"):
        return _loglik_sums(model, data, theta)
    s = _per_datum_scores(model, data, theta).sum(axis=0)

    def ll_sum(t):
        return math.fsum(model.log_lik(data.unit(i), t) for i in range(data.n))

    h = _fd_hess(lambda t: _fd_grad(ll_sum, t), theta)
    return s, h


def ess(chain) -> float:
    """Effective sample size via Geyer's initial-positive-sequence rule.

    Autocorrelations are summed in consecutive pairs until a pair sum turns
    non-positive; ESS = M / tau clipped to (0, M].  A zero-variance chain
    returns M by convention.  Requires length >= 10.
    """
    x = np.asarray(chain, dtype=np.float64).reshape(-1)
    m = x.size
    if m < 10:
        raise ValueError("ess needs a chain of length >= 10")
    xc = x - x.mean()
    var0 = float(xc @ xc) / m
    if var0 == 0.0:
        return float(m)
    nfft = 1 << (2 * m - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:m] / m
    rho = acov / acov[0]
    tau = -1.0
    k = 0
    while 2 * k + 1 < m:
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
        k += 1
    if tau <= 0:
        return float(m)
    return float(min(m, m / tau))
