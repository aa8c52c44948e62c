"""Bias diagnostics for grouped global-local models, plus the posterior
expansion check.

The influence-score covariance can underestimate the truth when each global
parameter interacts with many weakly informed local parameters.  For models
whose per-datum likelihood is conditionally exponential-family,

    log p(y_n | theta) = ytil_n . eta_{a_n}(theta),

with ytil_n the sufficient-statistic vector of datum n and eta_g the natural
parameter of its group, the relevant objects are

    m_g, S_g    within-group first moment and second moment of ytil
                (divisor n_g),
    L_gh        N * E_post[ gbar * Cov(eta_g, eta_h | gamma, data) ],
    M_gh        N^2 * E_post[ gbar * mubar_g mubar_h^T ],

where gbar is the centered quantity of interest and mubar_g the centered
conditional mean E[eta_g | gamma, data].  Conditional independence of the
groups given the global parameter makes L block-diagonal on the closed-form
path.  The headline scalar is

    kappa_hat = (1/G) sum_g tr(S_g^{1/2} L_gg S_g^{1/2}),

the leading bias of the influence-score covariance relative to the truth;
rho_nn and the rank-one residual term quantify the same object per datum.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NumericalError
from .models import Dataset
from .rng import KIND_COND_DRAWS, stream
from .samplers import PosteriorSample, _loglik_sums, map_optimize
from .special import special_digamma, special_trigamma

# numpy 2 renamed trapz; support both without a deprecation warning.
_trapezoid = getattr(np, "trapezoid", None) or np.trapz

__all__ = [
    "GroupedExpFamilyView",
    "GroupedExpFamilyTerms",
    "KappaRho",
    "PoissonAnalytic",
    "poisson_re_view",
    "poisson_re_truth_moments",
    "empirical_group_moments",
    "ml_matrices_from_chain",
    "raw_second_moment_blocks",
    "kappa_and_rho",
    "diagnose",
    "BcltCheck",
    "bclt_expansion_check",
]


@dataclass
class GroupedExpFamilyView:
    """How to read a fitted model as a grouped exponential family.

    ``y`` holds the per-datum sufficient statistics (N x y_dim), ``groups``
    the group label of each datum.  ``eta_from_draw`` maps one parameter
    draw to the (G x y_dim) natural-parameter matrix and ``gamma_from_draw``
    extracts the global parameter.  ``conditional_moments`` (when the model
    admits closed forms) maps a length-M vector of global draws to the
    conditional means (M x G x y_dim) and covariances (M x G x y_dim x y_dim)
    of eta given gamma and the data; ``conditional_sampler(gamma, rng, size)``
    is the sampling fallback returning (size x G x y_dim) eta draws.
    """

    y: np.ndarray
    groups: np.ndarray
    g_count: int
    eta_from_draw: Callable[[np.ndarray], np.ndarray]
    gamma_from_draw: Callable[[np.ndarray], float]
    conditional_moments: Callable | None = None
    conditional_sampler: Callable | None = None

    def __post_init__(self):
        self.y = np.atleast_2d(np.asarray(self.y, dtype=np.float64))
        self.groups = np.asarray(self.groups, dtype=np.int64).reshape(-1)
        if self.y.shape[0] != self.groups.size:
            raise ValueError("y and groups disagree on N")
        if self.g_count < 1:
            raise ValueError("g_count must be >= 1")
        if self.groups.size and (
            self.groups.min() < 0 or self.groups.max() >= self.g_count
        ):
            raise ValueError("group labels outside [0, g_count)")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def y_dim(self) -> int:
        return self.y.shape[1]

    def loglik_from_eta(self, theta) -> np.ndarray:
        """Per-datum log-likelihoods reconstructed as ytil_n . eta_{a_n}."""
        eta = np.asarray(self.eta_from_draw(np.asarray(theta, dtype=np.float64)))
        return np.einsum("nd,nd->n", self.y, eta[self.groups])


def poisson_re_view(model, data: Dataset) -> GroupedExpFamilyView:
    """Grouped view of the Poisson random-effects model.

    Sufficient statistics ytil_n = (y_n, 1) and natural parameters
    eta_g = (gamma + lambda_g, -exp(gamma + lambda_g)), so that
    log p(y_n | theta) = y_n (gamma + lambda_g) - exp(gamma + lambda_g)
    is exactly ytil_n . eta_{a_n}.

    Conditional on gamma and the data, u_g = exp(lambda_g) is
    Gamma(A_g, B_g) with A_g = alpha + sum_{n in g} y_n and
    B_g = beta + n_g e^gamma, giving closed-form conditional moments of
    eta_g = (gamma + log u_g, -e^gamma u_g):

        E[eta_g | gamma]   = (gamma + psi(A_g) - log B_g, -e^gamma A_g / B_g)
        Cov[eta_g | gamma] = [[psi1(A_g),      -e^gamma / B_g          ],
                              [-e^gamma / B_g,  e^{2 gamma} A_g / B_g^2]]
    """
    counts = data.units[:, 0].astype(np.float64)
    groups = data.units[:, 1].astype(np.int64)
    g_count = model.group_count
    n_g = np.bincount(groups, minlength=g_count).astype(np.float64)
    sum_y = np.bincount(groups, weights=counts, minlength=g_count)
    a_g = model.alpha + sum_y
    psi_a = special_digamma(a_g)
    psi1_a = special_trigamma(a_g)

    def conditional_moments(gammas):
        gam = np.atleast_1d(np.asarray(gammas, dtype=np.float64))
        c = np.exp(gam)[:, None]
        b = model.beta + n_g[None, :] * c
        mu = np.empty((gam.size, g_count, 2))
        mu[:, :, 0] = gam[:, None] + psi_a[None, :] - np.log(b)
        mu[:, :, 1] = -c * a_g[None, :] / b
        j = np.empty((gam.size, g_count, 2, 2))
        j[:, :, 0, 0] = psi1_a[None, :]
        j[:, :, 0, 1] = j[:, :, 1, 0] = -c / b
        j[:, :, 1, 1] = c**2 * a_g[None, :] / b**2
        return mu, j

    def conditional_sampler(gamma, rng, size):
        c = math.exp(gamma)
        b = model.beta + n_g * c
        u = rng.gamma(np.broadcast_to(a_g, (size, g_count)), 1.0 / b[None, :])
        eta = np.empty((size, g_count, 2))
        eta[:, :, 0] = gamma + np.log(u)
        eta[:, :, 1] = -c * u
        return eta

    def eta_from_draw(theta):
        s = theta[0] + theta[1:]
        return np.column_stack([s, -np.exp(s)])

    return GroupedExpFamilyView(
        y=np.column_stack([counts, np.ones_like(counts)]),
        groups=groups,
        g_count=g_count,
        eta_from_draw=eta_from_draw,
        gamma_from_draw=lambda theta: float(theta[0]),
        conditional_moments=conditional_moments,
        conditional_sampler=conditional_sampler,
    )


def poisson_re_truth_moments(theta_true) -> tuple[np.ndarray, np.ndarray]:
    """Population within-group moments of ytil = (y, 1) at the true
    parameters: m_g = (rho_g, 1) and S_g = [[rho + rho^2, rho], [rho, 1]]
    with rho_g = exp(gamma + lambda_g) (Poisson variance equals the mean)."""
    theta = np.asarray(theta_true, dtype=np.float64)
    rho = np.exp(theta[0] + theta[1:])
    g = rho.size
    m = np.column_stack([rho, np.ones(g)])
    s = np.empty((g, 2, 2))
    s[:, 0, 0] = rho + rho**2
    s[:, 0, 1] = s[:, 1, 0] = rho
    s[:, 1, 1] = 1.0
    return m, s


def empirical_group_moments(view: GroupedExpFamilyView) -> tuple[np.ndarray, np.ndarray]:
    """Within-group moments of the observed sufficient statistics
    (divisor n_g).  Groups with no data get zero rows and a warning; all
    groups empty is an error."""
    g, d = view.g_count, view.y_dim
    n_g = np.bincount(view.groups, minlength=g)
    if n_g.sum() == 0:
        raise ValueError("all groups are empty")
    empty = int((n_g == 0).sum())
    if empty:
        warnings.warn(
            f"{empty} of {g} groups have no data; their moment rows are zero",
            RuntimeWarning,
        )
    m = np.zeros((g, d))
    s = np.zeros((g, d, d))
    np.add.at(m, view.groups, view.y)
    np.add.at(s, view.groups, view.y[:, :, None] * view.y[:, None, :])
    nz = n_g > 0
    m[nz] /= n_g[nz, None]
    s[nz] /= n_g[nz, None, None]
    return m, s


def _gammas_and_gbar(sample: PosteriorSample, view, g_col: int):
    gammas = np.array(
        [view.gamma_from_draw(row) for row in sample.draws], dtype=np.float64
    )
    gbar = sample.g_values[:, g_col] - sample.g_values[:, g_col].mean()
    return gammas, gbar


def ml_matrices_from_chain(
    sample: PosteriorSample,
    view: GroupedExpFamilyView,
    *,
    g_col: int = 0,
    path: str = "auto",
    cond_draws: int = 64,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Chain estimates of the M and L block matrices (G x G x y_dim x y_dim).

    Expectations over the posterior use the plain draw average (divisor M)
    with sample-mean centering of both g and the conditional means.  On the
    closed-form path L is exactly block-diagonal (groups are conditionally
    independent given the global parameter); the sampling fallback estimates
    the conditional moments from ``cond_draws`` fresh eta draws per retained
    draw and produces dense (noisy) off-diagonal blocks.
    """
    if path not in ("auto", "closed_form", "sampling"):
        raise ValueError(f"unknown path {path!r}")
    if path == "auto":
        if view.conditional_moments is not None:
            path = "closed_form"
        elif view.conditional_sampler is not None:
            path = "sampling"
        else:
            raise ValueError(
                "unsupported model: view has neither closed-form conditional "
                "moments nor a conditional sampler"
            )
    if path == "closed_form" and view.conditional_moments is None:
        raise ValueError("view has no closed-form conditional moments")
    if path == "sampling" and view.conditional_sampler is None:
        raise ValueError("view has no conditional sampler")

    m_draws = sample.m
    g, d = view.g_count, view.y_dim
    n = view.n
    gammas, gbar = _gammas_and_gbar(sample, view, g_col)

    if path == "closed_form":
        mu, j = view.conditional_moments(gammas)
        mu = np.asarray(mu, dtype=np.float64)
        j = np.asarray(j, dtype=np.float64)
        l_diag = n * np.einsum("m,mgij->gij", gbar, j) / m_draws
        l_blocks = np.zeros((g, g, d, d))
        l_blocks[np.arange(g), np.arange(g)] = l_diag
    else:
        if cond_draws < 2:
            raise ValueError("cond_draws must be >= 2")
        rng = stream(seed, KIND_COND_DRAWS)
        mu = np.empty((m_draws, g, d))
        l_flat = np.zeros((g * d, g * d))
        for m_idx in range(m_draws):
            etas = np.asarray(
                view.conditional_sampler(gammas[m_idx], rng, cond_draws),
                dtype=np.float64,
            )
            mu[m_idx] = etas.mean(axis=0)
            flat = (etas - mu[m_idx]).reshape(cond_draws, g * d)
            l_flat += gbar[m_idx] * (flat.T @ flat) / (cond_draws - 1)
        l_blocks = (
            n * l_flat.reshape(g, d, g, d).transpose(0, 2, 1, 3) / m_draws
        )

    mu_c = (mu - mu.mean(axis=0, keepdims=True)).reshape(m_draws, g * d)
    m_flat = (mu_c * gbar[:, None]).T @ mu_c
    m_blocks = n**2 * m_flat.reshape(g, d, g, d).transpose(0, 2, 1, 3) / m_draws
    return m_blocks, l_blocks


def raw_second_moment_blocks(
    sample: PosteriorSample, view: GroupedExpFamilyView, *, g_col: int = 0
) -> np.ndarray:
    """Direct chain estimate of E_post[ gbar * etabar etabar^T ] as
    (G x G x y_dim x y_dim) blocks, with eta evaluated draw by draw.

    For g measurable with respect to the global parameter this equals
    L / N + M / N^2, which the closed-form path computes without touching
    the local draws; the two routes validate each other.
    """
    m_draws = sample.m
    g, d = view.g_count, view.y_dim
    _, gbar = _gammas_and_gbar(sample, view, g_col)
    eta = np.empty((m_draws, g, d))
    for m_idx, row in enumerate(sample.draws):
        eta[m_idx] = view.eta_from_draw(row)
    eta_c = (eta - eta.mean(axis=0, keepdims=True)).reshape(m_draws, g * d)
    blocks = (eta_c * gbar[:, None]).T @ eta_c / m_draws
    return blocks.reshape(g, d, g, d).transpose(0, 2, 1, 3)


@dataclass
class KappaRho:
    """kappa_hat with its per-group traces, the per-datum diagonal rho_nn,
    and the rank-one residual term."""

    kappa_hat: float
    per_group_trace: np.ndarray
    rho_nn: np.ndarray
    resid_t1_hat: float

    @property
    def rho_bar(self) -> float:
        return float(self.rho_nn.mean())


def _sqrt_psd(mats: np.ndarray, what: str) -> np.ndarray:
    """Symmetric PSD square roots of a stack of matrices; eigenvalues below
    -1e-8 (relative) are an error, small negatives are clipped to zero."""
    evals, evecs = np.linalg.eigh(mats)
    scale = max(1.0, float(np.abs(evals).max()) if evals.size else 1.0)
    if evals.min() < -1e-8 * scale:
        raise NumericalError(
            f"{what} is not positive semidefinite (min eigenvalue "
            f"{evals.min():.3e})"
        )
    root = np.sqrt(np.clip(evals, 0.0, None))
    return np.einsum("gik,gk,gjk->gij", evecs, root, evecs)


def kappa_and_rho(
    view: GroupedExpFamilyView,
    m_g: np.ndarray,
    s_g: np.ndarray,
    l_blocks: np.ndarray,
) -> KappaRho:
    """The scalar diagnostics built from within-group moments and L.

    With ytil_ng = sqrt(G) [n in g] y_n - m_g / sqrt(G):

        rho_nm       = (1/G) sum_g ytil_ng^T L_gg ytil_mg
        kappa_hat    = (1/G) sum_g tr(S_g^{1/2} L_gg S_g^{1/2})
        resid_t1_hat = (1/(N G)) sum_g t_g^T L_gg t_g,  t_g = sum_n ytil_ng.

    Only the diagonal rho_nn is materialized (the full N x N matrix is
    never needed); its mean tracks kappa_hat up to O(1/G) when the moments
    are empirical.
    """
    g, d = view.g_count, view.y_dim
    m_g = np.asarray(m_g, dtype=np.float64).reshape(g, d)
    s_g = np.asarray(s_g, dtype=np.float64).reshape(g, d, d)
    l_blocks = np.asarray(l_blocks, dtype=np.float64)
    if l_blocks.shape == (g, g, d, d):
        l_diag = l_blocks[np.arange(g), np.arange(g)]
    elif l_blocks.shape == (g, d, d):
        l_diag = l_blocks
    else:
        raise ValueError("l_blocks must be (G,G,d,d) or (G,d,d)")

    root = _sqrt_psd(s_g, "S_g")
    inner = np.einsum("gij,gjk,gkl->gil", root, l_diag, root)
    per_group_trace = np.einsum("gii->g", inner)
    kappa_hat = float(per_group_trace.mean())

    # rho_nn via the group decomposition: for datum n in group gn,
    #   rho_nn = (1/G) [ atil^T L_gn atil + (const - mLm_gn) / G ]
    # with atil = sqrt(G) y_n - m_gn / sqrt(G) and const = sum_g m^T L m.
    m_l_m = np.einsum("gi,gij,gj->g", m_g, l_diag, m_g)
    const = float(m_l_m.sum())
    sqrt_g = math.sqrt(g)
    atil = sqrt_g * view.y - m_g[view.groups] / sqrt_g
    quad = np.einsum("ni,nij,nj->n", atil, l_diag[view.groups], atil)
    rho_nn = (quad + (const - m_l_m[view.groups]) / g) / g

    sums = np.zeros((g, d))
    np.add.at(sums, view.groups, view.y)
    t_g = sqrt_g * sums - view.n * m_g / sqrt_g
    resid = float(np.einsum("gi,gij,gj->", t_g, l_diag, t_g) / (view.n * g))

    return KappaRho(
        kappa_hat=kappa_hat,
        per_group_trace=per_group_trace,
        rho_nn=rho_nn,
        resid_t1_hat=resid,
    )


@dataclass
class GroupedExpFamilyTerms:
    """Everything the grouped diagnostics produce for one fitted model."""

    m_g: np.ndarray
    s_g: np.ndarray
    m_blocks: np.ndarray
    l_blocks: np.ndarray
    kappa_hat: float
    per_group_trace: np.ndarray
    rho_nn: np.ndarray
    resid_t1_hat: float


def diagnose(
    sample: PosteriorSample,
    view: GroupedExpFamilyView,
    *,
    moments="empirical",
    g_col: int = 0,
    path: str = "auto",
    cond_draws: int = 64,
    seed: int = 0,
) -> GroupedExpFamilyTerms:
    """One-call pipeline: moments, M/L matrices, kappa and rho.

    ``moments`` is "empirical" or an explicit (m_g, S_g) pair (for
    known-truth centering in simulations).
    """
    if isinstance(moments, str):
        if moments != "empirical":
            raise ValueError("moments must be 'empirical' or an (m_g, S_g) pair")
        m_g, s_g = empirical_group_moments(view)
    else:
        m_g, s_g = moments
    m_blocks, l_blocks = ml_matrices_from_chain(
        sample, view, g_col=g_col, path=path, cond_draws=cond_draws, seed=seed
    )
    kr = kappa_and_rho(view, m_g, s_g, l_blocks)
    return GroupedExpFamilyTerms(
        m_g=np.asarray(m_g, dtype=np.float64),
        s_g=np.asarray(s_g, dtype=np.float64),
        m_blocks=m_blocks,
        l_blocks=l_blocks,
        kappa_hat=kr.kappa_hat,
        per_group_trace=kr.per_group_trace,
        rho_nn=kr.rho_nn,
        resid_t1_hat=kr.resid_t1_hat,
    )


@dataclass
class PoissonAnalytic:
    """Closed-form diagnostic ingredients for the balanced Poisson
    random-effects model, in the multiplicative parameterization
    gamma0 = exp(gamma).

    ``rho_g`` are per-group mean responses and ``v_g`` the per-group response
    variances (for Poisson data at the truth, v_g = rho_g; for observed data,
    plug in the empirical group means/variances).  ``n_per_group`` is the
    common group size.
    """

    alpha: float
    beta: float
    gamma0: float
    n_per_group: float
    rho_g: np.ndarray
    v_g: np.ndarray

    def __post_init__(self):
        self.rho_g = np.asarray(self.rho_g, dtype=np.float64).reshape(-1)
        self.v_g = np.asarray(self.v_g, dtype=np.float64).reshape(-1)
        if self.rho_g.shape != self.v_g.shape:
            raise ValueError("rho_g and v_g must have the same length")
        if self.gamma0 <= 0 or self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha, beta, gamma0 must be positive")

    def _ab(self):
        a = self.alpha + self.n_per_group * self.rho_g
        b = self.beta + self.n_per_group * self.gamma0
        return a, b

    def mu(self) -> np.ndarray:
        """Conditional means of eta_g given the global parameter, (G, 2)."""
        a, b = self._ab()
        return np.column_stack(
            [math.log(self.gamma0) + special_digamma(a) - math.log(b),
             -self.gamma0 * a / b]
        )

    def j_gg(self) -> np.ndarray:
        """Conditional covariances of eta_g, (G, 2, 2)."""
        a, b = self._ab()
        g = a.size
        j = np.empty((g, 2, 2))
        j[:, 0, 0] = special_trigamma(a)
        j[:, 0, 1] = j[:, 1, 0] = -self.gamma0 / b
        j[:, 1, 1] = self.gamma0**2 * a / b**2
        return j

    def m_s(self) -> tuple[np.ndarray, np.ndarray]:
        """Within-group moments of ytil = (y, 1): m_g and S_g, from rho/v."""
        g = self.rho_g.size
        m = np.column_stack([self.rho_g, np.ones(g)])
        s = np.empty((g, 2, 2))
        s[:, 0, 0] = self.v_g + self.rho_g**2
        s[:, 0, 1] = s[:, 1, 0] = self.rho_g
        s[:, 1, 1] = 1.0
        return m, s


@dataclass
class BcltCheck:
    """Residuals of the first-order posterior expansion on nested datasets
    and the fitted log-log decay slope (about -2 when the expansion and the
    fitted correction are both right)."""

    n_values: np.ndarray
    posterior_means: np.ndarray
    map_values: np.ndarray
    corrections: np.ndarray
    residuals: np.ndarray
    slope: float


def _third_derivative(model, data: Dataset, theta_hat: float) -> float:
    """(1/N) d^3/dtheta^3 of [sum log_lik + log_prior] at the MAP."""
    n = data.n
    if hasattr(model, "loglik_d3"):
        t = np.array([theta_hat])
        total = math.fsum(
            float(model.loglik_d3(data.unit(i), t)) for i in range(n)
        )
        total += float(model.prior_d3(t)) if hasattr(model, "prior_d3") else 0.0
        return total / n

    def objective(x):
        t = np.array([x])
        ll = math.fsum(float(model.log_lik(data.unit(i), t)) for i in range(n))
        return (ll + float(model.log_prior(t))) / n

    h = 1e-3 * (1.0 + abs(theta_hat))
    f = objective
    x = theta_hat
    return (f(x + 2 * h) - 2 * f(x + h) + 2 * f(x - h) - f(x - 2 * h)) / (
        2 * h**3
    )


def _prior_grid(model, grid: np.ndarray) -> np.ndarray:
    if hasattr(model, "log_prior_vector"):
        return np.asarray(model.log_prior_vector(grid), dtype=np.float64)
    return np.array([float(model.log_prior(np.array([t]))) for t in grid])


def _posterior_expectation(
    model, data: Dataset, phi, theta_hat: float, c2: float, *, rtol: float = 1e-11
) -> float:
    """E_post[phi(theta)] by trapezoid quadrature with grid doubling.

    The grid spans theta_hat +- 12 posterior SDs (clipped to the model
    domain); doubling stops when two successive refinements agree to rtol.
    """
    n = data.n
    sd = 1.0 / math.sqrt(n * c2)
    lo, hi = theta_hat - 12.0 * sd, theta_hat + 12.0 * sd
    low_bound = getattr(model, "domain_low", None)
    if low_bound is not None and lo <= low_bound:
        lo = low_bound + 1e-12 * max(theta_hat - low_bound, sd)

    prev = None
    for k in range(9, 23):
        grid = np.linspace(lo, hi, 2**k + 1)
        logpost = model.sum_loglik_grid(data, grid) + _prior_grid(model, grid)
        w = np.exp(logpost - logpost.max())
        z = _trapezoid(w, grid)
        if z <= 0 or not math.isfinite(z):
            raise NumericalError("quadrature normalizer is degenerate")
        val = _trapezoid(w * phi(grid), grid) / z
        if prev is not None and abs(val - prev) <= rtol * (abs(val) + 1e-300):
            return float(val)
        prev = val
    raise NumericalError("posterior quadrature did not converge")


def bclt_expansion_check(
    problems,
    phi,
    dphi,
    d2phi,
    *,
    rtol: float = 1e-11,
) -> BcltCheck:
    """Check the first-order expansion of a posterior expectation.

    For each (model, data) problem (1-D parameter), compute the exact
    posterior mean of phi by quadrature, the MAP value, and the analytic
    correction

        (1/N) [ phi''(th) / (2 c2) + phi'(th) c3 / (2 c2^2) ]

    with c2 = -(1/N) d2/dth2 and c3 = (1/N) d3/dth3 of the full log
    posterior at the MAP.  Residuals |E[phi] - phi(th) - correction| decay
    like N^-2 when everything is correct; the fitted log-log slope is
    returned.
    """
    n_values, e_phi, phi_map, corrections, residuals = [], [], [], [], []
    for model, data in problems:
        if model.dim != 1:
            raise ValueError("expansion check handles 1-D parameters only")
        fit = map_optimize(model, data)
        if not fit.converged:
            raise NumericalError("MAP optimization did not converge")
        th = float(fit.theta_hat[0])
        n = data.n

        # Full curvature of the normalized log posterior (prior included).
        _, hess_sum = _loglik_sums(model, data, fit.theta_hat)
        prior_h = (
            model.prior_hessian(fit.theta_hat)
            if hasattr(model, "prior_hessian")
            else None
        )
        if prior_h is None:
            raise ValueError("expansion check needs a prior_hessian hook")
        c2 = -float(hess_sum[0, 0] + prior_h[0, 0]) / n
        if c2 <= 0:
            raise NumericalError("posterior curvature is not positive")
        c3 = _third_derivative(model, data, th)

        val = _posterior_expectation(model, data, phi, th, c2, rtol=rtol)
        corr = (d2phi(th) / (2.0 * c2) + dphi(th) * c3 / (2.0 * c2**2)) / n
        n_values.append(n)
        e_phi.append(val)
        phi_map.append(float(np.asarray(phi(np.array([th]))).reshape(-1)[0]))
        corrections.append(corr)
        residuals.append(abs(val - phi_map[-1] - corr))

    n_values = np.asarray(n_values, dtype=np.float64)
    residuals = np.asarray(residuals, dtype=np.float64)
    ok = residuals > 0
    if ok.sum() >= 2:
        slope = float(
            np.polyfit(np.log(n_values[ok]), np.log(residuals[ok]), 1)[0]
        )
    else:
        slope = float("nan")
    return BcltCheck(
        n_values=n_values,
        posterior_means=np.asarray(e_phi),
        map_values=np.asarray(phi_map),
        corrections=np.asarray(corrections),
        residuals=residuals,
        slope=slope,
    )
