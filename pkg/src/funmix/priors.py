"""Log prior densities and hyperprior sampling.

Four prior blocks: multiplicative-gamma shrinkage on the pseudo-eigenfunction
coefficients, improper first-difference smoothness penalties, conjugate
Inverse-Gamma noise variances, and the membership layer (a repulsive point
process for the subject centroids pi_i with a Dirichlet(eta * pi_i) layer for
the channel memberships Z_ij).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of all prior blocks.

    alpha2 > beta2 gives the shrinkage weights stochastically decreasing
    variance in the pseudo-eigenfunction index; the default config enforces it.
    tau_rep >= 0 controls centroid repulsion; lambda_nu / lambda_phi are the
    fixed smoothing precisions; nu_ridge adds an optional proper Gaussian
    component to the mean-coefficient prior (zero keeps the pure random-walk
    prior).
    """

    nu_gamma: float = 3.0
    alpha1: float = 2.0
    beta1: float = 1.0
    alpha2: float = 3.0
    beta2: float = 1.0
    alpha0: float = 1.0
    beta0: float = 1.0
    alpha_dir: np.ndarray = field(default_factory=lambda: np.ones(2))
    tau_rep: float = 1.0
    lambda_nu: float = 1.0
    lambda_phi: float = 1.0
    nu_ridge: float = 0.0
    eta_shape: float = 2.0
    eta_rate: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "alpha_dir", np.asarray(self.alpha_dir, dtype=float))
        positives = {
            "nu_gamma": self.nu_gamma, "alpha1": self.alpha1, "beta1": self.beta1,
            "alpha2": self.alpha2, "beta2": self.beta2, "alpha0": self.alpha0,
            "beta0": self.beta0, "lambda_nu": self.lambda_nu,
            "lambda_phi": self.lambda_phi, "eta_shape": self.eta_shape,
            "eta_rate": self.eta_rate,
        }
        for name, v in positives.items():
            if v <= 0:
                raise ValueError(f"{name} must be positive, got {v}")
        if np.any(self.alpha_dir <= 0):
            raise ValueError("alpha_dir entries must be positive")
        if self.tau_rep < 0:
            raise ValueError("tau_rep must be >= 0")
        if self.nu_ridge < 0:
            raise ValueError("nu_ridge must be >= 0")

    def with_K(self, K: int) -> "PriorConfig":
        """Broadcast a scalar or symmetric Dirichlet parameter to length K."""
        a = self.alpha_dir
        if a.size == K:
            return self
        if a.size == 1 or np.all(a == a[0]):
            return PriorConfig(**{**self.__dict__, "alpha_dir": np.full(K, float(a[0]))})
        raise ValueError(f"alpha_dir has length {a.size}, expected 1 or {K}")


@dataclass
class ShrinkageParams:
    """Multiplicative-gamma shrinkage block: local precisions gamma (K, P, M),
    column multipliers delta (M, K) and their Gamma hyper-shapes a1, a2 (K,)."""

    gamma: np.ndarray
    delta: np.ndarray
    a1: np.ndarray
    a2: np.ndarray


def tilde_tau(delta: np.ndarray) -> np.ndarray:
    """Cumulative-product precisions: tilde_tau[m, k] = prod_{n<=m} delta[n, k]."""
    delta = np.asarray(delta, dtype=float)
    if np.any(delta <= 0):
        raise ValueError("delta entries must be positive")
    return np.cumprod(delta, axis=0)


def gamma_logpdf(x, shape, rate):
    """Log-density of Gamma(shape, rate) evaluated elementwise."""
    x = np.asarray(x, dtype=float)
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x


def invgamma_logpdf(x, shape, rate):
    """Log-density of InverseGamma(shape, rate) evaluated elementwise."""
    x = np.asarray(x, dtype=float)
    return shape * np.log(rate) - gammaln(shape) - (shape + 1.0) * np.log(x) - rate / x


def dirichlet_logpdf(x: np.ndarray, alpha: np.ndarray) -> float:
    """Log-density of a Dirichlet at a simplex point; -inf on the boundary."""
    x = np.asarray(x, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if np.any(x <= 0.0):
        return -np.inf
    logB = np.sum(gammaln(alpha)) - gammaln(np.sum(alpha))
    return float(np.sum((alpha - 1.0) * np.log(x)) - logB)


def mgps_log_prior(phi: np.ndarray, shrink: ShrinkageParams, cfg: PriorConfig) -> float:
    """Joint log prior of the shrinkage block.

    Sums the conditional Gaussian of each phi_kpm (precision gamma_kpm *
    tilde_tau_mk), the Gamma densities of the local precisions, of the delta
    multipliers given a1/a2, and of a1/a2 themselves.
    """
    gamma, delta, a1, a2 = shrink.gamma, shrink.delta, shrink.a1, shrink.a2
    if np.any(gamma <= 0) or np.any(delta <= 0):
        raise ValueError("gamma and delta must be positive")
    K, P, M = gamma.shape
    total = 0.0
    if M > 0:
        tt = tilde_tau(delta)  # (M, K)
        prec = gamma * tt.T[:, None, :]  # (K, P, M)
        total += float(np.sum(0.5 * np.log(prec) - 0.5 * np.log(2.0 * np.pi)
                              - 0.5 * prec * np.transpose(phi, (0, 2, 1)) ** 2))
        total += float(np.sum(gamma_logpdf(gamma, cfg.nu_gamma / 2.0, cfg.nu_gamma / 2.0)))
        total += float(np.sum(gamma_logpdf(delta[0, :], a1, 1.0)))
        if M > 1:
            total += float(np.sum(gamma_logpdf(delta[1:, :], a2[None, :], 1.0)))
    total += float(np.sum(gamma_logpdf(a1, cfg.alpha1, cfg.beta1)))
    total += float(np.sum(gamma_logpdf(a2, cfg.alpha2, cfg.beta2)))
    return total


def rw1_log_prior(coef: np.ndarray, lam: float, penalty: np.ndarray) -> float:
    """Improper first-difference smoothness prior, -lam/2 * coef' Pen coef."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    coef = np.asarray(coef, dtype=float)
    return float(-0.5 * lam * coef @ penalty @ coef)


def repulsion_penalty(pi: np.ndarray) -> float:
    """Sum over unordered centroid pairs of inverse squared distances.

    Returns +inf if any two rows coincide.
    """
    pi = np.asarray(pi, dtype=float)
    N = pi.shape[0]
    total = 0.0
    for i in range(N - 1):
        d2 = np.sum((pi[i + 1:] - pi[i]) ** 2, axis=1)
        if np.any(d2 == 0.0):
            return np.inf
        total += float(np.sum(1.0 / d2))
    return total


def repulsive_log_prior(pi: np.ndarray, alpha_dir: np.ndarray, tau_rep: float) -> float:
    """Log-density (up to its normalizing constant) of the repulsive centroid prior.

    Dirichlet base for every row minus tau/N times the summed inverse squared
    pairwise distances; coincident rows give -inf rather than an exception.
    The normalizing constant is never computed: with fixed alpha_dir and
    tau_rep it cancels from every Metropolis ratio.
    """
    if tau_rep < 0:
        raise ValueError("tau_rep must be >= 0")
    pi = np.atleast_2d(np.asarray(pi, dtype=float))
    N = pi.shape[0]
    total = 0.0
    for i in range(N):
        total += dirichlet_logpdf(pi[i], alpha_dir)
    if N > 1 and tau_rep > 0:
        pen = repulsion_penalty(pi)
        if np.isinf(pen):
            return -np.inf
        total -= tau_rep / N * pen
    return float(total)


def z_layer_log_prior(Z: np.ndarray, pi: np.ndarray, eta: float) -> float:
    """Log prior of the channel memberships, sum_ij log Dirichlet(Z_ij; eta pi_i)."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    Z = np.asarray(Z, dtype=float)
    pi = np.asarray(pi, dtype=float)
    N, J, K = Z.shape
    if np.any(Z <= 0.0):
        return -np.inf
    alpha = eta * pi  # (N, K)
    logB = np.sum(gammaln(alpha), axis=1) - gammaln(eta)  # (N,)
    terms = np.einsum("nk,njk->n", alpha - 1.0, np.log(Z))
    return float(np.sum(terms - J * logB))


def sample_shrinkage(rng: np.random.Generator, K: int, P: int, M: int,
                     cfg: PriorConfig) -> ShrinkageParams:
    """Draw the full shrinkage block from its hyperprior."""
    a1 = rng.gamma(cfg.alpha1, 1.0 / cfg.beta1, size=K)
    a2 = rng.gamma(cfg.alpha2, 1.0 / cfg.beta2, size=K)
    delta = np.empty((M, K))
    if M > 0:
        delta[0, :] = rng.gamma(a1, 1.0)
        for m in range(1, M):
            delta[m, :] = rng.gamma(a2, 1.0)
    gamma = rng.gamma(cfg.nu_gamma / 2.0, 2.0 / cfg.nu_gamma, size=(K, P, M))
    return ShrinkageParams(gamma=gamma, delta=delta, a1=a1, a2=a2)
