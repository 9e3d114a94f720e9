"""Model state and likelihoods for the multilevel functional mixed-membership model.

The observation model: each subject i contributes J channels observed on a
shared grid t_i.  Channel (i, j) is Gaussian around a convex combination of K
feature curves, each feature contributing a smooth mean S(t_i)' nu_k plus M
scaled pseudo-eigenfunction deviations S(t_i)' phi_km weighted by per-channel
scores chi_ijm.  Integrating the standard-normal scores out turns the
conditional likelihood into a marginal one whose covariance is the rank-M Gram
matrix of the membership-weighted pseudo-eigenfunctions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .basis import BasisSystem, evaluate

CHOLESKY_JITTER = 1e-10


@dataclass(frozen=True)
class ModelDims:
    """Problem dimensions: subjects, channels, features, pseudo-eigenfunctions,
    basis size, and the per-subject grid lengths."""

    N: int
    J: int
    K: int
    M: int
    P: int
    n: tuple[int, ...]

    def __post_init__(self):
        if min(self.N, self.J, self.K, self.P) < 1:
            raise ValueError("N, J, K, P must all be >= 1")
        if self.M < 0:
            raise ValueError("M must be >= 0")
        if len(self.n) != self.N:
            raise ValueError("need one grid length per subject")
        if any(ni < 1 for ni in self.n):
            raise ValueError("grid lengths must be >= 1")


@dataclass
class FunctionalDataset:
    """Ragged multilevel functional observations.

    grids[i] is the length-n_i evaluation grid of subject i; values[i] is the
    n_i x J observation matrix (all J channels of a subject share one grid).
    """

    grids: list[np.ndarray]
    values: list[np.ndarray]
    subject_ids: list[str]
    channel_labels: list[str]
    groups: list[str | None] | None = None

    def __post_init__(self):
        if not (len(self.grids) == len(self.values) == len(self.subject_ids)):
            raise ValueError("grids, values and subject_ids must have equal length")
        J = len(self.channel_labels)
        for i, (t, Y) in enumerate(zip(self.grids, self.values)):
            t = np.asarray(t, dtype=float)
            Y = np.asarray(Y, dtype=float)
            if Y.shape != (t.size, J):
                raise ValueError(
                    f"subject {self.subject_ids[i]}: values shape {Y.shape} "
                    f"does not match (n_i={t.size}, J={J})"
                )
            self.grids[i] = t
            self.values[i] = Y
        if self.groups is not None and len(self.groups) != len(self.subject_ids):
            raise ValueError("groups must have one entry per subject")

    @property
    def N(self) -> int:
        return len(self.grids)

    @property
    def J(self) -> int:
        return len(self.channel_labels)

    @property
    def n(self) -> tuple[int, ...]:
        return tuple(t.size for t in self.grids)

    @property
    def n_obs(self) -> int:
        """Total number of scalar observations, sum_i n_i * J."""
        return sum(self.n) * self.J


@dataclass
class ModelState:
    """One full parameter configuration.

    Shapes: nu (K, P); phi (K, M, P); chi (N, J, M); Z (N, J, K); pi (N, K);
    sigma2 (J,); gamma (K, P, M); delta (M, K); a1, a2 (K,).  lambda_nu and
    lambda_phi are the fixed random-walk smoothing precisions; eta controls
    the channel-level Dirichlet concentration around the subject centroids.
    """

    nu: np.ndarray
    phi: np.ndarray
    chi: np.ndarray
    Z: np.ndarray
    pi: np.ndarray
    eta: float
    sigma2: np.ndarray
    gamma: np.ndarray
    delta: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    lambda_nu: float = 1.0
    lambda_phi: float = 1.0

    @property
    def dims(self) -> tuple[int, int, int, int, int]:
        """(N, J, K, M, P) read off the array shapes."""
        K, M, P = self.phi.shape
        N, J, _ = self.Z.shape
        return N, J, K, M, P

    def copy(self) -> "ModelState":
        return replace(
            self,
            nu=self.nu.copy(),
            phi=self.phi.copy(),
            chi=self.chi.copy(),
            Z=self.Z.copy(),
            pi=self.pi.copy(),
            sigma2=self.sigma2.copy(),
            gamma=self.gamma.copy(),
            delta=self.delta.copy(),
            a1=self.a1.copy(),
            a2=self.a2.copy(),
        )


def check_consistent(state: ModelState, basis: BasisSystem, data: FunctionalDataset) -> None:
    N, J, K, M, P = state.dims
    if P != basis.P:
        raise ValueError(f"state has P={P}, basis has P={basis.P}")
    if N != data.N or J != data.J:
        raise ValueError(
            f"state dims (N={N}, J={J}) do not match data (N={data.N}, J={data.J})"
        )


class Design:
    """Per-subject evaluation matrices cached for repeated likelihood work.

    st[i] is S(t_i)' with shape n_i x P; gram[i] = S(t_i) S(t_i)' (P x P).
    """

    def __init__(self, basis: BasisSystem, data: FunctionalDataset):
        self.basis = basis
        self.st = [evaluate(basis, t).T for t in data.grids]
        self.gram = [St.T @ St for St in self.st]


def weighted_curves(state: ModelState, St: np.ndarray, i: int, j: int):
    """Membership-weighted mean curve and pseudo-eigenfunction matrix for (i, j).

    Returns (mu0, A): mu0 = S' (sum_k Z_ijk nu_k) of length n_i, and A the
    n_i x M matrix whose column m is S' (sum_k Z_ijk phi_km).
    """
    z = state.Z[i, j]
    mu0 = St @ (z @ state.nu)
    M = state.phi.shape[1]
    if M == 0:
        A = np.zeros((St.shape[0], 0))
    else:
        phibar = np.einsum("k,kmp->mp", z, state.phi)
        A = St @ phibar.T
    return mu0, A


def conditional_mean(
    state: ModelState, basis: BasisSystem, data: FunctionalDataset, i: int, j: int
) -> np.ndarray:
    """Mean of channel (i, j) given all parameters including the scores.

    Equals sum_k Z_ijk (S(t_i)' nu_k + sum_m chi_ijm S(t_i)' phi_km).
    """
    N, J = data.N, data.J
    if not (0 <= i < N and 0 <= j < J):
        raise IndexError(f"subject/channel index ({i}, {j}) out of range")
    St = evaluate(basis, data.grids[i]).T
    mu0, A = weighted_curves(state, St, i, j)
    return mu0 + A @ state.chi[i, j]


def mixed_covariance(
    state: ModelState, basis: BasisSystem, data: FunctionalDataset, i: int, j: int
) -> np.ndarray:
    """Covariance contributed by the pseudo-eigenfunctions for channel (i, j).

    The double sum over feature pairs collapses to A A' with A the
    membership-weighted pseudo-eigenfunction matrix, so the result is a
    symmetric PSD matrix of rank at most min(M, n_i).
    """
    N, J = data.N, data.J
    if not (0 <= i < N and 0 <= j < J):
        raise IndexError(f"subject/channel index ({i}, {j}) out of range")
    St = evaluate(basis, data.grids[i]).T
    _, A = weighted_curves(state, St, i, j)
    return A @ A.T


def gaussian_loglik_iso(resid: np.ndarray, sigma2: float) -> float:
    """Log-density of an isotropic Gaussian residual vector."""
    n = resid.size
    return -0.5 * n * np.log(2.0 * np.pi * sigma2) - 0.5 * resid @ resid / sigma2


def loglik_conditional(
    state: ModelState, basis: BasisSystem, data: FunctionalDataset, design: Design | None = None
) -> float:
    """Observation log-likelihood given all parameters (scores included)."""
    check_consistent(state, basis, data)
    if design is None:
        design = Design(basis, data)
    total = 0.0
    for i in range(data.N):
        St = design.st[i]
        Y = data.values[i]
        for j in range(data.J):
            mu0, A = weighted_curves(state, St, i, j)
            resid = Y[:, j] - mu0 - A @ state.chi[i, j]
            total += gaussian_loglik_iso(resid, state.sigma2[j])
    return float(total)


def _mvn_loglik_chol(resid: np.ndarray, cov: np.ndarray) -> float:
    """Gaussian log-density via Cholesky; one jitter retry on failure."""
    try:
        c, low = cho_factor(cov, lower=True)
    except np.linalg.LinAlgError:
        c, low = cho_factor(cov + CHOLESKY_JITTER * np.eye(cov.shape[0]), lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(c)))
    quad = resid @ cho_solve((c, low), resid)
    n = resid.size
    return -0.5 * (n * np.log(2.0 * np.pi) + logdet + quad)


def loglik_marginal(
    state: ModelState, basis: BasisSystem, data: FunctionalDataset, design: Design | None = None
) -> float:
    """Observation log-likelihood with the pseudo-scores integrated out.

    Each channel is Gaussian around the membership-weighted mean with
    covariance A A' + sigma_j^2 I; the chi entries of the state are ignored.
    """
    check_consistent(state, basis, data)
    if design is None:
        design = Design(basis, data)
    total = 0.0
    for i in range(data.N):
        St = design.st[i]
        Y = data.values[i]
        n_i = St.shape[0]
        for j in range(data.J):
            mu0, A = weighted_curves(state, St, i, j)
            cov = A @ A.T + state.sigma2[j] * np.eye(n_i)
            total += _mvn_loglik_chol(Y[:, j] - mu0, cov)
    return float(total)


def marginal_loglik_channel(
    state: ModelState, St: np.ndarray, y: np.ndarray, i: int, j: int
) -> float:
    """Marginal log-likelihood of a single channel given a precomputed S(t_i)'."""
    mu0, A = weighted_curves(state, St, i, j)
    cov = A @ A.T + state.sigma2[j] * np.eye(St.shape[0])
    return _mvn_loglik_chol(y - mu0, cov)


def permute_features(state: ModelState, perm: np.ndarray) -> ModelState:
    """Reindex every feature-indexed block of the state by perm.

    perm[k] gives the old feature index that becomes new feature k; both
    log-likelihoods are invariant to this relabelling when Z and pi columns
    move together with nu and phi.
    """
    perm = np.asarray(perm, dtype=int)
    K = state.nu.shape[0]
    if sorted(perm.tolist()) != list(range(K)):
        raise ValueError(f"perm must be a permutation of 0..{K - 1}, got {perm}")
    out = state.copy()
    out.nu = state.nu[perm].copy()
    out.phi = state.phi[perm].copy()
    out.Z = state.Z[:, :, perm].copy()
    out.pi = state.pi[:, perm].copy()
    out.gamma = state.gamma[perm].copy()
    out.delta = state.delta[:, perm].copy()
    out.a1 = state.a1[perm].copy()
    out.a2 = state.a2[perm].copy()
    return out
