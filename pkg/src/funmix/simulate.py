"""Synthetic data generation with known ground truth, plus label alignment.

The default truth mimics EEG log-spectra on the 6-14 Hz band: one smoothly
decreasing aperiodic curve and one curve with a single bump, with M scaled
pseudo-eigenfunctions per feature.  Subject centroids come from the repulsive
prior, channel memberships from the Dirichlet layer, and observations from the
conditional sampling model.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .basis import BasisSystem, build_basis, evaluate
from .model import FunctionalDataset, ModelDims, ModelState
from .priors import PriorConfig, dirichlet_logpdf
from .sampler import floor_simplex

DEFAULT_DOMAIN = (6.0, 14.0)
DEFAULT_N_POINTS = 40


@dataclass
class GroundTruth:
    """The generating state together with the basis and dims that produced it."""

    state: ModelState
    basis: BasisSystem
    dims: ModelDims


def _feature_curve(k: int, t: np.ndarray) -> np.ndarray:
    """Mean curve of feature k on the default frequency band.

    k = 0 is aperiodic (smoothly decreasing); k >= 1 add a bump at a
    feature-specific location on a weaker aperiodic floor.
    """
    t0, t1 = t.min(), t.max()
    if k == 0:
        return 2.0 - 1.2 * np.log(t / t0)
    center = t0 + ((0.5 + 0.35 * (k - 1)) % 1.0) * (t1 - t0)
    width = 0.14 * (t1 - t0)
    return 1.2 - 0.4 * np.log(t / t0) + 1.6 * np.exp(-0.5 * ((t - center) / width) ** 2)


def _project_to_basis(basis: BasisSystem, f) -> np.ndarray:
    """Least-squares basis coefficients of a function on a fine grid."""
    t = np.linspace(*basis.boundary, 201)
    St = evaluate(basis, t).T
    sol, *_ = np.linalg.lstsq(St, f(t), rcond=None)
    return sol


def sample_repulsive_pi(
    rng: np.random.Generator,
    N: int,
    alpha_dir: np.ndarray,
    tau_rep: float,
    *,
    n_sweeps: int = 400,
    step: float = 20.0,
) -> np.ndarray:
    """Draw a centroid configuration from the repulsive prior by MH.

    Starts from independent Dirichlet draws and runs n_sweeps of per-row
    Dirichlet-centered proposals; with tau_rep = 0 the start is already exact.
    """
    alpha_dir = np.asarray(alpha_dir, dtype=float)
    K = alpha_dir.size
    pi = floor_simplex(rng.dirichlet(alpha_dir, size=N))
    if tau_rep == 0 or N == 1 or K == 1:
        return pi
    for _ in range(n_sweeps):
        for i in range(N):
            conc = step * pi[i] + 0.1
            prop = rng.dirichlet(conc)
            if np.any(prop <= 1e-6):
                continue
            d2_cur = np.delete(np.sum((pi - pi[i]) ** 2, axis=1), i)
            d2_prop = np.delete(np.sum((pi - prop) ** 2, axis=1), i)
            if np.any(d2_prop == 0.0):
                continue
            log_ratio = (
                dirichlet_logpdf(prop, alpha_dir)
                - dirichlet_logpdf(pi[i], alpha_dir)
                - tau_rep / N * float(np.sum(1.0 / d2_prop) - np.sum(1.0 / d2_cur))
                + dirichlet_logpdf(pi[i], step * prop + 0.1)
                - dirichlet_logpdf(prop, conc)
            )
            if np.log(rng.uniform()) < log_ratio:
                pi[i] = prop
    return pi


def default_truth(
    dims: ModelDims,
    basis: BasisSystem | None = None,
    *,
    eta: float = 50.0,
    sigma2: float = 0.01,
    seed: int = 0,
) -> GroundTruth:
    """Build the default generating state for the given dimensions.

    Feature means follow the band curves; pseudo-eigenfunctions are smooth
    sinusoids of decreasing scale; memberships are left empty until
    simulate_dataset fills them in.
    """
    if basis is None:
        basis = build_basis(3, dims.P - 4, DEFAULT_DOMAIN)
    if basis.P != dims.P:
        raise ValueError(f"basis P={basis.P} does not match dims P={dims.P}")
    rng = np.random.default_rng(seed)
    t0, t1 = basis.boundary
    nu = np.stack([_project_to_basis(basis, lambda t, k=k: _feature_curve(k, t))
                   for k in range(dims.K)])
    phi = np.zeros((dims.K, dims.M, dims.P))
    for k in range(dims.K):
        for m in range(dims.M):
            scale = 0.4 / (m + 1)
            shift = (k + 1) / (dims.K + 1) * np.pi

            def g(t, m=m, shift=shift, scale=scale):
                return scale * np.sin((m + 1) * np.pi * (t - t0) / (t1 - t0) + shift)

            phi[k, m] = _project_to_basis(basis, g)
    state = ModelState(
        nu=nu,
        phi=phi,
        chi=np.zeros((dims.N, dims.J, dims.M)),
        Z=np.full((dims.N, dims.J, dims.K), 1.0 / dims.K),
        pi=np.full((dims.N, dims.K), 1.0 / dims.K),
        eta=eta,
        sigma2=np.full(dims.J, sigma2),
        gamma=np.ones((dims.K, dims.P, dims.M)),
        delta=np.ones((dims.M, dims.K)),
        a1=np.ones(dims.K),
        a2=np.ones(dims.K),
    )
    return GroundTruth(state=state, basis=basis, dims=dims)


def draw_observations(
    state: ModelState,
    basis: BasisSystem,
    grids: list[np.ndarray],
    rng: np.random.Generator,
) -> list[np.ndarray]:
    """Draw Y values for every channel from the conditional sampling model."""
    N, J, K, M, P = state.dims
    out = []
    for i in range(N):
        St = evaluate(basis, grids[i]).T
        n_i = St.shape[0]
        Y = np.empty((n_i, J))
        for j in range(J):
            z = state.Z[i, j]
            mean = St @ (z @ state.nu)
            if M > 0:
                phibar = np.einsum("k,kmp->mp", z, state.phi)
                mean = mean + (St @ phibar.T) @ state.chi[i, j]
            Y[:, j] = mean + np.sqrt(state.sigma2[j]) * rng.standard_normal(n_i)
        out.append(Y)
    return out


def simulate_dataset(
    dims: ModelDims,
    truth: GroundTruth | str = "default",
    seed: int = 0,
    *,
    prior_cfg: PriorConfig | None = None,
    grids: list[np.ndarray] | None = None,
    fix_memberships: bool = False,
    noiseless: bool = False,
) -> tuple[FunctionalDataset, GroundTruth]:
    """Generate a dataset with known ground truth.

    With truth="default" the generating state is built by default_truth;
    memberships are redrawn (centroids by MH from the repulsive prior, Z from
    the Dirichlet layer, scores standard normal) unless fix_memberships is
    set, in which case the truth's Z/pi/chi are kept as given.  noiseless
    skips the observation noise and zeroes the scores, leaving Y equal to the
    membership-weighted feature means.
    """
    rng = np.random.default_rng(seed)
    if isinstance(truth, str):
        if truth != "default":
            raise ValueError(f"unknown truth spec {truth!r}")
        truth = default_truth(dims, seed=seed)
    state = truth.state.copy()
    basis = truth.basis
    if prior_cfg is None:
        prior_cfg = PriorConfig(alpha_dir=np.ones(dims.K))
    prior_cfg = prior_cfg.with_K(dims.K)

    if grids is None:
        grids = [np.linspace(*basis.boundary, ni) for ni in dims.n]

    if not fix_memberships:
        state.pi = sample_repulsive_pi(
            rng, dims.N, prior_cfg.alpha_dir, prior_cfg.tau_rep
        )
        for i in range(dims.N):
            for j in range(dims.J):
                state.Z[i, j] = floor_simplex(rng.dirichlet(state.eta * state.pi[i]))
        state.chi = rng.standard_normal((dims.N, dims.J, dims.M))
    if noiseless:
        state.chi = np.zeros_like(state.chi)

    if noiseless:
        values = []
        for i in range(dims.N):
            St = evaluate(basis, grids[i]).T
            values.append(St @ (state.Z[i] @ state.nu).T)
    else:
        values = draw_observations(state, basis, grids, rng)

    data = FunctionalDataset(
        grids=[g.copy() for g in grids],
        values=values,
        subject_ids=[f"s{i + 1:03d}" for i in range(dims.N)],
        channel_labels=[f"ch{j + 1:02d}" for j in range(dims.J)],
    )
    return data, GroundTruth(state=state, basis=basis, dims=dims)


def replicate_channel(
    truth: GroundTruth,
    i: int,
    j: int,
    n_rep: int,
    rng: np.random.Generator,
    grid: np.ndarray | None = None,
) -> np.ndarray:
    """Replicate draws of one channel with fresh scores and noise, Z held fixed.

    Returns an (n_rep, n_i) matrix whose empirical covariance estimates the
    score-induced covariance plus sigma_j^2 I.
    """
    state = truth.state
    basis = truth.basis
    if grid is None:
        grid = np.linspace(*basis.boundary, truth.dims.n[i])
    St = evaluate(basis, grid).T
    n_i = St.shape[0]
    z = state.Z[i, j]
    mean = St @ (z @ state.nu)
    M = state.phi.shape[1]
    if M > 0:
        phibar = np.einsum("k,kmp->mp", z, state.phi)
        A = St @ phibar.T
    else:
        A = np.zeros((n_i, 0))
    chi = rng.standard_normal((n_rep, M))
    noise = np.sqrt(state.sigma2[j]) * rng.standard_normal((n_rep, n_i))
    return mean[None, :] + chi @ A.T + noise


def align_labels(
    estimate: ModelState,
    truth: GroundTruth,
    basis: BasisSystem,
    grid: np.ndarray,
) -> np.ndarray:
    """Permutation matching estimated features to the truth's features.

    Returns perm with perm[k] = index of the estimated feature whose mean
    curve is closest (summed squared distance on the grid) to true feature k;
    ties break to the lexicographically smallest permutation.
    """
    K = truth.state.nu.shape[0]
    if estimate.nu.shape[0] != K:
        raise ValueError("estimate and truth must share K")
    if K > 8:
        raise ValueError(f"factorial label search capped at K = 8, got K = {K}")
    St = evaluate(basis, grid).T
    est_curves = St @ estimate.nu.T  # (n, K)
    true_curves = St @ truth.state.nu.T
    cost = np.array([
        [float(np.sum((est_curves[:, ke] - true_curves[:, kt]) ** 2)) for ke in range(K)]
        for kt in range(K)
    ])
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(K)):
        c = sum(cost[kt, perm[kt]] for kt in range(K))
        if c < best_cost:
            best, best_cost = perm, c
    return np.asarray(best, dtype=int)
