"""Posterior summaries: feature-mean bands, covariance surfaces, eigenpairs,
membership tables, information criteria and elbow-based K selection."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .basis import BasisSystem, evaluate
from .model import FunctionalDataset, ModelState, loglik_marginal, permute_features
from .sampler import ChainOutput, dataset_hash


@dataclass
class PosteriorSummary:
    """Plot-ready posterior summaries on a common evaluation grid."""

    grid: np.ndarray
    feature_median: np.ndarray  # (K, n)
    feature_lo: np.ndarray
    feature_hi: np.ndarray
    cov_surfaces: np.ndarray  # (K, n, n) posterior-mean surfaces
    eigenvalues: list[np.ndarray]  # per feature, descending
    eigenfunctions: list[np.ndarray]  # per feature, (n, n) columns
    membership_subject: np.ndarray  # (N, K)
    membership_channel: np.ndarray  # (N, J, K)
    group_contrast: dict | None = None


@dataclass
class ICTable:
    """Information criteria per candidate K, all fitted on identical data."""

    K: list[int]
    loglik: list[float]
    n_params: list[int]
    aic: list[float]
    bic: list[float]
    mean_deviance: list[float]


def trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    """Trapezoid-rule quadrature weights on a sorted grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.size < 2:
        return np.ones_like(grid)
    w = np.empty_like(grid)
    w[0] = 0.5 * (grid[1] - grid[0])
    w[-1] = 0.5 * (grid[-1] - grid[-2])
    w[1:-1] = 0.5 * (grid[2:] - grid[:-2])
    return w


def reconstruct_covariance(
    draws: list[ModelState], basis: BasisSystem, grid: np.ndarray, k: int
) -> np.ndarray:
    """Per-draw covariance surfaces of feature k on the grid.

    Each surface is the Gram matrix of the feature's pseudo-eigenfunction
    curves, sum_m (S' phi_km)(S' phi_km)'; shape (n_draws, n, n).
    """
    St = evaluate(basis, grid).T
    out = np.empty((len(draws), St.shape[0], St.shape[0]))
    for d, state in enumerate(draws):
        U = St @ state.phi[k].T  # (n, M)
        out[d] = U @ U.T
    return out


def extract_eigenfunctions(
    surface: np.ndarray,
    quadrature_weights: np.ndarray,
    *,
    sym_tol: float = 1e-8,
) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of a covariance surface in the weighted L2 inner product.

    Solves the symmetrized problem W^(1/2) C W^(1/2) v = lambda v and maps
    back with u = W^(-1/2) v, so the returned eigenfunction columns satisfy
    u_r' W u_s = delta_rs.  Eigenvalues come back sorted descending with tiny
    negatives clipped to zero.
    """
    surface = np.asarray(surface, dtype=float)
    w = np.asarray(quadrature_weights, dtype=float)
    if np.any(w <= 0):
        raise ValueError("quadrature weights must be positive")
    asym = float(np.max(np.abs(surface - surface.T)))
    if asym > sym_tol:
        raise ValueError(f"surface asymmetry {asym:.3e} exceeds tolerance {sym_tol:.3e}")
    surface = 0.5 * (surface + surface.T)
    rw = np.sqrt(w)
    sym = (rw[:, None] * surface) * rw[None, :]
    vals, vecs = np.linalg.eigh(sym)
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vals[np.abs(vals) < 1e-12 * max(1.0, abs(vals[0]))] = 0.0
    vals = np.maximum(vals, 0.0)
    funcs = vecs[:, order] / rw[:, None]
    return vals, funcs


def align_draws(
    draws: list[ModelState], basis: BasisSystem, grid: np.ndarray
) -> list[ModelState]:
    """Undo within-chain label switching by matching every draw to the first.

    Each draw's features are permuted to minimize the summed squared distance
    between its mean curves and those of the first draw.
    """
    if not draws:
        return []
    St = evaluate(basis, grid).T
    ref = St @ draws[0].nu.T
    K = draws[0].nu.shape[0]
    if K > 8:
        raise ValueError(f"factorial label search capped at K = 8, got K = {K}")
    perms = list(itertools.permutations(range(K)))
    out = []
    for state in draws:
        cur = St @ state.nu.T
        cost = np.array([
            [float(np.sum((cur[:, ke] - ref[:, kt]) ** 2)) for ke in range(K)]
            for kt in range(K)
        ])
        best, best_cost = None, np.inf
        for perm in perms:
            c = sum(cost[kt, perm[kt]] for kt in range(K))
            if c < best_cost:
                best, best_cost = perm, c
        if best == tuple(range(K)):
            out.append(state)
        else:
            out.append(permute_features(state, np.asarray(best)))
    return out


def summarize(
    chain: ChainOutput,
    basis: BasisSystem,
    grid: np.ndarray,
    labels: list[str | None] | None = None,
    *,
    contrast_feature: int = 1,
    band: tuple[float, float] = (2.5, 97.5),
) -> PosteriorSummary:
    """Turn a chain into posterior summaries on the grid.

    Pointwise feature-mean bands at the requested quantiles, posterior-mean
    covariance surfaces with their eigenpairs, and posterior-mean membership
    tables.  With exactly two group labels, adds the per-channel contrast of
    mean loadings on contrast_feature, computed in both aggregation orders
    (mean over draws then subjects, and the reverse).
    """
    if not chain.draws:
        raise ValueError("chain has no stored draws")
    draws = chain.draws
    St = evaluate(basis, grid).T
    K = draws[0].nu.shape[0]
    n = grid.size

    curves = np.stack([St @ s.nu.T for s in draws])  # (D, n, K)
    lo_q, hi_q = band
    feature_median = np.percentile(curves, 50.0, axis=0).T
    feature_lo = np.percentile(curves, lo_q, axis=0).T
    feature_hi = np.percentile(curves, hi_q, axis=0).T

    cov_surfaces = np.empty((K, n, n))
    eigenvalues, eigenfunctions = [], []
    w = trapezoid_weights(grid)
    for k in range(K):
        cov_surfaces[k] = reconstruct_covariance(draws, basis, grid, k).mean(axis=0)
        vals, funcs = extract_eigenfunctions(cov_surfaces[k], w)
        eigenvalues.append(vals)
        eigenfunctions.append(funcs)

    Z_draws = np.stack([s.Z for s in draws])  # (D, N, J, K)
    pi_draws = np.stack([s.pi for s in draws])
    membership_channel = Z_draws.mean(axis=0)
    membership_subject = pi_draws.mean(axis=0)

    group_contrast = None
    if labels is not None:
        present = sorted({g for g in labels if g is not None})
        if len(present) == 2:
            ga, gb = present
            idx_a = [i for i, g in enumerate(labels) if g == ga]
            idx_b = [i for i, g in enumerate(labels) if g == gb]
            kf = contrast_feature
            # mean over draws first, subjects second
            per_draw_a = Z_draws[:, idx_a, :, kf].mean(axis=1)  # (D, J)
            per_draw_b = Z_draws[:, idx_b, :, kf].mean(axis=1)
            draw_then_subject = per_draw_a.mean(axis=0) - per_draw_b.mean(axis=0)
            # posterior mean per channel first, group mean second
            subject_then_draw = (
                membership_channel[idx_a, :, kf].mean(axis=0)
                - membership_channel[idx_b, :, kf].mean(axis=0)
            )
            group_contrast = {
                "groups": (ga, gb),
                "feature": kf,
                "draw_then_subject": draw_then_subject,
                "subject_then_draw": subject_then_draw,
            }
    return PosteriorSummary(
        grid=np.asarray(grid, dtype=float),
        feature_median=feature_median,
        feature_lo=feature_lo,
        feature_hi=feature_hi,
        cov_surfaces=cov_surfaces,
        eigenvalues=eigenvalues,
        eigenfunctions=eigenfunctions,
        membership_subject=membership_subject,
        membership_channel=membership_channel,
        group_contrast=group_contrast,
    )


def posterior_mean_state(draws: list[ModelState]) -> ModelState:
    """Pointwise posterior mean of every block, memberships renormalized."""
    out = draws[0].copy()
    out.nu = np.mean([s.nu for s in draws], axis=0)
    out.phi = np.mean([s.phi for s in draws], axis=0)
    out.chi = np.mean([s.chi for s in draws], axis=0)
    Z = np.mean([s.Z for s in draws], axis=0)
    pi = np.mean([s.pi for s in draws], axis=0)
    out.Z = Z / Z.sum(axis=-1, keepdims=True)
    out.pi = pi / pi.sum(axis=-1, keepdims=True)
    out.eta = float(np.mean([s.eta for s in draws]))
    out.sigma2 = np.mean([s.sigma2 for s in draws], axis=0)
    out.gamma = np.mean([s.gamma for s in draws], axis=0)
    out.delta = np.mean([s.delta for s in draws], axis=0)
    out.a1 = np.mean([s.a1 for s in draws], axis=0)
    out.a2 = np.mean([s.a2 for s in draws], axis=0)
    return out


def count_parameters(state: ModelState, data: FunctionalDataset) -> int:
    """Free-parameter count: nu, phi, sigma2, Z rows (K-1 each), pi rows, eta."""
    N, J, K, M, P = state.dims
    return K * P + K * M * P + J + N * J * (K - 1) + N * (K - 1) + 1


def information_criteria(
    data: FunctionalDataset,
    basis: BasisSystem,
    chains: list[ChainOutput],
) -> ICTable:
    """AIC/BIC at the aligned posterior-mean state plus mean marginal deviance.

    Chains must all have been fitted on the given dataset; a content-hash
    mismatch raises.
    """
    expect = dataset_hash(data)
    for chain in chains:
        if chain.data_hash != expect:
            raise ValueError("chain was fitted on different data (hash mismatch)")
    grid = data.grids[0]
    n_obs = data.n_obs
    rows_K, rows_ll, rows_p, rows_aic, rows_bic, rows_dev = [], [], [], [], [], []
    for chain in chains:
        draws = align_draws(chain.draws, basis, grid)
        mean_state = posterior_mean_state(draws)
        ll = loglik_marginal(mean_state, basis, data)
        p = count_parameters(mean_state, data)
        dev = float(np.mean([-2.0 * loglik_marginal(s, basis, data) for s in draws]))
        rows_K.append(draws[0].nu.shape[0])
        rows_ll.append(float(ll))
        rows_p.append(p)
        rows_aic.append(2.0 * p - 2.0 * ll)
        rows_bic.append(p * np.log(n_obs) - 2.0 * ll)
        rows_dev.append(dev)
    order = np.argsort(rows_K)
    pick = lambda xs: [xs[i] for i in order]
    return ICTable(
        K=pick(rows_K), loglik=pick(rows_ll), n_params=pick(rows_p),
        aic=pick(rows_aic), bic=pick(rows_bic), mean_deviance=pick(rows_dev),
    )


def elbow_select(ic: ICTable) -> int:
    """Candidate K at the sharpest bend of the mean-deviance profile.

    Maximizes the discrete second difference of mean deviance over interior
    candidates; ties go to the smaller K.  Needs at least three candidates.
    """
    if len(ic.K) < 3:
        raise ValueError("elbow selection needs at least 3 candidate K values")
    Ks = np.asarray(ic.K)
    dev = np.asarray(ic.mean_deviance)
    if np.any(np.diff(Ks) <= 0):
        raise ValueError("candidate K values must be strictly increasing")
    best_k, best_curv = None, -np.inf
    for i in range(1, len(Ks) - 1):
        curv = dev[i - 1] - 2.0 * dev[i] + dev[i + 1]
        if curv > best_curv:
            best_k, best_curv = int(Ks[i]), curv
    return best_k
