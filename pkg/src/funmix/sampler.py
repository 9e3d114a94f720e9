"""Posterior simulation: blocked Gibbs plus Metropolis-Hastings on simplex blocks.

Sweep order per iteration is fixed: coefficients -> scores -> variances ->
hyper shapes -> memberships -> affine rescaling.  Conjugate blocks (nu, phi,
chi, sigma2, gamma, delta) are drawn from exact full conditionals; Z rows and
pi rows move by Dirichlet proposals centered at the current point; eta and the
shrinkage shapes a1/a2 move by random walks on the log scale; the affine block
rescales feature pairs together with all memberships without changing the
likelihood, which is what lets the chain traverse the feature-spread /
membership-spread ridge.  Proposal scales adapt toward a target acceptance
rate during burn-in only, so the post-burn-in kernel is fixed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular

from .basis import BasisSystem, rw1_penalty
from .model import (
    Design,
    FunctionalDataset,
    ModelState,
    _mvn_loglik_chol,
    check_consistent,
    gaussian_loglik_iso,
)
from .priors import (
    PriorConfig,
    ShrinkageParams,
    dirichlet_logpdf,
    gamma_logpdf,
    invgamma_logpdf,
    mgps_log_prior,
    repulsive_log_prior,
    rw1_log_prior,
    tilde_tau,
    z_layer_log_prior,
)

SIMPLEX_FLOOR = 1e-6
PROPOSAL_CONC_FLOOR = 0.1


class SamplerError(RuntimeError):
    """Raised when a chain produces non-finite values."""


@dataclass(frozen=True)
class SamplerConfig:
    """Chain length, seed, proposal scales and adaptation settings."""

    n_iter: int = 5000
    n_burnin: int = 2000
    thin: int = 1
    seed: int = 1
    step_z: float = 50.0
    step_pi: float = 50.0
    step_eta: float = 0.3
    step_a: float = 0.3
    step_affine: float = 0.05
    adapt_window: int = 100
    target_accept: float = 0.3
    z_update_likelihood: str = "conditional"

    def __post_init__(self):
        if not self.n_iter > self.n_burnin >= 0:
            raise ValueError("need n_iter > n_burnin >= 0")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        for name in ("step_z", "step_pi", "step_eta", "step_a", "step_affine"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.adapt_window < 1:
            raise ValueError("adapt_window must be >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.z_update_likelihood not in ("conditional", "marginal"):
            raise ValueError("z_update_likelihood must be 'conditional' or 'marginal'")


@dataclass
class ChainOutput:
    """Ordered post-burn-in draws plus acceptance and reproducibility metadata."""

    draws: list[ModelState]
    accept_rates: dict[str, float]
    log_posterior_trace: np.ndarray
    seed: int
    config: SamplerConfig
    prior_cfg: PriorConfig
    data_hash: str


def dataset_hash(data: FunctionalDataset) -> str:
    """Stable content hash of a dataset, used to pair chains with their data."""
    h = hashlib.sha256()
    for sid, t, Y in zip(data.subject_ids, data.grids, data.values):
        h.update(sid.encode())
        h.update(np.ascontiguousarray(t, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(Y, dtype=np.float64).tobytes())
    for lab in data.channel_labels:
        h.update(lab.encode())
    if data.groups is not None:
        for g in data.groups:
            h.update((g or "").encode())
    return h.hexdigest()


def _chol_with_jitter(Q: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        scale = float(np.mean(np.diag(Q)))
        try:
            return np.linalg.cholesky(Q + 1e-10 * scale * np.eye(Q.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise SamplerError("precision matrix is not positive definite") from exc


def draw_gaussian_canonical(Q: np.ndarray, b: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw from N(Q^{-1} b, Q^{-1}) via one Cholesky factorization."""
    L = _chol_with_jitter(Q)
    mean = solve_triangular(L.T, solve_triangular(L, b, lower=True), lower=False)
    z = rng.standard_normal(b.size)
    return mean + solve_triangular(L.T, z, lower=False)


def gaussian_canonical_moments(Q: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of N(Q^{-1} b, Q^{-1}), for distributional checks."""
    cov = np.linalg.inv(Q)
    return cov @ b, cov


def _penalty_for(P: int) -> np.ndarray:
    return rw1_penalty(P) if P >= 2 else np.zeros((1, 1))


def current_means(state: ModelState, design: Design, data: FunctionalDataset) -> list[np.ndarray]:
    """Conditional means of all channels; element i has shape (n_i, J)."""
    N, J, K, M, P = state.dims
    out = []
    for i in range(data.N):
        St = design.st[i]
        nu_bar = state.Z[i] @ state.nu  # (J, P)
        mu = St @ nu_bar.T  # (n, J)
        if M > 0:
            phibar = np.einsum("jk,kmp->jmp", state.Z[i], state.phi)
            mu = mu + np.einsum("np,jmp,jm->nj", St, phibar, state.chi[i])
        out.append(mu)
    return out


def update_coefficients(
    state: ModelState,
    basis: BasisSystem,
    data: FunctionalDataset,
    rng: np.random.Generator,
    *,
    nu_ridge: float = 0.0,
    penalty: np.ndarray | None = None,
    design: Design | None = None,
) -> ModelState:
    """Gibbs draw of every nu_k and phi_km from its Gaussian full conditional.

    The conditional precision is the sigma^-2, membership-weighted basis Gram
    plus the smoothness penalty (plus the local shrinkage precisions for phi);
    the mean solves the matching normal equations.
    """
    N, J, K, M, P = state.dims
    if design is None:
        design = Design(basis, data)
    if penalty is None:
        penalty = _penalty_for(P)
    inv_s2 = 1.0 / state.sigma2
    mu = current_means(state, design, data)

    for k in range(K):
        Q = state.lambda_nu * penalty + nu_ridge * np.eye(P)
        b = np.zeros(P)
        for i in range(N):
            St, G, Y = design.st[i], design.gram[i], data.values[i]
            zk = state.Z[i, :, k]
            Q = Q + float(np.sum(zk**2 * inv_s2)) * G
            own = St @ state.nu[k]
            R = Y - mu[i] + np.outer(own, zk)
            b += St.T @ (R @ (zk * inv_s2))
        new = draw_gaussian_canonical(Q, b, rng)
        shift = new - state.nu[k]
        for i in range(N):
            mu[i] += np.outer(design.st[i] @ shift, state.Z[i, :, k])
        state.nu[k] = new

    if M > 0:
        tt = tilde_tau(state.delta)
        for k in range(K):
            for m in range(M):
                Q = state.lambda_phi * penalty + np.diag(state.gamma[k, :, m] * tt[m, k])
                b = np.zeros(P)
                weights = []
                for i in range(N):
                    St, G, Y = design.st[i], design.gram[i], data.values[i]
                    w = state.Z[i, :, k] * state.chi[i, :, m]
                    weights.append(w)
                    Q = Q + float(np.sum(w**2 * inv_s2)) * G
                    own = St @ state.phi[k, m]
                    R = Y - mu[i] + np.outer(own, w)
                    b += St.T @ (R @ (w * inv_s2))
                new = draw_gaussian_canonical(Q, b, rng)
                shift = new - state.phi[k, m]
                for i in range(N):
                    mu[i] += np.outer(design.st[i] @ shift, weights[i])
                state.phi[k, m] = new
    return state


def update_scores(
    state: ModelState,
    basis: BasisSystem,
    data: FunctionalDataset,
    rng: np.random.Generator,
    *,
    design: Design | None = None,
) -> ModelState:
    """Gibbs draw of each length-M score vector chi_ij.

    Standard-normal prior makes the conditional Gaussian with precision
    I_M + A'A / sigma_j^2 and mean solving against A'r / sigma_j^2.
    """
    N, J, K, M, P = state.dims
    if M == 0:
        return state
    if design is None:
        design = Design(basis, data)
    for i in range(N):
        St, Y = design.st[i], data.values[i]
        nu_bar = state.Z[i] @ state.nu
        phibar = np.einsum("jk,kmp->jmp", state.Z[i], state.phi)
        for j in range(J):
            A = St @ phibar[j].T  # (n, M)
            r = Y[:, j] - St @ nu_bar[j]
            Q = np.eye(M) + (A.T @ A) / state.sigma2[j]
            b = A.T @ r / state.sigma2[j]
            state.chi[i, j] = draw_gaussian_canonical(Q, b, rng)
    return state


def update_noise_variance(
    state: ModelState,
    basis: BasisSystem,
    data: FunctionalDataset,
    cfg: PriorConfig,
    rng: np.random.Generator,
    *,
    design: Design | None = None,
) -> ModelState:
    """Gibbs draw of each sigma_j^2 from its Inverse-Gamma conditional."""
    N, J, K, M, P = state.dims
    if design is None:
        design = Design(basis, data)
    mu = current_means(state, design, data)
    n_total = sum(data.n)
    for j in range(J):
        ss = sum(float(np.sum((data.values[i][:, j] - mu[i][:, j]) ** 2)) for i in range(N))
        g = rng.gamma(cfg.alpha0 + 0.5 * n_total, 1.0 / (cfg.beta0 + 0.5 * ss))
        state.sigma2[j] = 1.0 / g
    return state


def update_local_shrinkage(
    state: ModelState, cfg: PriorConfig, rng: np.random.Generator
) -> ModelState:
    """Gibbs draw of every gamma_kpm given phi and the current delta."""
    K, M, P = state.phi.shape
    if M == 0:
        return state
    tt = tilde_tau(state.delta)  # (M, K)
    phi2 = np.transpose(state.phi, (0, 2, 1)) ** 2  # (K, P, M)
    rate = 0.5 * (cfg.nu_gamma + tt.T[:, None, :] * phi2)
    state.gamma = rng.gamma(0.5 * (cfg.nu_gamma + 1.0), 1.0 / rate)
    return state


def update_column_shrinkage(
    state: ModelState, cfg: PriorConfig, rng: np.random.Generator
) -> ModelState:
    """Sequential Gibbs draw of the delta multipliers, aggregating over m >= level."""
    K, M, P = state.phi.shape
    for k in range(K):
        d = state.delta[:, k]
        for h in range(M):
            shape = (state.a1[k] if h == 0 else state.a2[k]) + 0.5 * P * (M - h)
            rate_h = 1.0
            for m in range(h, M):
                t_minus = float(np.prod(np.delete(d[: m + 1], h)))
                rate_h += 0.5 * t_minus * float(
                    np.sum(state.gamma[k, :, m] * state.phi[k, m] ** 2)
                )
            d[h] = rng.gamma(shape, 1.0 / rate_h)
    return state


def update_variances(
    state: ModelState,
    basis: BasisSystem,
    data: FunctionalDataset,
    cfg: PriorConfig,
    rng: np.random.Generator,
    *,
    design: Design | None = None,
) -> ModelState:
    """Gibbs draw of the noise variances and the shrinkage block (gamma, delta)."""
    update_noise_variance(state, basis, data, cfg, rng, design=design)
    update_local_shrinkage(state, cfg, rng)
    update_column_shrinkage(state, cfg, rng)
    return state


def logrw_mh(
    x: float, log_target, step: float, rng: np.random.Generator
) -> tuple[float, bool]:
    """One random-walk Metropolis step on log(x); returns (new_x, accepted)."""
    prop = x * np.exp(step * rng.standard_normal())
    log_ratio = log_target(prop) - log_target(x) + np.log(prop) - np.log(x)
    if np.log(rng.uniform()) < log_ratio:
        return float(prop), True
    return float(x), False


def update_hyper_a(
    state: ModelState,
    cfg: PriorConfig,
    rng: np.random.Generator,
    *,
    step_a: float = 0.3,
) -> tuple[ModelState, dict[str, tuple[int, int]]]:
    """Log-scale random-walk MH on the shrinkage shapes a1_k and a2_k."""
    K, M, _ = state.phi.shape
    acc = att = 0
    for k in range(K):
        d1 = state.delta[0, k] if M >= 1 else None

        def lt1(a):
            val = float(gamma_logpdf(a, cfg.alpha1, cfg.beta1))
            if d1 is not None:
                val += float(gamma_logpdf(d1, a, 1.0))
            return val

        state.a1[k], ok = logrw_mh(state.a1[k], lt1, step_a, rng)
        acc += ok
        att += 1

        d_rest = state.delta[1:, k] if M >= 2 else None

        def lt2(a):
            val = float(gamma_logpdf(a, cfg.alpha2, cfg.beta2))
            if d_rest is not None:
                val += float(np.sum(gamma_logpdf(d_rest, a, 1.0)))
            return val

        state.a2[k], ok = logrw_mh(state.a2[k], lt2, step_a, rng)
        acc += ok
        att += 1
    return state, {"a": (acc, att)}


def _dirichlet_proposal(
    current: np.ndarray, step: float, rng: np.random.Generator
) -> tuple[np.ndarray, float, float]:
    """Propose from Dirichlet(step * current + floor); returns (prop, lq_fwd, lq_rev)."""
    conc_fwd = step * current + PROPOSAL_CONC_FLOOR
    prop = rng.dirichlet(conc_fwd)
    lq_fwd = dirichlet_logpdf(prop, conc_fwd)
    conc_rev = step * prop + PROPOSAL_CONC_FLOOR
    lq_rev = dirichlet_logpdf(current, conc_rev)
    return prop, lq_fwd, lq_rev


def update_memberships(
    state: ModelState,
    basis: BasisSystem,
    data: FunctionalDataset,
    cfg: PriorConfig,
    rng: np.random.Generator,
    *,
    step_z: float = 50.0,
    step_pi: float = 50.0,
    step_eta: float = 0.3,
    likelihood: str = "conditional",
    design: Design | None = None,
) -> tuple[ModelState, dict[str, tuple[int, int]]]:
    """MH sweep over the membership layer: every Z_ij, every pi_i, then eta.

    Z rows are accepted against the chosen likelihood (conditional keeps the
    current scores; marginal integrates them out per proposal) times the
    Dirichlet(eta pi_i) layer; pi rows against the repulsive prior plus the
    Z layer; eta by a log random walk.  With K = 1 the layer is degenerate
    and the update is a no-op.
    """
    N, J, K, M, P = state.dims
    if K == 1:
        return state, {"Z": (0, 0), "pi": (0, 0), "eta": (0, 0)}
    if design is None:
        design = Design(basis, data)
    alpha_dir = cfg.with_K(K).alpha_dir
    counts = {"Z": [0, 0], "pi": [0, 0], "eta": [0, 0]}

    for i in range(N):
        St, Y = design.st[i], data.values[i]
        n_i = St.shape[0]
        NU = St @ state.nu.T  # (n, K), column k = S' nu_k
        PH = np.einsum("np,kmp->nkm", St, state.phi) if M > 0 else None
        eye = np.eye(n_i)
        for j in range(J):
            z = state.Z[i, j]
            if likelihood == "conditional":
                C = NU if M == 0 else NU + PH @ state.chi[i, j]

                def loglik(zz):
                    return gaussian_loglik_iso(Y[:, j] - C @ zz, state.sigma2[j])
            else:

                def loglik(zz):
                    mu0 = NU @ zz
                    if M > 0:
                        A = np.einsum("nkm,k->nm", PH, zz)
                        cov = A @ A.T + state.sigma2[j] * eye
                    else:
                        cov = state.sigma2[j] * eye
                    return _mvn_loglik_chol(Y[:, j] - mu0, cov)

            prop, lq_fwd, lq_rev = _dirichlet_proposal(z, step_z, rng)
            counts["Z"][1] += 1
            if np.any(prop <= SIMPLEX_FLOOR):
                continue
            prior_cur = dirichlet_logpdf(z, state.eta * state.pi[i])
            prior_prop = dirichlet_logpdf(prop, state.eta * state.pi[i])
            log_ratio = loglik(prop) - loglik(z) + prior_prop - prior_cur + lq_rev - lq_fwd
            if np.log(rng.uniform()) < log_ratio:
                state.Z[i, j] = prop
                counts["Z"][0] += 1

    for i in range(N):
        cur = state.pi[i]

        def pi_logtarget(p):
            val = dirichlet_logpdf(p, alpha_dir)
            if cfg.tau_rep > 0 and N > 1:
                d2 = np.sum((state.pi - p) ** 2, axis=1)
                d2 = np.delete(d2, i)
                if np.any(d2 == 0.0):
                    return -np.inf
                val -= cfg.tau_rep / N * float(np.sum(1.0 / d2))
            for j in range(J):
                val += dirichlet_logpdf(state.Z[i, j], state.eta * p)
            return val

        prop, lq_fwd, lq_rev = _dirichlet_proposal(cur, step_pi, rng)
        counts["pi"][1] += 1
        if np.any(prop <= SIMPLEX_FLOOR):
            continue
        log_ratio = pi_logtarget(prop) - pi_logtarget(cur) + lq_rev - lq_fwd
        if np.log(rng.uniform()) < log_ratio:
            state.pi[i] = prop
            counts["pi"][0] += 1

    def eta_logtarget(e):
        return z_layer_log_prior(state.Z, state.pi, e) + float(
            gamma_logpdf(e, cfg.eta_shape, cfg.eta_rate)
        )

    state.eta, ok = logrw_mh(state.eta, eta_logtarget, step_eta, rng)
    counts["eta"][1] += 1
    counts["eta"][0] += ok

    return state, {k: (v[0], v[1]) for k, v in counts.items()}


def _affine_prior_terms(
    state: ModelState, cfg: PriorConfig, penalty: np.ndarray, alpha_dir: np.ndarray
) -> float:
    """Prior terms that change under the feature/membership reparametrization."""
    N, J, K, M, P = state.dims
    total = 0.0
    for k in range(K):
        if state.lambda_nu > 0:
            total += rw1_log_prior(state.nu[k], state.lambda_nu, penalty)
        if cfg.nu_ridge > 0:
            total += -0.5 * cfg.nu_ridge * float(state.nu[k] @ state.nu[k])
        if state.lambda_phi > 0:
            for m in range(M):
                total += rw1_log_prior(state.phi[k, m], state.lambda_phi, penalty)
    if M > 0:
        tt = tilde_tau(state.delta)
        prec = state.gamma * tt.T[:, None, :]  # (K, P, M)
        total += -0.5 * float(
            np.sum(prec * np.transpose(state.phi, (0, 2, 1)) ** 2)
        )
    total += repulsive_log_prior(state.pi, alpha_dir, cfg.tau_rep)
    total += z_layer_log_prior(state.Z, state.pi, state.eta)
    return total


def update_affine(
    state: ModelState,
    cfg: PriorConfig,
    rng: np.random.Generator,
    *,
    penalty: np.ndarray,
    step_affine: float = 0.05,
) -> tuple[ModelState, dict[str, tuple[int, int]]]:
    """Likelihood-preserving rescaling of each feature pair.

    For a pair (k1, k2) the features move toward (or away from) each other,
    nu' = nu +- c (nu_k2 - nu_k1), with every Z and pi row remapped along the
    same pair so all channel means and covariances stay exactly unchanged.
    The move travels along the flat direction that couples feature spread to
    membership spread, which per-coordinate updates cross only diffusively.
    Acceptance uses the prior terms plus the reparametrization Jacobian, with
    proposal scalar c drawn N(0, step_affine^2) and its reverse value -c/s.
    """
    N, J, K, M, P = state.dims
    if K < 2:
        return state, {"affine": (0, 0)}
    alpha_dir = cfg.with_K(K).alpha_dir
    acc = att = 0
    for k1 in range(K - 1):
        for k2 in range(k1 + 1, K):
            att += 1
            c = step_affine * rng.standard_normal()
            u_rand = rng.uniform()
            s = 1.0 - 2.0 * c
            if s <= 0.0:
                continue
            T_z = state.Z[:, :, k1] + state.Z[:, :, k2]
            u_z = state.Z[:, :, k2] / T_z
            u_z_new = (u_z - c) / s
            new_zk2 = T_z * u_z_new
            new_zk1 = T_z - new_zk2
            if np.any(new_zk1 <= SIMPLEX_FLOOR) or np.any(new_zk2 <= SIMPLEX_FLOOR):
                continue
            T_p = state.pi[:, k1] + state.pi[:, k2]
            u_p = state.pi[:, k2] / T_p
            u_p_new = (u_p - c) / s
            new_pk2 = T_p * u_p_new
            new_pk1 = T_p - new_pk2
            if np.any(new_pk1 <= SIMPLEX_FLOOR) or np.any(new_pk2 <= SIMPLEX_FLOOR):
                continue

            cur_terms = _affine_prior_terms(state, cfg, penalty, alpha_dir)
            d_nu = state.nu[k2] - state.nu[k1]
            old_nu = state.nu[[k1, k2]].copy()
            old_phi = state.phi[[k1, k2]].copy()
            old_zk = state.Z[:, :, [k1, k2]].copy()
            old_pk = state.pi[:, [k1, k2]].copy()
            state.nu[k1] = old_nu[0] + c * d_nu
            state.nu[k2] = old_nu[1] - c * d_nu
            if M > 0:
                d_phi = old_phi[1] - old_phi[0]
                state.phi[k1] = old_phi[0] + c * d_phi
                state.phi[k2] = old_phi[1] - c * d_phi
            state.Z[:, :, k1] = new_zk1
            state.Z[:, :, k2] = new_zk2
            state.pi[:, k1] = new_pk1
            state.pi[:, k2] = new_pk2

            new_terms = _affine_prior_terms(state, cfg, penalty, alpha_dir)
            c_rev = -c / s
            log_jac = (P + M * P - N * J - N) * np.log(s) - 2.0 * np.log(s)
            log_prop = (c * c - c_rev * c_rev) / (2.0 * step_affine**2)
            log_ratio = new_terms - cur_terms + log_jac + log_prop
            if np.log(u_rand) < log_ratio:
                acc += 1
            else:
                state.nu[[k1, k2]] = old_nu
                state.phi[[k1, k2]] = old_phi
                state.Z[:, :, [k1, k2]] = old_zk
                state.pi[:, [k1, k2]] = old_pk
    return state, {"affine": (acc, att)}


def log_posterior(
    state: ModelState,
    basis: BasisSystem,
    data: FunctionalDataset,
    cfg: PriorConfig,
    *,
    penalty: np.ndarray | None = None,
    design: Design | None = None,
) -> float:
    """Unnormalized log posterior of the full state (conditional likelihood)."""
    N, J, K, M, P = state.dims
    if design is None:
        design = Design(basis, data)
    if penalty is None:
        penalty = _penalty_for(P)
    mu = current_means(state, design, data)
    total = 0.0
    for i in range(N):
        for j in range(J):
            total += gaussian_loglik_iso(data.values[i][:, j] - mu[i][:, j], state.sigma2[j])
    shrink = ShrinkageParams(state.gamma, state.delta, state.a1, state.a2)
    total += mgps_log_prior(state.phi, shrink, cfg)
    for k in range(K):
        if state.lambda_nu > 0:
            total += rw1_log_prior(state.nu[k], state.lambda_nu, penalty)
        if cfg.nu_ridge > 0:
            total += -0.5 * cfg.nu_ridge * float(state.nu[k] @ state.nu[k])
        if state.lambda_phi > 0:
            for m in range(M):
                total += rw1_log_prior(state.phi[k, m], state.lambda_phi, penalty)
    total += float(np.sum(invgamma_logpdf(state.sigma2, cfg.alpha0, cfg.beta0)))
    if M > 0:
        total += -0.5 * state.chi.size * np.log(2.0 * np.pi) - 0.5 * float(np.sum(state.chi**2))
    if K > 1:
        total += repulsive_log_prior(state.pi, cfg.with_K(K).alpha_dir, cfg.tau_rep)
        total += z_layer_log_prior(state.Z, state.pi, state.eta)
        total += float(gamma_logpdf(state.eta, cfg.eta_shape, cfg.eta_rate))
    return float(total)


def _kmeans(X: np.ndarray, K: int, rng: np.random.Generator, n_iter: int = 25) -> np.ndarray:
    """Plain Lloyd k-means with k-means++ seeding; returns the K centroids."""
    n = X.shape[0]
    centers = np.empty((K, X.shape[1]))
    centers[0] = X[int(rng.integers(n))]
    for k in range(1, K):
        d2 = np.min(((X[:, None, :] - centers[None, :k, :]) ** 2).sum(axis=2), axis=1)
        if d2.sum() <= 0:
            centers[k] = X[int(rng.integers(n))]
        else:
            centers[k] = X[int(rng.choice(n, p=d2 / d2.sum()))]
    for _ in range(n_iter):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        lab = np.argmin(d2, axis=1)
        new = centers.copy()
        for k in range(K):
            mask = lab == k
            if mask.any():
                new[k] = X[mask].mean(axis=0)
            else:
                new[k] = X[int(np.argmax(d2.min(axis=1)))]
        if np.allclose(new, centers):
            break
        centers = new
    return centers


def floor_simplex(x: np.ndarray, floor: float = SIMPLEX_FLOOR) -> np.ndarray:
    """Clip simplex coordinates away from the boundary and renormalize."""
    x = np.maximum(np.asarray(x, dtype=float), floor)
    return x / x.sum(axis=-1, keepdims=True)


def _simplex_regress(B: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Row-wise nonnegative least squares onto the centers, sum-to-one enforced."""
    from scipy.optimize import nnls

    K = centers.shape[0]
    lam = 1e3
    A = np.vstack([centers.T, lam * np.ones((1, K))])
    Z = np.empty((B.shape[0], K))
    for r in range(B.shape[0]):
        z, _ = nnls(A, np.concatenate([B[r], [lam]]))
        total = z.sum()
        Z[r] = z / total if total > 0 else np.full(K, 1.0 / K)
    return Z


INIT_ETA = 20.0  # start in the strong channel-pooling regime; mixes down fast


def initialize_state(
    basis: BasisSystem,
    data: FunctionalDataset,
    cfg: PriorConfig,
    K: int,
    M: int,
    rng: np.random.Generator,
    *,
    design: Design | None = None,
) -> ModelState:
    """Deterministic data-driven warm start.

    Per-channel least-squares basis coefficients are clustered by k-means,
    then each feature is re-estimated from the most-pure subjects (archetype
    refinement on channel-averaged coefficients, which suppresses score
    noise).  Memberships come from simplex-constrained regression onto the
    refined features; remaining blocks start at prior means except eta, which
    starts at a pooled value.
    """
    if design is None:
        design = Design(basis, data)
    N, J, P = data.N, data.J, basis.P
    cfg = cfg.with_K(K)
    coefs = np.empty((N * J, P))
    for i in range(N):
        sol, *_ = np.linalg.lstsq(design.st[i], data.values[i], rcond=None)
        coefs[i * J:(i + 1) * J] = sol.T

    if K == 1:
        nu = coefs.mean(axis=0, keepdims=True).copy()
        Z = np.ones((N, J, 1))
        pi = np.ones((N, 1))
    else:
        subj = coefs.reshape(N, J, P).mean(axis=1)
        nu = _kmeans(coefs, K, rng)
        n_top = max(2, int(round(0.08 * N)))
        for _ in range(4):
            z_subj = _simplex_regress(subj, nu)
            refined = nu.copy()
            for k in range(K):
                idx = np.argsort(z_subj[:, k])[::-1][:n_top]
                refined[k] = subj[idx].mean(axis=0)
            nu = refined
        # channel memberships start at the subject centroid: the pooled
        # configuration is self-consistent with a large eta, and the chain
        # spreads channels apart only where the data demands it
        pi = floor_simplex(_simplex_regress(subj, nu))
        if cfg.tau_rep > 0:
            # avoid coincident centroids at start (zero repulsion distance)
            for i in range(N - 1):
                d2 = np.sum((pi[i + 1:] - pi[i]) ** 2, axis=1)
                if np.any(d2 == 0.0):
                    pi = floor_simplex(pi + rng.uniform(0.0, 1e-6, size=pi.shape))
                    break
        Z = np.repeat(pi[:, None, :], J, axis=1)

    sigma2 = np.empty(J)
    for j in range(J):
        ss = n_tot = 0.0
        for i in range(N):
            fit = design.st[i] @ (Z[i, j] @ nu)
            ss += float(np.sum((data.values[i][:, j] - fit) ** 2))
            n_tot += data.grids[i].size
        sigma2[j] = max(ss / n_tot, 1e-6)

    a1 = np.full(K, cfg.alpha1 / cfg.beta1)
    a2 = np.full(K, cfg.alpha2 / cfg.beta2)
    delta = np.empty((M, K))
    if M > 0:
        delta[0, :] = a1
        delta[1:, :] = a2[None, :]
    return ModelState(
        nu=nu,
        phi=np.zeros((K, M, P)),
        chi=np.zeros((N, J, M)),
        Z=Z,
        pi=pi,
        eta=INIT_ETA if K > 1 else cfg.eta_shape / cfg.eta_rate,
        sigma2=sigma2,
        gamma=np.ones((K, P, M)),
        delta=delta,
        a1=a1,
        a2=a2,
        lambda_nu=cfg.lambda_nu,
        lambda_phi=cfg.lambda_phi,
    )


def _check_finite(name: str, iteration: int, *arrays) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise SamplerError(f"non-finite values after block '{name}' at iteration {iteration}")


def sweep(
    state: ModelState,
    basis: BasisSystem,
    data: FunctionalDataset,
    cfg: PriorConfig,
    rng: np.random.Generator,
    *,
    steps: dict[str, float],
    likelihood: str = "conditional",
    design: Design | None = None,
    penalty: np.ndarray | None = None,
    iteration: int = 0,
) -> dict[str, tuple[int, int]]:
    """One full update sweep in the fixed block order; returns MH accept counts."""
    if penalty is None:
        penalty = _penalty_for(state.phi.shape[2])

    def guarded(name, fn, *arrays):
        try:
            out = fn()
        except (ValueError, np.linalg.LinAlgError, SamplerError) as exc:
            raise SamplerError(
                f"numerical failure in block '{name}' at iteration {iteration}: {exc}"
            ) from exc
        _check_finite(name, iteration, *arrays)
        return out

    guarded("coefficients",
            lambda: update_coefficients(state, basis, data, rng, nu_ridge=cfg.nu_ridge,
                                        penalty=penalty, design=design),
            state.nu, state.phi)
    guarded("scores", lambda: update_scores(state, basis, data, rng, design=design),
            state.chi)
    guarded("variances",
            lambda: update_variances(state, basis, data, cfg, rng, design=design),
            state.sigma2, state.gamma, state.delta)
    acc_a = guarded("hyper_a",
                    lambda: update_hyper_a(state, cfg, rng, step_a=steps["a"])[1],
                    state.a1, state.a2)
    acc_m = guarded(
        "memberships",
        lambda: update_memberships(
            state, basis, data, cfg, rng,
            step_z=steps["Z"], step_pi=steps["pi"], step_eta=steps["eta"],
            likelihood=likelihood, design=design,
        )[1],
        state.Z, state.pi, np.asarray([state.eta]),
    )
    acc_f = guarded(
        "affine",
        lambda: update_affine(state, cfg, rng, penalty=penalty,
                              step_affine=steps["affine"])[1],
        state.nu, state.phi, state.Z, state.pi,
    )
    return {**acc_a, **acc_m, **acc_f}


def run_chain(
    data: FunctionalDataset,
    basis: BasisSystem,
    prior_cfg: PriorConfig,
    sampler_cfg: SamplerConfig,
    *,
    K: int = 2,
    M: int = 2,
    init_state: ModelState | None = None,
) -> ChainOutput:
    """Run one MCMC chain and return thinned post-burn-in draws.

    Deterministic given the seed.  Proposal scales adapt toward
    target_accept during burn-in and are frozen afterwards.
    """
    rng = np.random.default_rng(sampler_cfg.seed)
    design = Design(basis, data)
    penalty = _penalty_for(basis.P)
    prior_cfg = prior_cfg.with_K(K)
    if init_state is None:
        state = initialize_state(basis, data, prior_cfg, K, M, rng, design=design)
    else:
        state = init_state.copy()
    check_consistent(state, basis, data)

    steps = {
        "Z": sampler_cfg.step_z,
        "pi": sampler_cfg.step_pi,
        "eta": sampler_cfg.step_eta,
        "a": sampler_cfg.step_a,
        "affine": sampler_cfg.step_affine,
    }
    window: dict[str, list[int]] = {k: [0, 0] for k in steps}
    totals: dict[str, list[int]] = {k: [0, 0] for k in steps}

    draws: list[ModelState] = []
    lp_trace: list[float] = []
    for it in range(1, sampler_cfg.n_iter + 1):
        counts = sweep(
            state, basis, data, prior_cfg, rng,
            steps=steps, likelihood=sampler_cfg.z_update_likelihood,
            design=design, penalty=penalty, iteration=it,
        )
        in_burnin = it <= sampler_cfg.n_burnin
        for name, (acc, att) in counts.items():
            bucket = window if in_burnin else totals
            bucket[name][0] += acc
            bucket[name][1] += att
        if in_burnin and it % sampler_cfg.adapt_window == 0:
            for name in steps:
                acc, att = window[name]
                if att == 0:
                    continue
                rate = acc / att
                gap = sampler_cfg.target_accept - rate
                if name in ("Z", "pi"):
                    # higher concentration = smaller move = higher acceptance
                    steps[name] = float(np.clip(steps[name] * np.exp(gap), 1.0, 1e6))
                elif name == "affine":
                    steps[name] = float(np.clip(steps[name] * np.exp(-gap), 1e-4, 0.4))
                else:
                    steps[name] = float(np.clip(steps[name] * np.exp(-gap), 1e-3, 10.0))
                window[name] = [0, 0]
        if not in_burnin and (it - sampler_cfg.n_burnin) % sampler_cfg.thin == 0:
            lp = log_posterior(state, basis, data, prior_cfg, penalty=penalty, design=design)
            if not np.isfinite(lp):
                raise SamplerError(
                    f"non-finite log posterior at iteration {it} (block 'log_posterior')"
                )
            draws.append(state.copy())
            lp_trace.append(lp)

    accept_rates = {
        name: (acc / att if att > 0 else float("nan")) for name, (acc, att) in totals.items()
    }
    return ChainOutput(
        draws=draws,
        accept_rates=accept_rates,
        log_posterior_trace=np.asarray(lp_trace),
        seed=sampler_cfg.seed,
        config=sampler_cfg,
        prior_cfg=prior_cfg,
        data_hash=dataset_hash(data),
    )
