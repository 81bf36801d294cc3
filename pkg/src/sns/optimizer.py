"""(mu/mu_w, lambda) covariance matrix adaptation evolution strategy.

Rank-based and from scratch: ``tell`` consumes only a best-first total
ordering of the sampled candidates, never objective values, so any strictly
monotone rescaling of the underlying scores leaves the trajectory bitwise
unchanged. Constants follow Hansen's tutorial defaults with positive
recombination weights only and mu = floor(lambda / 2).

All state is float64; the eigendecomposition of the covariance is recomputed
whenever the covariance has changed (no lazy-update optimization).
"""

from __future__ import annotations

import numpy as np

from .core import OptimizerError, as_code, as_code_batch

SIGMA_FLOOR = 1e-20
#: Relative symmetry tolerance and eigenvalue floor for the covariance.
COV_SYMMETRY_RTOL = 1e-9
EIGENVALUE_FLOOR = 1e-30
#: Condition-number cap; a ridge is added when the spectrum spreads past it,
#: which keeps the covariance positive definite through float rounding.
CONDITION_LIMIT = 1e14


class CmaEs:
    """Evolution strategy over latent codes, driven by an external ordering.

    Usage is the usual ask/tell loop. ``ask`` samples ``population_size``
    codes from N(mean, sigma^2 C); ``tell`` takes the evaluated batch plus a
    best-first permutation of its indices and applies weighted recombination,
    cumulative step-size adaptation and the rank-1 / rank-mu covariance
    updates. The batch passed to ``tell`` does not have to come from ``ask``
    (externally sampled initial populations are injected the same way).
    """

    def __init__(
        self,
        dim: int,
        mean0,
        sigma0: float,
        population_size: int,
        seed: int,
    ):
        if dim < 1:
            raise OptimizerError(f"dim must be >= 1, got {dim}")
        if sigma0 <= 0:
            raise OptimizerError(f"sigma0 must be positive, got {sigma0}")
        if population_size < 2:
            raise OptimizerError(
                f"population_size must be >= 2, got {population_size}"
            )
        self.dim = int(dim)
        self.lam = int(population_size)
        self.mean = as_code(mean0, dim).copy()
        self.sigma = float(sigma0)
        self.cov = np.eye(self.dim)
        self.path_sigma = np.zeros(self.dim)
        self.path_c = np.zeros(self.dim)
        self.generation = 0
        self.rng = np.random.Generator(np.random.PCG64(seed))

        # Recombination weights: log-rank for the top mu, zero below.
        self.mu = self.lam // 2
        raw = np.log((self.lam + 1) / 2.0) - np.log(np.arange(1, self.mu + 1))
        self.weights = np.zeros(self.lam)
        self.weights[: self.mu] = raw / raw.sum()
        self.mu_eff = 1.0 / np.sum(self.weights[: self.mu] ** 2)

        n, mu_eff = self.dim, self.mu_eff
        self.c_sigma = (mu_eff + 2) / (n + mu_eff + 5)
        self.d_sigma = (
            1 + 2 * max(0.0, np.sqrt((mu_eff - 1) / (n + 1)) - 1) + self.c_sigma
        )
        self.c_c = (4 + mu_eff / n) / (n + 4 + 2 * mu_eff / n)
        self.c_1 = 2 / ((n + 1.3) ** 2 + mu_eff)
        self.c_mu = min(
            1 - self.c_1, 2 * (mu_eff - 2 + 1 / mu_eff) / ((n + 2) ** 2 + mu_eff)
        )
        # E||N(0, I)||, used by step-size adaptation.
        self.chi_n = np.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n**2))

        self._eig_vectors: np.ndarray | None = None
        self._eig_sqrt: np.ndarray | None = None

    # -- covariance decomposition -------------------------------------------

    def _decompose(self) -> tuple[np.ndarray, np.ndarray]:
        if self._eig_vectors is None:
            cov = (self.cov + self.cov.T) / 2.0  # enforce exact symmetry
            if not np.all(np.isfinite(cov)):
                raise OptimizerError("covariance contains non-finite entries")
            try:
                eigvals, eigvecs = np.linalg.eigh(cov)
            except np.linalg.LinAlgError as exc:
                raise OptimizerError(
                    f"covariance eigendecomposition failed: {exc}"
                ) from exc
            if not np.all(np.isfinite(eigvals)) or eigvals[-1] <= 0:
                cond = eigvals[-1] / max(eigvals[0], np.finfo(float).tiny)
                raise OptimizerError(
                    "covariance lost positive definiteness "
                    f"(min eigenvalue {eigvals[0]:.3e}, condition number {cond:.3e})"
                )
            if eigvals[0] < max(eigvals[-1] / CONDITION_LIMIT, EIGENVALUE_FLOOR):
                ridge = eigvals[-1] / CONDITION_LIMIT - eigvals[0]
                cov = cov + ridge * np.eye(self.dim)
                eigvals = eigvals + ridge
            self.cov = cov
            self._eig_vectors = eigvecs
            self._eig_sqrt = np.sqrt(eigvals)
        return self._eig_vectors, self._eig_sqrt

    def _invalidate(self) -> None:
        self._eig_vectors = None
        self._eig_sqrt = None

    # -- ask / tell ----------------------------------------------------------

    def ask(self) -> np.ndarray:
        """Sample a (population_size, dim) batch from the current distribution."""
        b, d = self._decompose()
        z = self.rng.standard_normal((self.lam, self.dim))
        y = (z * d) @ b.T
        return self.mean + self.sigma * y

    def tell(self, batch, order) -> None:
        """Update the distribution from a batch and its best-first ordering."""
        batch = as_code_batch(batch, self.dim)
        if batch.shape[0] != self.lam:
            raise OptimizerError(
                f"batch size {batch.shape[0]} != population size {self.lam}"
            )
        order = np.asarray(order, dtype=np.int64)
        if sorted(order.tolist()) != list(range(self.lam)):
            raise OptimizerError("order must be a best-first permutation of the batch")

        b, d = self._decompose()
        n, mu, w = self.dim, self.mu, self.weights

        y = (batch - self.mean) / self.sigma
        y_top = y[order[:mu]]
        y_w = w[:mu] @ y_top

        self.mean = self.mean + self.sigma * y_w

        # Cumulative step-size adaptation with C^(-1/2) whitening.
        cov_inv_sqrt_yw = b @ ((b.T @ y_w) / d)
        self.path_sigma = (1 - self.c_sigma) * self.path_sigma + np.sqrt(
            self.c_sigma * (2 - self.c_sigma) * self.mu_eff
        ) * cov_inv_sqrt_yw

        norm_ps = np.linalg.norm(self.path_sigma)
        decay = 1 - (1 - self.c_sigma) ** (2 * (self.generation + 1))
        h_sigma = norm_ps / np.sqrt(decay) < (1.4 + 2 / (n + 1)) * self.chi_n

        self.path_c = (1 - self.c_c) * self.path_c + (
            np.sqrt(self.c_c * (2 - self.c_c) * self.mu_eff) * y_w
            if h_sigma
            else 0.0
        )

        rank_mu = (y_top * w[:mu, None]).T @ y_top
        stall = 0.0 if h_sigma else self.c_c * (2 - self.c_c)
        self.cov = (
            (1 - self.c_1 - self.c_mu) * self.cov
            + self.c_1 * (np.outer(self.path_c, self.path_c) + stall * self.cov)
            + self.c_mu * rank_mu
        )
        self._invalidate()

        self.sigma = self.sigma * np.exp(
            (self.c_sigma / self.d_sigma) * (norm_ps / self.chi_n - 1)
        )
        if self.sigma < SIGMA_FLOOR:
            raise OptimizerError(
                f"step size collapsed below {SIGMA_FLOOR:g} at generation "
                f"{self.generation + 1} (sigma = {self.sigma:.3e})"
            )
        self.generation += 1
