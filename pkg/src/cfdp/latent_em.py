"""Scalar Gaussian latent-variable model fitted by EM.

Each observed feature is modelled as

    x_j = intercept_j + offset_{j,a} + loading_j * u + noise_j,
    u ~ Normal(0, 1),  noise_j ~ Normal(0, noise_var_j),

so the posterior of ``u`` given ``(a, x)`` is Gaussian and available in
closed form. EM alternates that posterior with per-feature least squares.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .scm import Dataset, group_index

LOG_2PI = math.log(2 * math.pi)
_VAR_FLOOR = 1e-10


class SingularSystemError(np.linalg.LinAlgError):
    pass


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class LatentModelParams:
    """Generative parameters; ``offsets[:, 0]`` belongs to the reference group and is 0."""

    feature_names: tuple[str, ...]
    levels: tuple[str, ...]
    intercepts: np.ndarray
    offsets: np.ndarray
    loadings: np.ndarray
    noise_var: np.ndarray

    def __post_init__(self):
        p, g = len(self.feature_names), len(self.levels)
        for name, shape in (("intercepts", (p,)), ("offsets", (p, g)), ("loadings", (p,)), ("noise_var", (p,))):
            arr = np.array(getattr(self, name), dtype=float).reshape(shape)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "levels", tuple(self.levels))
        if np.any(self.noise_var <= 0):
            raise ValueError("noise variances must be positive")

    def means(self, gidx: np.ndarray) -> np.ndarray:
        """Per-row conditional mean of the features given the group (u integrated out)."""
        return self.intercepts + self.offsets[:, gidx].T

    @property
    def posterior_variance(self) -> float:
        return 1.0 / (1.0 + float(np.sum(self.loadings**2 / self.noise_var)))

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "levels": list(self.levels),
            "intercepts": self.intercepts.tolist(),
            "offsets": self.offsets.tolist(),
            "loadings": self.loadings.tolist(),
            "noise_var": self.noise_var.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LatentModelParams":
        return cls(**{k: d[k] for k in ("feature_names", "levels", "intercepts", "offsets", "loadings", "noise_var")})


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise ValueError(f"non-finite values in {what}")


def posterior_latent(params: LatentModelParams, groups, x) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance of ``u`` for each row of ``(groups, x)``.

    Returns arrays ``(m, v)``. ``v`` is the same for every row because all rows
    share the same feature set.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    _check_finite(x, "features")
    gidx = group_index(np.atleast_1d(np.asarray(groups, dtype=object)), params.levels)
    v = params.posterior_variance
    resid = x - params.means(gidx)
    m = v * (resid @ (params.loadings / params.noise_var))
    return m, np.full(len(m), v)


def loglik(params: LatentModelParams, data: Dataset) -> float:
    """Observed-data log-likelihood with ``u`` integrated out."""
    x = data.features
    _check_finite(x, "features")
    resid = x - params.means(group_index(data.groups, params.levels))
    cov = np.outer(params.loadings, params.loadings) + np.diag(params.noise_var)
    chol = np.linalg.cholesky(cov)
    z = np.linalg.solve(chol, resid.T)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    p = x.shape[1]
    return float(-0.5 * (len(x) * (p * LOG_2PI + logdet) + np.sum(z * z)))


def _design(gidx: np.ndarray, n_levels: int, m: np.ndarray) -> np.ndarray:
    onehot = np.zeros((len(gidx), n_levels - 1))
    rows = np.nonzero(gidx > 0)[0]
    onehot[rows, gidx[rows] - 1] = 1.0
    return np.column_stack([np.ones(len(gidx)), onehot, m])


def initial_params(data: Dataset) -> LatentModelParams:
    """Deterministic start: group means, first principal direction, residual variances."""
    x = data.features
    levels = data.levels
    gidx = group_index(data.groups, levels)
    counts = np.bincount(gidx, minlength=len(levels))
    sums = np.zeros((len(levels), x.shape[1]))
    np.add.at(sums, gidx, x)
    means = sums / counts[:, None]
    centred = x - means[gidx]
    cov = centred.T @ centred / len(x)
    evals, evecs = np.linalg.eigh(cov)
    w = evecs[:, -1]
    if w[0] < 0:
        w = -w
    # probabilistic-PCA scale; a zero loading would be a fixed point of EM
    spread = evals[-1] - evals[:-1].mean() if len(evals) > 1 else evals[-1] / 2
    loadings = w * math.sqrt(max(spread, 1e-3 * evals[-1], _VAR_FLOOR))
    resid_var = np.diag(cov) - loadings**2
    noise_var = np.maximum(resid_var, np.maximum(0.1 * np.diag(cov), _VAR_FLOOR))
    return LatentModelParams(
        feature_names=data.feature_names,
        levels=levels,
        intercepts=means[0],
        offsets=(means - means[0]).T,
        loadings=loadings,
        noise_var=noise_var,
    )


def em_step(params: LatentModelParams, data: Dataset) -> LatentModelParams:
    """One E-step plus M-step."""
    x = data.features
    n, p = x.shape
    g = len(params.levels)
    gidx = group_index(data.groups, params.levels)
    m, v = posterior_latent(params, data.groups, x)
    design = _design(gidx, g, m)
    gram = design.T @ design
    gram[-1, -1] += n * v[0]
    rhs = design.T @ x
    try:
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond) or cond > 1e14:
            raise np.linalg.LinAlgError
        theta = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        raise SingularSystemError(
            f"singular M-step system for features {list(params.feature_names)}"
            " (is every group populated and the latent estimate non-constant?)"
        ) from None
    fitted = design @ theta
    loadings = theta[-1]
    var_floor = np.maximum(_VAR_FLOOR * x.var(axis=0), _VAR_FLOOR)
    noise_var = np.maximum(np.mean((x - fitted) ** 2, axis=0) + loadings**2 * v[0], var_floor)
    offsets = np.zeros((p, g))
    offsets[:, 1:] = theta[1:-1].T
    return LatentModelParams(params.feature_names, params.levels, theta[0], offsets, loadings, noise_var)


@dataclass
class EMResult:
    params: LatentModelParams
    history: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def n_iter(self) -> int:
        return len(self.history) - 1

    @property
    def final_delta(self) -> float:
        return self.history[-1] - self.history[-2] if len(self.history) > 1 else math.inf


def _canonical_sign(params: LatentModelParams) -> LatentModelParams:
    if params.loadings[0] >= 0:
        return params
    return LatentModelParams(
        params.feature_names, params.levels, params.intercepts, params.offsets, -params.loadings, params.noise_var
    )


def run_em(
    data: Dataset,
    max_iter: int = 500,
    tol: float = 1e-8,
    init: LatentModelParams | None = None,
) -> EMResult:
    """Iterate EM until the log-likelihood gain drops below ``tol``.

    The returned loadings satisfy ``loadings[0] >= 0``; flipping the sign of
    every loading (and hence every posterior mean) leaves the likelihood
    unchanged.
    """
    if data.features.shape[1] < 1:
        raise ValueError("latent model needs at least one feature column")
    _check_finite(data.features, "features")
    counts = np.bincount(group_index(data.groups, data.levels))
    if np.any(counts < 2):
        raise ValueError("every group needs at least 2 rows")
    params = init if init is not None else initial_params(data)
    result = EMResult(params, [loglik(params, data)])
    for _ in range(max_iter):
        params = em_step(params, data)
        result.history.append(loglik(params, data))
        result.params = params
        if result.history[-1] - result.history[-2] < tol:
            result.converged = True
            break
    if not result.converged:
        warnings.warn(
            f"EM did not converge in {max_iter} iterations (last gain {result.final_delta:.3g})",
            ConvergenceWarning,
            stacklevel=2,
        )
    result.params = _canonical_sign(result.params)
    return result


def fit_em(data: Dataset, max_iter: int = 500, tol: float = 1e-8) -> LatentModelParams:
    return run_em(data, max_iter=max_iter, tol=tol).params
