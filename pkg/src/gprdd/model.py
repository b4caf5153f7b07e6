"""Hyperparameters, priors, the joint Gaussian over (effects, outcomes), and
its analytic conditionals.

The generative structure: a shared level process with kernel ``g_kernel``,
per-group deviation processes sharing ``f_kernel``, group treatment effects
with prior mean ``mu`` and covariance built from ``delta_kernel``, and
heteroscedastic side-specific noise.  Marginalizing the function values gives
a joint Gaussian over (delta, Y) whose blocks are assembled here; the
conditional of delta given Y is available in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from ._backend import same_group_dense
from .data import GroupedDataset, Observation, canonical_order, canonicalize  # noqa: F401  (re-export)
from .kernels import KDELTA_SE, JointComponents, SEParams
from .linalg import (
    BASE_JITTER,
    LOG_2PI,
    MAX_ESCALATIONS,
    _POTRF,
    FactorizationError,
    chol_forward,
    chol_logdet,
    gaussian_logpdf_from_factor,
    jittered_cholesky,
)

__all__ = [
    "Theta",
    "PriorConfig",
    "JointGaussian",
    "DeltaPosterior",
    "assemble_joint",
    "log_marginal",
    "log_prior",
    "half_cauchy_logpdf",
    "delta_conditional",
    "LikelihoodCache",
    "canonicalize",
    "Observation",
    "GroupedDataset",
]

# Coordinate layout of the flattened hyperparameter vector (length 2J + 7):
# mu, sigma_minus_sq by group, sigma_plus_sq by group, then the three kernel
# variances and the three inverse squared lengthscales.
_TAIL_NAMES = ("r_delta_sq", "r_f_sq", "r_g_sq", "inv_lsq_delta", "inv_lsq_f", "inv_lsq_g")


@dataclass
class Theta:
    """The 2J+7 model hyperparameters in natural scale."""

    mu: float
    sigma_minus_sq: np.ndarray
    sigma_plus_sq: np.ndarray
    f_kernel: SEParams
    g_kernel: SEParams
    delta_kernel: SEParams

    def __post_init__(self):
        self.sigma_minus_sq = np.asarray(self.sigma_minus_sq, dtype=float)
        self.sigma_plus_sq = np.asarray(self.sigma_plus_sq, dtype=float)

    @property
    def J(self) -> int:
        return int(self.sigma_minus_sq.shape[0])

    @property
    def dim(self) -> int:
        return 2 * self.J + 7

    def validate(self) -> None:
        if not math.isfinite(self.mu):
            raise ValueError("mu must be finite")
        if self.sigma_plus_sq.shape != self.sigma_minus_sq.shape:
            raise ValueError("noise variance vectors must share a length")
        for name in ("sigma_minus_sq", "sigma_plus_sq"):
            v = getattr(self, name)
            if not np.all(np.isfinite(v)) or np.any(v <= 0.0):
                raise ValueError(f"{name} entries must be strictly positive and finite")
        # SEParams validate themselves on construction.

    def to_vector(self) -> np.ndarray:
        J = self.J
        out = np.empty(2 * J + 7)
        out[0] = self.mu
        out[1 : J + 1] = self.sigma_minus_sq
        out[J + 1 : 2 * J + 1] = self.sigma_plus_sq
        out[2 * J + 1] = self.delta_kernel.variance
        out[2 * J + 2] = self.f_kernel.variance
        out[2 * J + 3] = self.g_kernel.variance
        out[2 * J + 4] = self.delta_kernel.inv_sq_lengthscale
        out[2 * J + 5] = self.f_kernel.inv_sq_lengthscale
        out[2 * J + 6] = self.g_kernel.inv_sq_lengthscale
        return out

    @staticmethod
    def from_vector(vec: np.ndarray, J: int) -> "Theta":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (2 * J + 7,):
            raise ValueError(f"expected a vector of length {2 * J + 7}, got {vec.shape}")
        return Theta(
            mu=float(vec[0]),
            sigma_minus_sq=vec[1 : J + 1].copy(),
            sigma_plus_sq=vec[J + 1 : 2 * J + 1].copy(),
            delta_kernel=SEParams(float(vec[2 * J + 1]), float(vec[2 * J + 4])),
            f_kernel=SEParams(float(vec[2 * J + 2]), float(vec[2 * J + 5])),
            g_kernel=SEParams(float(vec[2 * J + 3]), float(vec[2 * J + 6])),
        )

    @staticmethod
    def coord_names(J: int) -> tuple[str, ...]:
        names = ["mu"]
        names += [f"sigma_minus_sq_{j}" for j in range(1, J + 1)]
        names += [f"sigma_plus_sq_{j}" for j in range(1, J + 1)]
        names += list(_TAIL_NAMES)
        return tuple(names)


@dataclass(frozen=True)
class PriorConfig:
    """Half-Cauchy scale for positive hyperparameters, normal sd for ``mu``."""

    cauchy_scale: float = 5.0
    mu_sd: float = 100.0

    def __post_init__(self):
        for name in ("cauchy_scale", "mu_sd"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise ValueError(f"PriorConfig.{name} must be positive and finite")


@dataclass
class JointGaussian:
    """Mean and covariance blocks of the joint law of (delta, Y)."""

    mu_delta: np.ndarray
    mu_Y: np.ndarray
    Lambda11: np.ndarray
    Lambda12: np.ndarray
    Lambda22: np.ndarray


@dataclass
class DeltaPosterior:
    """Gaussian conditional of the treatment-effect vector given outcomes."""

    mean: np.ndarray
    cov: np.ndarray


def assemble_joint(components: JointComponents, theta: Theta) -> JointGaussian:
    """Joint Gaussian blocks from the structural matrices.

    The treated block of the outcome covariance picks up the effect
    covariance routed through the group indicator; control rows carry no
    effect term, so their cross-covariance columns are zero.
    """
    Kd = components.Kdelta
    J = Kd.shape[0]
    n_plus = components.H.shape[0]
    n = components.Sigma.shape[0]
    n_minus = n - n_plus
    if components.Kg.shape != (n, n) or components.D.shape != (n, n):
        raise ValueError("component dimensions disagree")
    tg = components.H.argmax(axis=1) if n_plus else np.empty(0, dtype=int)

    mu_delta = np.full(J, theta.mu)
    mu_Y = np.concatenate([np.zeros(n_minus), np.full(n_plus, theta.mu)])

    Lambda12 = np.zeros((J, n))
    Lambda22 = components.Kg + components.D
    Lambda22[np.diag_indices_from(Lambda22)] += components.Sigma
    if n_plus:
        Lambda12[:, n_minus:] = Kd[:, tg]
        Lambda22[n_minus:, n_minus:] += Kd[np.ix_(tg, tg)]
    return JointGaussian(mu_delta=mu_delta, mu_Y=mu_Y, Lambda11=Kd.copy(), Lambda12=Lambda12, Lambda22=Lambda22)


def log_marginal(Y: np.ndarray, jg: JointGaussian) -> float:
    """Log density of the outcome vector under its Gaussian marginal."""
    Y = np.asarray(Y, dtype=float)
    if Y.shape != jg.mu_Y.shape:
        raise ValueError("outcome vector length disagrees with the model")
    lower, _ = jittered_cholesky(jg.Lambda22)
    white = chol_forward(lower, Y - jg.mu_Y)
    return gaussian_logpdf_from_factor(white, chol_logdet(lower))


def half_cauchy_logpdf(x: float, scale: float) -> float:
    """Log density of |Cauchy(0, scale)| at x > 0."""
    if x <= 0.0:
        raise ValueError("half-Cauchy support is the positive reals")
    r = x / scale
    return math.log(2.0 / math.pi) - math.log(scale) - math.log1p(r * r)


def log_prior(theta: Theta, pc: PriorConfig) -> float:
    """Independent half-Cauchy terms on the positive coordinates plus a
    diffuse normal on ``mu``."""
    vec = theta.to_vector()
    positives = vec[1:]
    if np.any(positives <= 0.0):
        raise ValueError("positive hyperparameters must be strictly positive")
    r = positives / pc.cauchy_scale
    total = float(
        np.sum(math.log(2.0 / math.pi) - math.log(pc.cauchy_scale) - np.log1p(r * r))
    )
    total += -0.5 * (LOG_2PI + 2.0 * math.log(pc.mu_sd)) - 0.5 * (theta.mu / pc.mu_sd) ** 2
    return total


def _conditional_from_factor(
    lower: np.ndarray,
    resid_white: np.ndarray,
    Lambda12: np.ndarray,
    Lambda11: np.ndarray,
    mu_delta: np.ndarray,
) -> DeltaPosterior:
    # W = L^{-1} Lambda21; conditional cov = Lambda11 - W'W, mean uses the
    # already-whitened residual.
    W = chol_forward(lower, Lambda12.T)
    mean = mu_delta + W.T @ resid_white
    cov = Lambda11 - W.T @ W
    cov = 0.5 * (cov + cov.T)
    return DeltaPosterior(mean=mean, cov=cov)


def delta_conditional(jg: JointGaussian, Y: np.ndarray) -> DeltaPosterior:
    """Closed-form conditional of the effect vector given outcomes."""
    Y = np.asarray(Y, dtype=float)
    if Y.shape != jg.mu_Y.shape:
        raise ValueError("outcome vector length disagrees with the model")
    lower, _ = jittered_cholesky(jg.Lambda22)
    white = chol_forward(lower, Y - jg.mu_Y)
    return _conditional_from_factor(lower, white, jg.Lambda12, jg.Lambda11, jg.mu_delta)


# ---------------------------------------------------------------------------
# Coordinate-sweep likelihood cache
# ---------------------------------------------------------------------------

# Which addend of the outcome covariance a coordinate touches.
KIND_MU = "mu"
KIND_SIGMA = "sigma"
KIND_DELTA_KERNEL = "delta_kernel"
KIND_F_KERNEL = "f_kernel"
KIND_G_KERNEL = "g_kernel"


def coord_kind(index: int, J: int) -> str:
    """Classify a flattened-coordinate index by the matrix addend it affects."""
    if index == 0:
        return KIND_MU
    if 1 <= index <= 2 * J:
        return KIND_SIGMA
    tail = index - (2 * J + 1)
    if tail in (0, 3):
        return KIND_DELTA_KERNEL
    if tail in (1, 4):
        return KIND_F_KERNEL
    if tail in (2, 5):
        return KIND_G_KERNEL
    raise IndexError(f"coordinate index {index} out of range for J={J}")


@dataclass
class _Candidate:
    coord: int
    value: float
    kind: str
    log_marginal: float
    lower: np.ndarray | None = None
    logdet: float = 0.0
    resid_white: np.ndarray | None = None
    Kg: np.ndarray | None = None
    D: np.ndarray | None = None
    Kdelta: np.ndarray | None = None
    HKdHt: np.ndarray | None = None
    Sigma: np.ndarray | None = None
    mu_Y: np.ndarray | None = None


class LikelihoodCache:
    """Outcome-covariance addends for one dataset, updated coordinate-wise.

    The covariance of the outcome vector is the sum of four addends (shared
    level, within-group, noise diagonal, treated effect block).  A coordinate
    proposal rebuilds only the addend it touches, re-sums, and refactorizes;
    a ``mu`` proposal reuses the current factor and only re-whitens the
    residual.  Rejected proposals leave the cache untouched.
    """

    def __init__(self, data: GroupedDataset, theta: Theta, kdelta_mode: str = KDELTA_SE):
        data.validate()
        theta.validate()
        if theta.J != data.J:
            raise ValueError("hyperparameter group count disagrees with the dataset")
        self.data = data
        self.kdelta_mode = kdelta_mode
        self.J = data.J
        self.N = data.N
        self.N_minus = data.N_minus
        self.Y = np.asarray(data.y, dtype=float)
        self._z = np.ascontiguousarray(data.z, dtype=float)
        self._groups = np.ascontiguousarray(data.group_index, dtype=np.int64)
        self._tg = data.treated_group_index
        self.theta_vec = theta.to_vector()
        self._version = 0
        self._delta_cache: tuple[int, DeltaPosterior, np.ndarray] | None = None

        self.Kg = kernels.se_matrix(self._z, self._z, theta.g_kernel)
        self.D = same_group_dense(self._z, self._groups, theta.f_kernel.variance, theta.f_kernel.inv_sq_lengthscale)
        self.Kdelta = kernels.kdelta_matrix(self.J, theta.delta_kernel, kdelta_mode)
        self.HKdHt = self._treated_block(self.Kdelta)
        self.Sigma = kernels.noise_vector(data, theta.sigma_minus_sq, theta.sigma_plus_sq)
        self.mu_Y = self._mean_vector(theta.mu)
        self._refactor()

    # -- internals ----------------------------------------------------------

    def _mean_vector(self, mu: float) -> np.ndarray:
        out = np.zeros(self.N)
        out[self.N_minus :] = mu
        return out

    def _treated_block(self, Kdelta: np.ndarray) -> np.ndarray | None:
        if not self._tg.shape[0]:
            return None
        return Kdelta[np.ix_(self._tg, self._tg)]

    def _factorize(self, Kg, D, HKdHt, Sigma) -> tuple[np.ndarray, float, float]:
        """Sum the addends and factorize under the jitter-escalation policy.

        The sum is written through the C-ordered transposed view of a
        Fortran-ordered buffer so LAPACK can factor it in place with no
        layout copy; the buffer is rebuilt on (rare) jitter escalation.
        """
        n = self.N
        diag = Kg.diagonal() + D.diagonal() + Sigma
        if HKdHt is not None:
            diag = diag.copy()
            diag[self.N_minus :] += HKdHt.diagonal()
        scale = float(diag.max())
        if not np.isfinite(scale):
            raise FactorizationError("non-finite covariance diagonal")
        if scale <= 0.0:
            scale = 1.0
        jitter = BASE_JITTER * scale
        for _ in range(MAX_ESCALATIONS + 1):
            buf = np.empty((n, n), order="F")
            m = buf.T
            np.add(Kg, D, out=m)
            m.flat[:: n + 1] += Sigma + jitter
            if HKdHt is not None:
                m[self.N_minus :, self.N_minus :] += HKdHt
            lower, info = _POTRF(buf, lower=True, overwrite_a=True, clean=False)
            if info == 0:
                return lower, chol_logdet(lower), jitter
            jitter *= 10.0
        raise FactorizationError(
            f"Cholesky failed after escalating jitter to {jitter / 10.0:.3e} (n={n})"
        )

    def _refactor(self) -> None:
        self.lower, self.logdet, self.jitter = self._factorize(self.Kg, self.D, self.HKdHt, self.Sigma)
        self.resid_white = chol_forward(self.lower, self.Y - self.mu_Y)
        self.log_marg = gaussian_logpdf_from_factor(self.resid_white, self.logdet)

    def _theta_with(self, coord: int, value: float) -> Theta:
        vec = self.theta_vec.copy()
        vec[coord] = value
        return Theta.from_vector(vec, self.J)

    # -- public surface ------------------------------------------------------

    @property
    def theta(self) -> Theta:
        return Theta.from_vector(self.theta_vec, self.J)

    def log_marginal(self) -> float:
        return self.log_marg

    def evaluate(self, coord: int, value: float) -> _Candidate:
        """Log marginal at a single-coordinate change; raises
        :class:`FactorizationError` when the candidate cannot be factorized."""
        kind = coord_kind(coord, self.J)
        if kind == KIND_MU:
            mu_Y = self._mean_vector(value)
            white = chol_forward(self.lower, self.Y - mu_Y)
            lm = gaussian_logpdf_from_factor(white, self.logdet)
            return _Candidate(coord, value, kind, lm, resid_white=white, mu_Y=mu_Y)

        cand_theta = self._theta_with(coord, value)
        Kg, D, Kdelta, HKdHt, Sigma = self.Kg, self.D, self.Kdelta, self.HKdHt, self.Sigma
        if kind == KIND_SIGMA:
            Sigma = kernels.noise_vector(self.data, cand_theta.sigma_minus_sq, cand_theta.sigma_plus_sq)
        elif kind == KIND_DELTA_KERNEL:
            Kdelta = kernels.kdelta_matrix(self.J, cand_theta.delta_kernel, self.kdelta_mode)
            HKdHt = self._treated_block(Kdelta)
        elif kind == KIND_F_KERNEL:
            D = same_group_dense(self._z, self._groups, cand_theta.f_kernel.variance, cand_theta.f_kernel.inv_sq_lengthscale)
        elif kind == KIND_G_KERNEL:
            Kg = kernels.se_matrix(self._z, self._z, cand_theta.g_kernel)

        lower, logdet, _ = self._factorize(Kg, D, HKdHt, Sigma)
        white = chol_forward(lower, self.Y - self.mu_Y)
        lm = gaussian_logpdf_from_factor(white, logdet)
        return _Candidate(
            coord, value, kind, lm, lower=lower, logdet=logdet, resid_white=white,
            Kg=Kg, D=D, Kdelta=Kdelta, HKdHt=HKdHt, Sigma=Sigma,
        )

    def commit(self, cand: _Candidate) -> None:
        """Adopt an accepted candidate."""
        self.theta_vec[cand.coord] = cand.value
        self.log_marg = cand.log_marginal
        self.resid_white = cand.resid_white
        if cand.kind == KIND_MU:
            self.mu_Y = cand.mu_Y
        else:
            self.lower = cand.lower
            self.logdet = cand.logdet
            self.Kg, self.D, self.Kdelta, self.Sigma = cand.Kg, cand.D, cand.Kdelta, cand.Sigma
            self.HKdHt = cand.HKdHt
        self._version += 1

    def delta_posterior(self) -> tuple[DeltaPosterior, np.ndarray]:
        """Current conditional of the effect vector plus a Cholesky factor of
        its covariance (memoized until the next accepted change)."""
        if self._delta_cache is not None and self._delta_cache[0] == self._version:
            return self._delta_cache[1], self._delta_cache[2]
        Lambda12 = np.zeros((self.J, self.N))
        if self._tg.shape[0]:
            Lambda12[:, self.N_minus :] = self.Kdelta[:, self._tg]
        mu = float(self.theta_vec[0])
        dp = _conditional_from_factor(self.lower, self.resid_white, Lambda12, self.Kdelta, np.full(self.J, mu))
        cov_lower, _ = jittered_cholesky(dp.cov)
        self._delta_cache = (self._version, dp, cov_lower)
        return dp, cov_lower
