"""Synthetic data generators and the replication study runner.

Three benchmark generating processes are provided (flat truth with similar
group means; random piecewise cubics with gamma effects and a skewed running
variable; rough random splines with correlated or two-point effects and
non-Gaussian noise), plus a generator that samples from the fitted model's
own assumptions for calibration checks.

Every generator fills ``Y = mean_j(Z) + treated * delta_j + noise`` exactly
and returns the realized pieces for audit.  Replicate ``r`` of a study uses
seed ``base_seed + r``: the data stream is seeded with ``(base_seed + r, 1)``
and the sampler with ``base_seed + r``, so the two never share a stream.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from . import kernels
from ._backend import same_group_dense
from .data import GroupedDataset, canonical_order
from .inference import PosteriorSummary, mahalanobis_sq, summarize
from .kernels import KDELTA_SE
from .linalg import FactorizationError, jittered_cholesky
from .model import Theta
from .sampler import SamplerConfig, run_chain
from .windowing import WindowPolicy, apply_cut

__all__ = [
    "DGPSpec",
    "TruthRecord",
    "MetricsRow",
    "StudyReport",
    "DGP3_KNOTS",
    "gen_dgp1",
    "gen_dgp2",
    "gen_dgp3",
    "gen_well_specified",
    "generate",
    "evaluate_metrics",
    "run_study",
]

DGP_KINDS = ("dgp1", "dgp2", "dgp3")
DELTA_MODES = ("I", "II")
ERROR_MODES = ("A", "B")

DGP3_KNOTS = np.linspace(-0.9, 0.9, 19)
DGP3_COEF_SD = 10.0
DGP1_NOISE_SD = 0.1

METRIC_FIELDS = ("rmse", "mae", "abs_bias", "coverage", "avg_length", "multi_cover", "vol_root")


@dataclass(frozen=True)
class DGPSpec:
    """Which generating process to run and at what size."""

    kind: str
    J: int
    n_j: int
    delta_mode: str | None = None
    error_mode: str | None = None

    def __post_init__(self):
        if self.kind not in DGP_KINDS:
            raise ValueError(f"kind must be one of {DGP_KINDS}")
        if self.J < 1 or self.n_j < 1:
            raise ValueError("J and n_j must be at least 1")
        if self.kind == "dgp3":
            if (self.delta_mode or "I") not in DELTA_MODES:
                raise ValueError(f"delta_mode must be one of {DELTA_MODES}")
            if (self.error_mode or "A") not in ERROR_MODES:
                raise ValueError(f"error_mode must be one of {ERROR_MODES}")
        elif self.delta_mode is not None or self.error_mode is not None:
            raise ValueError("delta_mode / error_mode only apply to dgp3")

    @staticmethod
    def default(kind: str, **overrides) -> "DGPSpec":
        base = {
            "dgp1": dict(J=10, n_j=100),
            "dgp2": dict(J=25, n_j=100),
            "dgp3": dict(J=10, n_j=100, delta_mode="I", error_mode="A"),
        }[kind]
        base.update(overrides)
        return DGPSpec(kind=kind, **base)


@dataclass
class TruthRecord:
    """Realized generating quantities for one dataset, canonical order."""

    kind: str
    delta_true: np.ndarray
    f_canonical: np.ndarray
    noise_canonical: np.ndarray
    sigma_sq: np.ndarray
    params: dict = field(default_factory=dict)

    def mean_value(self, j: int, z) -> np.ndarray:
        """Group-j conditional mean function at z (j is 1-based).

        Unavailable for model-drawn data, where the mean is a sampled path
        known only at the observed points.
        """
        z = np.asarray(z, dtype=float)
        if self.kind == "dgp1":
            return _dgp1_mean(j, z)
        if self.kind == "dgp2":
            a = self.params["a"][j - 1]
            b = self.params["b"][j - 1]
            return _dgp2_mean(a, b, z)
        if self.kind == "dgp3":
            coeffs = self.params["poly"][j - 1]
            c = self.params["spline"][j - 1]
            return _dgp3_mean(coeffs, c, self.params["knots"], z)
        raise ValueError(f"no functional mean is recorded for kind {self.kind!r}")


def _dgp1_mean(j: int, z: np.ndarray) -> np.ndarray:
    return -0.555 - 0.0553 * j + 0.581 * z + 0.0060 * j * z - 0.058 * z * z + 0.01074 * j * j


def _dgp2_mean(a: np.ndarray, b: np.ndarray, z: np.ndarray) -> np.ndarray:
    below = a[0] * z + a[1] * z**2 + a[2] * z**3
    above = b[0] * z + b[1] * z**2 + b[2] * z**3
    return np.where(z < 0.0, below, above)


def _dgp3_mean(coeffs: np.ndarray, c: np.ndarray, knots: np.ndarray, z: np.ndarray) -> np.ndarray:
    out = coeffs[0] + coeffs[1] * z + coeffs[2] * z**2 + coeffs[3] * z**3
    hinge = np.maximum(z[..., None] - knots, 0.0)
    return out + hinge**3 @ c


def _assemble(
    y: np.ndarray,
    z: np.ndarray,
    groups: np.ndarray,
    f_vals: np.ndarray,
    noise: np.ndarray,
    delta_true: np.ndarray,
    sigma_sq: np.ndarray,
    kind: str,
    params: dict,
) -> tuple[GroupedDataset, TruthRecord]:
    treated = z >= 0.0
    order = canonical_order(treated, groups)
    gi = groups[order]
    tr = treated[order]
    J = delta_true.shape[0]
    ds = GroupedDataset(
        y=y[order],
        z=z[order],
        treated=tr,
        group_index=gi,
        n_minus=np.bincount(gi[~tr], minlength=J),
        n_plus=np.bincount(gi[tr], minlength=J),
        labels=tuple(range(1, J + 1)),
    )
    ds.validate()
    truth = TruthRecord(
        kind=kind,
        delta_true=delta_true,
        f_canonical=f_vals[order],
        noise_canonical=noise[order],
        sigma_sq=sigma_sq,
        params=params,
    )
    return ds, truth


def _outcome(f_vals, treated, delta_per_row, noise):
    # Fixed association order so the realized pieces reconstruct Y bitwise.
    return (f_vals + np.where(treated, delta_per_row, 0.0)) + noise


def gen_dgp1(J: int = 10, n_j: int = 100, rng: np.random.Generator | None = None) -> tuple[GroupedDataset, TruthRecord]:
    """Flat truth: zero effects, near-parallel quadratic group means,
    N(0, 0.1^2) noise, uniform running variable."""
    rng = np.random.default_rng() if rng is None else rng
    z_parts, eps_parts = [], []
    for _ in range(J):
        z_parts.append(rng.uniform(-1.0, 1.0, n_j))
        eps_parts.append(rng.normal(0.0, DGP1_NOISE_SD, n_j))
    z = np.concatenate(z_parts)
    noise = np.concatenate(eps_parts)
    groups = np.repeat(np.arange(J), n_j)
    f_vals = np.concatenate([_dgp1_mean(j + 1, z_parts[j]) for j in range(J)])
    delta = np.zeros(J)
    y = _outcome(f_vals, z >= 0.0, delta[groups], noise)
    sigma_sq = np.full(J, DGP1_NOISE_SD**2)
    return _assemble(y, z, groups, f_vals, noise, delta, sigma_sq, "dgp1", {})


def gen_dgp2(J: int = 25, n_j: int = 100, rng: np.random.Generator | None = None) -> tuple[GroupedDataset, TruthRecord]:
    """Random piecewise cubics (zero intercept on both sides), centered gamma
    effects, right-skewed running variable 2 Beta(2, 4) - 1."""
    rng = np.random.default_rng() if rng is None else rng
    a = np.empty((J, 3))
    b = np.empty((J, 3))
    sigma_sq = np.empty(J)
    delta = np.empty(J)
    for j in range(J):
        a[j, 0] = rng.uniform(0.4, 1.4)
        b[j, 0] = rng.uniform(0.4, 1.4)
        a[j, 1] = rng.uniform(3.0, 7.0)
        a[j, 2] = rng.uniform(9.0, 11.0)
        b[j, 1] = rng.uniform(5.0, 9.0)
        b[j, 2] = rng.uniform(3.0, 5.0)
        sigma_sq[j] = rng.uniform(0.5, 1.2)
        delta[j] = rng.gamma(3.0, 1.0) - 3.0

    z_parts, eps_parts, f_parts = [], [], []
    for j in range(J):
        zj = 2.0 * rng.beta(2.0, 4.0, n_j) - 1.0
        z_parts.append(zj)
        eps_parts.append(rng.normal(0.0, math.sqrt(sigma_sq[j]), n_j))
        f_parts.append(_dgp2_mean(a[j], b[j], zj))
    z = np.concatenate(z_parts)
    noise = np.concatenate(eps_parts)
    f_vals = np.concatenate(f_parts)
    groups = np.repeat(np.arange(J), n_j)
    y = _outcome(f_vals, z >= 0.0, delta[groups], noise)
    return _assemble(y, z, groups, f_vals, noise, delta, sigma_sq, "dgp2", {"a": a, "b": b})


def ar1_correlation(J: int, rho: float = 0.8) -> np.ndarray:
    """Correlation matrix S[i, j] = rho^|i-j|."""
    idx = np.arange(J)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def gen_dgp3(
    J: int = 10,
    n_j: int = 100,
    delta_mode: str = "I",
    error_mode: str = "A",
    rng: np.random.Generator | None = None,
) -> tuple[GroupedDataset, TruthRecord]:
    """Rough random cubic splines with either serially correlated Gaussian
    effects (mode I) or a random two-point effect (mode II), and either
    standardized-binomial (A) or centered-gamma (B) noise shapes."""
    if delta_mode not in DELTA_MODES:
        raise ValueError(f"delta_mode must be one of {DELTA_MODES}")
    if error_mode not in ERROR_MODES:
        raise ValueError(f"error_mode must be one of {ERROR_MODES}")
    rng = np.random.default_rng() if rng is None else rng

    if delta_mode == "I":
        S = ar1_correlation(J, 0.8)
        delta = np.linalg.cholesky(S) @ rng.standard_normal(J)
        params_delta = {"rho": 0.8}
    else:
        tau = rng.uniform(-3.0, 3.0, 2)
        picks = rng.integers(0, 2, J)
        delta = tau[picks]
        params_delta = {"tau": tau}

    poly = np.empty((J, 4))
    spline = np.empty((J, DGP3_KNOTS.shape[0]))
    sigma_sq = np.empty(J)
    for j in range(J):
        poly[j] = rng.normal(0.0, DGP3_COEF_SD, 4)
        spline[j] = rng.normal(0.0, DGP3_COEF_SD, DGP3_KNOTS.shape[0])
        sigma_sq[j] = rng.uniform(0.25, 0.5)

    z_parts, eps_parts, f_parts = [], [], []
    for j in range(J):
        zj = rng.uniform(-1.0, 1.0, n_j)
        if error_mode == "A":
            eta = (rng.binomial(5, 0.5, n_j) - 2.5) / 1.25
        else:
            eta = rng.gamma(4.0, 0.5, n_j) - 2.0
        z_parts.append(zj)
        eps_parts.append(math.sqrt(sigma_sq[j]) * eta)
        f_parts.append(_dgp3_mean(poly[j], spline[j], DGP3_KNOTS, zj))
    z = np.concatenate(z_parts)
    noise = np.concatenate(eps_parts)
    f_vals = np.concatenate(f_parts)
    groups = np.repeat(np.arange(J), n_j)
    y = _outcome(f_vals, z >= 0.0, delta[groups], noise)
    params = {"poly": poly, "spline": spline, "knots": DGP3_KNOTS, **params_delta}
    return _assemble(y, z, groups, f_vals, noise, delta, sigma_sq, "dgp3", params)


def gen_well_specified(
    J: int,
    n_j: int,
    theta: Theta,
    rng: np.random.Generator | None = None,
    delta: np.ndarray | None = None,
    kdelta_mode: str = KDELTA_SE,
) -> tuple[GroupedDataset, TruthRecord]:
    """Data drawn from the fitted model's own assumptions at hyperparameters
    ``theta``; pass ``delta`` to hold the effect vector fixed across
    replicates."""
    rng = np.random.default_rng() if rng is None else rng
    theta.validate()
    if theta.J != J:
        raise ValueError("theta group count disagrees with J")

    z = np.concatenate([rng.uniform(-1.0, 1.0, n_j) for _ in range(J)])
    groups = np.repeat(np.arange(J), n_j)
    treated = z >= 0.0
    order = canonical_order(treated, groups)
    z_c, g_c, t_c = z[order], groups[order], treated[order]
    n = z_c.shape[0]

    Kg = kernels.se_matrix(z_c, z_c, theta.g_kernel)
    L_g, _ = jittered_cholesky(Kg)
    shared = L_g @ rng.standard_normal(n)
    D = same_group_dense(z_c, np.ascontiguousarray(g_c), theta.f_kernel.variance, theta.f_kernel.inv_sq_lengthscale)
    L_d, _ = jittered_cholesky(D)
    f_vals = shared + L_d @ rng.standard_normal(n)

    if delta is None:
        Kd = kernels.kdelta_matrix(J, theta.delta_kernel, kdelta_mode)
        L_kd, _ = jittered_cholesky(Kd)
        delta = theta.mu + L_kd @ rng.standard_normal(J)
    else:
        delta = np.asarray(delta, dtype=float)

    sig_row = np.where(t_c, theta.sigma_plus_sq[g_c], theta.sigma_minus_sq[g_c])
    noise = np.sqrt(sig_row) * rng.standard_normal(n)
    y = _outcome(f_vals, t_c, delta[g_c], noise)

    n_minus = np.bincount(g_c[~t_c], minlength=J)
    n_plus = np.bincount(g_c[t_c], minlength=J)
    ds = GroupedDataset(
        y=y, z=z_c, treated=t_c, group_index=g_c,
        n_minus=n_minus, n_plus=n_plus, labels=tuple(range(1, J + 1)),
    )
    ds.validate()
    truth = TruthRecord(
        kind="well_specified",
        delta_true=delta,
        f_canonical=f_vals,
        noise_canonical=noise,
        sigma_sq=0.5 * (theta.sigma_plus_sq + theta.sigma_minus_sq),
        params={"theta": theta},
    )
    return ds, truth


def generate(spec: DGPSpec, rng: np.random.Generator) -> tuple[GroupedDataset, TruthRecord]:
    """Dispatch a :class:`DGPSpec` to its generator."""
    if spec.kind == "dgp1":
        return gen_dgp1(spec.J, spec.n_j, rng)
    if spec.kind == "dgp2":
        return gen_dgp2(spec.J, spec.n_j, rng)
    return gen_dgp3(spec.J, spec.n_j, spec.delta_mode or "I", spec.error_mode or "A", rng)


# ---------------------------------------------------------------------------
# Metrics and the replication runner
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsRow:
    """Point-estimation and interval metrics for one fitted replicate."""

    rmse: float
    mae: float
    abs_bias: float
    coverage: float
    avg_length: float
    multi_cover: float
    vol_root: float

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_FIELDS}


def evaluate_metrics(summary: PosteriorSummary, delta_true: np.ndarray) -> MetricsRow:
    """Errors of the posterior means, marginal-interval coverage/length, and
    whether the truth vector falls inside the simultaneous region."""
    delta_true = np.asarray(delta_true, dtype=float)
    if delta_true.shape != summary.delta_mean.shape:
        raise ValueError("truth vector length disagrees with the summary")
    err = summary.delta_mean - delta_true
    J = err.shape[0]
    lo = summary.marginal_intervals[:, 0]
    hi = summary.marginal_intervals[:, 1]
    stat = float(mahalanobis_sq(delta_true[None, :], summary.delta_mean, summary.sigma_hat)[0])
    return MetricsRow(
        rmse=float(np.sqrt(np.mean(err**2))),
        mae=float(np.mean(np.abs(err))),
        abs_bias=float(abs(np.mean(err))),
        coverage=float(np.mean((delta_true >= lo) & (delta_true <= hi))),
        avg_length=float(np.mean(hi - lo)),
        multi_cover=1.0 if stat < summary.r_alpha else 0.0,
        vol_root=float(summary.volume ** (1.0 / J)),
    )


@dataclass
class StudyReport:
    """Per-replicate metric rows plus per-method means across successes."""

    spec: DGPSpec
    base_seed: int
    alpha: float
    replications: int
    methods: tuple[str, ...]
    rows: list  # (replicate, method, MetricsRow)
    failures: list  # (replicate, message)
    means: dict  # method -> MetricsRow

    @property
    def n_failed(self) -> int:
        return len(self.failures)


def _mean_metrics(rows: list[MetricsRow]) -> MetricsRow:
    return MetricsRow(**{name: float(np.mean([getattr(r, name) for r in rows])) for name in METRIC_FIELDS})


def run_replicate(
    spec: DGPSpec,
    replicate: int,
    sampler_cfg: SamplerConfig,
    cut: WindowPolicy | None,
    base_seed: int,
    alpha: float,
) -> tuple[int, dict | None, str | None]:
    """Fit one replicate; returns (replicate, {method: MetricsRow}, error).

    BLAS pools are pinned to one thread for the duration: the factorizations
    here are too small to gain from threading, and pinning keeps results
    identical whatever the worker count.
    """
    seed = base_seed + replicate
    data_rng = np.random.default_rng((seed, 1))
    try:
        with threadpool_limits(limits=1):
            data, truth = generate(spec, data_rng)
            fits = {"full": data}
            if cut is not None:
                fits["windowed"] = apply_cut(data, cut)
            out = {}
            for method, ds in fits.items():
                chain = run_chain(ds, replace(sampler_cfg, seed=seed))
                summary = summarize(chain, alpha)
                out[method] = evaluate_metrics(summary, truth.delta_true)
        return replicate, out, None
    except (ValueError, FactorizationError, np.linalg.LinAlgError) as exc:
        return replicate, None, f"{type(exc).__name__}: {exc}"


def _replicate_worker(args):
    return run_replicate(*args)


def run_study(
    spec: DGPSpec,
    replications: int,
    sampler_cfg: SamplerConfig,
    cut: WindowPolicy | None = None,
    base_seed: int = 0,
    alpha: float = 0.05,
    workers: int = 1,
    progress: Callable[[int, int], None] | None = None,
) -> StudyReport:
    """Run ``replications`` independent generate-fit-summarize replicates.

    Replicates are independent (seed ``base_seed + r``) so the report is
    identical whether they execute sequentially or across processes.  Failed
    replicates are excluded from the means and reported with a count.
    """
    if replications < 1:
        raise ValueError("replications must be at least 1")
    methods = ("full", "windowed") if cut is not None else ("full",)
    jobs = [(spec, r, sampler_cfg, cut, base_seed, alpha) for r in range(replications)]

    results: list[tuple[int, dict | None, str | None]] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, res in enumerate(pool.map(_replicate_worker, jobs)):
                results.append(res)
                if progress is not None:
                    progress(i + 1, replications)
    else:
        for i, job in enumerate(jobs):
            results.append(run_replicate(*job))
            if progress is not None:
                progress(i + 1, replications)

    results.sort(key=lambda item: item[0])
    rows, failures = [], []
    for replicate, metrics, err in results:
        if err is not None:
            failures.append((replicate, err))
            continue
        for method in methods:
            rows.append((replicate, method, metrics[method]))
    means = {
        method: _mean_metrics([m for _, meth, m in rows if meth == method])
        for method in methods
        if any(meth == method for _, meth, _ in rows)
    }
    return StudyReport(
        spec=spec,
        base_seed=base_seed,
        alpha=alpha,
        replications=replications,
        methods=methods,
        rows=rows,
        failures=failures,
        means=means,
    )
