"""Incremental mixture importance sampling and cross-area reweighting.

One area's posterior is sampled by starting from the prior, repeatedly
planting a Gaussian proposal at the current highest-weight point, and
reweighting against the growing defensive mixture.  Joint mixture-model
posteriors over several areas are then obtained without refitting: candidate
joints are assembled from the per-area samples and reweighted by the
mixture/independent prior density ratio.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .model import N_PARAMS, PARAM_NAMES, Theta
from .priors import Hyper, prior_ratio_log_batch


@dataclass(frozen=True)
class ImisConfig:
    """Sampler sizes and stopping thresholds."""

    n_initial: int = 10000
    n_per_iter: int = 1000
    n_resample: int = 1000
    max_iter: int = 100
    weight_floor: float = 1e-6
    unique_target: float = 1.0 - math.exp(-1.0)

    def __post_init__(self):
        for name in ("n_initial", "n_per_iter", "n_resample", "max_iter"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not (0.0 < self.weight_floor < 1.0):
            raise ValueError("weight_floor must lie in (0, 1)")
        if not (0.0 < self.unique_target <= 1.0):
            raise ValueError("unique_target must lie in (0, 1]")


@dataclass
class WeightedSamples:
    """Stored posterior draws from one area's independent fit.

    thetas is (n, d); weight is normalized to sum to 1.  log_target and
    log_sampler keep the densities that produced the weights so downstream
    reweighting stays self-contained.
    """

    thetas: np.ndarray
    log_target: np.ndarray
    log_sampler: np.ndarray
    weight: np.ndarray
    area_id: str = ""

    def __post_init__(self):
        self.thetas = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        self.log_target = np.asarray(self.log_target, dtype=float)
        self.log_sampler = np.asarray(self.log_sampler, dtype=float)
        self.weight = np.asarray(self.weight, dtype=float)
        n = self.thetas.shape[0]
        for name in ("log_target", "log_sampler", "weight"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length mismatch")
        if np.any(self.weight < 0):
            raise ValueError("weights must be >= 0")
        s = float(self.weight.sum())
        if not math.isclose(s, 1.0, rel_tol=1e-9):
            raise ValueError("weights must sum to 1")

    def __len__(self) -> int:
        return self.thetas.shape[0]

    def theta_list(self) -> list[Theta]:
        return [Theta.from_array(row) for row in self.thetas]

    def weighted_mean(self) -> np.ndarray:
        return self.weight @ self.thetas

    def to_csv(self) -> str:
        if self.thetas.shape[1] != N_PARAMS:
            raise ValueError("CSV serialization expects 8-parameter draws")
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(list(PARAM_NAMES) + ["log_target", "log_sampler",
                                             "weight"])
        for i in range(len(self)):
            writer.writerow([repr(float(v)) for v in self.thetas[i]]
                            + [repr(float(self.log_target[i])),
                               repr(float(self.log_sampler[i])),
                               repr(float(self.weight[i]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, area_id: str = "") -> "WeightedSamples":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        expected = list(PARAM_NAMES) + ["log_target", "log_sampler", "weight"]
        if header != expected:
            raise ValueError(f"unexpected sample CSV header: {header}")
        rows = [[float(v) for v in row] for row in reader if row]
        arr = np.asarray(rows, dtype=float)
        return cls(thetas=arr[:, :N_PARAMS],
                   log_target=arr[:, N_PARAMS],
                   log_sampler=arr[:, N_PARAMS + 1],
                   weight=arr[:, N_PARAMS + 2],
                   area_id=area_id)


@dataclass
class JointPosterior:
    """Resampled joint draws across K areas."""

    joints: np.ndarray           # (m, K, d)
    weights: np.ndarray          # (m,), normalized
    unique_count: int
    area_ids: tuple[str, ...] = ()

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.joints.ndim != 3:
            raise ValueError("joints must be (m, K, d)")
        if len(self.weights) != self.joints.shape[0]:
            raise ValueError("weights length mismatch")
        if not math.isclose(float(self.weights.sum()), 1.0, rel_tol=1e-9):
            raise ValueError("weights must sum to 1")

    @property
    def n_resample(self) -> int:
        return self.joints.shape[0]

    @property
    def n_areas(self) -> int:
        return self.joints.shape[1]


def _expected_unique_fraction(weights: np.ndarray, m: int) -> float:
    """Expected fraction of distinct draws in a multinomial resample of m."""
    with np.errstate(divide="ignore"):
        survive = 1.0 - np.exp(m * np.log1p(-np.minimum(weights, 1.0)))
    return float(survive.sum()) / m


def _normalized_weights(log_target: np.ndarray,
                        log_sampler: np.ndarray) -> np.ndarray:
    log_w = log_target - log_sampler
    finite = np.isfinite(log_w)
    if not finite.any():
        raise RuntimeError("posterior has no support under prior")
    shift = np.max(log_w[finite])
    w = np.where(finite, np.exp(log_w - shift), 0.0)
    return w / w.sum()


class _GaussianComponent:
    """One proposal of the defensive mixture, kept as a Cholesky factor."""

    def __init__(self, mean: np.ndarray, cov: np.ndarray):
        self.mean = mean
        d = len(mean)
        jitter = 0.0
        base = np.mean(np.diag(cov))
        for _ in range(8):
            try:
                self.chol = np.linalg.cholesky(cov + jitter * np.eye(d))
                break
            except np.linalg.LinAlgError:
                jitter = max(jitter * 10.0, 1e-10 * base)
        else:
            raise RuntimeError("proposal covariance not positive definite")
        self.log_det = 2.0 * float(np.sum(np.log(np.diag(self.chol))))
        self.dim = d

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((count, self.dim))
        return self.mean[None, :] + z @ self.chol.T

    def log_density(self, x: np.ndarray) -> np.ndarray:
        dev = np.asarray(x, dtype=float) - self.mean[None, :]
        y = solve_triangular(self.chol, dev.T, lower=True).T
        q = np.sum(y * y, axis=1)
        return -0.5 * (q + self.log_det + self.dim * math.log(2.0 * math.pi))


def imis_fit(log_target, prior, config: ImisConfig,
             rng: np.random.Generator, area_id: str = "") -> WeightedSamples:
    """Fit one target density by incremental mixture importance sampling.

    ``log_target`` maps an (n, d) array to (n,) log posterior densities;
    ``prior`` provides sample(count, rng), log_density(x) and per-coordinate
    ``scales`` (the Mahalanobis metric for the proposal neighborhood).  The
    sampler stops once the expected unique fraction of an n_resample-sized
    multinomial resample reaches the configured target.
    """
    x = prior.sample(config.n_initial, rng)
    lt = np.asarray(log_target(x), dtype=float)
    log_prior = np.asarray(prior.log_density(x), dtype=float)
    if not np.any(np.isfinite(lt)):
        raise RuntimeError("posterior has no support under prior")

    scales = np.asarray(prior.scales, dtype=float)
    components: list[_GaussianComponent] = []
    # Running log of the unnormalized mixture count-density:
    # n_initial * p0(x) + n_per_iter * sum_k N_k(x).
    log_mix = math.log(config.n_initial) + log_prior

    for _ in range(config.max_iter):
        log_sampler = log_mix - math.log(
            config.n_initial + len(components) * config.n_per_iter)
        w = _normalized_weights(lt, log_sampler)
        if _expected_unique_fraction(w, config.n_resample) >= config.unique_target:
            break

        center = x[int(np.argmax(w))]
        dist = np.sum(((x - center[None, :]) / scales[None, :]) ** 2, axis=1)
        b = min(config.n_per_iter, len(x))
        nb = np.argpartition(dist, b - 1)[:b]
        # Importance weights mixed with uniform mass keep the neighborhood
        # covariance from collapsing onto the single best point.
        wn = w[nb] + 1.0 / len(x)
        wn /= wn.sum()
        dev = x[nb] - center[None, :]
        cov = 1.2 * (dev * wn[:, None]).T @ dev
        cov += 1e-6 * np.diag(scales ** 2)
        comp = _GaussianComponent(center.copy(), cov)

        x_new = comp.sample(config.n_per_iter, rng)
        lt_new = np.asarray(log_target(x_new), dtype=float)
        log_prior_new = np.asarray(prior.log_density(x_new), dtype=float)

        # Existing points gain the new component; new points score against
        # the prior and every component planted so far.
        log_mix = np.logaddexp(
            log_mix, math.log(config.n_per_iter) + comp.log_density(x))
        parts = [math.log(config.n_initial) + log_prior_new]
        for c in components:
            parts.append(math.log(config.n_per_iter) + c.log_density(x_new))
        parts.append(math.log(config.n_per_iter) + comp.log_density(x_new))
        log_mix_new = logsumexp(np.stack(parts, axis=0), axis=0)

        components.append(comp)
        x = np.concatenate([x, x_new], axis=0)
        lt = np.concatenate([lt, lt_new])
        log_mix = np.concatenate([log_mix, log_mix_new])

    log_sampler = log_mix - math.log(
        config.n_initial + len(components) * config.n_per_iter)
    w = _normalized_weights(lt, log_sampler)

    keep = w > config.weight_floor
    if not keep.any():
        keep = w > 0
    w_kept = w[keep]
    return WeightedSamples(
        thetas=x[keep],
        log_target=lt[keep],
        log_sampler=log_sampler[keep],
        weight=w_kept / w_kept.sum(),
        area_id=area_id,
    )


def resample(ws: WeightedSamples, count: int,
             rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Multinomial resample with replacement; returns draws and the number
    of distinct source samples among them."""
    if count < 1:
        raise ValueError("count must be >= 1")
    idx = rng.choice(len(ws), size=count, replace=True, p=ws.weight)
    return ws.thetas[idx], int(len(np.unique(idx)))


def combine_areas(per_area: list[WeightedSamples], hyper: Hyper,
                  n_candidates: int = 1_000_000, n_resample: int = 1000,
                  rng: np.random.Generator | None = None,
                  candidate_weighting: str = "proportional") -> JointPosterior:
    """Join per-area independent posteriors into the mixture-model posterior.

    Candidate joints take one stored sample per area.  In the default
    ``proportional`` mode candidates are drawn proportional to the per-area
    importance weights and the joint weight is the mixture/independent prior
    density ratio alone; in ``uniform`` mode candidates are drawn uniformly
    over stored samples and the per-area weights are folded into the joint
    weight.  Both modes target the same posterior.
    """
    if rng is None:
        raise ValueError("an explicitly seeded generator is required")
    if not per_area or any(len(ws) == 0 for ws in per_area):
        raise ValueError("every area needs stored samples")
    if candidate_weighting not in ("proportional", "uniform"):
        raise ValueError("candidate_weighting must be proportional or uniform")
    k = len(per_area)
    area_ids = tuple(ws.area_id for ws in per_area)

    if k == 1 and np.all(hyper.pi0 == 1.0):
        # Single area with unit mixture weight: the reweighting is the
        # identity, so this is exactly a resample of the area's draws.
        draws, unique = resample(per_area[0], n_resample, rng)
        return JointPosterior(
            joints=draws[:, None, :],
            weights=np.full(n_resample, 1.0 / n_resample),
            unique_count=unique,
            area_ids=area_ids,
        )

    idx = np.empty((n_candidates, k), dtype=np.int64)
    log_w = np.zeros(n_candidates)
    for a, ws in enumerate(per_area):
        if candidate_weighting == "proportional":
            idx[:, a] = rng.choice(len(ws), size=n_candidates, replace=True,
                                   p=ws.weight)
        else:
            idx[:, a] = rng.integers(0, len(ws), size=n_candidates)
            log_w += np.log(ws.weight[idx[:, a]])

    vals = np.empty((n_candidates, k, per_area[0].thetas.shape[1]))
    for a, ws in enumerate(per_area):
        vals[:, a, :] = ws.thetas[idx[:, a]]
    log_w = log_w + prior_ratio_log_batch(vals, hyper)

    w = np.exp(log_w - np.max(log_w))
    w /= w.sum()
    chosen = rng.choice(n_candidates, size=n_resample, replace=True, p=w)
    unique = int(len(np.unique(chosen)))
    return JointPosterior(
        joints=vals[chosen],
        weights=np.full(n_resample, 1.0 / n_resample),
        unique_count=unique,
        area_ids=area_ids,
    )


def unique_efficiency(jp: JointPosterior) -> float:
    """Distinct joints per resample draw; the sampling-efficiency diagnostic."""
    return jp.unique_count / jp.n_resample
