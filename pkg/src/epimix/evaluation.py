"""Hold-out protocols, clinic-prevalence prediction error, and cross-area
posterior correlations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .imis import JointPosterior, WeightedSamples
from .likelihood import AncDataset
from .model import DemographicSchedule, project_batch

SCENARIOS = ("last3", "mid6")


@dataclass(frozen=True)
class SplitSpec:
    """Hold-out scenario: withhold the last 3 calendar years, or train on
    the middle 6 years and test on both tails."""

    scenario: str
    low_quality_area: str | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")


@dataclass(frozen=True)
class Split:
    """Train/test partition; for mid6 the test side is additionally split
    into the early (pre-train) and late (post-train) segments."""

    train: AncDataset
    test: AncDataset
    test_early: AncDataset
    test_late: AncDataset

    def __iter__(self):
        return iter((self.train, self.test))


def split(data: AncDataset, spec: SplitSpec) -> Split:
    """Partition one area's observations according to the scenario."""
    years = data.years
    if spec.scenario == "last3":
        if len(years) < 4:
            raise ValueError(
                "last3 split needs at least 4 distinct data years, got "
                f"{len(years)}")
        test_years = set(years[-3:])
        train_years = set(years) - test_years
        early_years: set[int] = set()
        late_years = test_years
    else:
        if len(years) < 8:
            raise ValueError(
                "mid6 split needs at least 8 distinct data years, got "
                f"{len(years)}")
        mid = (years[0] + years[-1]) // 2
        train_years = {y for y in years if mid - 2 <= y <= mid + 3}
        early_years = {y for y in years if y < mid - 2}
        late_years = {y for y in years if y > mid + 3}
        test_years = early_years | late_years
    return Split(
        train=data.restrict_years(train_years),
        test=data.restrict_years(test_years),
        test_early=data.restrict_years(early_years),
        test_late=data.restrict_years(late_years),
    )


def _posterior_thetas(samples, area_id: str | None
                      ) -> tuple[np.ndarray, np.ndarray]:
    """(thetas, weights) for one area from either container."""
    if isinstance(samples, WeightedSamples):
        return samples.thetas, samples.weight
    if isinstance(samples, JointPosterior):
        if area_id is None:
            raise ValueError("area_id required with a joint posterior")
        try:
            a = samples.area_ids.index(area_id)
        except ValueError:
            raise ValueError(f"area {area_id!r} not in joint posterior") from None
        return samples.joints[:, a, :], samples.weights
    raise TypeError("samples must be WeightedSamples or JointPosterior")


def predicted_anc_prevalence(samples, years, demog: DemographicSchedule,
                             area_id: str | None = None) -> np.ndarray:
    """Posterior-mean clinic-scale prevalence Phi(probit(rho_t) + beta4)
    for each requested year."""
    thetas, weights = _posterior_thetas(samples, area_id)
    years = [int(y) for y in years]
    batch = project_batch(thetas, demog, 1970, max(years))
    idx = [int(y) - int(batch.years[0]) for y in years]
    rho = batch.rho[:, idx]
    probit = ndtri(np.clip(rho, 1e-300, 1.0 - 1e-16))
    probit = np.where(rho > 0.0, probit, -np.inf)
    biased = ndtr(probit + thetas[:, 7][:, None])
    return weights @ biased


def observed_anc_prevalence(data: AncDataset) -> dict[int, float]:
    """Unweighted mean of continuity-corrected clinic proportions by year."""
    by_year: dict[int, list[float]] = {}
    for o in data.observations:
        by_year.setdefault(o.year, []).append((o.y + 0.5) / (o.n + 1.0))
    return {y: float(np.mean(v)) for y, v in sorted(by_year.items())}


def mae_clinic_prevalence(samples, test, which: str = "all",
                          demog: DemographicSchedule | None = None,
                          area_id: str | None = None,
                          granularity: str = "year") -> float:
    """Mean absolute prediction error of clinic prevalence, in percent.

    ``test`` is an AncDataset or a Split (then ``which`` selects the all /
    early / late segment).  Year granularity first averages clinics within a
    year; clinic granularity averages absolute errors over observations.
    """
    if isinstance(test, Split):
        test = {"all": test.test, "early": test.test_early,
                "late": test.test_late}[which]
    elif which != "all":
        raise ValueError("segment selection needs a Split")
    if len(test) == 0:
        raise ValueError("empty test segment")
    if demog is None:
        raise ValueError("demog is required")
    if granularity not in ("year", "clinic"):
        raise ValueError("granularity must be 'year' or 'clinic'")

    years = test.years
    pred = predicted_anc_prevalence(samples, years, demog,
                                    area_id=area_id or test.area_id)
    pred_by_year = dict(zip(years, pred))
    if granularity == "year":
        obs = observed_anc_prevalence(test)
        errs = [abs(pred_by_year[y] - obs[y]) for y in years]
    else:
        errs = [abs(pred_by_year[o.year] - (o.y + 0.5) / (o.n + 1.0))
                for o in test.observations]
    return float(100.0 * np.mean(errs))


def cross_area_correlation(jp: JointPosterior, quantity: str,
                           demog: DemographicSchedule,
                           start_year: int = 1970,
                           end_year: int = 2015) -> tuple[np.ndarray, np.ndarray]:
    """Pearson correlations of a yearly quantity between area pairs.

    Returns (years, corr) with corr of shape (n_years, K, K).  Years where
    either area has zero posterior variance (for instance before the
    epidemic starts everywhere) give NaN, not 0.
    """
    if quantity not in ("prevalence", "incidence"):
        raise ValueError("quantity must be 'prevalence' or 'incidence'")
    if jp.n_areas < 2:
        raise ValueError("need at least 2 areas")
    m, k, d = jp.joints.shape
    flat = jp.joints.reshape(m * k, d)
    batch = project_batch(flat, demog, start_year, end_year)
    series = batch.rho if quantity == "prevalence" else batch.incidence
    n_years = series.shape[1]
    series = series.reshape(m, k, n_years)

    corr = np.full((n_years, k, k), np.nan)
    for t in range(n_years):
        x = series[:, :, t]
        sd = x.std(axis=0)
        ok = sd > 0
        if ok.sum() < 2:
            continue
        c = np.corrcoef(x[:, ok], rowvar=False)
        idx = np.where(ok)[0]
        for ii, i in enumerate(idx):
            for jj, j in enumerate(idx):
                corr[t, i, j] = c[ii, jj]
    return batch.years, corr
