"""Synthetic multi-area surveillance data from known parameters.

The generator is the data model run forward: project the true epidemic, add
clinic random effects and probit-scale noise, and invert the continuity
correction back to counts.  It exists so the full fit/combine/evaluate
pipeline can be exercised and validated without proprietary surveillance
datasets.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr, ndtri

from .likelihood import AncDataset, AncObservation, SurveyObservation
from .model import DemographicSchedule, Projection, Theta, project_epidemic
from .priors import (Hyper, PRIOR_LOCATIONS, PRIOR_SCALES, T0_MAX, T0_MIN,
                     mvt_log_density, sample_independent_prior_array)


@dataclass(frozen=True)
class SynthSpec:
    """Shape of one synthetic area's dataset."""

    theta_true: Theta
    n_clinics: int
    year_start: int
    n_years: int
    n_per_clinic_year: int
    sigma_clinic: float
    demog: DemographicSchedule
    area_id: str = "area"
    survey_year: int | None = None
    survey_se_probit: float = 0.05

    def __post_init__(self):
        if min(self.n_clinics, self.n_years, self.n_per_clinic_year) < 1:
            raise ValueError("counts must be positive")
        if self.sigma_clinic < 0:
            raise ValueError("sigma_clinic must be >= 0")

    @property
    def years(self) -> list[int]:
        return list(range(self.year_start, self.year_start + self.n_years))


def _delta_method_nu(p: float, n: int) -> float:
    w = float(ndtri(p))
    phi = np.exp(-0.5 * w * w) / np.sqrt(2.0 * np.pi)
    return float(p * (1.0 - p) / (n * phi * phi))


def generate_area(spec: SynthSpec, rng: np.random.Generator
                  ) -> tuple[AncDataset, list[SurveyObservation], Projection]:
    """One area's clinic dataset (and optional survey point) plus the truth."""
    end_year = max(spec.years[-1], spec.survey_year or spec.years[-1])
    proj = project_epidemic(spec.theta_true, spec.demog,
                            start_year=1970, end_year=end_year)
    beta4 = spec.theta_true.beta4
    b = rng.normal(0.0, spec.sigma_clinic, size=spec.n_clinics)
    obs = []
    for i in range(spec.n_clinics):
        clinic_id = f"{spec.area_id}-c{i:02d}"
        for year in spec.years:
            rho = float(proj.rho[proj.year_index(year)])
            if rho <= 0.0:
                raise ValueError(
                    f"true prevalence is 0 in {year}; move year_start after "
                    f"t0={spec.theta_true.t0}")
            center = float(ndtri(rho)) + beta4 + b[i]
            p_clinic = float(ndtr(float(ndtri(rho)) + beta4 + b[i]))
            nu = _delta_method_nu(min(max(p_clinic, 1e-12), 1 - 1e-12),
                                  spec.n_per_clinic_year)
            w = rng.normal(center, np.sqrt(nu))
            n = spec.n_per_clinic_year
            y = int(round((n + 1) * float(ndtr(w)) - 0.5))
            y = min(max(y, 0), n)
            obs.append(AncObservation(clinic_id=clinic_id, year=year, y=y, n=n))
    surveys = []
    if spec.survey_year is not None:
        rho = float(proj.rho[proj.year_index(spec.survey_year)])
        w = rng.normal(float(ndtri(rho)), spec.survey_se_probit)
        surveys.append(SurveyObservation(
            year=spec.survey_year,
            prevalence=float(np.clip(ndtr(w), 1e-6, 1 - 1e-6)),
            se_probit=spec.survey_se_probit))
    return AncDataset(observations=tuple(obs), area_id=spec.area_id), surveys, proj


def sample_mixture_thetas(hyper: Hyper, k: int,
                          rng: np.random.Generator) -> np.ndarray:
    """Draw K areas' parameters from the mixture prior, coordinate by
    coordinate: a Bernoulli(pi0_j) pick between iid independent-prior draws
    and one equicorrelated multivariate-t draw."""
    out = np.empty((k, len(PRIOR_LOCATIONS)))
    iid = sample_independent_prior_array(k, rng)
    for j in range(len(PRIOR_LOCATIONS)):
        if rng.uniform() < hyper.pi0[j]:
            out[:, j] = iid[:, j]
            continue
        mu0 = float(hyper.mu0[j])
        sigma0 = float(hyper.sigma0[j])
        rho0 = float(hyper.rho0[j])
        if j == 0:
            out[:, j] = _sample_truncated_mvt(k, mu0, sigma0, rho0, hyper.df,
                                              hyper.t0_bounds, rng)
        else:
            out[:, j] = _sample_equicorr_mvt(k, mu0, sigma0, rho0, hyper.df,
                                             rng)
    return out


def _sample_equicorr_mvt(k, mu0, sigma0, rho0, df, rng):
    cov = sigma0 ** 2 * ((1 - rho0) * np.eye(k) + rho0 * np.ones((k, k)))
    chol = np.linalg.cholesky(cov)
    z = chol @ rng.standard_normal(k)
    scale = np.sqrt(df / rng.chisquare(df))
    return mu0 + scale * z

def _sample_truncated_mvt(k, mu0, sigma0, rho0, df, bounds, rng,
                          n_proposals: int = 8192):
    # Importance resampling from a uniform box proposal; adequate for a
    # generator (the box is narrow relative to the solved t0 scale).
    lo, hi = bounds
    cand = rng.uniform(lo, hi, size=(n_proposals, k))
    logw = np.asarray(mvt_log_density(cand, mu0, sigma0, rho0, df))
    w = np.exp(logw - np.max(logw))
    w /= w.sum()
    return cand[rng.choice(n_proposals, p=w)]


def _healthy_truth(theta: Theta, spec: SynthSpec,
                   rho_range: tuple[float, float]) -> Projection | None:
    """Truth trajectory if it is usable as a benchmark, else None.

    Heavy-tailed prior draws can produce flagged (clamped) or unmeasurably
    small/saturated epidemics; those make meaningless synthetic datasets.
    """
    end_year = max(spec.years[-1], spec.survey_year or spec.years[-1])
    proj = project_epidemic(theta, spec.demog, 1970, end_year)
    lo, hi = rho_range
    idx = [proj.year_index(y) for y in spec.years]
    rho = proj.rho[idx]
    if proj.any_clamped or rho.min() < lo or rho.max() > hi:
        return None
    return proj


def generate_country(hyper: Hyper, k: int, template: SynthSpec,
                     rng: np.random.Generator,
                     rho_range: tuple[float, float] = (1e-3, 0.95),
                     max_redraws: int = 200,
                     ) -> list[tuple[AncDataset, list[SurveyObservation], Projection, Theta]]:
    """K correlated areas from the mixture prior, each run through the
    area generator with the template's shape.

    Parameter draws whose trajectories are degenerate over the observation
    window (clamped states, prevalence outside rho_range) are redrawn, so
    the output is the mixture prior conditioned on a measurable epidemic.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    for _ in range(max_redraws):
        thetas = sample_mixture_thetas(hyper, k, rng)
        checked = []
        for a in range(k):
            theta = Theta.from_array(thetas[a])
            proj = _healthy_truth(theta, template, rho_range)
            if proj is None:
                break
            checked.append(theta)
        if len(checked) == k:
            break
    else:
        raise RuntimeError("no acceptable country draw within max_redraws")
    out = []
    for a, theta in enumerate(checked):
        spec = replace(template, theta_true=theta,
                       area_id=f"{template.area_id}{a + 1}")
        anc, surveys, proj = generate_area(spec, rng)
        out.append((anc, surveys, proj, theta))
    return out
