"""Glue between the data model and the sampler: build one area's posterior
evaluator and run the fit, with reproducible per-area random streams."""

from __future__ import annotations

import hashlib

import numpy as np

from .imis import ImisConfig, WeightedSamples, imis_fit
from .likelihood import (AncDataset, LikelihoodConfig, anc_log_likelihood_batch,
                         survey_log_likelihood_batch)
from .model import DemographicSchedule, project_batch
from .priors import IndependentPrior, independent_log_prior_array


def child_rng(seed: int, *tags) -> np.random.Generator:
    """Generator derived from the master seed and a tag tuple by hashing.

    The same (seed, tags) always yields the same stream, independent of any
    other stream derived from the same seed, so areas can be fit in any
    order or in parallel without changing results.
    """
    h = hashlib.sha256()
    h.update(str(int(seed)).encode())
    for tag in tags:
        h.update(b"\x1f")
        h.update(str(tag).encode())
    child = int.from_bytes(h.digest()[:8], "big")
    return np.random.default_rng(np.random.SeedSequence(child))


def make_area_target(anc: AncDataset, surveys,
                     demog: DemographicSchedule,
                     like_cfg: LikelihoodConfig | None = None,
                     start_year: int = 1970,
                     end_year: int | None = None):
    """Vectorized log-posterior evaluator for one area's dataset.

    Returns a callable mapping (n, 8) parameter draws to (n,) log densities.
    t0/t1 are rounded inside the evaluator so the sampler can move them
    continuously.
    """
    like_cfg = like_cfg or LikelihoodConfig()
    surveys = list(surveys) if surveys else []
    if end_year is None:
        years = list(anc.years) + [s.year for s in surveys]
        if not years:
            raise ValueError("cannot infer end_year from an empty dataset")
        end_year = max(years)

    def target(thetas: np.ndarray) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float)
        lp = independent_log_prior_array(thetas)
        out = np.full(thetas.shape[0], -np.inf)
        ok = np.isfinite(lp)
        if not ok.any():
            return out
        sub = thetas[ok]
        batch = project_batch(sub, demog, start_year, end_year)
        ll = anc_log_likelihood_batch(batch, sub[:, 7], anc, like_cfg)
        if like_cfg.use_surveys and surveys:
            ll = ll + survey_log_likelihood_batch(batch, surveys)
        out[ok] = lp[ok] + ll
        return out

    return target


def fit_area(anc: AncDataset, surveys, demog: DemographicSchedule,
             imis_cfg: ImisConfig, rng: np.random.Generator,
             like_cfg: LikelihoodConfig | None = None,
             start_year: int = 1970,
             end_year: int | None = None) -> WeightedSamples:
    """Independent-model fit of one area by IMIS."""
    target = make_area_target(anc, surveys, demog, like_cfg,
                              start_year=start_year, end_year=end_year)
    return imis_fit(target, IndependentPrior(), imis_cfg, rng,
                    area_id=anc.area_id)
