"""Multi-area epidemic curve estimation with mixture-prior reweighting.

Fit an EPP-style susceptible-infected model to each area's clinic
surveillance data by incremental mixture importance sampling, then combine
the per-area posteriors into a joint posterior under a cross-area mixture
prior by reweighting alone, and score predictions under hold-out protocols.
"""

from .config import default_demography
from .evaluation import (Split, SplitSpec, cross_area_correlation,
                         mae_clinic_prevalence, split)
from .hyperfit import PointEstimateTable, estimate_hyperparameters
from .imis import (ImisConfig, JointPosterior, WeightedSamples, combine_areas,
                   imis_fit, resample, unique_efficiency)
from .likelihood import (AncDataset, AncObservation, LikelihoodConfig,
                         ProbitPoint, SurveyObservation, anc_log_likelihood,
                         log_posterior, probit_counts, survey_log_likelihood)
from .model import (DemographicSchedule, EpiState, Projection, Theta,
                    initial_state, project_epidemic, r_trend_step)
from .pipeline import child_rng, fit_area, make_area_target
from .priors import (Hyper, independent_log_prior, mixture_log_prior_joint,
                     mvt_log_density, prior_ratio_log, sample_independent_prior)
from .synth import SynthSpec, generate_area, generate_country

__version__ = "0.1.0"

__all__ = [
    "AncDataset", "AncObservation", "DemographicSchedule", "EpiState",
    "Hyper", "ImisConfig", "JointPosterior", "LikelihoodConfig",
    "PointEstimateTable", "ProbitPoint", "Projection", "Split", "SplitSpec",
    "SurveyObservation", "SynthSpec", "Theta", "WeightedSamples",
    "anc_log_likelihood", "child_rng", "combine_areas",
    "cross_area_correlation", "default_demography",
    "estimate_hyperparameters", "fit_area", "generate_area",
    "generate_country", "imis_fit", "independent_log_prior", "initial_state",
    "log_posterior", "mae_clinic_prevalence", "make_area_target",
    "mixture_log_prior_joint", "mvt_log_density", "prior_ratio_log",
    "probit_counts", "project_epidemic", "r_trend_step", "resample",
    "sample_independent_prior", "split", "survey_log_likelihood",
    "unique_efficiency",
]
