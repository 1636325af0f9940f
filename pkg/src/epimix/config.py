"""Implementation defaults that stand in for inputs the model family leaves
external (life-table rates, clinic variance hyperparameters).

Everything here is configurable at run time; these values are implementation
defaults, not estimates from any particular dataset.
"""

from __future__ import annotations

from .model import DemographicSchedule

# Constant demographic rates replacing external life-tables.
DEFAULT_DEMOGRAPHY = {
    "mu": 0.01,          # non-AIDS mortality, per person-year
    "a50": 0.02,         # ageing out of 15-49, per person-year
    "m": 0.0,            # net migration, per person-year
    "entry_rate": 0.03,  # new adults as a fraction of current N, per year
    "delta": 1.0 / 11.0, # HIV death rate (11-year mean survival), per year
    "n_init": 1.0e6,     # adult population at simulation start
}

# Gamma(shape, scale) prior on the clinic random-effect precision 1/sigma^2
# (equivalently an inverse-gamma prior on sigma^2).
DEFAULT_RE_SHAPE = 0.58
DEFAULT_RE_SCALE = 93.0

# Quadrature grid for integrating sigma^2 out of the clinic likelihood:
# Gauss-Legendre on log sigma^2 over these bounds.
DEFAULT_LOG_S2_BOUNDS = (-15.0, 5.0)
DEFAULT_N_QUAD = 61


def default_demography(**overrides) -> DemographicSchedule:
    params = dict(DEFAULT_DEMOGRAPHY)
    params.update(overrides)
    return DemographicSchedule(**params)
