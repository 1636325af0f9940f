"""Empirical-Bayes estimation of the mixture weights and correlations.

Posterior-mean parameter estimates from countries with several well-observed
areas are treated as draws from the per-coordinate mixture prior; the mixing
weight pi0 and equicorrelation rho0 of each coordinate are set to the
posterior mode over a 2-D grid under weak hyperpriors.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import betaln

from .model import N_PARAMS
from .priors import Hyper, _coordinate_log_f0, _coordinate_log_f1

GRID_SIZE = 201
RHO_MAX = 0.999


@dataclass(frozen=True)
class PointEstimateTable:
    """Per-country matrices of area-level posterior-mean parameters."""

    countries: tuple[str, ...]
    estimates: tuple[np.ndarray, ...]   # each (K_c, 8)

    def __post_init__(self):
        ests = tuple(np.asarray(e, dtype=float) for e in self.estimates)
        object.__setattr__(self, "estimates", ests)
        if len(self.countries) != len(ests):
            raise ValueError("country names and estimate matrices mismatch")
        if len(ests) < 1:
            raise ValueError("need at least one country")
        for name, e in zip(self.countries, ests):
            if e.ndim != 2 or e.shape[1] != N_PARAMS:
                raise ValueError(f"{name}: estimates must be (K, 8)")
            if e.shape[0] < 2:
                raise ValueError(f"{name}: need at least 2 areas")


def _beta_logpdf(x, a: float, b: float):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return ((a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x)
                - betaln(a, b))


def rho_hyperprior_logpdf(rho, mean_zero_concentration: float = 1.5):
    """Log prior on the equicorrelation: (rho+1)/2 ~ Beta(1.5, 1.5),
    including the change-of-variable Jacobian 1/2."""
    u = (np.asarray(rho, dtype=float) + 1.0) / 2.0
    return _beta_logpdf(u, mean_zero_concentration,
                        mean_zero_concentration) + math.log(0.5)


def pi_hyperprior_logpdf(pi, favor_large: bool = True):
    """Log prior on the independent-component weight.

    The default Beta(1.5, 1) has mean 0.6 and density 1.5 at 1, leaning
    toward the independent model; favor_large=False selects the mirrored
    Beta(1, 1.5) instead.
    """
    if favor_large:
        return _beta_logpdf(pi, 1.5, 1.0)
    return _beta_logpdf(pi, 1.0, 1.5)


def estimate_hyperparameters(table: PointEstimateTable, mu0, sigma0,
                             df: float = 2.0,
                             favor_large_pi: bool = True
                             ) -> tuple[np.ndarray, np.ndarray]:
    """Posterior-mode (pi0, rho0) per coordinate on a 201 x 201 grid.

    The likelihood of coordinate j multiplies the per-country mixture density
    of that coordinate's area vector; mu0 and sigma0 are treated as known.
    Ties break toward larger pi0, then smaller rho0.
    """
    mu0 = np.asarray(mu0, dtype=float)
    sigma0 = np.asarray(sigma0, dtype=float)
    pi_grid = np.linspace(0.0, 1.0, GRID_SIZE)
    rho_grid = np.linspace(0.0, RHO_MAX, GRID_SIZE)
    log_prior_pi = pi_hyperprior_logpdf(pi_grid, favor_large=favor_large_pi)
    log_prior_rho = rho_hyperprior_logpdf(rho_grid)

    pi0 = np.empty(N_PARAMS)
    rho0 = np.empty(N_PARAMS)
    boundary = False
    for j in range(N_PARAMS):
        vecs = [e[:, j] for e in table.estimates]
        log_f0 = np.array([float(_coordinate_log_f0(v, j)) for v in vecs])
        # (n_countries, n_rho) hierarchical log density per country.
        log_f1 = np.empty((len(vecs), GRID_SIZE))
        for r_idx, rho in enumerate(rho_grid):
            hyper_j = _single_coordinate_hyper(j, mu0, sigma0, rho, df)
            for c, v in enumerate(vecs):
                log_f1[c, r_idx] = float(_coordinate_log_f1(v, j, hyper_j))

        # log[pi f0 + (1-pi) f1] summed over countries, on the full grid.
        with np.errstate(divide="ignore"):
            log_pi = np.log(pi_grid)
            log_1mpi = np.log1p(-pi_grid)
        a = log_pi[:, None, None] + log_f0[None, :, None]
        b = log_1mpi[:, None, None] + log_f1[None, :, :]
        loglik = np.logaddexp(a, b).sum(axis=1)      # (n_pi, n_rho)
        objective = (loglik + log_prior_pi[:, None]
                     + log_prior_rho[None, :])

        # Scan pi descending / rho ascending so the first strict maximum
        # realizes the tie-break rule.
        obj = objective[::-1, :]
        flat = int(np.argmax(obj))
        pi_idx = GRID_SIZE - 1 - flat // GRID_SIZE
        rho_idx = flat % GRID_SIZE
        pi0[j] = pi_grid[pi_idx]
        rho0[j] = rho_grid[rho_idx]
        if rho_idx == GRID_SIZE - 1 or pi_idx == 0:
            boundary = True
    if boundary:
        warnings.warn("hyperparameter mode on the grid boundary; the point "
                      "estimates may be degenerate", RuntimeWarning)
    return pi0, rho0


def _single_coordinate_hyper(j: int, mu0: np.ndarray, sigma0: np.ndarray,
                             rho: float, df: float) -> Hyper:
    m = mu0.copy()
    s = sigma0.copy()
    r = np.zeros(N_PARAMS)
    r[j] = rho
    return Hyper(mu0=m, sigma0=s, rho0=r, pi0=np.ones(N_PARAMS), df=df)
