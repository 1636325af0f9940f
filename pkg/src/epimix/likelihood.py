"""Likelihood of clinic surveillance counts and survey prevalence.

Clinic counts enter on the probit scale with a continuity correction; each
clinic carries an additive random effect whose variance has an inverse-gamma
prior that is integrated out by one-dimensional quadrature.  Survey points
are treated as unbiased probit-scale Gaussians (the clinic bias beta4 is
defined relative to them).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp, ndtri

from . import config
from .model import BatchProjection, DemographicSchedule, Projection, Theta, project_batch

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class AncObservation:
    """One clinic-year count: y positive out of n tested."""

    clinic_id: str
    year: int
    y: int
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not (0 <= self.y <= self.n):
            raise ValueError("y must lie in [0, n]")


@dataclass(frozen=True)
class AncDataset:
    """All clinic observations for one area."""

    observations: tuple[AncObservation, ...]
    area_id: str

    def __post_init__(self):
        obs = tuple(self.observations)
        object.__setattr__(self, "observations", obs)
        pairs = [(o.clinic_id, o.year) for o in obs]
        if len(set(pairs)) != len(pairs):
            raise ValueError("duplicate (clinic_id, year) observation")

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def years(self) -> list[int]:
        return sorted({o.year for o in self.observations})

    @property
    def clinics(self) -> list[str]:
        return sorted({o.clinic_id for o in self.observations})

    def restrict_years(self, years) -> "AncDataset":
        keep = set(int(y) for y in years)
        return AncDataset(
            observations=tuple(o for o in self.observations if o.year in keep),
            area_id=self.area_id,
        )


@dataclass(frozen=True)
class SurveyObservation:
    """One national-survey prevalence point with probit-scale standard error."""

    year: int
    prevalence: float
    se_probit: float

    def __post_init__(self):
        if not (0.0 < self.prevalence < 1.0):
            raise ValueError("prevalence must lie in (0, 1)")
        if self.se_probit <= 0:
            raise ValueError("se_probit must be > 0")


@dataclass(frozen=True)
class ProbitPoint:
    """Probit-transformed proportion with its delta-method variance."""

    w: float
    nu: float

    def __post_init__(self):
        if not math.isfinite(self.w):
            raise ValueError("w must be finite")
        if self.nu <= 0:
            raise ValueError("nu must be > 0")


def probit_counts(y: int, n: int) -> ProbitPoint:
    """Continuity-corrected probit transform of a count with its variance.

    p_hat = (y + 0.5) / (n + 1); the variance approximates the binomial
    variation of p_hat pushed through the probit (delta method).
    """
    if n < 1 or not (0 <= y <= n):
        raise ValueError("need 0 <= y <= n with n >= 1")
    p_hat = (y + 0.5) / (n + 1.0)
    w = float(ndtri(p_hat))
    phi = math.exp(-0.5 * w * w) / math.sqrt(2.0 * math.pi)
    nu = p_hat * (1.0 - p_hat) / (n * phi * phi)
    return ProbitPoint(w=w, nu=nu)


@dataclass(frozen=True)
class LikelihoodConfig:
    """Knobs of the data model that the papers' sources leave open."""

    re_shape: float = config.DEFAULT_RE_SHAPE
    re_scale: float = config.DEFAULT_RE_SCALE
    log_s2_bounds: tuple[float, float] = config.DEFAULT_LOG_S2_BOUNDS
    n_quad: int = config.DEFAULT_N_QUAD
    use_surveys: bool = True


def _log_precision_gamma_sigma2(log_s2: np.ndarray, shape: float,
                                scale: float) -> np.ndarray:
    """Log density of sigma^2 when 1/sigma^2 ~ Gamma(shape, scale)."""
    log_lam = -log_s2
    return ((shape - 1.0) * log_lam - np.exp(log_lam) / scale
            - gammaln(shape) - shape * math.log(scale) + 2.0 * log_lam)


def _sigma2_quadrature(cfg: LikelihoodConfig):
    """Nodes (sigma^2 values) and log weights for the outer integral.

    Gauss-Legendre on u = log sigma^2; the returned log weight folds in the
    prior density and the Jacobian sigma^2 du.
    """
    lo, hi = cfg.log_s2_bounds
    nodes, weights = np.polynomial.legendre.leggauss(cfg.n_quad)
    u = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
    w = 0.5 * (hi - lo) * weights
    log_w = (np.log(w) + _log_precision_gamma_sigma2(u, cfg.re_shape,
                                                     cfg.re_scale) + u)
    return np.exp(u), log_w


@dataclass
class _ClinicBlock:
    w: np.ndarray          # (m,) probit observations
    nu: np.ndarray         # (m,) fixed variances
    year_idx: np.ndarray   # (m,) indices into the projection year grid


def _prepare_blocks(data: AncDataset, years: np.ndarray) -> list[_ClinicBlock]:
    year0 = int(years[0])
    n_years = len(years)
    blocks: dict[str, list[AncObservation]] = {}
    for obs in data.observations:
        blocks.setdefault(obs.clinic_id, []).append(obs)
    out = []
    for clinic_id in sorted(blocks):
        obs_list = blocks[clinic_id]
        idx = np.array([o.year - year0 for o in obs_list], dtype=np.int64)
        if np.any(idx < 0) or np.any(idx >= n_years):
            bad = obs_list[int(np.argmax((idx < 0) | (idx >= n_years)))]
            raise ValueError(
                f"data year {bad.year} not covered by projection years "
                f"[{years[0]}, {years[-1]}]")
        pts = [probit_counts(o.y, o.n) for o in obs_list]
        out.append(_ClinicBlock(
            w=np.array([p.w for p in pts]),
            nu=np.array([p.nu for p in pts]),
            year_idx=idx,
        ))
    return out


def anc_log_likelihood_batch(batch: BatchProjection, beta4: np.ndarray,
                             data: AncDataset,
                             cfg: LikelihoodConfig | None = None) -> np.ndarray:
    """Clinic-data log likelihood for every draw in a projection batch.

    Conditional on the random-effect variance sigma^2 the residuals of one
    clinic are jointly Gaussian with covariance diag(nu) + sigma^2 * J;
    clinics are independent; sigma^2 is integrated out on a fixed quadrature
    grid.  Draws with a flagged (clamped) data year, or zero/unit model
    prevalence in a data year, get -inf.
    """
    cfg = cfg or LikelihoodConfig()
    n_draws = batch.rho.shape[0]
    if len(data) == 0:
        return np.zeros(n_draws)
    blocks = _prepare_blocks(data, batch.years)

    data_year_idx = np.unique(np.concatenate([b.year_idx for b in blocks]))
    rho = batch.rho[:, data_year_idx]
    valid = ((rho > 0.0) & (rho < 1.0)).all(axis=1)
    valid &= ~batch.clamped_years[:, data_year_idx].any(axis=1)

    s2, log_w = _sigma2_quadrature(cfg)
    n_quad = len(s2)

    # Accumulate, per sigma^2 node, the log density over all clinics.
    log_cond = np.zeros((n_draws, n_quad))
    probit_rho = np.full_like(batch.rho, np.nan)
    probit_rho[:, data_year_idx] = ndtri(
        np.clip(batch.rho[:, data_year_idx], 1e-300, 1.0 - 1e-16))

    for blk in blocks:
        mean = probit_rho[:, blk.year_idx] + beta4[:, None]
        e = blk.w[None, :] - mean                      # (n_draws, m)
        inv_nu = 1.0 / blk.nu
        a = (e * e * inv_nu[None, :]).sum(axis=1)      # e' D^-1 e
        b = (e * inv_nu[None, :]).sum(axis=1)          # 1' D^-1 e
        c = float(inv_nu.sum())
        d = float(np.log(blk.nu).sum() + len(blk.nu) * _LOG_2PI)
        denom = 1.0 + s2 * c                           # (n_quad,)
        quad = a[:, None] - s2[None, :] * (b * b)[:, None] / denom[None, :]
        log_cond += -0.5 * (d + np.log(denom)[None, :] + quad)

    total = logsumexp(log_cond + log_w[None, :], axis=1)
    return np.where(valid, total, -np.inf)


def anc_log_likelihood(proj: Projection, beta4: float, data: AncDataset,
                       cfg: LikelihoodConfig | None = None) -> float:
    """Single-projection wrapper around anc_log_likelihood_batch."""
    batch = _as_batch(proj)
    return float(anc_log_likelihood_batch(batch, np.array([beta4]), data,
                                          cfg)[0])


def survey_log_likelihood_batch(batch: BatchProjection,
                                surveys) -> np.ndarray:
    """Survey log likelihood: probit-scale Gaussian, unbiased, no random
    effect (surveys anchor the clinic bias, so they enter without beta4)."""
    n_draws = batch.rho.shape[0]
    surveys = list(surveys)
    if not surveys:
        return np.zeros(n_draws)
    out = np.zeros(n_draws)
    year0 = int(batch.years[0])
    for s in surveys:
        idx = s.year - year0
        if idx < 0 or idx >= len(batch.years):
            raise ValueError(f"survey year {s.year} not covered by projection")
        rho = batch.rho[:, idx]
        ok = (rho > 0.0) & (rho < 1.0) & ~batch.clamped_years[:, idx]
        w_obs = float(ndtri(s.prevalence))
        resid = np.where(ok, w_obs - ndtri(np.clip(rho, 1e-300, 1 - 1e-16)),
                         np.inf)
        out += np.where(
            ok,
            -0.5 * (resid / s.se_probit) ** 2
            - math.log(s.se_probit) - 0.5 * _LOG_2PI,
            -np.inf)
    return out


def survey_log_likelihood(proj: Projection, surveys) -> float:
    return float(survey_log_likelihood_batch(_as_batch(proj), surveys)[0])


def log_posterior(theta: Theta, anc: AncDataset, surveys,
                  prior, demog: DemographicSchedule,
                  start_year: int = 1970, end_year: int | None = None,
                  cfg: LikelihoodConfig | None = None) -> float:
    """Log posterior density of one parameter set (up to a constant).

    ``prior`` is a callable Theta -> log density.  t0/t1 are rounded to the
    model grid before projection; -inf from any component propagates.
    """
    cfg = cfg or LikelihoodConfig()
    lp = float(prior(theta))
    if not math.isfinite(lp):
        return -math.inf
    surveys = list(surveys) if surveys else []
    if end_year is None:
        years = list(anc.years) + [s.year for s in surveys]
        if not years:
            return lp
        end_year = max(years)
    batch = project_batch(theta.to_array()[None, :], demog, start_year,
                          end_year)
    ll = float(anc_log_likelihood_batch(batch, np.array([theta.beta4]), anc,
                                        cfg)[0])
    if cfg.use_surveys and surveys:
        ll += float(survey_log_likelihood_batch(batch, surveys)[0])
    return lp + ll


def _as_batch(proj: Projection) -> BatchProjection:
    return BatchProjection(
        years=proj.years,
        rho=proj.rho[None, :],
        incidence=proj.incidence[None, :],
        r_series=proj.r_series[None, :],
        y_series=proj.y_series[None, :],
        n_series=proj.n_series[None, :],
        clamped_years=proj.clamped_years[None, :],
    )
