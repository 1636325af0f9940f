"""EPP-style susceptible-infected dynamic model with an r(t) infection-rate trend.

The adult (15-49) population is split into uninfected Z and infected Y.
Transmission is driven by a time-varying infection rate r(t) that relaxes
toward an asymptote, is pushed by current prevalence, and is damped once the
epidemic ages past its stabilization time.  Integration is forward Euler at a
0.1-year step; trajectories are reported on an integer-year grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PARAM_NAMES = ("t0", "t1", "log_r0", "beta0", "beta1", "beta2", "beta3", "beta4")
N_PARAMS = len(PARAM_NAMES)

T0_MIN = 1970.0
T0_MAX = 1990.0

# Prevalence at the epidemic start year t0: 0.0025%.
SEED_PREVALENCE = 2.5e-5

# Euler step, years.  t0 and t1 are rounded to this resolution before use.
DT = 0.1

# Ceiling on the infection rate.  Heavy-tailed parameter draws can push the
# multiplicative r update toward overflow; capped draws are flagged so the
# likelihood can reject them instead of the integrator crashing.
LOG_R_CAP = math.log(1e6)


class NumericalModelError(ValueError):
    """Raised when a trajectory cannot be evaluated for a parameter draw."""


@dataclass(frozen=True)
class Theta:
    """The eight input parameters of one area's epidemic.

    t0 is the epidemic start year (calendar), t1 the stabilization onset
    measured in years since t0, log_r0 the log infection rate at t0,
    beta0..beta3 the r-trend coefficients, and beta4 the clinic bias on the
    probit scale.
    """

    t0: float
    t1: float
    log_r0: float
    beta0: float
    beta1: float
    beta2: float
    beta3: float
    beta4: float

    def to_array(self) -> np.ndarray:
        return np.array(
            [self.t0, self.t1, self.log_r0, self.beta0, self.beta1,
             self.beta2, self.beta3, self.beta4],
            dtype=float,
        )

    @classmethod
    def from_array(cls, x) -> "Theta":
        x = np.asarray(x, dtype=float)
        if x.shape != (N_PARAMS,):
            raise ValueError(f"expected {N_PARAMS} parameters, got shape {x.shape}")
        return cls(*(float(v) for v in x))

    def rounded(self) -> "Theta":
        """Copy with t0 and t1 rounded to one decimal (the model's time grid)."""
        return Theta(
            round(self.t0, 1), round(self.t1, 1), self.log_r0,
            self.beta0, self.beta1, self.beta2, self.beta3, self.beta4,
        )


@dataclass(frozen=True)
class DemographicSchedule:
    """Constant demographic rates standing in for external life-tables.

    mu: non-AIDS mortality (per person-year); a50: ageing out of the 15-49
    window (per person-year); m: net migration (per person-year);
    entry_rate: new adults entering, as a fraction of the current population
    per year; delta: HIV death rate applied to the infected group
    (per person-year); n_init: adult population at simulation start.
    """

    mu: float
    a50: float
    m: float
    entry_rate: float
    delta: float
    n_init: float

    def __post_init__(self):
        for name in ("mu", "a50", "entry_rate", "delta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.n_init <= 0:
            raise ValueError("n_init must be > 0")
        if self.mu + self.a50 >= 1.0:
            raise ValueError("mu + a50 must be < 1 per year")


@dataclass(frozen=True)
class EpiState:
    """Instantaneous state of the two-compartment system."""

    z: float
    y: float
    r: float
    t: float

    @property
    def prevalence(self) -> float:
        n = self.z + self.y
        return self.y / n if n > 0 else 0.0


@dataclass(frozen=True)
class Projection:
    """Yearly trajectory produced by the dynamic model.

    clamped_years marks years in which the integrator had to clamp a negative
    state or cap the infection rate; such years are unreliable and the
    likelihood treats them as rejections.
    """

    years: np.ndarray
    rho: np.ndarray
    incidence: np.ndarray
    r_series: np.ndarray
    y_series: np.ndarray
    n_series: np.ndarray
    clamped_years: np.ndarray

    def __post_init__(self):
        n = len(self.years)
        for name in ("rho", "incidence", "r_series", "y_series", "n_series",
                     "clamped_years"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length does not match years")

    @property
    def any_clamped(self) -> bool:
        return bool(self.clamped_years.any())

    def year_index(self, year: int) -> int:
        i = int(year) - int(self.years[0])
        if i < 0 or i >= len(self.years):
            raise ValueError(f"year {year} not covered by projection "
                             f"[{self.years[0]}, {self.years[-1]}]")
        return i


def r_trend_step(r_t: float, rho_t: float, rho_next: float, t: float,
                 theta: Theta, dt: float = 1.0) -> float:
    """One multiplicative update of the infection rate.

    Returns r(t + dt) = r_t * exp(dt * [beta1*(beta0 - r_t) - beta2*rho_t
    + beta3*gamma_t]) with gamma_t = (rho_next - rho_t) * max(t - t1, 0)
    / rho_t, taken as 0 while rho_t == 0.  ``t`` is on the same clock as
    theta.t1 (years since the epidemic start when called by the projector).
    """
    vals = (r_t, rho_t, rho_next, t)
    if not all(math.isfinite(v) for v in vals):
        raise NumericalModelError(f"non-finite input to r_trend_step: {vals}")
    if not (0.0 <= rho_t <= 1.0 and 0.0 <= rho_next <= 1.0):
        raise ValueError("prevalences must lie in [0, 1]")
    if r_t <= 0.0:
        raise ValueError("r_t must be > 0")
    if rho_t > 0.0:
        gamma = (rho_next - rho_t) * max(t - theta.t1, 0.0) / rho_t
    else:
        gamma = 0.0
    log_inc = dt * (theta.beta1 * (theta.beta0 - r_t)
                    - theta.beta2 * rho_t + theta.beta3 * gamma)
    return r_t * math.exp(log_inc)


def initial_state(theta: Theta, demog: DemographicSchedule) -> EpiState:
    """State at the (rounded) epidemic start year t0.

    Seeds the infection at prevalence 2.5e-5 of n_init.  project_epidemic
    additionally applies pre-t0 demographic drift to the population before
    seeding; with the default zero-growth schedule the two coincide.
    """
    t0 = round(theta.t0, 1)
    y = SEED_PREVALENCE * demog.n_init
    return EpiState(z=demog.n_init - y, y=y, r=math.exp(theta.log_r0), t=t0)


def project_epidemic(theta: Theta, demog: DemographicSchedule,
                     start_year: int, end_year: int) -> Projection:
    """Forward-simulate one parameter set and report yearly summaries.

    The simulation starts at max(1970, start_year) and reports integer years
    through end_year inclusive.  Incidence in year t is new infections during
    [t, t+1) divided by susceptible person-years over the same window.
    """
    theta = theta.rounded()
    sim_start = max(int(T0_MIN), int(start_year))
    if not (sim_start <= theta.t0 <= end_year):
        raise ValueError(
            f"t0={theta.t0} outside simulated range [{sim_start}, {end_year}]")
    batch = project_batch(theta.to_array()[None, :], demog, sim_start, end_year)
    return batch.single(0)


@dataclass(frozen=True)
class BatchProjection:
    """Trajectories for a batch of parameter draws (draw-major arrays)."""

    years: np.ndarray          # (Y,) integer years
    rho: np.ndarray            # (n, Y)
    incidence: np.ndarray      # (n, Y)
    r_series: np.ndarray       # (n, Y)
    y_series: np.ndarray       # (n, Y)
    n_series: np.ndarray       # (n, Y)
    clamped_years: np.ndarray  # (n, Y) bool

    def single(self, i: int) -> Projection:
        return Projection(
            years=self.years.copy(),
            rho=self.rho[i].copy(),
            incidence=self.incidence[i].copy(),
            r_series=self.r_series[i].copy(),
            y_series=self.y_series[i].copy(),
            n_series=self.n_series[i].copy(),
            clamped_years=self.clamped_years[i].copy(),
        )


def project_batch(thetas: np.ndarray, demog: DemographicSchedule,
                  start_year: int, end_year: int,
                  dt: float = DT) -> BatchProjection:
    """Simulate many parameter draws on a shared time grid.

    thetas is (n, 8) in PARAM_NAMES order; t0/t1 are rounded internally.
    Draws whose t0 falls after end_year simply never seed (all-zero
    prevalence); the caller decides how to score them.
    """
    thetas = np.asarray(thetas, dtype=float)
    if thetas.ndim != 2 or thetas.shape[1] != N_PARAMS:
        raise ValueError("thetas must be (n, 8)")
    if not np.all(np.isfinite(thetas)):
        bad = int(np.where(~np.isfinite(thetas).all(axis=1))[0][0])
        raise NumericalModelError(
            f"non-finite parameter draw at index {bad}: {thetas[bad]}")

    sim_start = max(int(T0_MIN), int(start_year))
    end_year = int(end_year)
    if end_year < sim_start:
        raise ValueError("end_year before simulation start")

    n = thetas.shape[0]
    steps_per_year = int(round(1.0 / dt))
    n_years = end_year - sim_start + 1
    # One extra year of sub-steps so the last reported year has a complete
    # incidence window [end_year, end_year + 1).
    n_steps = steps_per_year * (n_years)

    t0 = np.round(thetas[:, 0], 1)
    t1 = np.round(thetas[:, 1], 1)
    r0 = np.exp(thetas[:, 2])
    b0, b1, b2, b3 = (thetas[:, 3], thetas[:, 4], thetas[:, 5], thetas[:, 6])

    # Step index (on the sub-year grid) at which each draw seeds.
    k0 = np.rint((t0 - sim_start) / dt).astype(np.int64)

    z = np.full(n, float(demog.n_init))
    y = np.zeros(n)
    log_r = thetas[:, 2].copy()
    seeded = np.zeros(n, dtype=bool)

    years = np.arange(sim_start, end_year + 1, dtype=np.int64)
    rho_out = np.zeros((n, n_years))
    r_out = np.zeros((n, n_years))
    y_out = np.zeros((n, n_years))
    n_out = np.zeros((n, n_years))
    inf_py = np.zeros((n, n_years))
    sus_py = np.zeros((n, n_years))
    clamped = np.zeros((n, n_years), dtype=bool)

    demog_net = demog.entry_rate - demog.mu - demog.a50 + demog.m

    for k in range(n_steps):
        year_idx = k // steps_per_year

        # Seed draws whose start time falls on this grid point.
        to_seed = (k0 == k) & ~seeded
        if to_seed.any():
            n_now = z[to_seed] + y[to_seed]
            y[to_seed] = SEED_PREVALENCE * n_now
            z[to_seed] = n_now - y[to_seed]
            seeded |= to_seed

        pop = z + y
        rho = np.where(pop > 0, y / np.where(pop > 0, pop, 1.0), 0.0)

        if k % steps_per_year == 0:
            rho_out[:, year_idx] = rho
            r_out[:, year_idx] = np.exp(np.minimum(log_r, LOG_R_CAP))
            y_out[:, year_idx] = y
            n_out[:, year_idx] = pop

        r = np.exp(np.minimum(log_r, LOG_R_CAP))
        force = r * rho * z
        entry = demog.entry_rate * pop

        z_new = z + dt * (entry - force - (demog.mu + demog.a50 - demog.m) * z)
        y_new = y + dt * (force - (demog.delta + demog.a50 - demog.m) * y)

        neg = (z_new < 0.0) | (y_new < 0.0)
        if neg.any():
            clamped[neg, year_idx] = True
            np.maximum(z_new, 0.0, out=z_new)
            np.maximum(y_new, 0.0, out=y_new)

        inf_py[:, year_idx] += dt * force
        sus_py[:, year_idx] += dt * z

        pop_new = z_new + y_new
        rho_next = np.where(pop_new > 0,
                            y_new / np.where(pop_new > 0, pop_new, 1.0), 0.0)

        # r update: explicit scheme using the step-ahead prevalence; the
        # stabilization clock is years since the epidemic start.
        t_since_start = (k - k0) * dt
        active = (t_since_start - t1) > 0.0
        gamma = np.where(
            seeded & (rho > 0.0),
            (rho_next - rho) * np.where(active, t_since_start - t1, 0.0)
            / np.where(rho > 0.0, rho, 1.0),
            0.0,
        )
        log_inc = dt * (b1 * (b0 - r) - b2 * rho + b3 * gamma)
        log_r_new = np.where(seeded, log_r + log_inc, log_r)
        over = log_r_new > LOG_R_CAP
        if over.any():
            clamped[over, year_idx] = True
            log_r_new = np.minimum(log_r_new, LOG_R_CAP)

        z, y, log_r = z_new, y_new, log_r_new

        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(y))):
            bad = int(np.where(~(np.isfinite(z) & np.isfinite(y)))[0][0])
            raise NumericalModelError(
                f"non-finite state for parameter draw {thetas[bad]}")

    incidence = np.where(sus_py > 0, inf_py / np.where(sus_py > 0, sus_py, 1.0),
                         0.0)
    return BatchProjection(
        years=years, rho=rho_out, incidence=incidence, r_series=r_out,
        y_series=y_out, n_series=n_out, clamped_years=clamped,
    )
