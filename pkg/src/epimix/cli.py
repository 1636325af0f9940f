"""Command-line entry point wiring the fitting pipeline into batch runs.

Subcommands: synth | fit | combine | hyperfit | evaluate | project |
correlate.  All randomness flows from one seed; subcommands derive child
streams by hashing the command name and area id, so reruns with the same
config and seed are byte-identical (timestamps only appear in the sidecar
``created_utc`` field).  Exit codes: 0 ok, 2 config error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import json
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import fileio
from .config import DEFAULT_DEMOGRAPHY
from .evaluation import (SplitSpec, cross_area_correlation,
                         mae_clinic_prevalence, split)
from .fileio import DataFormatError, atomic_write_text
from .hyperfit import estimate_hyperparameters
from .imis import (ImisConfig, JointPosterior, WeightedSamples, combine_areas,
                   unique_efficiency)
from .likelihood import LikelihoodConfig
from .model import (DemographicSchedule, NumericalModelError, PARAM_NAMES,
                    Theta, project_epidemic)
from .pipeline import child_rng, fit_area
from .priors import Hyper, PRIOR_LOCATIONS, PRIOR_SCALES, solved_t0_scale
from .synth import SynthSpec, generate_area, generate_country

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


class ConfigError(ValueError):
    """Bad run configuration (paths, parameters, missing seed)."""


@dataclasses.dataclass
class RunConfig:
    """Batch-run settings; JSON config files override the defaults."""

    seed: int | None = None
    out_dir: str = "."
    imis: ImisConfig = dataclasses.field(default_factory=ImisConfig)
    demography: DemographicSchedule = dataclasses.field(
        default_factory=lambda: DemographicSchedule(**DEFAULT_DEMOGRAPHY))
    likelihood: LikelihoodConfig = dataclasses.field(
        default_factory=LikelihoodConfig)
    hyper_path: str | None = None
    n_candidates: int = 1_000_000
    n_resample: int = 1000
    candidate_weighting: str = "proportional"
    mae_granularity: str = "year"

    @classmethod
    def load(cls, path: str | None, seed: int | None,
             out_dir: str | None) -> "RunConfig":
        doc = {}
        if path is not None:
            if not Path(path).exists():
                raise ConfigError(f"config file not found: {path}")
            doc = fileio.read_json(path)
        try:
            cfg = cls(
                seed=doc.get("seed"),
                out_dir=doc.get("out_dir", "."),
                imis=ImisConfig(**doc.get("imis", {})),
                demography=DemographicSchedule(
                    **{**DEFAULT_DEMOGRAPHY, **doc.get("demography", {})}),
                likelihood=LikelihoodConfig(
                    **{k: (tuple(v) if k == "log_s2_bounds" else v)
                       for k, v in doc.get("likelihood", {}).items()}),
                hyper_path=doc.get("hyper_path"),
                n_candidates=int(doc.get("n_candidates", 1_000_000)),
                n_resample=int(doc.get("n_resample", 1000)),
                candidate_weighting=doc.get("candidate_weighting",
                                            "proportional"),
                mae_granularity=doc.get("mae_granularity", "year"),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        if seed is not None:
            cfg.seed = seed
        if out_dir is not None:
            cfg.out_dir = out_dir
        if cfg.candidate_weighting not in ("proportional", "uniform"):
            raise ConfigError("candidate_weighting must be proportional "
                              "or uniform")
        if cfg.mae_granularity not in ("year", "clinic"):
            raise ConfigError("mae_granularity must be year or clinic")
        return cfg

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("this command requires --seed (or seed in the "
                              "config file)")
        return int(self.seed)

    def load_hyper(self) -> Hyper:
        if self.hyper_path is None:
            return Hyper.default()
        if not Path(self.hyper_path).exists():
            raise ConfigError(f"hyper file not found: {self.hyper_path}")
        with open(self.hyper_path, encoding="utf-8") as fh:
            return Hyper.from_json(fh.read())


def _sidecar(cfg: RunConfig, extra: dict) -> dict:
    doc = {
        "seed": cfg.seed,
        "imis": dataclasses.asdict(cfg.imis),
        "metadata": {"created_utc":
                     datetime.now(timezone.utc).isoformat(timespec="seconds")},
    }
    doc.update(extra)
    return doc


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("EPIMIX_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, cfg: RunConfig) -> None:
    seed = cfg.require_seed()
    doc = fileio.read_json(args.spec)
    try:
        k = int(doc["areas"])
        template = SynthSpec(
            theta_true=Theta.from_array(
                np.array([doc.get("theta", {}).get(p, PRIOR_LOCATIONS[i])
                          for i, p in enumerate(PARAM_NAMES)])),
            n_clinics=int(doc["clinics"]),
            year_start=int(doc["year_start"]),
            n_years=int(doc["n_years"]),
            n_per_clinic_year=int(doc["n_per_clinic_year"]),
            sigma_clinic=float(doc.get("sigma_clinic", 0.1)),
            demog=cfg.demography,
            area_id=doc.get("area_prefix", "area"),
            survey_year=doc.get("survey_year"),
            survey_se_probit=float(doc.get("survey_se_probit", 0.05)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid synth spec: {exc}") from exc
    rng = child_rng(seed, "synth")

    datasets, surveys, truth = {}, {}, {}
    if "thetas" in doc:
        for a, vec in enumerate(doc["thetas"]):
            theta = Theta.from_array(np.array([vec[p] for p in PARAM_NAMES]))
            spec = dataclasses.replace(template, theta_true=theta,
                                       area_id=f"{template.area_id}{a + 1}")
            anc, svy, proj = generate_area(spec, rng)
            datasets[anc.area_id] = anc
            surveys[anc.area_id] = svy
            truth[anc.area_id] = {"theta": vec,
                                  "years": proj.years.tolist(),
                                  "rho": proj.rho.tolist()}
    else:
        hyper = cfg.load_hyper()
        for anc, svy, proj, theta in generate_country(hyper, k, template, rng):
            datasets[anc.area_id] = anc
            surveys[anc.area_id] = svy
            truth[anc.area_id] = {
                "theta": dict(zip(PARAM_NAMES, theta.to_array().tolist())),
                "years": proj.years.tolist(),
                "rho": proj.rho.tolist()}

    out = Path(cfg.out_dir)
    fileio.write_anc_csv(out / "anc.csv", datasets)
    if any(surveys.values()):
        fileio.write_survey_csv(out / "surveys.csv", surveys)
    fileio.write_json(out / "truth.json", truth)
    print(f"wrote {out / 'anc.csv'} ({sum(len(d) for d in datasets.values())} "
          f"observations, {len(datasets)} areas)")


def _holdout_train(data, scenario: str, low_quality: bool):
    if scenario == "none":
        return data
    spec = SplitSpec(scenario="mid6" if low_quality else "last3")
    return split(data, spec).train


def _fit_one(item):
    (area, data, svys, cfg, seed, scenario, low_area) = item
    train = _holdout_train(data, scenario,
                           low_quality=(scenario == "mid6" and area == low_area))
    rng = child_rng(seed, "fit", area)
    ws = fit_area(train, svys, cfg.demography, cfg.imis, rng,
                  like_cfg=cfg.likelihood)
    return area, train, ws


def cmd_fit(args, cfg: RunConfig) -> None:
    seed = cfg.require_seed()
    datasets = fileio.read_anc_csv(args.data)
    surveys = fileio.read_survey_csv(args.surveys) if args.surveys else {}
    if args.area:
        missing = [a for a in args.area if a not in datasets]
        if missing:
            raise DataFormatError(f"area(s) not in {args.data}: {missing}")
        datasets = {a: datasets[a] for a in args.area}

    items = [(area, datasets[area], surveys.get(area, []), cfg, seed,
              args.holdout, args.low_quality_area)
             for area in sorted(datasets)]
    n_workers = min(_threads(), len(items))
    if n_workers > 1:
        with concurrent.futures.ProcessPoolExecutor(n_workers) as pool:
            results = list(pool.map(_fit_one, items))
    else:
        results = [_fit_one(item) for item in items]

    out = Path(cfg.out_dir)
    for area, train, ws in results:
        atomic_write_text(out / f"samples_{area}.csv", ws.to_csv())
        fileio.write_json(out / f"samples_{area}.json", _sidecar(cfg, {
            "area_id": area,
            "holdout": args.holdout,
            "train_years": train.years,
            "n_samples": len(ws),
        }))
        print(f"area {area}: {len(ws)} stored samples -> "
              f"{out / f'samples_{area}.csv'}")


def _load_weighted(path: Path) -> WeightedSamples:
    sidecar = path.with_suffix(".json")
    area_id = path.stem.replace("samples_", "")
    if sidecar.exists():
        area_id = fileio.read_json(sidecar).get("area_id", area_id)
    with open(path, encoding="utf-8") as fh:
        return WeightedSamples.from_csv(fh.read(), area_id=area_id)


def _joint_csv(jp: JointPosterior) -> str:
    cols = ["weight"]
    for a, area in enumerate(jp.area_ids):
        cols += [f"{area}.{p}" for p in PARAM_NAMES]
    lines = [",".join(cols)]
    for i in range(jp.n_resample):
        row = [repr(float(jp.weights[i]))]
        for a in range(jp.n_areas):
            row += [repr(float(v)) for v in jp.joints[i, a]]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _load_joint(path: Path) -> JointPosterior:
    doc = fileio.read_json(path.with_suffix(".json"))
    area_ids = tuple(doc["area_ids"])
    with open(path, encoding="utf-8") as fh:
        rows = fh.read().strip().split("\n")
    header = rows[0].split(",")
    expected = ["weight"] + [f"{a}.{p}" for a in area_ids for p in PARAM_NAMES]
    if header != expected:
        raise DataFormatError(f"{path}: unexpected joint header")
    data = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    k = len(area_ids)
    joints = data[:, 1:].reshape(len(data), k, len(PARAM_NAMES))
    return JointPosterior(joints=joints, weights=data[:, 0],
                          unique_count=int(doc["unique_count"]),
                          area_ids=area_ids)


def cmd_combine(args, cfg: RunConfig) -> None:
    seed = cfg.require_seed()
    per_area = [_load_weighted(Path(p)) for p in args.samples]
    hyper = cfg.load_hyper()
    rng = child_rng(seed, "combine", *(ws.area_id for ws in per_area))
    jp = combine_areas(per_area, hyper, n_candidates=cfg.n_candidates,
                       n_resample=cfg.n_resample, rng=rng,
                       candidate_weighting=cfg.candidate_weighting)
    out = Path(cfg.out_dir)
    atomic_write_text(out / "joint.csv", _joint_csv(jp))
    fileio.write_json(out / "joint.json", _sidecar(cfg, {
        "area_ids": list(jp.area_ids),
        "unique_count": jp.unique_count,
        "n_resample": jp.n_resample,
        "unique_efficiency": unique_efficiency(jp),
    }))
    print(f"joint posterior: {jp.unique_count} unique of {jp.n_resample} "
          f"resamples -> {out / 'joint.csv'}")


def cmd_hyperfit(args, cfg: RunConfig) -> None:
    table = fileio.read_estimates_csv(args.estimates)
    if len(table.countries) < 2 and not args.allow_single_country:
        raise DataFormatError(
            "hyperparameter estimation needs at least 2 countries "
            "(pass --allow-single-country to override)")
    mu0 = PRIOR_LOCATIONS.copy()
    sigma0 = PRIOR_SCALES.copy()
    sigma0[0] = solved_t0_scale()
    pi0, rho0 = estimate_hyperparameters(
        table, mu0, sigma0, favor_large_pi=not args.literal_pi_prior)
    hyper = Hyper(mu0=mu0, sigma0=sigma0, rho0=rho0, pi0=pi0)
    out = Path(cfg.out_dir)
    atomic_write_text(out / "hyper.json", hyper.to_json())
    print(f"wrote {out / 'hyper.json'}")


def cmd_evaluate(args, cfg: RunConfig) -> None:
    datasets = fileio.read_anc_csv(args.data)
    jp = _load_joint(Path(args.joint)) if args.joint else None
    fit_dir = Path(args.fit_dir)
    metrics = {}
    for area in sorted(datasets):
        scenario = ("mid6" if (args.scenario == "mid6"
                               and area == args.low_quality_area)
                    else "last3")
        parts = split(datasets[area], SplitSpec(scenario=scenario))
        ws_path = fit_dir / f"samples_{area}.csv"
        if not ws_path.exists():
            raise DataFormatError(f"no fit samples for area {area}: {ws_path}")
        ws = _load_weighted(ws_path)
        entry = {"scenario": scenario}
        segments = [("prediction", "late")]
        if scenario == "mid6" and len(parts.test_early) > 0:
            segments.append(("early", "early"))
        for label, seg in segments:
            mae_ind = mae_clinic_prevalence(
                ws, parts, which=seg, demog=cfg.demography,
                granularity=cfg.mae_granularity)
            entry[label] = {"mae_independent": mae_ind}
            if jp is not None and area in jp.area_ids:
                mae_mix = mae_clinic_prevalence(
                    jp, parts, which=seg, demog=cfg.demography,
                    area_id=area, granularity=cfg.mae_granularity)
                entry[label]["mae_mixture"] = mae_mix
                entry[label]["improvement"] = mae_ind - mae_mix
        metrics[area] = entry
    out = Path(cfg.out_dir)
    fileio.write_json(out / "metrics.json", metrics)
    print(f"wrote {out / 'metrics.json'}")


def cmd_project(args, cfg: RunConfig) -> None:
    doc = fileio.read_json(args.theta)
    try:
        theta = Theta.from_array(np.array([doc[p] for p in PARAM_NAMES]))
    except KeyError as exc:
        raise ConfigError(f"theta JSON missing parameter {exc}") from exc
    proj = project_epidemic(theta, cfg.demography, args.start, args.end)
    lines = ["year,rho,incidence,r,y,n,clamped"]
    for i, year in enumerate(proj.years):
        lines.append(
            f"{year},{proj.rho[i]!r},{proj.incidence[i]!r},"
            f"{proj.r_series[i]!r},{proj.y_series[i]!r},"
            f"{proj.n_series[i]!r},{int(proj.clamped_years[i])}")
    out = Path(cfg.out_dir)
    atomic_write_text(out / "trajectory.csv", "\n".join(lines) + "\n")
    print(f"wrote {out / 'trajectory.csv'}")


def cmd_correlate(args, cfg: RunConfig) -> None:
    jp = _load_joint(Path(args.joint))
    years, corr = cross_area_correlation(jp, args.quantity, cfg.demography,
                                         start_year=1970, end_year=args.end)
    lines = ["year,area_i,area_j,corr"]
    for t, year in enumerate(years):
        for i in range(jp.n_areas):
            for j in range(i + 1, jp.n_areas):
                v = corr[t, i, j]
                val = "" if math.isnan(v) else repr(float(v))
                lines.append(f"{year},{jp.area_ids[i]},{jp.area_ids[j]},{val}")
    out = Path(cfg.out_dir)
    atomic_write_text(out / "correlations.csv", "\n".join(lines) + "\n")
    print(f"wrote {out / 'correlations.csv'}")


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epimix",
        description="Fit multi-area epidemic curves and combine posteriors "
                    "under a cross-area mixture prior.")
    parser.add_argument("--config", help="JSON run-config file")
    parser.add_argument("--seed", type=int, help="master random seed")
    parser.add_argument("--out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic surveillance data")
    p.add_argument("--spec", required=True, help="synthetic-design JSON")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit areas independently by IMIS")
    p.add_argument("--data", required=True, help="clinic CSV")
    p.add_argument("--surveys", help="survey CSV")
    p.add_argument("--area", action="append", help="restrict to area id")
    p.add_argument("--holdout", choices=("none", "last3", "mid6"),
                   default="none", help="train on the scenario's train split")
    p.add_argument("--low-quality-area",
                   help="area that gets the mid6 split under --holdout mid6")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("combine",
                       help="reweight per-area samples into a joint posterior")
    p.add_argument("--samples", nargs="+", required=True,
                   help="per-area sample CSVs")
    p.set_defaults(func=cmd_combine)

    p = sub.add_parser("hyperfit",
                       help="estimate mixture hyperparameters from point "
                            "estimates")
    p.add_argument("--estimates", required=True, help="point-estimate CSV")
    p.add_argument("--literal-pi-prior", action="store_true",
                   help="use the Beta(1,1.5) weight prior instead of the "
                        "moment-matched Beta(1.5,1)")
    p.add_argument("--allow-single-country", action="store_true")
    p.set_defaults(func=cmd_hyperfit)

    p = sub.add_parser("evaluate", help="hold-out prediction metrics")
    p.add_argument("--data", required=True, help="full clinic CSV")
    p.add_argument("--scenario", choices=("last3", "mid6"), default="last3")
    p.add_argument("--low-quality-area")
    p.add_argument("--fit-dir", required=True,
                   help="directory with samples_<area>.csv fits")
    p.add_argument("--joint", help="joint posterior CSV from combine")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("project", help="project one parameter set")
    p.add_argument("--theta", required=True, help="theta JSON")
    p.add_argument("--start", type=int, default=1970)
    p.add_argument("--end", type=int, default=2015)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("correlate", help="cross-area posterior correlations")
    p.add_argument("--joint", required=True)
    p.add_argument("--quantity", choices=("prevalence", "incidence"),
                   default="prevalence")
    p.add_argument("--end", type=int, default=2015)
    p.set_defaults(func=cmd_correlate)
    return parser


def _fail(kind: str, code: int, exc: BaseException) -> int:
    doc = {"error": {"kind": kind, "code": code, "message": str(exc)}}
    print(json.dumps(doc), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, args.seed, args.out)
        args.func(args, cfg)
    except ConfigError as exc:
        return _fail("config", EXIT_CONFIG, exc)
    except (DataFormatError, FileNotFoundError) as exc:
        return _fail("data", EXIT_DATA, exc)
    except (NumericalModelError, np.linalg.LinAlgError, RuntimeError) as exc:
        return _fail("numerical", EXIT_NUMERICAL, exc)
    except ValueError as exc:
        return _fail("data", EXIT_DATA, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
