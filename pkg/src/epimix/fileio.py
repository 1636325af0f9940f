"""On-disk formats: surveillance CSVs, sample files, and atomic writes.

The clinic-data contract is a UTF-8 CSV with header
``area,clinic,year,pos,tested``; years are integers.  Malformed rows are
reported with their line number, missing columns by name.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .hyperfit import PointEstimateTable
from .likelihood import AncDataset, AncObservation, SurveyObservation
from .model import PARAM_NAMES

ANC_COLUMNS = ["area", "clinic", "year", "pos", "tested"]
SURVEY_COLUMNS = ["area", "year", "prevalence", "se_probit"]
ESTIMATE_COLUMNS = ["country", "area"] + list(PARAM_NAMES)


class DataFormatError(ValueError):
    """Malformed or inconsistent input data."""


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temp file and rename so readers never see partial output."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _check_header(header, expected, path) -> None:
    missing = [c for c in expected if c not in header]
    if missing:
        raise DataFormatError(f"{path}: missing column '{missing[0]}'")


def read_anc_csv(path: str | Path, min_year: int = 1970
                 ) -> dict[str, AncDataset]:
    """All areas' clinic observations, keyed by area id."""
    path = Path(path)
    rows_by_area: dict[str, list[AncObservation]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataFormatError(f"{path}: empty file")
        _check_header(reader.fieldnames, ANC_COLUMNS, path)
        for lineno, row in enumerate(reader, start=2):
            try:
                year = int(row["year"])
                obs = AncObservation(
                    clinic_id=row["clinic"], year=year,
                    y=int(row["pos"]), n=int(row["tested"]))
            except (TypeError, ValueError) as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from exc
            if year < min_year:
                raise DataFormatError(
                    f"{path}: line {lineno}: year {year} precedes the "
                    f"simulation start {min_year}")
            rows_by_area.setdefault(row["area"], []).append(obs)
    out = {}
    for area, obs in rows_by_area.items():
        try:
            out[area] = AncDataset(observations=tuple(obs), area_id=area)
        except ValueError as exc:
            raise DataFormatError(f"{path}: area {area}: {exc}") from exc
    return out


def write_anc_csv(path: str | Path, datasets: dict[str, AncDataset]) -> None:
    lines = [",".join(ANC_COLUMNS)]
    for area in sorted(datasets):
        for o in datasets[area].observations:
            lines.append(f"{area},{o.clinic_id},{o.year},{o.y},{o.n}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_survey_csv(path: str | Path) -> dict[str, list[SurveyObservation]]:
    path = Path(path)
    out: dict[str, list[SurveyObservation]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataFormatError(f"{path}: empty file")
        _check_header(reader.fieldnames, SURVEY_COLUMNS, path)
        for lineno, row in enumerate(reader, start=2):
            try:
                obs = SurveyObservation(
                    year=int(row["year"]),
                    prevalence=float(row["prevalence"]),
                    se_probit=float(row["se_probit"]))
            except (TypeError, ValueError) as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from exc
            out.setdefault(row["area"], []).append(obs)
    return out


def write_survey_csv(path: str | Path,
                     surveys: dict[str, list[SurveyObservation]]) -> None:
    lines = [",".join(SURVEY_COLUMNS)]
    for area in sorted(surveys):
        for s in surveys[area]:
            lines.append(f"{area},{s.year},{s.prevalence!r},{s.se_probit!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_estimates_csv(path: str | Path) -> PointEstimateTable:
    """Country/area posterior-mean table for hyperparameter estimation."""
    path = Path(path)
    by_country: dict[str, list[list[float]]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataFormatError(f"{path}: empty file")
        _check_header(reader.fieldnames, ESTIMATE_COLUMNS, path)
        for lineno, row in enumerate(reader, start=2):
            try:
                vec = [float(row[c]) for c in PARAM_NAMES]
            except (TypeError, ValueError) as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from exc
            by_country.setdefault(row["country"], []).append(vec)
    try:
        return PointEstimateTable(
            countries=tuple(sorted(by_country)),
            estimates=tuple(np.asarray(by_country[c], dtype=float)
                            for c in sorted(by_country)))
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def write_json(path: str | Path, doc) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_json(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
