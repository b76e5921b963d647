"""Wet-chemistry closed forms and the three-source comparison report.

The two conversion formulas are implemented exactly as printed, with no
dimensional correction: fat from Soxhlet extract masses and freeze-dried
weight, sodium from titrant volume. The comparison report joins database
values, model estimates, and chemical analysis per (sample, nutrient)
and summarizes how often the model lands within 10% of the chemistry.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .data import FoodItem
from .errors import DomainError, IngestError

CHEM_FIELDS = ("id", "nutrient", "chem_mean", "chem_sd", "method")


def fat_content(w_a: float, w_b: float, w_f: float) -> float:
    """Fat (g/100g) from extract flask masses and freeze-dried weight:
    0.05 * (W_a - W_b) * W_f."""
    if w_b < 0:
        raise DomainError(f"flask mass before extraction must be >= 0, got {w_b}")
    if w_a < w_b:
        raise DomainError(
            f"extract mass is negative: after-extraction {w_a} < before {w_b}"
        )
    if w_f <= 0:
        raise DomainError(f"freeze-dried sample weight must be > 0, got {w_f}")
    return 0.05 * (w_a - w_b) * w_f


def sodium_content(v: float) -> float:
    """Sodium (g/100g) from titrant volume (mL): 39.07 * V."""
    if v < 0:
        raise DomainError(f"titrant volume must be >= 0, got {v}")
    return 39.07 * v


@dataclass(frozen=True)
class ChemRecord:
    id: str
    nutrient: str
    chem_mean: float
    chem_sd: float
    method: str

    def __post_init__(self):
        if self.chem_sd < 0:
            raise DomainError(f"chem_sd must be >= 0, got {self.chem_sd}")


@dataclass(frozen=True)
class ComparisonRow:
    id: str
    nutrient: str
    bfpd_value: float
    model_value: float
    chem_mean: float
    chem_sd: float
    relative_error: float | None  # None when the chemistry mean is 0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "nutrient": self.nutrient,
            "bfpd_value": self.bfpd_value,
            "model_value": self.model_value,
            "chem_mean": self.chem_mean,
            "chem_sd": self.chem_sd,
            "relative_error": self.relative_error,
        }


def load_chem_csv(path: str | Path) -> list[ChemRecord]:
    p = Path(path)
    if not p.is_file():
        raise IngestError(f"chemistry CSV not found: {p}")
    records: list[ChemRecord] = []
    seen: set[tuple[str, str]] = set()
    with p.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{p}: empty chemistry CSV") from None
        if tuple(h.strip() for h in header) != CHEM_FIELDS:
            raise IngestError(
                f"{p}: header must be exactly {','.join(CHEM_FIELDS)}, got {','.join(header)}"
            )
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(CHEM_FIELDS):
                raise IngestError(f"{p}: line {line_no}: expected {len(CHEM_FIELDS)} fields")
            rid, nutrient, mean_s, sd_s, method = (c.strip() for c in row)
            try:
                mean, sd = float(mean_s), float(sd_s)
            except ValueError:
                raise IngestError(f"{p}: line {line_no}: non-numeric chem_mean/chem_sd") from None
            key = (rid, nutrient)
            if key in seen:
                raise IngestError(f"{p}: line {line_no}: duplicate record for {key}")
            seen.add(key)
            try:
                records.append(ChemRecord(rid, nutrient, mean, sd, method))
            except DomainError as exc:
                raise IngestError(f"{p}: line {line_no}: {exc}") from None
    return records


def _relative_error(model_value: float, chem_mean: float) -> float | None:
    if chem_mean == 0.0:
        return 0.0 if model_value == 0.0 else None
    return abs(model_value - chem_mean) / chem_mean


def three_source_report(
    items: Sequence[FoodItem],
    model_values: Mapping[tuple[str, str], float],
    chem_records: Sequence[ChemRecord],
    include_fat: bool = False,
) -> tuple[list[ComparisonRow], dict]:
    """Join database, model, and chemistry values per (id, nutrient).

    Fat rows are excluded unless ``include_fat`` is set. Returns the
    joined rows and a summary with the under-10% fraction and unmatched
    keys per source.
    """
    by_item = {item.id: item for item in items}
    rows: list[ComparisonRow] = []
    unmatched: dict[str, list] = {"no_manifest_item": [], "no_model_value": [], "skipped_fat": []}
    for rec in chem_records:
        if rec.nutrient == "fat" and not include_fat:
            unmatched["skipped_fat"].append([rec.id, rec.nutrient])
            continue
        item = by_item.get(rec.id)
        if item is None or rec.nutrient not in item.nutrients:
            unmatched["no_manifest_item"].append([rec.id, rec.nutrient])
            continue
        key = (rec.id, rec.nutrient)
        if key not in model_values:
            unmatched["no_model_value"].append([rec.id, rec.nutrient])
            continue
        model_value = float(model_values[key])
        rows.append(
            ComparisonRow(
                id=rec.id,
                nutrient=rec.nutrient,
                bfpd_value=item.nutrients[rec.nutrient].value,
                model_value=model_value,
                chem_mean=rec.chem_mean,
                chem_sd=rec.chem_sd,
                relative_error=_relative_error(model_value, rec.chem_mean),
            )
        )
    if not rows:
        raise DomainError("no (id, nutrient) keys joined across manifest, model, and chemistry")
    under_10 = sum(1 for r in rows if r.relative_error is not None and r.relative_error < 0.10)
    n_undefined = sum(1 for r in rows if r.relative_error is None)
    summary = {
        "n_rows": len(rows),
        "n_undefined_error": n_undefined,
        "under_10pct_fraction": under_10 / len(rows),
        "fat_included": include_fat,
        "unmatched": {k: v for k, v in unmatched.items() if v},
    }
    return rows, summary


def write_comparison_csv(rows: Sequence[ComparisonRow], path: str | Path) -> None:
    lines = ["id,nutrient,bfpd_value,model_value,chem_mean,chem_sd,relative_error"]
    for r in rows:
        err = "" if r.relative_error is None else repr(r.relative_error)
        lines.append(
            f"{r.id},{r.nutrient},{r.bfpd_value!r},{r.model_value!r},"
            f"{r.chem_mean!r},{r.chem_sd!r},{err}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_comparison_csv(path: str | Path) -> list[ComparisonRow]:
    """Inverse of write_comparison_csv; lets the summary be recomputed
    from the exported artifact alone."""
    rows: list[ComparisonRow] = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            err = rec["relative_error"]
            rows.append(
                ComparisonRow(
                    id=rec["id"],
                    nutrient=rec["nutrient"],
                    bfpd_value=float(rec["bfpd_value"]),
                    model_value=float(rec["model_value"]),
                    chem_mean=float(rec["chem_mean"]),
                    chem_sd=float(rec["chem_sd"]),
                    relative_error=None if err == "" else float(err),
                )
            )
    return rows


def summary_from_rows(rows: Sequence[ComparisonRow]) -> float:
    if not rows:
        raise DomainError("no rows to summarize")
    under = sum(1 for r in rows if r.relative_error is not None and r.relative_error < 0.10)
    return under / len(rows)


def write_report_json(rows: Sequence[ComparisonRow], summary: dict, path: str | Path) -> None:
    payload = {"summary": summary, "rows": [r.to_dict() for r in rows]}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
