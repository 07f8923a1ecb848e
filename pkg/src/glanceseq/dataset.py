"""Epoch ingestion, the label schema, binary problem enumeration and splits.

Input is two UTF-8 CSV files:

``glances.csv``
    ``epoch_id,t_ms,region`` with rows grouped by epoch and ordered by time;
    ``region`` is one of the eight canonical region names.
``labels.csv``
    ``epoch_id,variable,value``, one row per label.  ``age`` may be given in
    years and is binned with :func:`bin_age`.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping

import numpy as np

from ._io import atomic_write_text
from .errors import DegenerateSplit, DuplicateEpoch, MalformedEpoch, ParseError
from .glance import Epoch, GlanceEvent, GlanceRegion, resample_epoch, sequence_to_events, validate_events

log = logging.getLogger(__name__)

# variable -> values, both in enumeration order
SCHEMA = {
    "weather": ("clear", "raining"),
    "surface_condition": ("wet", "dry"),
    "lighting": ("day", "night_lit", "night_unlit"),
    "locality": ("city", "rural", "interstate"),
    "traffic_density": ("low", "medium", "high"),
    "alignment": ("straight", "curve"),
    "travel_lanes": ("le2", "ge3"),
    "traffic_divider": ("present", "absent"),
    "traffic_control": ("present", "absent"),
    "near_intersection": ("yes", "no"),
    "seatbelt": ("yes", "no"),
    "age": ("young", "middle", "mature"),
    "gender": ("male", "female"),
    "behavior": ("none", "following_too_closely", "failed_to_signal", "speeding"),
    "distraction": ("not_distracted", "adjusting_radio", "fatigue", "talking"),
}

# only pairs against the baseline value are considered for these variables
BASELINE_VALUES = {"behavior": "none", "distraction": "not_distracted"}

VARIABLE_TITLES = {
    "weather": "Weather",
    "surface_condition": "Surface Condition",
    "lighting": "Lighting",
    "locality": "Locality",
    "traffic_density": "Traffic Density",
    "alignment": "Alignment",
    "travel_lanes": "Travel Lanes",
    "traffic_divider": "Traffic Divider",
    "traffic_control": "Traffic Light/Sign",
    "near_intersection": "Near an Intersection",
    "seatbelt": "Seatbelt",
    "age": "Age",
    "gender": "Gender",
    "behavior": "Behavior",
    "distraction": "Distraction",
}

VALUE_TITLES = {
    "night_lit": "Night with Light",
    "night_unlit": "Night without Light",
    "le2": "2 or Less",
    "ge3": "3 or More",
    "absent": "Not Present",
    "following_too_closely": "Following Too Closely",
    "failed_to_signal": "Failed to Signal",
    "not_distracted": "Not Distracted",
    "adjusting_radio": "Adjusting Radio",
}

AGE_YOUNG_MIDDLE = 23.5
AGE_MIDDLE_MATURE = 40.5


def value_title(value: str) -> str:
    return VALUE_TITLES.get(value, value.replace("_", " ").title())


def bin_age(age_years: float) -> str:
    if age_years < AGE_YOUNG_MIDDLE:
        return "young"
    if age_years < AGE_MIDDLE_MATURE:
        return "middle"
    return "mature"


@dataclass(frozen=True)
class LabelSchema:
    variables: Mapping[str, tuple] = field(default_factory=lambda: dict(SCHEMA))

    def __post_init__(self):
        for var, values in self.variables.items():
            if len(set(values)) != len(values):
                raise ValueError(f"duplicate values for variable {var}")

    def normalize(self, variable: str, value: str) -> str:
        """Validate a label pair; returns the canonical value name."""
        if variable not in self.variables:
            raise KeyError(f"unknown variable {variable!r}")
        value = value.strip()
        if variable == "age" and value not in self.variables[variable]:
            try:
                return bin_age(float(value))
            except ValueError:
                pass
        if value not in self.variables[variable]:
            raise KeyError(f"unknown value {value!r} for variable {variable!r}")
        return value


@dataclass
class Dataset:
    epochs: dict
    schema: LabelSchema = field(default_factory=LabelSchema)

    def __len__(self):
        return len(self.epochs)

    def sequences(self, epoch_ids) -> list:
        return [resample_epoch(self.epochs[i]) for i in epoch_ids]

    def value_counts(self, variable: str) -> Counter:
        return Counter(e.labels[variable] for e in self.epochs.values() if variable in e.labels)


@dataclass
class IngestReport:
    total: int = 0
    accepted: int = 0
    rejected: list = field(default_factory=list)
    orphan_labels: int = 0

    @property
    def reason_counts(self) -> Counter:
        return Counter(reason for _, reason in self.rejected)

    def to_text(self) -> str:
        lines = [f"total {self.total}", f"accepted {self.accepted}", f"rejected {len(self.rejected)}"]
        for reason, n in sorted(self.reason_counts.items()):
            lines.append(f"reason {reason} {n}")
        if self.orphan_labels:
            lines.append(f"orphan_labels {self.orphan_labels}")
        lines += [f"REJECT {epoch_id} {reason}" for epoch_id, reason in self.rejected]
        return "\n".join(lines) + "\n"


def _rows(path, expected_header):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return
        if [h.strip() for h in header] != list(expected_header):
            raise ParseError(f"expected header {','.join(expected_header)}, got {','.join(header)}",
                             path=path, row=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(expected_header):
                raise ParseError(f"expected {len(expected_header)} fields, got {len(row)}",
                                 path=path, row=lineno)
            yield lineno, [x.strip() for x in row]


_REGIONS_BY_NAME = {r.label: r for r in GlanceRegion}


def _read_glances(path) -> dict:
    events: dict = {}
    last_id = None
    for lineno, (epoch_id, t_text, region_text) in _rows(path, ("epoch_id", "t_ms", "region")):
        try:
            t_ms = int(t_text)
        except ValueError:
            raise ParseError(f"bad timestamp {t_text!r}", path=path, row=lineno, token=t_text) from None
        region = _REGIONS_BY_NAME.get(region_text)
        if region is None:
            raise ParseError(f"unknown region {region_text!r}", path=path, row=lineno, token=region_text)
        if epoch_id != last_id:
            if epoch_id in events:
                raise DuplicateEpoch(f"epoch {epoch_id!r} appears in more than one block",
                                     path=path, row=lineno, token=epoch_id)
            events[epoch_id] = []
            last_id = epoch_id
        events[epoch_id].append(GlanceEvent(region, t_ms))
    return events


def _read_labels(path, schema: LabelSchema) -> dict:
    labels: dict = {}
    for lineno, (epoch_id, variable, value) in _rows(path, ("epoch_id", "variable", "value")):
        try:
            value = schema.normalize(variable, value)
        except KeyError as exc:
            raise ParseError(exc.args[0], path=path, row=lineno, token=value) from None
        current = labels.setdefault(epoch_id, {})
        if current.get(variable, value) != value:
            raise ParseError(f"conflicting {variable} labels for epoch {epoch_id!r}",
                             path=path, row=lineno, token=value)
        current[variable] = value
    return labels


def ingest(glances_csv, labels_csv, schema: LabelSchema | None = None):
    """Parse and validate the two input files.

    Returns ``(dataset, report)``.  Epochs whose events break the encoding
    rules are rejected and listed in the report; unparseable rows raise
    :class:`ParseError`.
    """
    schema = schema or LabelSchema()
    raw = _read_glances(glances_csv)
    labels = _read_labels(labels_csv, schema)
    report = IngestReport(total=len(raw))
    epochs = {}
    for epoch_id, events in raw.items():
        try:
            validate_events(events)
        except MalformedEpoch as exc:
            report.rejected.append((epoch_id, exc.reason))
            continue
        epochs[epoch_id] = Epoch(epoch_id, tuple(events), labels.get(epoch_id, {}))
    report.accepted = len(epochs)
    report.orphan_labels = sum(1 for epoch_id in labels if epoch_id not in raw)
    return Dataset(epochs, schema), report


def glances_csv_text(d: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch_id", "t_ms", "region"])
    for epoch in d.epochs.values():
        for ev in epoch.events:
            w.writerow([epoch.epoch_id, ev.t_ms, ev.region.label])
    return buf.getvalue()


def labels_csv_text(d: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch_id", "variable", "value"])
    for epoch in d.epochs.values():
        for variable in d.schema.variables:
            if variable in epoch.labels:
                w.writerow([epoch.epoch_id, variable, epoch.labels[variable]])
    return buf.getvalue()


def save_bundle(d: Dataset, out_dir, report: IngestReport | None = None) -> Path:
    """Write a dataset bundle: normalized CSVs plus a manifest with their SHA-256."""
    out_dir = Path(out_dir)
    glances, labels = glances_csv_text(d), labels_csv_text(d)
    atomic_write_text(out_dir / "glances.csv", glances)
    atomic_write_text(out_dir / "labels.csv", labels)
    digest = hashlib.sha256((glances + "\0" + labels).encode("utf-8")).hexdigest()
    manifest = {"format": "glanceseq-dataset", "version": 1, "epochs": len(d), "sha256": digest}
    atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if report is not None:
        atomic_write_text(out_dir / "ingest_report.txt", report.to_text())
    return out_dir


def load_bundle(path) -> Dataset:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    glances = (path / "glances.csv").read_text(encoding="utf-8")
    labels = (path / "labels.csv").read_text(encoding="utf-8")
    digest = hashlib.sha256((glances + "\0" + labels).encode("utf-8")).hexdigest()
    if digest != manifest.get("sha256"):
        raise ParseError("bundle content does not match its manifest hash", path=path)
    d, report = ingest(path / "glances.csv", path / "labels.csv")
    if report.rejected:
        raise ParseError("bundle contains invalid epochs", path=path)
    return d


@dataclass(frozen=True)
class BinaryProblem:
    name: str
    variable: str
    value_1: str
    value_2: str
    epochs_1: tuple
    epochs_2: tuple

    def __post_init__(self):
        if self.value_1 == self.value_2:
            raise ValueError("a problem needs two distinct values")
        if set(self.epochs_1) & set(self.epochs_2):
            raise ValueError("problem classes share epochs")

    @property
    def key(self) -> str:
        """Filesystem-safe identifier, e.g. ``weather__clear_vs_raining``."""
        return f"{self.variable}__{self.value_1}_vs_{self.value_2}"

    @property
    def class_names(self) -> tuple:
        return (self.value_1, self.value_2)


def problem_name(variable: str, value_1: str, value_2: str) -> str:
    return f"{VARIABLE_TITLES.get(variable, variable)} ({value_title(value_1)} vs {value_title(value_2)})"


def enumerate_problems(d: Dataset, min_epochs: int = 100) -> list:
    """All binary problems with at least ``min_epochs`` epochs on each side.

    Every unordered pair of values is used, except for behavior and
    distraction where each value is paired only with the baseline value.
    """
    by_value: dict = {}
    for epoch_id, epoch in d.epochs.items():
        for variable, value in epoch.labels.items():
            by_value.setdefault((variable, value), []).append(epoch_id)
    problems = []
    for variable, values in d.schema.variables.items():
        baseline = BASELINE_VALUES.get(variable)
        if baseline is not None:
            pairs = [(baseline, v) for v in values if v != baseline]
        else:
            pairs = [(a, b) for i, a in enumerate(values) for b in values[i + 1:]]
        for v1, v2 in pairs:
            e1 = tuple(by_value.get((variable, v1), ()))
            e2 = tuple(by_value.get((variable, v2), ()))
            if len(e1) < min_epochs or len(e2) < min_epochs:
                continue
            problems.append(BinaryProblem(problem_name(variable, v1, v2), variable, v1, v2, e1, e2))
    return problems


def find_problem(problems, name: str) -> BinaryProblem:
    """Look a problem up by display name or key."""
    for p in problems:
        if name in (p.name, p.key):
            return p
    raise KeyError(name)


def train_size(n: int, train_fraction: float) -> int:
    # round half up on an exact rational so 0.7 * 5 gives 4, not 3
    return int((Fraction(str(train_fraction)) * n + Fraction(1, 2)) // 1)


def split_items(items_1, items_2, train_fraction: float = 0.8, seed: int = 0):
    """Seeded per-class shuffle split; returns ``(train_1, train_2, test_1, test_2)``."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    out = []
    for items in (list(items_1), list(items_2)):
        order = rng.permutation(len(items))
        k = train_size(len(items), train_fraction)
        out.append(([items[i] for i in order[:k]], [items[i] for i in order[k:]]))
    (train_1, test_1), (train_2, test_2) = out
    if not (train_1 and train_2 and test_1 and test_2):
        raise DegenerateSplit(
            f"split of {len(train_1) + len(test_1)}/{len(train_2) + len(test_2)} epochs at "
            f"{train_fraction} leaves an empty part")
    return train_1, train_2, test_1, test_2


def split(problem: BinaryProblem, train_fraction: float = 0.8, seed: int = 0):
    return split_items(problem.epochs_1, problem.epochs_2, train_fraction, seed)


def sequences_to_dataset(labelled, variable: str, prefix: str = "synth") -> Dataset:
    """Wrap ``(SampledSequence, value)`` pairs as epochs labelled on ``variable``."""
    epochs = {}
    width = len(str(len(labelled)))
    for i, (seq, value) in enumerate(labelled):
        epoch_id = f"{prefix}-{i:0{width}d}"
        epochs[epoch_id] = Epoch(epoch_id, sequence_to_events(seq), {variable: value})
    return Dataset(epochs)
