"""Glance regions, epochs, 4 Hz discretization and transition matrices.

An epoch is six seconds of driving described by *glance transition events*:
the region the driver looks at when the epoch starts (``t_ms == 0``) followed
by every change of region.  The classifier works on a fixed grid instead, so
each epoch is sampled every 250 ms with a zero-order hold, giving exactly 25
region codes per epoch.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._io import atomic_write_text
from .errors import EmptyInput, MalformedEpoch

EPOCH_MS = 6000
SAMPLE_PERIOD_MS = 250
N_SAMPLES = 25
N_REGIONS = 8


class GlanceRegion(enum.IntEnum):
    REARVIEW_MIRROR = 1
    CENTER_STACK = 2
    EYES_CLOSED = 3
    INTERIOR_OBJECT = 4
    RIGHT = 5
    FORWARD = 6
    INSTRUMENT_CLUSTER = 7
    LEFT = 8

    @property
    def label(self) -> str:
        """Canonical lower-case name used in CSV files."""
        return self.name.lower()

    @classmethod
    def parse(cls, token) -> "GlanceRegion":
        """Accept a canonical name, a code, or a member."""
        if isinstance(token, cls):
            return token
        if isinstance(token, (int, np.integer)):
            return cls(int(token))
        text = str(token).strip().lower()
        if text.isdigit():
            return cls(int(text))
        try:
            return cls[text.upper()]
        except KeyError:
            raise ValueError(f"unknown glance region {token!r}") from None


REGION_NAMES = tuple(r.label for r in GlanceRegion)


@dataclass(frozen=True)
class GlanceEvent:
    region: GlanceRegion
    t_ms: int

    def __post_init__(self):
        object.__setattr__(self, "region", GlanceRegion.parse(self.region))
        object.__setattr__(self, "t_ms", int(self.t_ms))


def validate_events(events: Sequence[GlanceEvent], duration_ms: int = EPOCH_MS) -> None:
    """Raise :class:`MalformedEpoch` unless ``events`` is a valid epoch encoding.

    The exception's ``reason`` attribute carries a short machine-readable code.
    """
    if len(events) == 0:
        raise MalformedEpoch("epoch has no events", reason="empty")
    if events[0].t_ms != 0:
        raise MalformedEpoch(
            f"first event at t_ms={events[0].t_ms}, expected 0", reason="first_event_not_zero")
    for prev, cur in zip(events, events[1:]):
        if cur.t_ms <= prev.t_ms:
            raise MalformedEpoch(
                f"timestamp {cur.t_ms} does not follow {prev.t_ms}", reason="non_increasing_time")
        if cur.region == prev.region:
            raise MalformedEpoch(
                f"self-transition to {cur.region.label} at t_ms={cur.t_ms}", reason="self_transition")
    if events[-1].t_ms >= duration_ms:
        raise MalformedEpoch(
            f"event at t_ms={events[-1].t_ms} outside [0, {duration_ms})", reason="time_out_of_range")


@dataclass(frozen=True)
class Epoch:
    epoch_id: str
    events: tuple
    labels: Mapping[str, str] = field(default_factory=dict)
    duration_ms: int = EPOCH_MS

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "labels", dict(self.labels))

    @classmethod
    def from_pairs(cls, epoch_id, pairs, labels=None) -> "Epoch":
        """Build an epoch from ``(region, t_ms)`` pairs."""
        return cls(epoch_id, tuple(GlanceEvent(r, t) for r, t in pairs), labels or {})


@dataclass(frozen=True)
class SampledSequence:
    """25 region codes (1..8) sampled at ``t_i = 250 * i`` ms."""

    states: tuple

    def __post_init__(self):
        states = tuple(int(s) for s in self.states)
        if len(states) != N_SAMPLES:
            raise ValueError(f"sampled sequence must have {N_SAMPLES} states, got {len(states)}")
        if any(s < 1 or s > N_REGIONS for s in states):
            raise ValueError(f"state codes must lie in 1..{N_REGIONS}: {states}")
        object.__setattr__(self, "states", states)

    @property
    def symbols(self) -> np.ndarray:
        """Zero-based observation indices, as consumed by the HMM code."""
        return np.asarray(self.states, dtype=np.intp) - 1

    @classmethod
    def from_symbols(cls, symbols) -> "SampledSequence":
        return cls(tuple(int(s) + 1 for s in symbols))

    def __len__(self):
        return N_SAMPLES

    def __iter__(self):
        return iter(self.states)


def sample_grid(times_ms, regions, grid_ms) -> np.ndarray:
    """Zero-order hold of an event timeline evaluated at ``grid_ms``.

    A sample taken exactly at an event time sees the new region.
    """
    idx = np.searchsorted(np.asarray(times_ms), np.asarray(grid_ms), side="right") - 1
    if np.any(idx < 0):
        raise MalformedEpoch("grid starts before the first event", reason="first_event_not_zero")
    return np.asarray(regions)[idx]


SAMPLE_TIMES_MS = np.arange(N_SAMPLES) * SAMPLE_PERIOD_MS


def resample_epoch(epoch: Epoch) -> SampledSequence:
    validate_events(epoch.events, epoch.duration_ms)
    times = [e.t_ms for e in epoch.events]
    regions = [int(e.region) for e in epoch.events]
    return SampledSequence(tuple(sample_grid(times, regions, SAMPLE_TIMES_MS)))


def sequence_to_events(seq: SampledSequence) -> tuple:
    """Collapse a sampled sequence back to transition events on the 250 ms grid.

    The last sample sits at t = 6000, which is not a valid event time, so a
    change there is encoded 1 ms earlier; resampling reproduces ``seq``.
    """
    events = []
    for i, s in enumerate(seq.states):
        if not events or events[-1].region != s:
            events.append(GlanceEvent(GlanceRegion(s), min(i * SAMPLE_PERIOD_MS, EPOCH_MS - 1)))
    return tuple(events)


def information_loss(epoch: Epoch, seq: SampledSequence | None = None) -> float:
    """Fraction of the epoch during which the sampled reconstruction is wrong.

    The reconstruction holds ``states[i]`` over ``[250 i, 250 (i + 1))`` with the
    last bin clipped at the epoch end.  The result is the total disagreement
    time with the original event timeline divided by the epoch duration.
    """
    validate_events(epoch.events, epoch.duration_ms)
    if seq is None:
        seq = resample_epoch(epoch)
    duration = epoch.duration_ms
    ev_times = np.array([e.t_ms for e in epoch.events])
    ev_regions = np.array([int(e.region) for e in epoch.events])
    bin_edges = np.minimum(SAMPLE_TIMES_MS, duration)
    cuts = np.unique(np.concatenate([ev_times, bin_edges, [duration]]))
    cuts = cuts[cuts <= duration]
    starts, ends = cuts[:-1], cuts[1:]
    orig = ev_regions[np.searchsorted(ev_times, starts, side="right") - 1]
    recon = np.asarray(seq.states)[np.searchsorted(SAMPLE_TIMES_MS, starts, side="right") - 1]
    wrong = np.sum((ends - starts)[orig != recon])
    return float(wrong) / duration


@dataclass(frozen=True)
class TransitionMatrix:
    counts: np.ndarray
    probs: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class DiffMatrix:
    delta: np.ndarray


def normalize_counts(counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts, dtype=float)
    sums = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = np.where(sums > 0, counts / np.where(sums > 0, sums, 1.0), 0.0)
    return probs


def transition_matrix(seqs: Iterable[SampledSequence]) -> TransitionMatrix:
    """Tally adjacent region pairs (self-transitions included) and row-normalize."""
    arr = np.array([s.symbols for s in seqs], dtype=np.intp).reshape(-1, N_SAMPLES)
    if arr.shape[0] == 0:
        raise EmptyInput("transition_matrix needs at least one sequence")
    counts = np.zeros((N_REGIONS, N_REGIONS), dtype=np.int64)
    np.add.at(counts, (arr[:, :-1].ravel(), arr[:, 1:].ravel()), 1)
    return TransitionMatrix(counts, normalize_counts(counts))


def matrix_difference(a: TransitionMatrix, b: TransitionMatrix) -> DiffMatrix:
    return DiffMatrix(np.asarray(a.probs, dtype=float) - np.asarray(b.probs, dtype=float))


def _format_rows(rows, fmt) -> str:
    lines = [",".join(REGION_NAMES)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _fmt_real(v) -> str:
    # keep "-0.000000" out of the exports
    return f"{round(float(v), 6) + 0.0:.6f}"


def _round_rows_to_one(probs, digits: int = 6) -> np.ndarray:
    """Round stochastic rows to ``digits`` places so each printed row still sums to one."""
    scale = 10 ** digits
    out = np.zeros_like(np.asarray(probs, dtype=float))
    for i, row in enumerate(np.asarray(probs, dtype=float)):
        if not row.any():
            continue
        exact = row * scale
        units = np.floor(exact).astype(np.int64)
        short = scale - int(units.sum())
        # largest remainders first, lower index on ties
        order = np.argsort(-(exact - units), kind="stable")
        units[order[:short]] += 1
        out[i] = units / scale
    return out


def counts_path(path) -> str:
    path = str(path)
    stem = path[:-4] if path.endswith(".csv") else path
    return stem + ".counts.csv"


def write_matrix_csv(path, matrix) -> None:
    """Write a transition or difference matrix in the region-indexed CSV format.

    Transition matrices also get a parallel ``.counts.csv`` with the integer tallies.
    """
    if isinstance(matrix, DiffMatrix):
        atomic_write_text(path, _format_rows(matrix.delta, _fmt_real))
        return
    atomic_write_text(path, _format_rows(_round_rows_to_one(matrix.probs), _fmt_real))
    atomic_write_text(counts_path(path), _format_rows(matrix.counts, lambda v: str(int(v))))


def read_matrix_csv(path, dtype=float) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != REGION_NAMES:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [[dtype(x) for x in line.strip().split(",")] for line in fh if line.strip()]
    out = np.array(rows, dtype=dtype)
    if out.shape != (N_REGIONS, N_REGIONS):
        raise ValueError(f"{path}: expected 8x8 matrix, got {out.shape}")
    return out
