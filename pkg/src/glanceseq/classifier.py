"""Binary classification with one HMM per class.

A sequence goes to the class whose model gives it the larger log-likelihood.
Exact ties go to class 1.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from ._io import atomic_write_text
from .errors import EmptyClass, MalformedStream
from .glance import EPOCH_MS, N_SAMPLES, SAMPLE_PERIOD_MS, GlanceEvent, SampledSequence, sample_grid
from .hmm import DiscreteHmm, TrainConfig, baum_welch_train, dumps_model, log_likelihoods, loads_model
from .smote import SmoteConfig, smote_oversample

# An impossible sequence (log-likelihood -inf) counts as this log-likelihood
# when computing a margin, so that a one-sided impossibility gives a finite,
# very large margin instead of inf.
IMPOSSIBLE_LOGLIK = -1e300

DEFAULT_HIDDEN_CANDIDATES = tuple(range(2, 13))


@dataclass(frozen=True)
class BinaryClassifier:
    problem_name: str
    class_names: tuple
    model_1: DiscreteHmm
    model_2: DiscreteHmm
    train_config: TrainConfig

    def __post_init__(self):
        if self.model_1.n_hidden != self.model_2.n_hidden:
            raise ValueError("both models must share n_hidden")
        if self.model_1.n_obs != 8 or self.model_2.n_obs != 8:
            raise ValueError("models must emit the 8 glance regions")
        object.__setattr__(self, "class_names", tuple(self.class_names))


@dataclass(frozen=True)
class Prediction:
    chosen_class: int
    loglik_1: float
    loglik_2: float
    margin: float

    def class_name(self, c: BinaryClassifier) -> str:
        return c.class_names[self.chosen_class - 1]


def decide(loglik_1: float, loglik_2: float) -> Prediction:
    """Apply the max-log-likelihood rule (ties to class 1) to a pair of scores."""
    if loglik_1 >= loglik_2:
        chosen, hi, lo = 1, loglik_1, loglik_2
    else:
        chosen, hi, lo = 2, loglik_2, loglik_1
    if hi == lo:
        margin = 0.0
    else:
        margin = max(hi, IMPOSSIBLE_LOGLIK) - max(lo, IMPOSSIBLE_LOGLIK)
    return Prediction(chosen, float(loglik_1), float(loglik_2), float(margin))


def classify(c: BinaryClassifier, seq) -> Prediction:
    return classify_many(c, [seq])[0]


def classify_many(c: BinaryClassifier, seqs: Sequence) -> list:
    """Vectorized :func:`classify` over a list of sequences."""
    if len(seqs) == 0:
        return []
    ll1 = log_likelihoods(c.model_1, seqs)
    ll2 = log_likelihoods(c.model_2, seqs)
    return [decide(a, b) for a, b in zip(ll1, ll2)]


def balance_classes(class1: list, class2: list, smote_cfg: SmoteConfig):
    """Oversample the smaller class with SMOTE until both have equal size."""
    if len(class1) < len(class2):
        return class1 + smote_oversample(class1, len(class2), smote_cfg), class2
    if len(class2) < len(class1):
        return class1, class2 + smote_oversample(class2, len(class1), smote_cfg)
    return class1, class2


def train_binary(class1: Sequence, class2: Sequence, cfg: TrainConfig = TrainConfig(),
                 smote_cfg: SmoteConfig = SmoteConfig(), problem_name: str = "",
                 class_names=("class1", "class2")) -> BinaryClassifier:
    """Balance the two training sets with SMOTE and fit one HMM per class.

    Class 1 is trained with ``cfg.seed`` and class 2 with
    ``cfg.seed + cfg.n_restarts`` so the two never share an initialization.
    """
    class1, class2 = list(class1), list(class2)
    if not class1 or not class2:
        raise EmptyClass("both classes need at least one training sequence")
    class1, class2 = balance_classes(class1, class2, smote_cfg)
    model_1 = baum_welch_train(class1, cfg)
    model_2 = baum_welch_train(class2, cfg.replace(seed=cfg.seed + cfg.n_restarts))
    return BinaryClassifier(problem_name, tuple(class_names), model_1, model_2, cfg)


def balanced_accuracy(pred_1: Sequence[int], pred_2: Sequence[int]) -> float:
    """Mean per-class recall given predicted labels for true class-1 and class-2 items."""
    recall_1 = np.mean(np.asarray(pred_1) == 1)
    recall_2 = np.mean(np.asarray(pred_2) == 2)
    return float((recall_1 + recall_2) / 2)


def round_half_up(x) -> int:
    return int(math.floor(x + 0.5))


def select_hidden_states(class1: Sequence, class2: Sequence,
                         candidates: Iterable[int] = DEFAULT_HIDDEN_CANDIDATES,
                         cfg: TrainConfig = TrainConfig(), smote_cfg: SmoteConfig = SmoteConfig(),
                         validation_fraction: float = 0.2) -> int:
    """Pick the hidden-state count with the best internal validation balanced accuracy.

    The training sequences are split per class (seeded by ``cfg.seed``); ties
    go to the smaller count.
    """
    candidates = sorted(set(int(n) for n in candidates))
    if not candidates:
        raise ValueError("no candidate hidden-state counts")
    if not 0 < validation_fraction < 1:
        raise ValueError("validation_fraction must lie in (0, 1)")
    class1, class2 = list(class1), list(class2)
    if not class1 or not class2:
        raise EmptyClass("both classes need training sequences")
    if len(candidates) == 1:
        return candidates[0]
    rng = np.random.default_rng(cfg.seed)
    parts = []
    for seqs in (class1, class2):
        order = rng.permutation(len(seqs))
        n_val = min(max(round_half_up(validation_fraction * len(seqs)), 1), len(seqs) - 1)
        if n_val < 1:
            raise EmptyClass("each class needs at least two sequences for validation")
        parts.append(([seqs[i] for i in order[n_val:]], [seqs[i] for i in order[:n_val]]))
    (fit_1, val_1), (fit_2, val_2) = parts
    best_n, best_score = None, -1.0
    for n in candidates:
        c = train_binary(fit_1, fit_2, cfg.replace(n_hidden=n), smote_cfg)
        score = balanced_accuracy([p.chosen_class for p in classify_many(c, val_1)],
                                  [p.chosen_class for p in classify_many(c, val_2)])
        if score > best_score:
            best_n, best_score = n, score
    return best_n


@dataclass(frozen=True)
class StreamRecord:
    emission_time_ms: int
    problem_name: str
    label: str
    loglik_1: float
    loglik_2: float
    margin: float

    @property
    def abstained(self) -> bool:
        return self.label == "abstain"

    def to_json(self) -> str:
        return json.dumps({"emission_time_ms": self.emission_time_ms,
                           "problem_name": self.problem_name,
                           "class": self.label,
                           "loglik_1": self.loglik_1,
                           "loglik_2": self.loglik_2,
                           "margin": self.margin})


def sliding_window_classify(stream: Iterable[GlanceEvent], c: BinaryClassifier, step_ms: int = 250,
                            confidence_threshold: float = 0.0,
                            end_ms: int | None = None) -> Iterator[StreamRecord]:
    """Classify the trailing 6 s window every ``step_ms``.

    Stream time starts at the first event; the first window closes 6000 ms
    later.  Emissions continue up to ``end_ms`` (default: the last event
    time).  Unlike epoch encodings, a live stream may repeat the current
    region.  A window whose margin is below ``confidence_threshold`` is
    reported as ``"abstain"``.
    """
    if step_ms <= 0:
        raise ValueError("step_ms must be positive")
    times, regions = [], []
    for ev in stream:
        if times and ev.t_ms <= times[-1]:
            raise MalformedStream(f"timestamp {ev.t_ms} does not follow {times[-1]}")
        times.append(ev.t_ms)
        regions.append(int(ev.region))
    if not times:
        return
    start = times[0]
    stop = times[-1] if end_ms is None else end_ms
    offsets = np.arange(N_SAMPLES) * SAMPLE_PERIOD_MS - EPOCH_MS
    t = start + EPOCH_MS
    while t <= stop:
        window = SampledSequence(tuple(sample_grid(times, regions, t + offsets)))
        p = classify(c, window)
        label = "abstain" if not p.margin >= confidence_threshold else p.class_name(c)
        yield StreamRecord(int(t), c.problem_name, label, p.loglik_1, p.loglik_2, p.margin)
        t += step_ms


def save_classifier(c: BinaryClassifier, path) -> Path:
    """Write ``manifest.json``, ``model_1.json`` and ``model_2.json`` into directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    atomic_write_text(path / "model_1.json", dumps_model(c.model_1))
    atomic_write_text(path / "model_2.json", dumps_model(c.model_2))
    manifest = {"problem_name": c.problem_name, "class_names": list(c.class_names),
                "models": ["model_1.json", "model_2.json"],
                "train_config": c.train_config.__dict__}
    atomic_write_text(path / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_classifier(path) -> BinaryClassifier:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    m1, m2 = (loads_model((path / name).read_text(encoding="utf-8")) for name in manifest["models"])
    return BinaryClassifier(manifest["problem_name"], tuple(manifest["class_names"]), m1, m2,
                            TrainConfig(**manifest["train_config"]))
