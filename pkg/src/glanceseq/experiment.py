"""Repeated-split evaluation, matrix exports and synthetic benchmarks."""
from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .classifier import balanced_accuracy, classify_many, train_binary
from .dataset import BinaryProblem, Dataset, enumerate_problems, split_items
from .glance import SampledSequence, matrix_difference, transition_matrix, write_matrix_csv
from .hmm import DiscreteHmm, TrainConfig, log_likelihoods, sample_sequences
from .smote import SmoteConfig

log = logging.getLogger(__name__)

METRICS = ("balanced", "raw", "both")
THREADS_ENV = "GLANCE_SEQ_THREADS"

VARIABLE_TYPES = {
    "age": "Demographic",
    "gender": "Demographic",
    "behavior": "Behavior/State",
    "distraction": "Behavior/State",
}

RESULTS_HEADER = ("problem", "variable", "class1", "class2", "n1", "n2", "raw_mean", "raw_std",
                  "balanced_mean", "balanced_std", "n_repeats", "headline_metric")


def default_workers() -> int:
    value = os.environ.get(THREADS_ENV)
    if not value:
        return 1
    n = int(value)
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer")
    return n


@dataclass(frozen=True)
class ExperimentConfig:
    """Evaluation protocol settings.

    Repeat ``r`` uses ``master_seed + r`` for its split, its SMOTE draws and
    its HMM initializations, overriding the seeds inside ``train_config`` and
    ``smote_config``.
    """

    n_repeats: int = 10
    train_fraction: float = 0.8
    train_config: TrainConfig = field(default_factory=TrainConfig)
    smote_config: SmoteConfig = field(default_factory=SmoteConfig)
    metric: str = "balanced"
    master_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.n_repeats < 2:
            raise ValueError("n_repeats must be >= 2 for a standard deviation")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class RepeatResult:
    seed: int
    raw_accuracy: float
    balanced_accuracy: float
    confusion: tuple  # ((true1->pred1, true1->pred2), (true2->pred1, true2->pred2))


def _std(values) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else float("nan")


@dataclass
class ProblemResult:
    problem_name: str
    variable: str
    class_names: tuple
    n1: int
    n2: int
    per_repeat: list
    metric: str = "balanced"

    @property
    def raw_mean(self) -> float:
        return float(np.mean([r.raw_accuracy for r in self.per_repeat]))

    @property
    def raw_std(self) -> float:
        return _std([r.raw_accuracy for r in self.per_repeat])

    @property
    def balanced_mean(self) -> float:
        return float(np.mean([r.balanced_accuracy for r in self.per_repeat]))

    @property
    def balanced_std(self) -> float:
        return _std([r.balanced_accuracy for r in self.per_repeat])

    @property
    def headline(self) -> str:
        return "raw" if self.metric == "raw" else "balanced"

    @property
    def accuracy_mean(self) -> float:
        return self.raw_mean if self.headline == "raw" else self.balanced_mean

    @property
    def accuracy_std(self) -> float:
        return self.raw_std if self.headline == "raw" else self.balanced_std


def _run_repeat(seqs_1, seqs_2, cfg: ExperimentConfig, r: int) -> RepeatResult:
    seed = cfg.master_seed + r
    train_1, train_2, test_1, test_2 = split_items(seqs_1, seqs_2, cfg.train_fraction, seed)
    c = train_binary(train_1, train_2, cfg.train_config.replace(seed=seed),
                     SmoteConfig(cfg.smote_config.k_neighbors, seed))
    pred_1 = [p.chosen_class for p in classify_many(c, test_1)]
    pred_2 = [p.chosen_class for p in classify_many(c, test_2)]
    tp1 = sum(1 for p in pred_1 if p == 1)
    tp2 = sum(1 for p in pred_2 if p == 2)
    confusion = ((tp1, len(pred_1) - tp1), (len(pred_2) - tp2, tp2))
    raw = (tp1 + tp2) / (len(pred_1) + len(pred_2))
    return RepeatResult(seed, float(raw), balanced_accuracy(pred_1, pred_2), confusion)


def _starmap(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *t) for t in tasks]
        return [f.result() for f in futures]


def evaluate_sequences(seqs_1, seqs_2, cfg: ExperimentConfig, problem_name: str = "",
                       variable: str = "", class_names=("class1", "class2")) -> ProblemResult:
    """Split, balance, train and score ``cfg.n_repeats`` times on two sequence sets."""
    seqs_1, seqs_2 = list(seqs_1), list(seqs_2)
    tasks = [(seqs_1, seqs_2, cfg, r) for r in range(cfg.n_repeats)]
    per_repeat = _starmap(_run_repeat, tasks, cfg.workers)
    return ProblemResult(problem_name, variable, tuple(class_names), len(seqs_1), len(seqs_2),
                         per_repeat, cfg.metric)


def run_problem(problem: BinaryProblem, d: Dataset, cfg: ExperimentConfig) -> ProblemResult:
    return evaluate_sequences(d.sequences(problem.epochs_1), d.sequences(problem.epochs_2), cfg,
                              problem.name, problem.variable, problem.class_names)


@dataclass
class ResultsTable:
    rows: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for r in self.rows:
            w.writerow([r.problem_name, r.variable, r.class_names[0], r.class_names[1], r.n1, r.n2,
                        f"{r.raw_mean:.6f}", f"{r.raw_std:.6f}", f"{r.balanced_mean:.6f}",
                        f"{r.balanced_std:.6f}", len(r.per_repeat), r.headline])
        return buf.getvalue()

    def to_text(self) -> str:
        """Aligned table: problem, type, accuracy mean and std, class sizes."""
        header = ("Binary Classification Problem", "Type", "Accuracy (Average)",
                  "Accuracy (St. Dev.)", "Class 1 Size", "Class 2 Size")
        body = [(r.problem_name, VARIABLE_TYPES.get(r.variable, "Environment"),
                 f"{100 * r.accuracy_mean:.1f}%", f"{100 * r.accuracy_std:.1f}%",
                 f"{r.n1:,}", f"{r.n2:,}") for r in self.rows]
        widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
                 for row in [header] + body]
        lines.insert(1, "  ".join("-" * w for w in widths))
        for name, msg in self.errors:
            lines.append(f"ERROR {name}: {msg}")
        return "\n".join(lines) + "\n"


def run_all(d: Dataset, cfg: ExperimentConfig, problems=None, min_epochs: int = 100) -> ResultsTable:
    """Evaluate every problem (or the given subset); rows sorted by ascending accuracy.

    A failing problem is recorded in ``errors`` and the rest still run.
    """
    table = ResultsTable()
    if problems is None:
        problems = enumerate_problems(d, min_epochs)
    if not problems:
        msg = "no viable binary problems in dataset" if len(d) else "dataset is empty"
        log.warning(msg)
        table.warnings.append(msg)
        return table
    for problem in problems:
        try:
            table.rows.append(run_problem(problem, d, cfg))
        except Exception as exc:  # keep the batch going
            log.error("problem %s failed: %s", problem.name, exc)
            table.errors.append((problem.name, f"{type(exc).__name__}: {exc}"))
    table.rows.sort(key=lambda r: r.accuracy_mean)
    return table


def export_problem_matrices(problem: BinaryProblem, d: Dataset, out_dir) -> tuple:
    """Write per-class transition matrices and their difference for ``problem``.

    Returns the three probability-file paths (class 1, class 2, difference).
    """
    out_dir = Path(out_dir)
    m1 = transition_matrix(d.sequences(problem.epochs_1))
    m2 = transition_matrix(d.sequences(problem.epochs_2))
    paths = tuple(out_dir / f"{problem.key}_{suffix}.csv" for suffix in ("class1", "class2", "diff"))
    write_matrix_csv(paths[0], m1)
    write_matrix_csv(paths[1], m2)
    write_matrix_csv(paths[2], matrix_difference(m1, m2))
    return paths


def difference_mass(problem: BinaryProblem, d: Dataset) -> float:
    """L1 norm of the transition-probability difference between the two classes."""
    m1 = transition_matrix(d.sequences(problem.epochs_1))
    m2 = transition_matrix(d.sequences(problem.epochs_2))
    return float(np.abs(matrix_difference(m1, m2).delta).sum())


def accuracy_difference_correlation(table: ResultsTable, masses: dict) -> float:
    """Spearman correlation between headline accuracy and difference mass (diagnostic only)."""
    from scipy.stats import spearmanr

    pairs = [(r.accuracy_mean, masses[r.problem_name]) for r in table.rows if r.problem_name in masses]
    if len(pairs) < 3:
        return float("nan")
    acc, mass = zip(*pairs)
    return float(spearmanr(acc, mass).statistic)


@dataclass(frozen=True)
class SyntheticSpec:
    model_1: DiscreteHmm
    model_2: DiscreteHmm
    n_per_class: int
    seed: int = 0
    length: int = 25

    def __post_init__(self):
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")


def generate_synthetic(spec: SyntheticSpec) -> list:
    """``n_per_class`` sequences from each model as ``(sequence, class)`` pairs, class 1 first.

    Length-25 draws come back as :class:`SampledSequence`, other lengths as
    tuples of 0-based observation indices.
    """
    rng = np.random.default_rng(spec.seed)
    out = []
    for label, model in ((1, spec.model_1), (2, spec.model_2)):
        for row in sample_sequences(model, spec.n_per_class, spec.length, rng):
            seq = SampledSequence.from_symbols(row) if spec.length == 25 else tuple(int(v) for v in row)
            out.append((seq, label))
    return out


def bayes_accuracy_estimate(model_1: DiscreteHmm, model_2: DiscreteHmm, n_samples: int,
                            seed: int = 0, length: int = 25) -> float:
    """Monte-Carlo accuracy of the classifier that knows both true models.

    Draws ``n_samples`` sequences from each model and labels each by the
    larger true log-likelihood (ties to class 1).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    x1 = sample_sequences(model_1, n_samples, length, rng)
    x2 = sample_sequences(model_2, n_samples, length, rng)
    correct_1 = np.sum(log_likelihoods(model_1, x1) >= log_likelihoods(model_2, x1))
    correct_2 = np.sum(log_likelihoods(model_2, x2) > log_likelihoods(model_1, x2))
    return float((correct_1 + correct_2) / (2 * n_samples))


def load_synthetic_spec(path) -> dict:
    """Read a JSON synthetic-data spec.

    Keys: ``model_1`` and ``model_2`` (model documents as written by
    :func:`glanceseq.hmm.dumps_model`), ``n_per_class``, optional ``seed``,
    ``variable`` and ``values`` (labels used when writing the dataset files)
    and ``bayes_samples``.
    """
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    spec = SyntheticSpec(DiscreteHmm.from_dict(doc["model_1"]), DiscreteHmm.from_dict(doc["model_2"]),
                         int(doc["n_per_class"]), int(doc.get("seed", 0)))
    return {"spec": spec,
            "variable": doc.get("variable", "distraction"),
            "values": tuple(doc.get("values", ("not_distracted", "adjusting_radio"))),
            "bayes_samples": int(doc.get("bayes_samples", 10000))}
