"""Discrete-observation hidden Markov models.

The forward and backward passes (compiled in :mod:`glanceseq._kernels`) use
per-timestep scaling, so a length-25 sequence with emission probabilities
near the floor never underflows.
Training is Baum-Welch with seeded random restarts.  After every M-step the
rows of ``pi``, ``A`` and ``B`` are the exact maximizers of the expected
complete-data log-likelihood subject to a lower bound ``floor`` on every
entry, which keeps EM monotone while ruling out zero probabilities.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import EmptyInput, NonFiniteLikelihood

log = logging.getLogger(__name__)

N_OBS = 8
STOCHASTIC_ATOL = 1e-9


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DiscreteHmm:
    """Initial distribution ``pi``, transitions ``A`` and emissions ``B``.

    ``A[i, j]`` is P(next hidden state j | hidden state i) and ``B[i, k]`` is
    P(observation k | hidden state i), observations being 0-based indices.
    """

    pi: np.ndarray
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        pi, A, B = _readonly(self.pi), _readonly(self.A), _readonly(self.B)
        k = pi.shape[0]
        if pi.ndim != 1 or A.shape != (k, k) or B.ndim != 2 or B.shape[0] != k:
            raise ValueError(f"inconsistent shapes pi{pi.shape} A{A.shape} B{B.shape}")
        for name, arr in (("pi", pi[None, :]), ("A", A), ("B", B)):
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has negative or non-finite entries")
            if not np.allclose(arr.sum(axis=1), 1.0, rtol=0, atol=STOCHASTIC_ATOL):
                raise ValueError(f"rows of {name} do not sum to 1")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n_hidden(self) -> int:
        return self.pi.shape[0]

    @property
    def n_obs(self) -> int:
        return self.B.shape[1]

    def permuted(self, perm) -> "DiscreteHmm":
        """Same model with hidden states relabelled by ``perm``."""
        perm = np.asarray(perm)
        return DiscreteHmm(self.pi[perm], self.A[np.ix_(perm, perm)], self.B[perm])

    def to_dict(self) -> dict:
        return {"n_hidden": self.n_hidden, "n_obs": self.n_obs,
                "pi": self.pi.tolist(), "A": self.A.tolist(), "B": self.B.tolist()}

    @classmethod
    def from_dict(cls, doc) -> "DiscreteHmm":
        pi, A, B = (np.asarray(doc[k], dtype=float) for k in ("pi", "A", "B"))
        if int(doc["n_hidden"]) != pi.shape[0]:
            raise ValueError("n_hidden does not match pi")
        # stored values are rounded; restore exact stochasticity
        return cls(pi / pi.sum(), A / A.sum(axis=1, keepdims=True), B / B.sum(axis=1, keepdims=True))


def _fmt(x) -> str:
    return f"{float(x):.12e}"


def _fmt_array(a) -> str:
    a = np.asarray(a)
    if a.ndim == 1:
        return "[" + ", ".join(_fmt(x) for x in a) + "]"
    return "[\n    " + ",\n    ".join(_fmt_array(row) for row in a) + "\n  ]"


def dumps_model(model: DiscreteHmm) -> str:
    """Serialize to a JSON document with 12-digit scientific-notation decimals."""
    return ("{\n"
            f'  "n_hidden": {model.n_hidden},\n'
            f'  "n_obs": {model.n_obs},\n'
            f'  "pi": {_fmt_array(model.pi)},\n'
            f'  "A": {_fmt_array(model.A)},\n'
            f'  "B": {_fmt_array(model.B)}\n'
            "}\n")


def loads_model(text: str) -> DiscreteHmm:
    return DiscreteHmm.from_dict(json.loads(text))


@dataclass(frozen=True)
class TrainConfig:
    n_hidden: int = 8
    max_iters: int = 500
    rel_tol: float = 1e-6
    n_restarts: int = 5
    floor: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.n_hidden < 1:
            raise ValueError("n_hidden must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")
        if not 0 < self.floor < 1 / N_OBS:
            raise ValueError("floor must lie in (0, 1/8)")
        if self.floor * self.n_hidden >= 1:
            raise ValueError("floor too large for n_hidden")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


def _as_obs(seqs) -> np.ndarray:
    """Stack sequences into an (N, T) array of 0-based observation indices."""
    rows = [np.asarray(getattr(s, "symbols", s), dtype=np.intp) for s in seqs]
    if not rows:
        return np.zeros((0, 0), dtype=np.intp)
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise ValueError(f"sequences must share one length, got {sorted(lengths)}")
    return np.stack(rows)


def log_likelihoods(model: DiscreteHmm, seqs) -> np.ndarray:
    """log P(seq | model) for every sequence in ``seqs`` (-inf when impossible)."""
    obs = _as_obs(seqs)
    if obs.shape[0] == 0:
        return np.zeros(0)
    _check_obs(obs, model.n_obs)
    return _kernels.forward_loglik(model.pi, model.A, model.B, obs)


def forward_log_likelihood(model: DiscreteHmm, seq) -> float:
    """log P(seq | model); ``-inf`` when every hidden path has probability 0.

    ``seq`` is a :class:`~glanceseq.glance.SampledSequence` or any sequence of
    0-based observation indices.
    """
    return float(log_likelihoods(model, [seq])[0])


def _check_obs(obs, n_obs):
    if obs.min() < 0 or obs.max() >= n_obs:
        raise ValueError("observation index out of range")


def floored_normalize(counts, floor: float) -> np.ndarray:
    """Maximize ``sum(c * log p)`` over distributions with every ``p >= floor``.

    The optimum is ``p = max(floor, c / lam)`` with ``lam`` fixed by the sum
    constraint; found by clamping violators until none remain.
    """
    counts = np.asarray(counts, dtype=float)
    n = counts.shape[0]
    if not counts.sum() > 0:
        return np.full(n, 1.0 / n)
    clamped = np.zeros(n, dtype=bool)
    while True:
        free_mass = counts[~clamped].sum()
        scale = (1.0 - floor * clamped.sum()) / free_mass
        p = np.where(clamped, floor, counts * scale)
        violators = ~clamped & (p < floor)
        if not violators.any():
            return p
        clamped |= violators


def _floored_rows(counts, floor):
    return np.array([floored_normalize(row, floor) for row in np.atleast_2d(counts)])


def _expected_counts(model: DiscreteHmm, obs: np.ndarray, weights: np.ndarray):
    """E-step: total log-likelihood and expected sufficient statistics."""
    total, pi_c, a_c, b_c = _kernels.expected_counts(model.pi, model.A, model.B, obs, weights)
    if not np.isfinite(total):
        raise NonFiniteLikelihood(f"training log-likelihood is {total}")
    return total, pi_c, a_c, b_c


def random_model(n_hidden: int, rng, floor: float = 0.0, n_obs: int = N_OBS) -> DiscreteHmm:
    """Draw pi and every row of A and B from a symmetric Dirichlet(1)."""
    pi = rng.dirichlet(np.ones(n_hidden))
    A = rng.dirichlet(np.ones(n_hidden), size=n_hidden)
    B = rng.dirichlet(np.ones(n_obs), size=n_hidden)
    if floor > 0:
        pi = floored_normalize(pi, floor)
        A, B = _floored_rows(A, floor), _floored_rows(B, floor)
    return DiscreteHmm(pi, A, B)


@dataclass
class FitResult:
    """Outcome of :func:`baum_welch_fit`: the selected model plus per-restart traces."""

    model: DiscreteHmm
    best_restart: int
    histories: list = field(default_factory=list)

    @property
    def log_likelihood(self) -> float:
        return self.histories[self.best_restart][-1]


def _em(model: DiscreteHmm, obs: np.ndarray, weights: np.ndarray, cfg: TrainConfig):
    history = []
    for it in range(cfg.max_iters + 1):
        ll, pi_c, a_c, b_c = _expected_counts(model, obs, weights)
        history.append(ll)
        if len(history) > 1:
            prev = history[-2]
            if ll - prev <= cfg.rel_tol * abs(prev):
                break
        if it == cfg.max_iters:
            break
        model = DiscreteHmm(floored_normalize(pi_c, cfg.floor),
                            _floored_rows(a_c, cfg.floor),
                            _floored_rows(b_c, cfg.floor))
    return model, history


def baum_welch_fit(seqs: Sequence, cfg: TrainConfig = TrainConfig(), n_obs: int = N_OBS) -> FitResult:
    """Train with ``cfg.n_restarts`` random starts and keep the most likely model.

    Restart ``r`` is initialized from ``numpy.random.default_rng(cfg.seed + r)``.
    Each restart stops when the relative gain in total log-likelihood drops below
    ``cfg.rel_tol`` or after ``cfg.max_iters`` re-estimation steps.
    """
    obs = _as_obs(seqs)
    if obs.shape[0] == 0:
        raise EmptyInput("baum_welch_train needs at least one sequence")
    _check_obs(obs, n_obs)
    # identical sequences contribute identical statistics; fit each once
    obs, weights = np.unique(obs, axis=0, return_counts=True)
    weights = weights.astype(float)
    best = None
    histories = []
    for r in range(cfg.n_restarts):
        rng = np.random.default_rng(cfg.seed + r)
        init = random_model(cfg.n_hidden, rng, floor=cfg.floor, n_obs=n_obs)
        model, history = _em(init, obs, weights, cfg)
        histories.append(history)
        log.debug("restart %d: %d iterations, loglik %.6f", r, len(history) - 1, history[-1])
        if best is None or history[-1] > histories[best[0]][-1]:
            best = (r, model)
    return FitResult(best[1], best[0], histories)


def baum_welch_train(seqs: Sequence, cfg: TrainConfig = TrainConfig()) -> DiscreteHmm:
    return baum_welch_fit(seqs, cfg).model


def _draw(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    # inverse CDF; zero-probability entries are never chosen
    idx = (cum <= u[:, None]).sum(axis=1)
    return np.minimum(idx, cum.shape[1] - 1)


def sample_sequences(model: DiscreteHmm, n: int, length: int, rng) -> np.ndarray:
    """Draw ``n`` observation sequences of ``length``; returns an (n, length) int array."""
    if length < 1:
        raise ValueError("length must be >= 1")
    cum_pi = np.cumsum(model.pi)[None, :]
    cum_a = np.cumsum(model.A, axis=1)
    cum_b = np.cumsum(model.B, axis=1)
    obs = np.empty((n, length), dtype=np.intp)
    state = _draw(np.repeat(cum_pi, n, axis=0), rng.random(n))
    for t in range(length):
        if t > 0:
            state = _draw(cum_a[state], rng.random(n))
        obs[:, t] = _draw(cum_b[state], rng.random(n))
    return obs


def sample_sequence(model: DiscreteHmm, length: int, seed: int) -> list:
    """One observation sequence (0-based indices); deterministic given ``seed``."""
    rng = np.random.default_rng(seed)
    return sample_sequences(model, 1, length, rng)[0].tolist()
