import itertools

import numpy as np
import pytest

from glanceseq.dataset import Dataset, enumerate_problems, sequences_to_dataset
from glanceseq.experiment import (ExperimentConfig, ProblemResult, RepeatResult, ResultsTable, SyntheticSpec,
                                  bayes_accuracy_estimate, difference_mass, evaluate_sequences,
                                  export_problem_matrices, generate_synthetic, run_all, run_problem)
from glanceseq.glance import Epoch, GlanceRegion, SampledSequence, read_matrix_csv
from glanceseq.hmm import DiscreteHmm, TrainConfig, random_model
from glanceseq.smote import SmoteConfig

CHEAP = TrainConfig(n_hidden=2, n_restarts=1, max_iters=30)


def cheap_cfg(**kw):
    kw.setdefault("n_repeats", 2)
    return ExperimentConfig(train_config=CHEAP, **kw)


def one_hot_model(regions):
    """Deterministic cycle through ``regions`` (0-based observation indices)."""
    k = len(regions)
    B = np.zeros((k, 8))
    for i, r in enumerate(regions):
        B[i, r] = 1.0
    pi = np.zeros(k)
    pi[0] = 1.0
    return DiscreteHmm(pi, np.roll(np.eye(k), 1, axis=1), B)


def noisy_emitter(region, weight):
    B = np.full((1, 8), (1 - weight) / 7)
    B[0, region] = weight
    return DiscreteHmm([1.0], [[1.0]], B)


def exhaustive_bayes(m1, m2, length):
    """sum_seq max(P1, P2) / 2 over all 8^length sequences."""
    from glanceseq.hmm import log_likelihoods

    seqs = np.array(list(itertools.product(range(8), repeat=length)))
    p1 = np.exp(log_likelihoods(m1, seqs))
    p2 = np.exp(log_likelihoods(m2, seqs))
    return float(np.maximum(p1, p2).sum() / 2)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(n_repeats=1)
    with pytest.raises(ValueError):
        ExperimentConfig(metric="f1")


def test_problem_result_aggregates():
    reps = [RepeatResult(s, a, b, ((1, 1), (1, 1))) for s, a, b in [(0, 0.5, 0.6), (1, 0.7, 0.8), (2, 0.9, 0.7)]]
    r = ProblemResult("p", "v", ("a", "b"), 10, 10, reps)
    assert r.raw_mean == pytest.approx(0.7, abs=1e-12)
    assert r.balanced_std == pytest.approx(np.std([0.6, 0.8, 0.7], ddof=1), abs=1e-12)
    assert r.accuracy_mean == r.balanced_mean
    r.metric = "raw"
    assert r.accuracy_mean == r.raw_mean and r.headline == "raw"


def test_evaluate_sequences_records_each_repeat():
    m1, m2 = noisy_emitter(5, 0.9), noisy_emitter(7, 0.9)
    data = generate_synthetic(SyntheticSpec(m1, m2, 40, seed=1))
    s1 = [s for s, c in data if c == 1]
    s2 = [s for s, c in data if c == 2][:25]
    res = evaluate_sequences(s1, s2, cheap_cfg(n_repeats=3, master_seed=10))
    assert [r.seed for r in res.per_repeat] == [10, 11, 12]
    for r in res.per_repeat:
        assert sum(map(sum, r.confusion)) == 8 + 5
        assert r.raw_accuracy > 0.9 and r.balanced_accuracy > 0.9
    assert res.accuracy_mean == pytest.approx(np.mean([r.balanced_accuracy for r in res.per_repeat]), abs=1e-12)


def test_parallel_matches_serial():
    m1, m2 = noisy_emitter(5, 0.5), noisy_emitter(7, 0.5)
    data = generate_synthetic(SyntheticSpec(m1, m2, 30, seed=2))
    s1 = [s for s, c in data if c == 1]
    s2 = [s for s, c in data if c == 2]
    serial = evaluate_sequences(s1, s2, cheap_cfg(n_repeats=3))
    parallel = evaluate_sequences(s1, s2, cheap_cfg(n_repeats=3, workers=2))
    assert serial.per_repeat == parallel.per_repeat


def _two_problem_dataset():
    easy = generate_synthetic(SyntheticSpec(noisy_emitter(5, 0.9), noisy_emitter(7, 0.9), 100, seed=3))
    hard = generate_synthetic(SyntheticSpec(noisy_emitter(5, 0.5), noisy_emitter(5, 0.5), 100, seed=4))
    d1 = sequences_to_dataset([(s, "male" if c == 1 else "female") for s, c in hard], "gender", "g")
    d2 = sequences_to_dataset([(s, "clear" if c == 1 else "raining") for s, c in easy], "weather", "w")
    return Dataset({**d1.epochs, **d2.epochs})


def test_run_all_sorts_ascending():
    d = _two_problem_dataset()
    table = run_all(d, cheap_cfg())
    assert [r.problem_name for r in table.rows] == ["Gender (Male vs Female)", "Weather (Clear vs Raining)"]
    means = [r.accuracy_mean for r in table.rows]
    assert means == sorted(means)
    csv_text = table.to_csv()
    assert csv_text.splitlines()[0] == ("problem,variable,class1,class2,n1,n2,raw_mean,raw_std,"
                                        "balanced_mean,balanced_std,n_repeats,headline_metric")
    assert len(csv_text.splitlines()) == 3
    last = table.to_text().splitlines()[-1].split()
    assert last[:5] == ["Weather", "(Clear", "vs", "Raining)", "Environment"]


def test_run_all_single_and_empty():
    d = _two_problem_dataset()
    weather_only = Dataset({k: v for k, v in d.epochs.items() if k.startswith("w")})
    assert len(run_all(weather_only, cheap_cfg())) == 1
    table = run_all(Dataset({}), cheap_cfg())
    assert len(table) == 0 and table.warnings


def test_run_all_records_failures_and_continues():
    d = _two_problem_dataset()
    problems = enumerate_problems(d)
    good = problems[0]
    from dataclasses import replace
    broken = replace(problems[1], epochs_2=problems[1].epochs_2[:1])
    table = run_all(d, cheap_cfg(), [broken, good])
    assert len(table.rows) == 1 and len(table.errors) == 1
    assert "DegenerateSplit" in table.errors[0][1]


def test_export_matrices(tmp_path):
    fwd = Epoch.from_pairs("f", [(GlanceRegion.FORWARD, 0)], {"weather": "clear"})
    mixed = Epoch.from_pairs("m", [(GlanceRegion.FORWARD, 0), (GlanceRegion.LEFT, 1000)], {"weather": "raining"})
    d = Dataset({"f": fwd, "m": mixed})
    problem = enumerate_problems(d, min_epochs=1)[0]
    p1, p2, pd = export_problem_matrices(problem, d, tmp_path)
    assert p1.name == "weather__clear_vs_raining_class1.csv"
    m1 = read_matrix_csv(p1)
    assert np.count_nonzero(m1.sum(axis=1)) == 1 and m1[5, 5] == 1.0
    assert (tmp_path / "weather__clear_vs_raining_class2.counts.csv").exists()
    delta = read_matrix_csv(pd)
    assert delta[5, 5] == pytest.approx(1 - 3 / 4)


def test_identical_corpora_zero_difference(tmp_path):
    a = Epoch.from_pairs("a", [(GlanceRegion.FORWARD, 0), (GlanceRegion.LEFT, 2000)], {"gender": "male"})
    b = Epoch.from_pairs("b", [(GlanceRegion.FORWARD, 0), (GlanceRegion.LEFT, 2000)], {"gender": "female"})
    d = Dataset({"a": a, "b": b})
    problem = enumerate_problems(d, min_epochs=1)[0]
    _, _, pd = export_problem_matrices(problem, d, tmp_path)
    assert not read_matrix_csv(pd).any()
    assert difference_mass(problem, d) == 0.0


def test_generate_synthetic_forced_and_deterministic():
    spec = SyntheticSpec(one_hot_model([5]), one_hot_model([5, 7]), 3, seed=9)
    data = generate_synthetic(spec)
    assert [c for _, c in data] == [1, 1, 1, 2, 2, 2]
    assert data[0][0] == SampledSequence((6,) * 25)
    assert data[3][0] == SampledSequence((6, 8) * 12 + (6,))
    assert generate_synthetic(spec) == data


def test_generate_synthetic_frequencies_match_marginals():
    rng = np.random.default_rng(12)
    m = random_model(3, rng)
    data = generate_synthetic(SyntheticSpec(m, m, 10_000, seed=3))
    obs = np.array([s.symbols for s, c in data if c == 1])
    # marginal of the observation at time t is pi A^t B
    for t in (0, 1, 12, 24):
        marg = m.pi @ np.linalg.matrix_power(m.A, t) @ m.B
        freq = np.bincount(obs[:, t], minlength=8) / obs.shape[0]
        assert np.max(np.abs(freq - marg)) <= 0.02


def test_bayes_identical_models():
    m = random_model(2, np.random.default_rng(0))
    n = 5000
    assert abs(bayes_accuracy_estimate(m, m, n, seed=1) - 0.5) <= 3 * np.sqrt(0.25 / (2 * n))


def test_bayes_disjoint_models():
    assert bayes_accuracy_estimate(one_hot_model([5]), one_hot_model([7]), 200, seed=0) == 1.0


def test_bayes_matches_exhaustive_enumeration():
    rng = np.random.default_rng(7)
    B1 = rng.dirichlet(np.ones(8), size=2)
    B2 = 0.5 * B1[::-1] + 0.5 * rng.dirichlet(np.ones(8), size=2)
    m1 = DiscreteHmm([0.7, 0.3], [[0.8, 0.2], [0.3, 0.7]], B1)
    m2 = DiscreteHmm([0.4, 0.6], [[0.6, 0.4], [0.1, 0.9]], B2)
    exact = exhaustive_bayes(m1, m2, 3)
    n = 20_000
    est = bayes_accuracy_estimate(m1, m2, n, seed=2, length=3)
    assert abs(est - exact) <= 4 * np.sqrt(0.25 / (2 * n))
