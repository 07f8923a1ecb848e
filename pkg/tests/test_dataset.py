import numpy as np
import pytest

from glanceseq.dataset import (SCHEMA, Dataset, LabelSchema, bin_age, enumerate_problems, find_problem,
                               glances_csv_text, ingest, labels_csv_text, load_bundle, save_bundle,
                               sequences_to_dataset, split, split_items, train_size)
from glanceseq.errors import DegenerateSplit, DuplicateEpoch, ParseError
from glanceseq.glance import Epoch, GlanceRegion, SampledSequence, resample_epoch


def write(tmp_path, glances, labels="epoch_id,variable,value\n"):
    g, l = tmp_path / "glances.csv", tmp_path / "labels.csv"
    g.write_text(glances)
    l.write_text(labels)
    return g, l


def labelled_dataset(counts: dict) -> Dataset:
    """Dataset with ``counts[(variable, value)]`` constant-forward epochs per label.

    Every label pair gets its own epochs, so the variables do not interact.
    """
    epochs = {}
    for (variable, value), n in counts.items():
        for i in range(n):
            eid = f"{variable}-{value}-{i}"
            epochs[eid] = Epoch.from_pairs(eid, [(GlanceRegion.FORWARD, 0)], {variable: value})
    return Dataset(epochs)


def test_bin_age_thresholds():
    assert bin_age(23) == "young"
    assert bin_age(24) == "middle"
    assert bin_age(40) == "middle"
    assert bin_age(41) == "mature"


def test_schema_is_complete_and_unique():
    assert len(SCHEMA) == 15
    assert SCHEMA["distraction"] == ("not_distracted", "adjusting_radio", "fatigue", "talking")
    LabelSchema()
    with pytest.raises(ValueError):
        LabelSchema({"x": ("a", "a")})


def test_ingest_empty_file(tmp_path):
    g, l = write(tmp_path, "")
    d, report = ingest(g, l)
    assert len(d) == 0 and report.accepted == 0 and report.total == 0
    assert "accepted 0" in report.to_text()


def test_ingest_round_trip_and_report(tmp_path):
    g, l = write(tmp_path,
                 "epoch_id,t_ms,region\n"
                 "e1,0,forward\ne1,1200,left\ne1,1900,forward\n"
                 "e2,0,forward\ne2,300,forward\n"
                 "e3,50,left\n"
                 "e4,0,center_stack\ne4,6000,forward\n"
                 "e5,0,right\n",
                 "epoch_id,variable,value\n"
                 "e1,gender,male\ne1,age,23\ne5,age,mature\ne9,weather,clear\n")
    d, report = ingest(g, l)
    assert list(d.epochs) == ["e1", "e5"]
    assert report.accepted + len(report.rejected) == report.total == 5
    assert dict(report.rejected) == {"e2": "self_transition", "e3": "first_event_not_zero",
                                     "e4": "time_out_of_range"}
    assert d.epochs["e1"].labels == {"gender": "male", "age": "young"}
    assert report.orphan_labels == 1
    text = report.to_text()
    assert "REJECT e2 self_transition" in text and "REJECT e4 time_out_of_range" in text
    assert resample_epoch(d.epochs["e1"]).states[4:8] == (6, 8, 8, 8)


def test_unknown_region_names_row_and_token(tmp_path):
    g, l = write(tmp_path, "epoch_id,t_ms,region\ne1,0,forward\ne1,500,windshield\n")
    with pytest.raises(ParseError) as exc:
        ingest(g, l)
    assert exc.value.row == 3 and exc.value.token == "windshield"
    assert "row 3" in str(exc.value) and "windshield" in str(exc.value)


@pytest.mark.parametrize("labels", [
    "epoch_id,variable,value\ne1,weather,snow\n",
    "epoch_id,variable,value\ne1,mood,happy\n",
    "epoch_id,variable,value\ne1,gender,male\ne1,gender,female\n",
    "epoch_id,variable\ne1,gender\n",
])
def test_label_errors(tmp_path, labels):
    g, l = write(tmp_path, "epoch_id,t_ms,region\ne1,0,forward\n", labels)
    with pytest.raises(ParseError):
        ingest(g, l)


def test_malformed_glance_rows(tmp_path):
    g, l = write(tmp_path, "epoch_id,t_ms,region\ne1,zero,forward\n")
    with pytest.raises(ParseError):
        ingest(g, l)
    g, l = write(tmp_path, "epoch,t,region\ne1,0,forward\n")
    with pytest.raises(ParseError):
        ingest(g, l)


def test_duplicate_epoch_blocks(tmp_path):
    g, l = write(tmp_path, "epoch_id,t_ms,region\ne1,0,forward\ne2,0,left\ne1,500,left\n")
    with pytest.raises(DuplicateEpoch):
        ingest(g, l)


def test_bundle_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    seqs = [(SampledSequence.from_symbols(r), "male" if i % 2 else "female")
            for i, r in enumerate(rng.integers(0, 8, size=(20, 25)))]
    d = sequences_to_dataset(seqs, "gender")
    save_bundle(d, tmp_path / "b")
    back = load_bundle(tmp_path / "b")
    assert glances_csv_text(back) == glances_csv_text(d)
    assert labels_csv_text(back) == labels_csv_text(d)
    assert [resample_epoch(e) for e in back.epochs.values()] == [s for s, _ in seqs]
    (tmp_path / "b" / "labels.csv").write_text("epoch_id,variable,value\n")
    with pytest.raises(ParseError):
        load_bundle(tmp_path / "b")


def test_distraction_pairs_only_with_baseline():
    d = labelled_dataset({("distraction", "not_distracted"): 1330, ("distraction", "adjusting_radio"): 201,
                          ("distraction", "fatigue"): 181, ("distraction", "talking"): 575})
    problems = enumerate_problems(d)
    assert [(p.value_1, p.value_2) for p in problems] == [
        ("not_distracted", "adjusting_radio"), ("not_distracted", "fatigue"), ("not_distracted", "talking")]
    assert [(len(p.epochs_1), len(p.epochs_2)) for p in problems] == [(1330, 201), (1330, 181), (1330, 575)]
    assert problems[0].name == "Distraction (Not Distracted vs Adjusting Radio)"
    assert find_problem(problems, "distraction__not_distracted_vs_fatigue") is problems[1]


def test_multi_valued_variables_use_all_pairs():
    d = labelled_dataset({("locality", "city"): 155, ("locality", "rural"): 136,
                          ("locality", "interstate"): 129, ("gender", "male"): 251, ("gender", "female"): 177})
    names = [p.name for p in enumerate_problems(d)]
    assert names == ["Locality (City vs Rural)", "Locality (City vs Interstate)",
                     "Locality (Rural vs Interstate)", "Gender (Male vs Female)"]


def test_min_epochs_threshold_boundary():
    d = labelled_dataset({("behavior", "none"): 300, ("behavior", "speeding"): 99,
                          ("behavior", "failed_to_signal"): 100})
    problems = enumerate_problems(d)
    assert [p.value_2 for p in problems] == ["failed_to_signal"]
    assert len(enumerate_problems(d, min_epochs=99)) == 2


def test_problem_sides_disjoint_and_within_dataset():
    d = labelled_dataset({("weather", "clear"): 120, ("weather", "raining"): 110})
    for p in enumerate_problems(d):
        assert not set(p.epochs_1) & set(p.epochs_2)
        assert set(p.epochs_1) | set(p.epochs_2) <= set(d.epochs)


def test_train_size_rounding():
    assert train_size(10, 0.8) == 8
    assert train_size(1330, 0.8) == 1064
    assert train_size(201, 0.8) == 161
    assert train_size(5, 0.7) == 4
    assert train_size(5, 0.5) == 3


def test_split_sizes_and_determinism():
    d = labelled_dataset({("distraction", "not_distracted"): 1330, ("distraction", "adjusting_radio"): 201})
    problem = enumerate_problems(d)[0]
    tr1, tr2, te1, te2 = split(problem, 0.8, seed=4)
    assert (len(tr1), len(tr2), len(te1), len(te2)) == (1064, 161, 266, 40)
    assert set(tr1).isdisjoint(te1) and set(tr1) | set(te1) == set(problem.epochs_1)
    assert set(tr2).isdisjoint(te2) and set(tr2) | set(te2) == set(problem.epochs_2)
    assert split(problem, 0.8, seed=4) == (tr1, tr2, te1, te2)
    assert split(problem, 0.8, seed=5) != (tr1, tr2, te1, te2)


def test_degenerate_split():
    with pytest.raises(DegenerateSplit):
        split_items(["a"], ["b", "c", "d"], 0.8, 0)
    with pytest.raises(ValueError):
        split_items(["a", "b"], ["c", "d"], 1.0, 0)
