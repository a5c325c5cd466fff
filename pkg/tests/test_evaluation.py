import json
from dataclasses import dataclass

import jsonschema
import numpy as np
import pytest

from cadnet.evaluation import (REPORT_SCHEMA, SplitSpec, auc_oracle, build_report, evaluate,
                               filter_unseen_teachers, make_split, roc_auc)
from cadnet.exceptions import AucUndefinedError, CadError
from cadnet.model import build_model, fit_standardization


@pytest.mark.parametrize("fn", [roc_auc, auc_oracle])
def test_auc_examples(fn):
    assert fn([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75, abs=1e-12)
    assert fn([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert fn([0.3] * 5, [0, 1, 0, 1, 1]) == 0.5


@pytest.mark.parametrize("fn", [roc_auc, auc_oracle])
def test_auc_single_class(fn):
    with pytest.raises(AucUndefinedError, match="undefined"):
        fn([0.1, 0.2], [1, 1])


def test_auc_input_validation():
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [0, 2])
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2, 0.3], [0, 1])


def test_auc_matches_oracle_randomized(rng):
    for trial in range(1000):
        n = int(rng.integers(2, 60))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        # heavy ties on every other trial
        s = rng.integers(0, 4, n).astype(float) if trial % 2 else rng.normal(size=n)
        assert abs(roc_auc(s, y) - auc_oracle(s, y)) <= 1e-12


def test_auc_monotone_transform_and_complement(rng):
    for _ in range(200):
        s = rng.normal(size=40)
        y = rng.integers(0, 2, 40)
        y[:2] = [0, 1]
        a = roc_auc(s, y)
        assert roc_auc(2 * s + 1, y) == a
        assert roc_auc(np.exp(s), y) == a
        assert abs(roc_auc(-s, y) - (1 - a)) <= 1e-12
        assert abs(roc_auc(s, 1 - y) - (1 - a)) <= 1e-12


def test_report_schema_and_pooling(rng):
    per = [("a", rng.normal(size=10), np.r_[np.zeros(5), np.ones(5)]),
           ("b", rng.normal(size=4), np.ones(4))]
    report = build_report(per, checkpoint_path="m.json")
    obj = report.to_json()
    jsonschema.validate(json.loads(json.dumps(obj)), REPORT_SCHEMA)
    assert obj["per_recording"][1]["auc"] is None
    assert obj["mean_recording_auc"] == obj["per_recording"][0]["auc"]
    pooled_s = np.concatenate([per[0][1], per[1][1]])
    pooled_y = np.concatenate([per[0][2], per[1][2]])
    assert report.auc == roc_auc(pooled_s, pooled_y)
    assert (report.n_pos, report.n_neg) == (9, 5)


def test_evaluate_on_features(tiny_features):
    model = fit_standardization(build_model("gru", seed=0),
                                [s.stats for f in tiny_features for s in f.segments])
    report = evaluate(model, tiny_features, checkpoint_path=None)
    jsonschema.validate(report.to_json(), REPORT_SCHEMA)
    assert 0 <= report.auc <= 1
    assert [r["recording_id"] for r in report.per_recording] == \
        [f.recording_id for f in tiny_features]
    assert report.n_pos + report.n_neg == sum(f.n_windows for f in tiny_features)


def test_saturated_bias_gives_half(tiny_features):
    model = fit_standardization(build_model("gru", seed=0),
                                [s.stats for f in tiny_features for s in f.segments])
    model.params["head.b"] = 1e6
    assert evaluate(model, tiny_features).auc == 0.5


def test_evaluate_requires_labels(tiny_features):
    from cadnet.dataset import FeaturizedSegment, RecordingFeatures
    f = tiny_features[0]
    bare = RecordingFeatures("nolabels", f.teacher_id,
                             [FeaturizedSegment(s.start_sec, s.end_sec, s.logmel)
                              for s in f.segments], f.enrollment)
    with pytest.raises(CadError, match="nolabels"):
        evaluate(build_model("average"), [bare])


# -- splits --------------------------------------------------------------------

@dataclass
class Rec:
    recording_id: str
    teacher_id: str


def _records(n, n_teachers):
    return [Rec(f"r{i:03d}", f"T{i % n_teachers}") for i in range(n)]


def test_main_split_size_and_determinism():
    recs = _records(100, 30)
    a_train, a_test = make_split(recs, SplitSpec("main", seed=5, test_fraction=0.1))
    b_train, b_test = make_split(recs, SplitSpec("main", seed=5, test_fraction=0.1))
    assert len(a_test) == 10 and len(a_train) == 90
    assert a_test == b_test and a_train == b_train
    _, c_test = make_split(recs, SplitSpec("main", seed=6, test_fraction=0.1))
    assert c_test != a_test


@pytest.mark.parametrize("seed", range(25))
def test_generalization_disjoint(seed):
    spec = SplitSpec("generalization", seed=seed, test_fraction=0.3)
    train, test = make_split(_records(40, 25), spec)
    assert not {r.teacher_id for r in train} & {r.teacher_id for r in test}
    assert not spec.train_teachers & spec.test_teachers
    assert spec.test_ids == [r.recording_id for r in test]


def test_generalization_infeasible():
    with pytest.raises(ValueError, match="infeasible"):
        make_split(_records(20, 1), SplitSpec("generalization", seed=0, test_fraction=0.2))


def test_split_validation():
    with pytest.raises(ValueError):
        SplitSpec("weird")
    with pytest.raises(ValueError):
        SplitSpec(test_fraction=1.0)
    with pytest.raises(ValueError):
        make_split(_records(3, 3), SplitSpec(test_fraction=0.01))


def test_filter_unseen_teachers():
    recs = _records(6, 3)
    kept = filter_unseen_teachers(recs, {"T0", "T2"})
    assert [r.recording_id for r in kept] == ["r001", "r004"]
