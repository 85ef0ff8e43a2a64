import numpy as np
import pytest

from fairlong.evaluation import (
    EvalSetting,
    FairnessReport,
    StepRecord,
    compare_models,
    emit_projection_data,
    evaluate_model,
    load_report,
    prepare_setting2_cohort,
    read_projection_data,
)
from fairlong.metrics import SinkhornConfig
from fairlong.models import Generator, MlpClassifier
from fairlong.simulator import Cohort, GroundTruthModel, generate_initial_cohort

SK = SinkhornConfig(reg=0.1, max_iter=2000)


@pytest.fixture(scope="module")
def world():
    rng = np.random.default_rng(0)
    gt = GroundTruthModel(MlpClassifier(3, (4, 4), rng=rng), 0.05)
    gen = Generator(3, noise_dim=2, hidden=(5, 5), rng=rng)
    cohort = generate_initial_cohort(80, 3, 2.0, seed=1)
    return gt, gen, Cohort(cohort.s, cohort.x1)


def _report(name, accs, locs, j1, setting=None):
    setting = setting or EvalSetting.setting1(len(accs))
    steps = [StepRecord(t, a, l) for t, a, l in zip(setting.steps, accs, locs)]
    return FairnessReport(name, setting, steps, j1, 0.0, [0], [True])


# --------------------------------------------------------------------------
# settings
# --------------------------------------------------------------------------


def test_setting_ranges_and_labels():
    s1, s2 = EvalSetting.setting1(10), EvalSetting.setting2(10, 19)
    assert s1.steps == list(range(1, 11)) and s1.label == "range-[1,10]"
    assert s2.steps == list(range(10, 20)) and s2.horizon == 10 and s2.label == "range-[10,19]"
    for bad in (dict(start_step=0, horizon=3, target_T=2), dict(horizon=3, target_T=5), dict(n_repeats=0)):
        with pytest.raises(ValueError):
            EvalSetting(**bad)


# --------------------------------------------------------------------------
# evaluate_model
# --------------------------------------------------------------------------


def test_ground_truth_agrees_with_itself(world):
    gt, gen, cohort = world
    rep = evaluate_model(gt.classifier, gen, gt, cohort, EvalSetting.setting1(4, n_repeats=2), SK)
    assert all(r.accuracy == 1.0 for r in rep.per_step)
    assert [r.t for r in rep.per_step] == [1, 2, 3, 4]


def test_group_blind_model_has_zero_local_unfairness(world):
    gt, gen, cohort = world
    m = MlpClassifier(3, (4, 4), rng=np.random.default_rng(3))
    m.fc1.weight.data[3, :] = 0.0  # input layout is (x, s)
    rep = evaluate_model(m, gen, gt, cohort, EvalSetting.setting1(3, n_repeats=2), SK)
    assert all(r.local_unfairness == 0.0 for r in rep.per_step)


def test_evaluation_is_deterministic_and_seeded(world):
    gt, gen, cohort = world
    m = MlpClassifier(3, (4, 4), rng=np.random.default_rng(4))
    setting = EvalSetting.setting1(3, n_repeats=2)
    a = evaluate_model(m, gen, gt, cohort, setting, SK, seed=5)
    b = evaluate_model(m, gen, gt, cohort, setting, SK, seed=5)
    c = evaluate_model(m, gen, gt, cohort, setting, SK, seed=6)
    assert a.to_json() == b.to_json()
    assert a.long_term_j1_runs != c.long_term_j1_runs
    assert len(a.long_term_j1_runs) == 2 and a.long_term_j1 == pytest.approx(np.mean(a.long_term_j1_runs))
    assert a.long_term_j1 >= 0


def test_reference_classifier_substitutes_ground_truth(world):
    gt, gen, cohort = world
    m = MlpClassifier(3, (4, 4), rng=np.random.default_rng(4))
    rep = evaluate_model(m, gen, gt, cohort, EvalSetting.setting1(2, n_repeats=1), SK, reference_fn=m, reference="self")
    assert rep.mean_accuracy == 1.0 and rep.reference == "self"


def test_single_group_cohort_rejected(world):
    gt, gen, cohort = world
    one = cohort.subset(np.nonzero(cohort.s == 1)[0])
    with pytest.raises(ValueError):
        evaluate_model(gt.classifier, gen, gt, one, EvalSetting.setting1(2), SK)


def test_n_eval_limits_cohort(world):
    gt, gen, cohort = world
    full = evaluate_model(gt.classifier, gen, gt, cohort, EvalSetting.setting1(2, n_repeats=1), SK)
    part = evaluate_model(gt.classifier, gen, gt, cohort, EvalSetting.setting1(2, n_repeats=1, n_eval=40), SK)
    assert full.long_term_j1 != part.long_term_j1


def test_setting2_cohort_prefix(world):
    gt, gen, cohort = world
    same = prepare_setting2_cohort(gen, gt.classifier, cohort, start_step=1)
    np.testing.assert_array_equal(same.x1, cohort.x1)
    later = prepare_setting2_cohort(gen, gt.classifier, cohort, start_step=4, seed=2)
    again = prepare_setting2_cohort(gen, gt.classifier, cohort, start_step=4, seed=2)
    assert later.x1.shape == cohort.x1.shape
    np.testing.assert_array_equal(later.x1, again.x1)
    np.testing.assert_array_equal(later.s, cohort.s)
    assert not np.array_equal(later.x1, cohort.x1)


# --------------------------------------------------------------------------
# reports and comparison
# --------------------------------------------------------------------------


def test_report_validation():
    with pytest.raises(ValueError):
        _report("a", [0.5, 1.2], [0, 0], 0.1)
    setting = EvalSetting.setting1(3)
    with pytest.raises(ValueError):
        FairnessReport("a", setting, [StepRecord(1, 0.5, 0.0)], 0.0, 0.0, [0], [True])


def test_report_json_and_csv_round_trip(tmp_path):
    rep = _report("mlp", [0.9, 0.8, 0.7], [0.1, 0.2, 0.3], 0.25)
    jpath, cpath = rep.write(tmp_path)
    back = load_report(jpath)
    assert back == rep
    assert back.setting.label == "range-[1,3]"
    lines = open(cpath).read().splitlines()
    assert lines[0] == "t,accuracy,local_unfairness" and len(lines) == 4
    assert [float(v) for v in lines[2].split(",")] == [2.0, 0.8, 0.2]


def test_comparison_reaggregates_per_step_records():
    a = _report("a", [0.9, 0.7, 0.8], [0.3, 0.1, 0.2], 0.5)
    b = _report("b", [0.6, 0.6, 0.9], [0.0, 0.05, 0.1], 0.2)
    c = _report("c", [1.0, 0.9, 0.8], [0.4, 0.4, 0.4], 0.9)
    table = compare_models([a, b, c])
    row_a = table.rows[0]
    assert row_a.mean_accuracy == pytest.approx(0.8)
    assert row_a.mean_local_unfairness == pytest.approx(0.2)
    assert table.ranking("mean_accuracy") == ["c", "a", "b"]
    assert table.ranking("mean_local_unfairness") == ["b", "a", "c"]
    assert table.ranking("long_term_j1") == ["b", "a", "c"]
    assert table.to_csv().splitlines()[0] == "model,mean_accuracy,mean_local_unfairness,long_term_j1"
    with pytest.raises(ValueError):
        table.ranking("speed")


def test_comparison_rejects_mixed_settings_and_duplicates():
    a = _report("a", [0.9] * 10, [0.0] * 10, 0.1)
    b = _report("b", [0.9] * 10, [0.0] * 10, 0.1, EvalSetting.setting2(10, 19))
    with pytest.raises(ValueError, match="setting mismatch"):
        compare_models([a, b])
    with pytest.raises(ValueError, match="duplicate"):
        compare_models([a, a])
    with pytest.raises(ValueError):
        compare_models([a])


# --------------------------------------------------------------------------
# projection data
# --------------------------------------------------------------------------


def test_projection_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    clouds = {0: rng.standard_normal((5, 3)), 1: rng.standard_normal((4, 3))}
    path = tmp_path / "proj.csv"
    emit_projection_data(clouds, path)
    back = read_projection_data(path)
    assert sorted(back) == [0, 1]
    for g in clouds:
        np.testing.assert_array_equal(back[g], clouds[g])


def test_projection_rejects_bad_clouds(tmp_path):
    path = tmp_path / "proj.csv"
    with pytest.raises(ValueError):
        emit_projection_data({}, path)
    with pytest.raises(ValueError):
        emit_projection_data({0: np.zeros((0, 3))}, path)
    with pytest.raises(ValueError):
        emit_projection_data({0: np.zeros((2, 3)), 1: np.zeros((2, 2))}, path)
    with pytest.raises(ValueError):
        emit_projection_data({0: np.array([[np.nan, 0.0]])}, path)
    assert not path.exists()
