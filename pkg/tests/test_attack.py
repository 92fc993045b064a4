import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dphtc.attack import (
    AttackConfig, AttackError, AttackRecord, build_attack_splits, check_compatible, evaluate_attack,
    extract_all, extract_features, load_features, report_from_scores, roc_auc, roc_curve, save_features,
    train_attack_model,
)
from dphtc.data import Record, SplitSpec, split_records, synth_corpus
from dphtc.models import EncoderConfig, HtcModel
from dphtc.optim import TrainConfig, train
from dphtc.taxonomy import ABSENT, balanced_tree
from dphtc.tensor import Graph

FAST = AttackConfig(encoder_width=16, head_widths=(16, 8), max_epochs=30)


def pair_auc(scores, labels):
    """Brute force over all member/non-member pairs."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return total / (len(pos) * len(neg))


# -- splits ----------------------------------------------------------------


def test_balanced_split_sizes():
    s = build_attack_splits(list(range(100)), list(range(100, 200)))
    assert [len(s.train_members), len(s.train_nonmembers), len(s.test_members), len(s.test_nonmembers)] == [
        50, 50, 50, 50]


def test_unbalanced_split_is_downsampled():
    s = build_attack_splits(list(range(100)), list(range(100, 160)))
    assert len(s.train_members) == 50 and len(s.train_nonmembers) == 30
    assert len(s.test_members) == len(s.test_nonmembers) == 30


def test_split_groups_are_disjoint_and_capped():
    members, nonmembers = list(range(300)), list(range(300, 500))
    s = build_attack_splits(members, nonmembers, seed=3, max_per_group=40)
    groups = [s.train_members, s.test_members, s.train_nonmembers, s.test_nonmembers]
    assert all(len(g) == 40 for g in groups)
    assert len(set().union(*map(set, groups))) == 160
    assert set(s.train_members) | set(s.test_members) <= set(members)
    assert build_attack_splits(members, nonmembers, seed=3, max_per_group=40) == s


def test_split_errors():
    with pytest.raises(AttackError):
        build_attack_splits([], [1])
    with pytest.raises(AttackError):
        build_attack_splits([1], [2], known_fraction=1.0)
    with pytest.raises(AttackError, match="attack training"):
        build_attack_splits([1, 2], [3])


# -- AUC and ROC -----------------------------------------------------------


def test_auc_examples():
    assert roc_auc([0.9, 0.8, 0.7, 0.1], [1, 0, 1, 0]) == 0.75
    assert roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert roc_auc([0.5] * 6, [1, 0, 1, 0, 1, 0]) == 0.5
    with pytest.raises(AttackError):
        roc_auc([0.1, 0.2], [1, 1])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1)), min_size=2, max_size=40))
def test_auc_matches_pair_count_and_roc_area(pairs):
    scores = [s / 5 for s, _ in pairs]
    labels = [y for _, y in pairs]
    if len(set(labels)) < 2:
        return
    auc = roc_auc(scores, labels)
    assert abs(auc - pair_auc(scores, labels)) < 1e-12
    curve = np.array(roc_curve(scores, labels))
    assert tuple(curve[0]) == (0.0, 0.0) and tuple(curve[-1]) == (1.0, 1.0)
    assert abs(np.trapezoid(curve[:, 1], curve[:, 0]) - auc) < 1e-12


def test_report_from_scores():
    report = report_from_scores([0.9, 0.6, 0.4, 0.7, 0.2, 0.1], [1, 1, 1, 0, 0, 0], epsilon=0.1)
    assert report.tpr == pytest.approx(2 / 3) and report.fpr == pytest.approx(1 / 3)
    assert report.advantage == report.tpr - report.fpr
    assert report.accuracy == pytest.approx(4 / 6)
    assert report.bound == pytest.approx(np.exp(0.1) - 1) and not report.bound_vacuous
    assert '"epsilon": 0.1' in report.to_json()
    assert '"bound": "inf"' in report_from_scores([0.9, 0.1], [1, 0], epsilon=1e4).to_json()


# -- features --------------------------------------------------------------


@pytest.fixture(scope="module")
def target():
    tax = balanced_tree([2, 3])
    records = synth_corpus(tax, 40, 200, seed=0)
    model = HtcModel(EncoderConfig("cnn", embed_dim=8, filters=4), tax, 200, levels=2, seed=0)
    return model, records


def test_feature_losses_match_model_losses(target):
    model, records = target
    for r in records[:5]:
        feats = extract_features(model, r, member=1)
        want = [float(l.data[0]) for l in model.level_losses(Graph(), [r])]
        np.testing.assert_allclose(feats.losses, want, rtol=1e-12)
        assert feats.probs.shape == (sum(model.head_sizes),)
        assert feats.labels.sum() == model.levels
        assert set(feats.gradients) == set(model.head_groups())


def test_features_are_deterministic(target):
    model, records = target
    a, b = extract_features(model, records[0], 0), extract_features(model, records[0], 0)
    for x, y in zip(a.groups().values(), b.groups().values()):
        np.testing.assert_array_equal(x, y)


def test_htc_feature_group(target):
    model, records = target
    feats = extract_features(model, records[0], 1, with_htc_features=True)
    assert list(feats.groups())[-1] == "htc"
    assert feats.consistent in (0.0, 1.0)
    assert 0 < feats.confidence <= 1
    absent_feats = extract_features(model, Record(records[0].tokens, (records[0].label[0], ABSENT), "x"), 1)
    assert absent_feats.losses[1] == 0.0


def test_unknown_gradient_group(target):
    model, records = target
    with pytest.raises(AttackError, match="unknown"):
        extract_features(model, records[0], 1, gradient_groups=["nope"])


def test_feature_round_trip(tmp_path, target):
    model, records = target
    feats = extract_all(model, records[:3], 1, with_htc_features=True)
    save_features(feats, tmp_path / "f.jsonl")
    again = load_features(tmp_path / "f.jsonl")
    for a, b in zip(feats, again):
        assert a.member == b.member and a.consistent == b.consistent
        for x, y in zip(a.groups().values(), b.groups().values()):
            np.testing.assert_array_equal(x, y)


def test_check_compatible(target):
    model, _ = target
    check_compatible(model, model.taxonomy.digest())
    with pytest.raises(AttackError, match="taxonomy"):
        check_compatible(model, balanced_tree([2]).digest())


# -- classifier ------------------------------------------------------------


def synthetic_features(n, rng, shift=0.0):
    out = []
    for i in range(n):
        member = i % 2
        x = rng.normal(size=4) + shift * member
        out.append(AttackRecord(x[:1], x[1:3], np.array([1.0, 0.0]), {"g": x[3:]}, member))
    return out


def test_identical_distributions_give_chance_accuracy():
    rng = np.random.default_rng(0)
    model = train_attack_model(synthetic_features(400, rng), seed=0, config=FAST)
    report = evaluate_attack(model, synthetic_features(4000, rng))
    assert abs(report.accuracy - 0.5) <= 0.05
    assert abs(report.auc - 0.5) <= 0.05


def test_separable_features_are_learned():
    rng = np.random.default_rng(1)
    train_set, test_set = synthetic_features(400, rng, shift=3.0), synthetic_features(4000, rng, shift=3.0)
    model = train_attack_model(train_set, 0, FAST)
    assert evaluate_attack(model, test_set).auc > 0.95
    # the same scores against permuted membership labels carry no signal
    scores = model.scores(test_set)
    labels = rng.permutation([r.member for r in test_set])
    assert abs(report_from_scores(scores, labels).auc - 0.5) <= 0.05


def test_label_shuffle_guard_on_target_features():
    # Overfit BoW target; shuffled attack-train labels leave nothing to learn.
    # A single run is a random function of strongly separated features, so
    # the guard is checked on the mean over five shuffles.
    tax = balanced_tree([3, 3, 3])
    records = synth_corpus(tax, 2200, 2000, seed=1)
    splits = split_records(records, SplitSpec(counts=(1000, 200, 1000), seed=0))
    model = HtcModel(EncoderConfig("bow"), tax, 2000, levels=3, seed=0)
    train(model, splits.train, splits.validation, TrainConfig(max_epochs=30, patience=None), seed=0)
    split = build_attack_splits(splits.train, splits.test, seed=0, max_per_group=500)
    train_feats = extract_all(model, split.train_members, 1) + extract_all(model, split.train_nonmembers, 0)
    test_feats = extract_all(model, split.test_members, 1) + extract_all(model, split.test_nonmembers, 0)
    assert evaluate_attack(train_attack_model(train_feats, 0), test_feats).accuracy > 0.6
    accuracies = []
    for seed in range(5):
        labels = np.random.default_rng(seed).permutation([r.member for r in train_feats])
        shuffled = [AttackRecord(r.losses, r.probs, r.labels, r.gradients, int(y))
                    for r, y in zip(train_feats, labels)]
        accuracies.append(evaluate_attack(train_attack_model(shuffled, seed), test_feats).accuracy)
    assert abs(np.mean(accuracies) - 0.5) <= 0.05, accuracies


def test_same_seed_same_classifier():
    rng = np.random.default_rng(2)
    feats = synthetic_features(100, rng, shift=1.0)
    a = train_attack_model(feats, seed=4, config=FAST)
    b = train_attack_model(feats, seed=4, config=FAST)
    np.testing.assert_array_equal(a.store.flat_params(), b.store.flat_params())
    np.testing.assert_array_equal(a.scores(feats), b.scores(feats))


def test_inconsistent_feature_dimensions():
    rng = np.random.default_rng(3)
    feats = synthetic_features(4, rng)
    feats[1].gradients["g"] = np.zeros(3)
    with pytest.raises(AttackError, match="inconsistent"):
        train_attack_model(feats)
