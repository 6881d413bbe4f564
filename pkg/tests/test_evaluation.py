import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from medroute.augment import AugmentConfig, balance_dataset
from medroute.dataset import Dataset, QARecord
from medroute.evaluation import (
    Holdout,
    KFold,
    SplitError,
    VocabSpec,
    holdout_evaluate,
    kfold_evaluate,
    leakage_safe_folds,
    make_split,
)
from medroute.model import ModelConfig
from medroute.train import TrainConfig

from support import tiny_dataset

TINY = ModelConfig(vocab_size=3, n_classes=2, max_len=8, d_model=8, n_heads=2, n_layers=1, d_ff=8)
FAST = TrainConfig(peak_lr=1e-2, epochs=2, batch_size=8)


def test_kfold_one_of_each_class_per_fold():
    labels = ["A", "B", "C"] * 3
    assign = make_split(labels, KFold(3, seed=1))
    for f in range(3):
        _, test = assign.train_test(f)
        assert sorted(labels[i] for i in test) == ["A", "B", "C"]


def test_holdout_90_10():
    labels = ["A"] * 50 + ["B"] * 50
    train, test = make_split(labels, Holdout(0.9)).train_test()
    assert len(train) == 90 and len(test) == 10


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from("ABCD"), min_size=4, max_size=60), st.integers(2, 4), st.integers(0, 2**32))
def test_folds_partition_indices(labels, k, seed):
    if len(labels) < k:
        return
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # small classes are pooled with a warning
        assign = make_split(labels, KFold(k, seed))
    tests = [set(assign.train_test(f)[1].tolist()) for f in range(k)]
    assert set().union(*tests) == set(range(len(labels)))
    assert sum(len(t) for t in tests) == len(labels)


def test_small_class_warns():
    with pytest.warns(RuntimeWarning, match="unstratified"):
        make_split(["A"] * 6 + ["B"], KFold(3))


def test_split_errors():
    with pytest.raises(SplitError):
        make_split(["A", "B"], KFold(1))
    with pytest.raises(SplitError):
        make_split(["A", "B"], KFold(3))
    with pytest.raises(SplitError):
        make_split(["A", "B"], Holdout(1.0))


def test_split_deterministic():
    labels = list("AABBBCCCCDD" * 3)
    a = make_split(labels, KFold(3, seed=5)).fold_of
    assert np.array_equal(a, make_split(labels, KFold(3, seed=5)).fold_of)


def _augmented():
    recs = [QARecord(f"u://{c}/{i}", f"{c} слово{i} боль", c) for c in "AB" for i in range(12)]
    recs += [QARecord(f"u://C/{i}", f"C слово{i}", "C") for i in range(3)]
    return balance_dataset(Dataset(recs), AugmentConfig(12, seed=0))


def test_leakage_safe_folds_keep_synthetic_out_of_test():
    ds = _augmented()
    for train, test in leakage_safe_folds(ds, KFold(3)):
        assert not any(ds.records[i].is_synthetic for i in test)
        held = {ds.records[i].source_url for i in test}
        assert not any(ds.records[i].parent_url in held for i in train)
        assert not set(train) & set(test)


def test_paper_mode_splits_all_records():
    ds = _augmented()
    folds = leakage_safe_folds(ds, KFold(3), paper_mode=True)
    assert sum(len(te) for _, te in folds) == len(ds)
    assert any(ds.records[i].is_synthetic for _, te in folds for i in te)


def test_kfold_evaluate_reports_count():
    ds = tiny_dataset(9)
    res = kfold_evaluate(ds, VocabSpec(), TINY, FAST, k=3)
    assert len(res.reports) == 3 and len(res.folds) == 3
    f1s = [r.macro_f1 for r in res.reports]
    assert abs(res.mean_macro_f1 - np.mean(f1s)) <= 1e-12
    assert abs(res.std_macro_f1 - np.std(f1s)) <= 1e-12
    with pytest.raises(SplitError):
        kfold_evaluate(ds, VocabSpec(), TINY, FAST, k=1)


def test_holdout_and_baseline_run():
    ds = tiny_dataset(10)
    tr = holdout_evaluate(ds, VocabSpec(), TINY, FAST, 0.9)
    assert tr.n_test == 2 and tr.checkpoint is not None
    bow = holdout_evaluate(ds, VocabSpec(), TINY, FAST, 0.9, kind="bow")
    assert bow.checkpoint is None and bow.report.n_examples == 2
