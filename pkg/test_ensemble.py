"""集成组合、一致度、堆叠训练与评估测试"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from channels.plan import build_plan
from common.errors import ConfigError, DataFormatError, ShapeError
from ensemble.combiners import AVERAGING, STACKING, average_combine, predict_labels, stacking_combine
from ensemble.evaluator import collect_softmax, evaluate_ensemble, summarize_outputs
from ensemble.similarity import similarity
from ensemble.stacking import StackingCombiner, fit_stacking, train_stacking
from network.shared_net import IntraEnsembleNet

probs_st = st.integers(1, 5).flatmap(
    lambda n: st.integers(2, 6).flatmap(
        lambda c: arrays(np.float64, (n, c), elements=st.floats(0.0, 1.0, allow_nan=False))
    )
)


# ============================================================
# 组合器
# ============================================================
def test_average_combine_example():
    o = np.array([[0.2, 0.8], [0.6, 0.4]])
    np.testing.assert_allclose(average_combine(o), [0.4, 0.6])


def test_stacking_identity_weights_pick_diagonal():
    o = np.array([[0.2, 0.8], [0.6, 0.4]])
    np.testing.assert_allclose(stacking_combine(o, np.eye(2)), [0.2, 0.4])


@settings(max_examples=100, deadline=None)
@given(o=probs_st)
def test_uniform_stacking_equals_averaging(o):
    n, c = o.shape
    w = np.full((c, n), 1.0 / n)
    np.testing.assert_allclose(stacking_combine(o, w), average_combine(o), rtol=1e-12, atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(o=probs_st, data=st.data())
def test_stacking_matches_diagonal_of_full_product(o, data):
    n, c = o.shape
    w = data.draw(arrays(np.float64, (c, n), elements=st.floats(-2.0, 2.0, allow_nan=False)))
    np.testing.assert_allclose(stacking_combine(o, w), np.diag(w @ o), rtol=1e-9, atol=1e-12)


def test_batched_combiners_match_per_sample(rng):
    o = rng.dirichlet(np.ones(4), size=(6, 3))
    w = rng.standard_normal((4, 3))
    batch = stacking_combine(o, w)
    for b in range(6):
        np.testing.assert_allclose(batch[b], stacking_combine(o[b], w))
        np.testing.assert_allclose(average_combine(o)[b], average_combine(o[b]))


def test_combiner_shape_errors():
    with pytest.raises(ShapeError):
        stacking_combine(np.ones((3, 4)), np.ones((3, 4)))
    with pytest.raises(ShapeError):
        average_combine(np.ones(4))
    with pytest.raises(ShapeError):
        average_combine(np.ones((0, 4)))


def test_predict_labels_takes_argmax():
    assert predict_labels(np.array([[0.1, 0.7, 0.2], [0.5, 0.3, 0.2]])).tolist() == [1, 0]


# ============================================================
# 一致度
# ============================================================
def test_similarity_examples():
    report = similarity([[0, 1, 2, 3], [0, 1, 2, 0]])
    assert (report.k, report.m, report.s) == (3, 4, 0.75)
    assert similarity([[0, 1], [1, 0]]).s == 0.0
    assert similarity([[4, 4, 4]]).s == 1.0
    assert report.as_dict() == {"K": 3, "M": 4, "S": 0.75}


@settings(max_examples=100, deadline=None)
@given(
    st.integers(1, 5).flatmap(
        lambda n: st.tuples(
            st.lists(st.lists(st.integers(0, 3), min_size=6, max_size=6), min_size=n, max_size=n),
            st.permutations(range(n)),
        )
    )
)
def test_similarity_ignores_subnet_order(case):
    preds, order = case
    assert similarity([preds[i] for i in order]) == similarity(preds)


def test_similarity_errors():
    with pytest.raises(ShapeError):
        similarity([[0, 1], [0]])
    with pytest.raises(ShapeError):
        similarity([])
    with pytest.raises(ShapeError):
        similarity([[], []])


@settings(max_examples=100, deadline=None)
@given(
    st.integers(1, 4).flatmap(
        lambda n: st.integers(1, 12).flatmap(
            lambda m: st.lists(st.lists(st.integers(0, 2), min_size=m, max_size=m), min_size=n, max_size=n)
        )
    )
)
def test_similarity_matches_brute_force(preds):
    m = len(preds[0])
    k = sum(1 for j in range(m) if len({row[j] for row in preds}) == 1)
    report = similarity(preds)
    assert report.k == k
    assert report.s == pytest.approx(k / m)
    assert 0.0 <= report.s <= 1.0


# ============================================================
# 堆叠训练
# ============================================================
def _good_and_bad_outputs(m=300, c=4, seed=0):
    """子网络 0 永远答对，子网络 1 永远答错"""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, c, m)
    wrong = (labels + rng.integers(1, c, m)) % c
    o = np.zeros((m, 2, c))
    o[np.arange(m), 0, labels] = 1.0
    o[np.arange(m), 1, wrong] = 1.0
    return o, labels


def test_stacking_prefers_the_reliable_subnet():
    o, y = _good_and_bad_outputs()
    combiner = StackingCombiner(2, 4)
    history = fit_stacking(combiner, o, y, epochs=5, lr=0.5, batch_size=32, seed=0)
    assert len(history) == 5
    assert history[-1] < history[0]
    assert np.all(combiner.weights[:, 0] > combiner.weights[:, 1])
    acc = (predict_labels(combiner.combine(o)) == y).mean()
    assert acc == 1.0


def test_stacking_zero_epochs_keeps_uniform_weights():
    o, y = _good_and_bad_outputs()
    combiner = StackingCombiner(2, 4)
    assert fit_stacking(combiner, o, y, epochs=0) == []
    np.testing.assert_array_equal(combiner.weights, np.full((4, 2), 0.5))
    np.testing.assert_allclose(combiner.combine(o), average_combine(o))


def test_stacking_is_deterministic():
    o, y = _good_and_bad_outputs()
    a, b = StackingCombiner(2, 4), StackingCombiner(2, 4)
    fit_stacking(a, o, y, epochs=3, seed=9)
    fit_stacking(b, o, y, epochs=3, seed=9)
    np.testing.assert_array_equal(a.weights, b.weights)


def test_stacking_errors():
    with pytest.raises(DataFormatError):
        fit_stacking(StackingCombiner(2, 4), np.zeros((0, 2, 4)), np.zeros(0, dtype=int))
    with pytest.raises(ShapeError):
        StackingCombiner(2, 4, np.ones((2, 4)))
    combiner = StackingCombiner.from_array(np.ones((4, 2)))
    assert combiner.num_params == 8
    np.testing.assert_allclose(combiner.predict_proba(np.ones((2, 4))).sum(), 1.0)


# ============================================================
# 评估
# ============================================================
@pytest.fixture
def small_ensemble(tiny_arch):
    plans = build_plan(tiny_arch, [0.5, 0.75, 1.0], "rc", seed=0)
    return IntraEnsembleNet.build(tiny_arch, plans, seed=0), plans


def test_collect_softmax_independent_of_workers(small_ensemble, tiny_dataset):
    net, plans = small_ensemble
    serial = collect_softmax(net, plans, tiny_dataset.images, batch_size=7, workers=1)
    threaded = collect_softmax(net, plans, tiny_dataset.images, batch_size=7, workers=3)
    assert serial.shape == (len(tiny_dataset), 3, 3)
    np.testing.assert_array_equal(serial, threaded)
    np.testing.assert_allclose(serial.sum(axis=-1), 1.0, rtol=1e-5)


def test_stacking_training_leaves_subnets_frozen(small_ensemble, tiny_dataset):
    net, plans = small_ensemble
    before = net.fingerprint()
    combiner = train_stacking(net, plans, tiny_dataset, epochs=3, lr=0.1, batch_size=16, verbose=False)
    assert net.fingerprint() == before
    assert combiner.weights.shape == (3, 3)


def test_evaluate_ensemble_reports_everything(small_ensemble, tiny_dataset):
    net, plans = small_ensemble
    combiner = StackingCombiner(3, 3)
    result = evaluate_ensemble(net, plans, STACKING, tiny_dataset, combiner)
    assert len(result.per_subnet_acc) == 3
    # 均匀权重下 stacking 与 averaging 等价
    assert result.stacking_acc == result.averaging_acc == result.ensemble_acc
    assert result.similarity.m == len(tiny_dataset)
    assert result.params["stacking"] == 9
    d = result.as_dict()
    assert d["combiner"] == STACKING
    assert {"K", "M", "S"} <= set(d)

    averaged = evaluate_ensemble(net, plans, AVERAGING, tiny_dataset)
    assert averaged.stacking_acc is None
    assert averaged.params["stacking"] == 0


def test_identical_subnets_agree_everywhere(tiny_arch, tiny_dataset):
    plans = build_plan(tiny_arch, [1.0, 1.0, 1.0], "rc", seed=0)
    net = IntraEnsembleNet.build(tiny_arch, plans, seed=0)
    result = evaluate_ensemble(net, plans, AVERAGING, tiny_dataset)
    assert result.similarity.s == 1.0
    assert result.averaging_acc == result.per_subnet_acc[0]


def test_evaluate_ensemble_errors(small_ensemble, tiny_dataset):
    net, plans = small_ensemble
    with pytest.raises(ConfigError):
        evaluate_ensemble(net, plans, "voting", tiny_dataset)
    with pytest.raises(ShapeError):
        evaluate_ensemble(net, plans, STACKING, tiny_dataset)
    with pytest.raises(ShapeError):
        summarize_outputs(np.ones((4, 3, 3)) / 3, np.zeros(5, dtype=int))


def test_evaluate_ensemble_matches_per_sample_loop(tiny_arch, tiny_dataset):
    plans = build_plan(tiny_arch, [0.5, 0.75, 1.0], "ro", seed=2)
    net = IntraEnsembleNet.build(tiny_arch, plans, seed=1, dtype=np.float64)
    result = evaluate_ensemble(net, plans, AVERAGING, tiny_dataset, batch_size=5)

    hits = 0
    subnet_hits = [0] * len(plans)
    for j in range(len(tiny_dataset)):
        x = tiny_dataset.images[j:j + 1]
        probs = [net.predict_proba(plan, x)[0] for plan in plans]
        mean = sum(probs) / len(probs)
        hits += int(np.argmax(mean) == tiny_dataset.labels[j])
        for i, p in enumerate(probs):
            subnet_hits[i] += int(np.argmax(p) == tiny_dataset.labels[j])

    m = len(tiny_dataset)
    assert result.averaging_acc == pytest.approx(hits / m)
    assert result.ensemble_acc == result.averaging_acc
    assert result.per_subnet_acc == pytest.approx([h / m for h in subnet_hits])
