"""通道重组与子网络方案测试"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from channels.plan import SubNetworkPlan, build_plan, pairwise_overlap, plan_diversity, validate_plans
from channels.recombination import (
    ChannelSelection,
    FULL,
    RANDOM_CUT,
    RANDOM_OFFSET,
    SHUFFLE_CHANNEL,
    get_sampler,
    kept_count,
    normalize_kind,
    random_cut_indices,
    random_offset_indices,
    sample_random_cut,
    sample_random_offset,
    sample_shuffle,
)
from common.errors import PlanError
from network.arch import BN, CONV, DENSE, GLOBAL_AVG, RELU, ArchSpec, LayerSpec, ienet_mini

widths_st = st.floats(min_value=0.05, max_value=1.0, allow_nan=False)


# ============================================================
# kept_count 与确定性公式
# ============================================================
@pytest.mark.parametrize("c,w,expected", [(64, 0.9, 58), (10, 1.0, 10), (1, 0.5, 1), (10, 0.45, 5), (32, 0.5, 16)])
def test_kept_count_examples(c, w, expected):
    assert kept_count(c, w) == expected


@pytest.mark.parametrize("c,w", [(0, 0.5), (4, 0.0), (4, 1.2), (4, -0.1)])
def test_kept_count_rejects_bad_arguments(c, w):
    with pytest.raises(PlanError):
        kept_count(c, w)


def test_random_cut_formula():
    assert random_cut_indices(10, 8, 3) == (0, 1, 2, 5, 6, 7, 8, 9)
    assert random_cut_indices(10, 8, 0) == tuple(range(2, 10))
    assert random_cut_indices(10, 10, 0) == tuple(range(10))
    with pytest.raises(PlanError):
        random_cut_indices(10, 8, 8)


def test_random_offset_formula():
    assert random_offset_indices(10, 8, 1) == tuple(range(1, 9))
    assert random_offset_indices(16, 8, 5) == tuple(range(5, 13))
    with pytest.raises(PlanError):
        random_offset_indices(10, 8, 3)


def test_normalize_kind_aliases():
    assert normalize_kind("RC") == RANDOM_CUT
    assert normalize_kind(" ro ") == RANDOM_OFFSET
    assert normalize_kind("shuffle_channel") == SHUFFLE_CHANNEL
    assert get_sampler("full")(4, 1.0, None).indices == (0, 1, 2, 3)
    with pytest.raises(PlanError):
        normalize_kind("zigzag")


# ============================================================
# 采样器性质
# ============================================================
@settings(max_examples=200, deadline=None)
@given(c=st.integers(1, 96), w=widths_st, seed=st.integers(0, 2**31))
def test_random_cut_removes_one_contiguous_block(c, w, seed):
    sel = sample_random_cut(c, w, np.random.default_rng(seed))
    n = kept_count(c, w)
    idx = sel.indices
    assert len(idx) == n
    assert list(idx) == sorted(set(idx))
    removed = sorted(set(range(c)) - set(idx))
    if removed:
        assert removed == list(range(removed[0], removed[0] + c - n))
        assert removed[0] < n


@settings(max_examples=200, deadline=None)
@given(c=st.integers(1, 96), w=widths_st, seed=st.integers(0, 2**31))
def test_random_offset_is_contiguous_run(c, w, seed):
    sel = sample_random_offset(c, w, np.random.default_rng(seed))
    n = kept_count(c, w)
    start = sel.indices[0]
    assert sel.indices == tuple(range(start, start + n))
    assert 0 <= start <= c - n


@settings(max_examples=200, deadline=None)
@given(c=st.integers(1, 96), w=widths_st, seed=st.integers(0, 2**31))
def test_shuffle_draws_distinct_indices(c, w, seed):
    sel = sample_shuffle(c, w, np.random.default_rng(seed))
    assert len(sel) == kept_count(c, w)
    assert len(set(sel.indices)) == len(sel)
    assert all(0 <= i < c for i in sel.indices)


def test_shuffle_small_example():
    sel = sample_shuffle(5, 0.8, np.random.default_rng(0))
    assert len(sel) == 4
    assert len(set(sel.indices)) == 4


@pytest.mark.parametrize("sampler", [sample_random_cut, sample_random_offset])
def test_full_width_gives_identity(sampler):
    assert sampler(12, 1.0, np.random.default_rng(5)).indices == tuple(range(12))


def _cut_start(sel, c):
    return min(set(range(c)) - set(sel.indices))


@pytest.mark.parametrize(
    "sampler,start,admissible",
    [
        (sample_random_cut, _cut_start, 8),  # t ∈ [0, c − pc) = [0, 8)
        (sample_random_offset, lambda sel, c: sel.indices[0], 3),  # t ∈ [0, c − n] = [0, 2]
    ],
)
def test_offsets_are_uniform_within_five_sigma(sampler, start, admissible):
    c, w, draws = 10, 0.8, 10_000
    rng = np.random.default_rng(7)
    counts = np.zeros(c, dtype=int)
    for _ in range(draws):
        counts[start(sampler(c, w, rng), c)] += 1
    assert counts[admissible:].sum() == 0
    p = 1.0 / admissible
    sigma = np.sqrt(draws * p * (1.0 - p))
    assert np.all(np.abs(counts[:admissible] - draws * p) <= 5 * sigma)


# ============================================================
# 子网络方案
# ============================================================
def test_build_plan_is_deterministic(tiny_arch):
    a = build_plan(tiny_arch, [0.5, 0.75, 1.0], "rc", seed=11)
    b = build_plan(tiny_arch, [0.5, 0.75, 1.0], "rc", seed=11)
    assert a == b


def test_build_plan_sizes_and_identity(tiny_arch):
    plans = build_plan(tiny_arch, [0.5, 1.0], "sc", seed=0)
    validate_plans(plans, tiny_arch)
    assert [p.subnet_id for p in plans] == [0, 1]
    assert plans[1].kind == FULL
    assert plans[1].is_identity()
    for layer_id, c in tiny_arch.recombinable_layers():
        assert len(plans[0].selection(layer_id)) == kept_count(c, 0.5)
        assert plans[1].selection(layer_id).indices == tuple(range(c))


def test_plan_of_one_subnet_does_not_depend_on_others(tiny_arch):
    alone = build_plan(tiny_arch, [0.75], "ro", seed=3)[0]
    grouped = build_plan(tiny_arch, [0.75, 0.5, 0.5], "ro", seed=3)[0]
    assert alone == grouped


def test_build_plan_rejects_bad_widths(tiny_arch):
    with pytest.raises(PlanError):
        build_plan(tiny_arch, [], "rc", seed=0)
    with pytest.raises(PlanError):
        build_plan(tiny_arch, [0.5, 1.5], "rc", seed=0)
    with pytest.raises(PlanError):
        build_plan(tiny_arch, [0.5], "full", seed=0)


def test_validate_plans_rejects_foreign_arch(tiny_arch):
    plans = build_plan(ienet_mini(width_mult=0.25), [0.9], "rc", seed=0)
    with pytest.raises(PlanError):
        validate_plans(plans, tiny_arch)


def test_overlap_of_identical_plans_is_one(tiny_arch):
    plans = build_plan(tiny_arch, [1.0, 1.0], "rc", seed=0)
    assert pairwise_overlap(plans[0], plans[1], tiny_arch) == 1.0
    mat = plan_diversity(plans, tiny_arch)
    assert mat.shape == (2, 2)
    assert np.allclose(mat.to_numpy(), 1.0)


def test_overlap_is_symmetric_and_bounded(tiny_arch):
    plans = build_plan(tiny_arch, [0.5, 0.5, 0.75], "sc", seed=4)
    mat = plan_diversity(plans, tiny_arch).to_numpy()
    np.testing.assert_allclose(mat, mat.T)
    assert np.all((mat >= 0.0) & (mat <= 1.0))
    assert np.all(np.diag(mat) == 1.0)


def _two_conv_arch():
    layers = []
    for idx in (1, 2):
        layers += [
            LayerSpec(f"conv{idx}", CONV, out_channels=10, kernel=3, stride=1, pad=1),
            LayerSpec(f"bn{idx}", BN),
            LayerSpec(f"relu{idx}", RELU),
        ]
    layers += [LayerSpec("gap", GLOBAL_AVG), LayerSpec("fc", DENSE)]
    return ArchSpec("two-conv", tuple(layers), (1, 4, 4), 2)


def _fixed_plan(arch, subnet_id, kept):
    sels = tuple(ChannelSelection(layer_id, tuple(kept)) for layer_id, _ in arch.recombinable_layers())
    return SubNetworkPlan(subnet_id, len(kept) / 10, RANDOM_OFFSET, sels, arch.arch_hash())


def _kernel_entries(plan):
    """逐个枚举方案用到的 (层, 输出, 输入, kh, kw)"""
    conv1 = plan.selection("conv1").indices
    conv2 = plan.selection("conv2").indices
    entries = {("conv1", o, 0, kh, kw) for o in conv1 for kh in range(3) for kw in range(3)}
    entries |= {("conv2", o, i, kh, kw) for o in conv2 for i in conv1 for kh in range(3) for kw in range(3)}
    return entries


def test_overlap_matches_brute_force_enumeration():
    arch = _two_conv_arch()
    a = _fixed_plan(arch, 0, range(0, 8))
    b = _fixed_plan(arch, 1, range(2, 10))
    ea, eb = _kernel_entries(a), _kernel_entries(b)
    expected = len(ea & eb) / len(ea | eb)
    assert pairwise_overlap(a, b, arch) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx((6 * 9 + 36 * 9) / (90 + 828))


def test_overlap_of_disjoint_plans_is_zero():
    arch = _two_conv_arch()
    a = _fixed_plan(arch, 0, range(0, 5))
    b = _fixed_plan(arch, 1, range(5, 10))
    assert pairwise_overlap(a, b, arch) == 0.0
