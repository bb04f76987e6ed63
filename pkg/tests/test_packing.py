"""Packing layouts: index formulas, ciphertext counts, roundtrips, capacity."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bibranch import PackLayout, make_context, pack, slot_index, unpack
from bibranch.errors import CapacityError, UsageError


def test_bhw_cifar_batch_fills_exactly():
    # 32 images of 16x16, 3 channels -> 3 ciphertexts, 8192 slots each, full
    layout = PackLayout("bhw", 32, 16, 16, 3, 8192)
    assert layout.ciphertext_count() == 3
    assert layout.slots_needed() == 8192


def test_bhw_mnist_batch_uses_3920_slots():
    layout = PackLayout("bhw", 20, 14, 14, 1, 8192)
    assert layout.ciphertext_count() == 1
    assert layout.slots_needed() == 3920


def test_hw_single_image_row_major():
    ctx = make_context(16, 1, 1.0)
    layout = PackLayout("hw", 1, 2, 2, 1, ctx.slot_count)
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    (ct,) = pack(x, layout, ctx)
    assert ct.slots[:4].tolist() == [1, 2, 3, 4]
    assert not ct.slots[4:].any()


def test_slot_index_formulas():
    bhw = PackLayout("bhw", 4, 14, 14, 1, 8192)
    assert slot_index(1, 0, 0, bhw) == 196
    hw = PackLayout("hw", 1, 2, 2, 1, 16)
    assert slot_index(0, 1, 1, hw) == 3
    batch = PackLayout("batch", 5, 2, 2, 1, 16)
    assert slot_index(3, 1, 1, batch) == 3


def test_slot_index_out_of_range():
    layout = PackLayout("hw", 1, 2, 2, 1, 16)
    with pytest.raises(IndexError):
        slot_index(0, 2, 0, layout)
    with pytest.raises(IndexError):
        slot_index(1, 0, 0, layout)


def test_slot_index_bijective_small_cases():
    # exhaustive collision check for n,h,w <= 4: the (ciphertext, slot) pair
    # addressed by (b, i, j) is unique under every strategy
    def ct_key(strategy, b, i, j):
        if strategy == "bhw":
            return 0
        if strategy == "hw":
            return b
        return (i, j)

    for strategy in ("bhw", "hw", "batch"):
        for n in (1, 2, 4):
            for h in (1, 3, 4):
                for w in (2, 4):
                    layout = PackLayout(strategy, n, h, w, 1, 256)
                    seen = set()
                    for b in range(n):
                        for i in range(h):
                            for j in range(w):
                                addr = (ct_key(strategy, b, i, j),
                                        slot_index(b, i, j, layout))
                                assert addr not in seen
                                seen.add(addr)


def test_capacity_error_reports_requirements():
    with pytest.raises(CapacityError, match="8448"):
        PackLayout("bhw", 33, 16, 16, 3, 8192)


def test_ciphertext_count_formulas(rng):
    ctx = make_context(512, 1, 1.0)
    for strategy, expected in (("bhw", 3), ("hw", 2 * 3), ("batch", 3 * 4 * 5)):
        layout = PackLayout(strategy, 2, 4, 5, 3, ctx.slot_count)
        x = rng.random((2, 3, 4, 5))
        cts = pack(x, layout, ctx)
        assert len(cts) == expected == layout.ciphertext_count()


@given(st.integers(0, 10 ** 6), st.sampled_from(["bhw", "hw", "batch"]),
       st.integers(1, 3), st.integers(1, 5), st.integers(1, 5), st.integers(1, 3))
@settings(max_examples=60, deadline=None)
def test_roundtrip_identity(seed, strategy, n, h, w, c):
    ctx = make_context(256, 1, 1.0)
    layout = PackLayout(strategy, n, h, w, c, ctx.slot_count)
    x = np.random.default_rng(seed).standard_normal((n, c, h, w))
    assert np.array_equal(unpack(pack(x, layout, ctx), layout, ctx), x)


def test_roundtrip_zeros():
    ctx = make_context(64, 1, 1.0)
    layout = PackLayout("bhw", 2, 2, 2, 2, ctx.slot_count)
    x = np.zeros((2, 2, 2, 2))
    assert np.array_equal(unpack(pack(x, layout, ctx), layout, ctx), x)


def test_unpack_layout_mismatch():
    ctx = make_context(64, 1, 1.0)
    layout = PackLayout("hw", 2, 2, 2, 1, ctx.slot_count)
    cts = pack(np.zeros((2, 1, 2, 2)), layout, ctx)
    with pytest.raises(UsageError):
        unpack(cts[:1], layout, ctx)


def test_pack_shape_mismatch():
    ctx = make_context(64, 1, 1.0)
    layout = PackLayout("hw", 1, 2, 2, 1, ctx.slot_count)
    with pytest.raises(UsageError):
        pack(np.zeros((1, 1, 3, 2)), layout, ctx)
