"""Bi-branch assembly: decomposition, connections, integration head, full
forward equivalence, taint confinement, schedule equivalence."""

import numpy as np
import pytest

from bibranch import (
    OpRecorder,
    apply_connection,
    catalog,
    channel_rotate,
    decompose_batch,
    decompose_input,
    decrypt_vector,
    encrypt_vector,
    feature_integrate,
    forward_backbone,
    forward_bicrypto,
    make_context,
    reference_backbone,
    reference_forward,
    resize_crop,
    taint_check,
)
from bibranch.errors import ArchiveError, ShapeError
from bibranch.fixtures import digit_images, fixture_weights
from bibranch.layers import SlotGrid
from bibranch.network import IntegrationSpec
from bibranch.packing import PackLayout, pack


class TestDecompose:
    def test_sigma_zero_center_zeroed(self):
        img = np.arange(16.0).reshape(1, 4, 4)
        d = decompose_input(img, noise_sigma=0.0, seed=0)
        assert d.region == (1, 1, 2, 2)
        assert np.array_equal(d.sensitive, img[:, 1:3, 1:3])
        expect = img.copy()
        expect[:, 1:3, 1:3] = 0.0
        assert np.array_equal(d.plain_full, expect)

    def test_deterministic_given_seed(self, rng):
        img = rng.random((3, 8, 8))
        a = decompose_input(img, noise_sigma=0.1, seed=42)
        b = decompose_input(img, noise_sigma=0.1, seed=42)
        assert np.array_equal(a.plain_full, b.plain_full)
        assert np.array_equal(a.sensitive, b.sensitive)
        c = decompose_input(img, noise_sigma=0.1, seed=43)
        assert not np.array_equal(a.plain_full, c.plain_full)

    def test_sensitive_is_unperturbed(self, rng):
        img = rng.random((1, 6, 6))
        d = decompose_input(img, noise_sigma=0.5, seed=1)
        assert np.array_equal(d.sensitive, img[:, 1:4 + 1 - 1, 1:4])  # rows 1..3
        assert not d.plain_full[:, 1:4, 1:4].any()

    def test_all_zero_image(self):
        d = decompose_input(np.zeros((1, 4, 4)), noise_sigma=0.3, seed=9)
        assert not d.sensitive.any()
        outside = d.plain_full[:, 0, :]
        assert outside.std() > 0  # pure noise outside the center

    def test_odd_dims_rejected(self):
        with pytest.raises(ShapeError):
            decompose_input(np.zeros((1, 5, 4)), 0.0, 0)


class TestResizeCrop:
    def test_4_to_2(self):
        x = np.arange(16.0).reshape(1, 4, 4)
        out = resize_crop(x, (2, 2))
        assert np.array_equal(out[0], np.array([[5.0, 6.0], [9.0, 10.0]]))

    def test_identity_when_equal(self, rng):
        x = rng.random((2, 3, 3))
        assert np.array_equal(resize_crop(x, (3, 3)), x)

    def test_5_to_2_floor_offsets(self):
        x = np.arange(25.0).reshape(1, 5, 5)
        out = resize_crop(x, (2, 2))
        # offset (1, 1) by the floor rule
        assert np.array_equal(out[0], np.array([[6.0, 7.0], [11.0, 12.0]]))

    def test_upsample_rejected(self):
        with pytest.raises(ShapeError):
            resize_crop(np.zeros((1, 2, 2)), (3, 3))


class TestChannelRotate:
    def test_identity_matrix(self, rng):
        y = rng.random((3, 4, 4))
        assert np.array_equal(channel_rotate(y, np.eye(3)), y)

    def test_average_of_constant_channels(self):
        y = np.stack([np.full((2, 2), 2.0), np.full((2, 2), 4.0)])
        out = channel_rotate(y, np.array([[0.5, 0.5]]))
        assert np.array_equal(out[0], np.full((2, 2), 3.0))

    def test_matches_per_pixel_matmul_oracle(self, rng):
        y = rng.standard_normal((4, 3, 3))
        W = rng.standard_normal((2, 4))
        out = channel_rotate(y, W)
        for i in range(3):
            for j in range(3):
                assert np.allclose(out[:, i, j], W @ y[:, i, j])

    def test_linearity(self, rng):
        y1, y2 = rng.standard_normal((2, 3, 2, 2))
        W = rng.standard_normal((2, 3))
        lhs = channel_rotate(2.5 * y1 - 1.5 * y2, W)
        rhs = 2.5 * channel_rotate(y1, W) - 1.5 * channel_rotate(y2, W)
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            channel_rotate(rng.random((3, 2, 2)), np.zeros((2, 4)))


class TestApplyConnection:
    def _packed(self, ctx, rng, channels=2, side=4):
        layout = PackLayout("hw", 1, side, side, channels, ctx.slot_count)
        x = rng.standard_normal((1, channels, side, side))
        cts = pack(x, layout, ctx)
        return x, cts, SlotGrid.from_layout(layout)

    def test_zero_tensor_counts_but_preserves_values(self, big_ctx, rng):
        x, cts, grid = self._packed(big_ctx, rng)
        rec = OpRecorder()
        out = apply_connection(cts, np.zeros((2, 4, 4)), np.eye(2), grid, big_ctx, rec)
        assert rec.counters["Add_PC"] == 2
        assert sum(v for k, v in rec.counters.items() if k != "Add_PC") == 0
        for before, after in zip(cts, out):
            assert np.array_equal(before.slots, after.slots)

    def test_decrypt_after_equals_before_plus_z(self, big_ctx, rng):
        x, cts, grid = self._packed(big_ctx, rng)
        x_p = rng.standard_normal((2, 8, 8))
        W = rng.standard_normal((2, 2))
        rec = OpRecorder()
        out = apply_connection(cts, x_p, W, grid, big_ctx, rec)
        z = channel_rotate(resize_crop(x_p, (4, 4)), W)
        for ch in range(2):
            got = decrypt_vector(out[ch], big_ctx)[grid.anchors()[0]]
            assert np.allclose(got, x[0, ch] + z[ch], atol=1e-12)

    def test_counts_scale_with_channels(self, big_ctx, rng):
        layout = PackLayout("hw", 1, 3, 3, 32, big_ctx.slot_count)
        cts = pack(rng.standard_normal((1, 32, 3, 3)), layout, big_ctx)
        rec = OpRecorder()
        apply_connection(cts, rng.standard_normal((32, 6, 6)), np.eye(32),
                         SlotGrid.from_layout(layout), big_ctx, rec)
        assert rec.counters["Add_PC"] == 32


class TestFeatureIntegrate:
    def _head(self, n_c, n_p, n1, n2, rng):
        names = dict(w_c1="w_c1", w_p1="w_p1", w_p1_prime="w_p1p", b1="b1",
                     b1_prime="b1p", w_c2="w_c2", w_p2="w_p2", b2="b2")
        head = IntegrationSpec(n1=n1, n2=n2, **names)
        weights = {
            "w_c1": rng.standard_normal((n_c, n1 // 2)),
            "w_p1": rng.standard_normal((n_p, n1 // 2)),
            "w_p1p": rng.standard_normal((n_p, n1 // 2)),
            "b1": rng.standard_normal(n1 // 2),
            "b1p": rng.standard_normal(n1 // 2),
            "w_c2": rng.standard_normal((n1 // 2, n2)),
            "w_p2": rng.standard_normal((n1 // 2, n2)),
            "b2": rng.standard_normal(n2),
        }
        return head, weights

    def _oracle(self, x_c, x_p, w):
        x_p1 = (x_p @ w["w_p1p"] + w["b1p"]) ** 2
        x_c1 = (x_c @ w["w_c1"] + x_p @ w["w_p1"] + w["b1"]) ** 2
        return (x_c1 @ w["w_c2"] + x_p1 @ w["w_p2"] + w["b2"]) ** 2

    def test_random_small_head_matches_oracle(self, big_ctx, rng):
        head, w = self._head(4, 4, 4, 3, rng)
        x_c = rng.standard_normal(4)
        x_p = rng.standard_normal(4)
        rec = OpRecorder()
        out = feature_integrate(encrypt_vector(x_c, big_ctx), x_p, head, w, big_ctx, rec)
        got = decrypt_vector(out, big_ctx)[:3]
        assert np.allclose(got, self._oracle(x_c, x_p, w), atol=1e-10)

    def test_zero_cipher_weights_reduce_to_plain_path(self, big_ctx, rng):
        head, w = self._head(4, 4, 4, 3, rng)
        w["w_c1"] = np.zeros_like(w["w_c1"])
        w["w_c2"] = np.zeros_like(w["w_c2"])
        x_p = rng.standard_normal(4)
        rec = OpRecorder()
        out = feature_integrate(encrypt_vector(np.zeros(4), big_ctx), x_p, head, w, big_ctx, rec)
        x_p1 = (x_p @ w["w_p1p"] + w["b1p"]) ** 2
        expect = (x_p1 @ w["w_p2"] + w["b2"]) ** 2
        assert np.allclose(decrypt_vector(out, big_ctx)[:3], expect, atol=1e-10)

    def test_plain_half_records_zero_ops(self, big_ctx, rng):
        head, w = self._head(4, 4, 4, 3, rng)
        rec = OpRecorder()
        feature_integrate(encrypt_vector(np.zeros(4), big_ctx),
                          rng.standard_normal(4), head, w, big_ctx, rec)
        table = dict(rec.layer_table())
        assert not any(table["head.plain_half"].values())

    def test_op_counts(self, big_ctx, rng):
        head, w = self._head(6, 5, 8, 3, rng)
        rec = OpRecorder()
        feature_integrate(encrypt_vector(rng.standard_normal(6), big_ctx),
                          rng.standard_normal(5), head, w, big_ctx, rec)
        # fc1: 6+4-1, fc2: 4+3-1 products; one Add_PC bias each; two squares
        assert rec.counters["Mul_PC"] == 9 + 6
        assert rec.counters["Add_CC"] == 8 + 5
        assert rec.counters["Add_PC"] == 2
        assert rec.counters["Mul_CC"] == 2 and rec.counters["Act_C"] == 2


@pytest.fixture(scope="module")
def setup():
    bundle = catalog.get("cnn3")
    weights = fixture_weights("cnn3", seed=0)
    imgs, labels = digit_images(8, seed=2)
    dec = decompose_batch(imgs, noise_sigma=0.1, seed=5)
    ctx = make_context(**catalog.default_context_params(bundle))
    return bundle, weights, dec, ctx


class TestForward:
    def test_encrypted_matches_reference(self, setup):
        bundle, weights, dec, ctx = setup
        res = forward_bicrypto(bundle.bi, dec, weights, ctx, strategy="bhw")
        ref = reference_forward(bundle.bi, dec, weights)
        assert np.abs(res.decrypt_logits() - ref).max() <= 1e-9
        assert (res.predictions() == ref.argmax(axis=1)).all()

    def test_exact_op_counts_cnn3(self, setup):
        bundle, weights, dec, ctx = setup
        res = forward_bicrypto(bundle.bi, dec, weights, ctx, strategy="bhw")
        c = res.recorder.counters
        assert c["Mul_PC"] == 413
        assert c["Add_CC"] == 395
        assert c["Add_PC"] == 12
        assert c["Mul_CC"] == 7 and c["Act_C"] == 7
        assert c["Rot"] == 412
        heops = c["Add_PC"] + c["Add_CC"] + c["Mul_PC"] + c["Mul_CC"]
        assert heops == 827

    def test_backbone_counts_and_equivalence(self, setup):
        bundle, weights, dec, ctx = setup
        img = dec[0].plain_full.copy()
        r0, c0, hs, ws = dec[0].region
        img[:, r0:r0 + hs, c0:c0 + ws] = dec[0].sensitive
        res = forward_backbone(bundle.backbone, img[None], weights, ctx, strategy="hw")
        ref = reference_backbone(bundle.backbone, img[None], weights)
        assert np.abs(res.decrypt_logits() - ref).max() < 1e-9
        c = res.recorder.counters
        assert c["Add_PC"] + c["Add_CC"] + c["Mul_PC"] + c["Mul_CC"] == 1952

    def test_bhw_counts_equal_hw_counts(self, setup):
        bundle, weights, dec, ctx = setup
        res_b = forward_bicrypto(bundle.bi, dec, weights, ctx, strategy="bhw")
        res_1 = forward_bicrypto(bundle.bi, dec[0], weights, ctx, strategy="hw")
        assert res_b.recorder.snapshot() == res_1.recorder.snapshot()

    def test_schedule_equivalence_bitwise(self, setup):
        bundle, weights, dec, ctx = setup
        a = forward_bicrypto(bundle.bi, dec[:3], weights, ctx, schedule="interleaved")
        b = forward_bicrypto(bundle.bi, dec[:3], weights, ctx, schedule="plain-first")
        assert np.array_equal(a.decrypt_logits(), b.decrypt_logits())

    def test_connection_layer_delta_is_add_pc_only(self, setup):
        bundle, weights, dec, ctx = setup
        res = forward_bicrypto(bundle.bi, dec[:2], weights, ctx)
        table = dict(res.recorder.layer_table())
        delta = table["connect.1"]
        assert delta["Add_PC"] == 5
        assert sum(v for k, v in delta.items() if k != "Add_PC") == 0

    def test_all_zero_weights_give_constant_logits(self, setup):
        bundle, _, dec, ctx = setup
        from bibranch.archive import TensorArchive
        from bibranch.fixtures import make_fixture_weights

        zeros = {k: np.zeros_like(v) for k, v in make_fixture_weights("cnn3", 0).items()}
        weights = TensorArchive(zeros, {})
        res = forward_bicrypto(bundle.bi, dec[:2], weights, ctx)
        logits = res.decrypt_logits()
        assert np.allclose(logits, logits[0, 0])  # b2-derived constant (= 0 here)

    def test_missing_tensor_listed(self, setup):
        bundle, _, dec, ctx = setup
        from bibranch.archive import TensorArchive
        from bibranch.fixtures import make_fixture_weights

        tensors = make_fixture_weights("cnn3", 0)
        tensors.pop("head.w_c2")
        tensors.pop("connect.1.w_crot")
        with pytest.raises(ArchiveError, match="connect.1.w_crot"):
            forward_bicrypto(bundle.bi, dec[:1], TensorArchive(tensors, {}), ctx)


class TestTaint:
    def test_bi_run_passes(self):
        bundle = catalog.get("cnn3")
        weights = fixture_weights("cnn3", seed=0)
        imgs, _ = digit_images(2, seed=0)
        dec = decompose_batch(imgs, 0.1, 0)
        ctx = make_context(**catalog.default_context_params(bundle))
        res = forward_bicrypto(bundle.bi, dec, weights, ctx)
        verdict = taint_check(bundle.bi, res.recorder)
        assert verdict.passed

    def test_miswired_trace_fails_naming_layer(self):
        bundle = catalog.get("cnn3")
        rec = OpRecorder()
        ctx = make_context(128, 4, 2.0 ** 30)
        ct = encrypt_vector([1.0], ctx)
        from bibranch import he_mul

        with rec.layer("plain.0.conv"):  # ciphertext fed into a plain conv
            he_mul(ct, [2.0], rec)
        verdict = taint_check(bundle.bi, rec)
        assert not verdict.passed
        assert "plain.0.conv" in verdict.violations

    def test_encrypted_backbone_fails_on_all_op_layers(self):
        bundle = catalog.get("cnn3")
        weights = fixture_weights("cnn3", seed=0)
        imgs, _ = digit_images(1, seed=0)
        ctx = make_context(**catalog.default_context_params(bundle))
        res = forward_backbone(bundle.backbone, imgs, weights, ctx, strategy="hw")
        verdict = taint_check(bundle.backbone, res.recorder)
        assert not verdict.passed
        op_layers = [lid for lid, d in res.recorder.layer_table() if any(d.values())]
        assert set(verdict.violations) == set(op_layers)


class TestCatalogShapes:
    @pytest.mark.parametrize("arch", catalog.ARCH_NAMES)
    def test_branch_shapes_consistent(self, arch):
        bundle = catalog.get(arch)
        shapes = catalog.branch_shapes(bundle.bi)
        assert shapes["n_c"] > 0 and shapes["n_p"] > 0
        assert shapes["head"][0] % 2 == 0

    @pytest.mark.parametrize("arch,expected", [
        ("cnn3", {"n_c": 125, "n_p": 720, "head": (100, 10)}),
        ("cnn11", {"n_c": 512, "n_p": 2048, "head": (256, 10)}),
        ("vgg16", {"n_c": 512, "n_p": 512, "head": (512, 10)}),
        ("resnet18", {"n_c": 2048, "n_p": 8192, "head": (512, 10)}),
    ])
    def test_declared_widths(self, arch, expected):
        shapes = catalog.branch_shapes(catalog.get(arch).bi)
        for key, val in expected.items():
            assert shapes[key] == val

    @pytest.mark.parametrize("arch,n_conns", [("cnn3", 1), ("cnn11", 6),
                                              ("vgg16", 13), ("resnet18", 9)])
    def test_connection_sites(self, arch, n_conns):
        assert len(catalog.get(arch).bi.connections) == n_conns

    @pytest.mark.parametrize("arch", catalog.ARCH_NAMES)
    def test_crot_shapes_square_or_rect(self, arch):
        bundle = catalog.get(arch)
        for name, (ch_c, ch_p) in catalog.crot_shapes(bundle.bi).items():
            assert ch_c > 0 and ch_p > 0

    def test_required_levels_cnn3(self):
        bundle = catalog.get("cnn3")
        assert catalog.required_levels(bundle.bi) == 9
        assert catalog.required_levels(bundle.backbone) == 6

    def test_fixture_covers_all_tensors(self):
        for arch in ("cnn3", "cnn11"):
            bundle = catalog.get(arch)
            weights = fixture_weights(arch, seed=0)
            missing = set(bundle.bi.tensor_names()) - set(weights.names())
            missing |= set(bundle.backbone.tensor_names()) - set(weights.names())
            assert not missing


@pytest.mark.slow
class TestCnn11Equivalence:
    def test_encrypted_matches_reference_small_ctx(self):
        bundle = catalog.get("cnn11")
        weights = fixture_weights("cnn11", seed=0)
        rng = np.random.default_rng(0)
        img = np.kron(rng.random((1, 3, 8, 8)), np.ones((1, 1, 4, 4)))
        dec = decompose_batch(img, noise_sigma=0.1, seed=3)
        ctx = make_context(512, catalog.required_levels(catalog.get("cnn11")) + 1, 2.0 ** 30)
        res = forward_bicrypto(bundle.bi, dec, weights, ctx, strategy="bhw")
        ref = reference_forward(bundle.bi, dec, weights)
        assert np.abs(res.decrypt_logits() - ref).max() <= 1e-9
        assert taint_check(bundle.bi, res.recorder).passed
