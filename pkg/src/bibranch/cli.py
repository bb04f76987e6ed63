"""Command-line surface.

Subcommands: infer, verify, count, spread, pack-demo. Reports are JSON with
sorted keys (identical config + seed => byte-identical files) plus an
aligned text table on stdout.

Exit codes: 0 success/PASS, 2 bad parameters or usage, 3 ingestion failure
(weights/samples), 4 packing capacity, 5 depth budget, 6 verification FAIL.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__, catalog, fixtures
from .archive import TensorArchive
from .backend import active_backend
from .costs import count_report, format_table, latency_estimate, latency_table, spread_network, spread_stack
from .errors import (
    ArchiveError,
    CapacityError,
    DepthBudgetError,
    IngestionError,
    ParameterError,
    ShapeError,
    UsageError,
)
from .layers import LayerSpec
from .network import decompose_batch, forward_backbone, forward_bicrypto, reference_backbone, reference_forward, taint_check
from .packing import PackLayout, pack, slot_index, unpack
from .sim import OpRecorder, make_context

EXIT_OK = 0
EXIT_PARAM = 2
EXIT_INGEST = 3
EXIT_CAPACITY = 4
EXIT_DEPTH = 5
EXIT_VERIFY = 6

_EXIT_BY_ERROR = (
    (IngestionError, EXIT_INGEST),
    (ArchiveError, EXIT_INGEST),
    (CapacityError, EXIT_CAPACITY),
    (DepthBudgetError, EXIT_DEPTH),
    (ParameterError, EXIT_PARAM),
    (ShapeError, EXIT_PARAM),
    (UsageError, EXIT_PARAM),
)


def _common_flags(p: argparse.ArgumentParser):
    p.add_argument("--arch", default="cnn3", choices=catalog.ARCH_NAMES)
    p.add_argument("--weights", default="fixture",
                   help="archive dir/manifest, or fixture[:SEED] (default: fixture)")
    p.add_argument("--samples", default=None,
                   help=".npz with images[/labels] or sensitive+plain_full; "
                        "or digits[:N] / synthetic[:N] (default: bundled, N=batch)")
    p.add_argument("--pack", default="bhw", choices=("bhw", "hw"))
    p.add_argument("--batch", type=int, default=20)
    p.add_argument("--scheme", default="ckks")
    p.add_argument("--poly-degree", type=int, default=1 << 14)
    p.add_argument("--scale", type=float, default=float(2 ** 30))
    p.add_argument("--max-level", type=int, default=None,
                   help="override the depth budget (default: compiled depth + 1)")
    p.add_argument("--noise", action="store_true", help="fixed-point rounding after each product")
    p.add_argument("--sigma", type=float, default=0.1, help="perturbation stddev outside the center")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rotation-cost-ms", type=float, default=None,
                   help="per-rotation latency (default: the scheme's Mul_PC entry)")
    p.add_argument("--out", default=None, help="write the JSON report here")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bibranch",
                                 description="Encrypted bi-branch CNN inference simulator")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("infer", help="run encrypted inference and report ops/latency")
    _common_flags(p)
    p.add_argument("--backbone", action="store_true",
                   help="run the single-chain baseline fully encrypted (no decomposition)")

    p = sub.add_parser("verify", help="encrypted vs plain equivalence + taint check")
    _common_flags(p)
    p.add_argument("--threshold", type=float, default=1e-9, help="max |logit diff| allowed")

    p = sub.add_parser("count", help="HE op tallies and latency for an architecture")
    _common_flags(p)
    p.add_argument("--compare-backbone", action="store_true",
                   help="also run the fully encrypted baseline and print the ratio")

    p = sub.add_parser("spread", help="ciphertext-spread analysis")
    p.add_argument("--arch", default=None, choices=catalog.ARCH_NAMES)
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--region", type=int, default=16)
    p.add_argument("--layers", type=int, default=8)
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--pad", type=int, default=1)
    p.add_argument("--out", default=None)

    p = sub.add_parser("pack-demo", help="show slot layouts for the three packing strategies")
    p.add_argument("--strategy", default="bhw", choices=("batch", "hw", "bhw"))
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--height", type=int, default=2)
    p.add_argument("--width", type=int, default=2)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--slot-count", type=int, default=16)
    return ap


def _load_weights(args) -> TensorArchive:
    spec = args.weights
    if spec.startswith("fixture"):
        seed = int(spec.split(":", 1)[1]) if ":" in spec else 0
        return fixtures.fixture_weights(args.arch, seed)
    return TensorArchive.load(spec)


def _load_samples(args, bundle) -> tuple[np.ndarray | None, np.ndarray | None, np.ndarray | None, list | None]:
    """Returns (images, labels, sensitive, plain_full). Either images or the
    pre-decomposed pair is set."""
    spec = args.samples
    c, h, w = bundle.image_shape
    if spec is None:
        spec = "digits" if (c, h, w) == (1, 28, 28) else "synthetic"
    if spec.startswith("digits") or spec.startswith("synthetic"):
        n = int(spec.split(":", 1)[1]) if ":" in spec else args.batch
        if spec.startswith("digits"):
            if (c, h, w) != (1, 28, 28):
                raise IngestionError("bundled digits are 1x28x28; use synthetic:N for this arch")
            images, labels = fixtures.digit_images(n, seed=args.seed)
        else:
            images, labels = fixtures.cifar_like_images(n, seed=args.seed), None
            if images.shape[1:] != (c, h, w):
                raise IngestionError(f"synthetic samples are 3x32x32; arch wants {(c, h, w)}")
        return images, labels, None, None
    try:
        data = np.load(spec)
    except OSError as exc:
        raise IngestionError(f"cannot read samples from {spec!r}: {exc}") from exc
    labels = data["labels"] if "labels" in data else None
    if "sensitive" in data and "plain_full" in data:
        return None, labels, np.asarray(data["sensitive"], dtype=np.float64), \
            np.asarray(data["plain_full"], dtype=np.float64)
    if "images" not in data:
        raise IngestionError(f"{spec!r} must contain 'images' or 'sensitive'+'plain_full'")
    images = np.asarray(data["images"], dtype=np.float64)
    if images.shape[1:] != (c, h, w):
        raise IngestionError(f"samples have shape {images.shape[1:]}, arch wants {(c, h, w)}")
    return images, labels, None, None


def _normalize(images, weights):
    norm = weights.meta.get("norm") if hasattr(weights, "meta") else None
    if not norm:
        return images
    mean = np.asarray(norm.get("mean", 0.0), dtype=np.float64).reshape(-1, 1, 1)
    std = np.asarray(norm.get("std", 1.0), dtype=np.float64).reshape(-1, 1, 1)
    return (images - mean) / std


def _decomposed(args, bundle, weights):
    images, labels, sens, plain_full = _load_samples(args, bundle)
    if images is not None:
        images = _normalize(images, weights)
        dec = decompose_batch(images, noise_sigma=args.sigma, seed=args.seed)
    else:
        from .network import DecomposedInput

        c, h, w = bundle.image_shape
        hs, ws = h // 2, w // 2
        r0, c0 = (h - hs) // 2, (w - ws) // 2
        dec = [DecomposedInput(s, p, (r0, c0, hs, ws)) for s, p in zip(sens, plain_full)]
        # reconstituted full images (for backbone runs on pre-decomposed input)
        images = plain_full.copy()
        images[:, :, r0:r0 + hs, c0:c0 + ws] = sens
    return dec, labels, images


def _context(args, bundle):
    level = args.max_level or (catalog.required_levels(bundle) + 1)
    return make_context(args.poly_degree, level, args.scale, args.scheme,
                        noise_model=args.noise)


def _run_batches(bundle, dec, weights, ctx, pack_strategy, batch):
    """Forward in slot-batches (bhw) or one sample at a time (hw). Returns
    (logits, first-run recorder, effective batch for amortization, n_runs)."""
    logits = []
    first_rec = None
    if pack_strategy == "bhw":
        eff = min(batch, len(dec))
        chunks = [dec[i:i + eff] for i in range(0, len(dec), eff)]
    else:
        eff = 1
        chunks = [[d] for d in dec]
    for chunk in chunks:
        res = forward_bicrypto(bundle.bi, chunk, weights, ctx,
                               strategy=pack_strategy if pack_strategy == "hw" else "bhw")
        logits.append(res.decrypt_logits())
        first_rec = first_rec or res.recorder
    return np.concatenate(logits), first_rec, (eff if pack_strategy == "bhw" else 1), len(chunks)


def _report_common(args, rec, eff_batch):
    rep = count_report(rec)
    table = latency_table(args.scheme)
    latency_s, amortized_s = latency_estimate(rep, table, eff_batch,
                                              rotation_cost_ms=args.rotation_cost_ms)
    rep.update({
        "latency_s": latency_s,
        "amortized_s": amortized_s,
        "batch": eff_batch,
        "scheme": args.scheme.upper(),
        "latency_table_ms": table,
        "rotation_cost_ms": table["Mul_PC"] if args.rotation_cost_ms is None else args.rotation_cost_ms,
    })
    return rep


def _emit(report: dict, out: str | None):
    text = json.dumps(report, sort_keys=True, indent=1)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    return text


def _config_dict(args) -> dict:
    keep = ("arch", "weights", "samples", "pack", "batch", "scheme", "poly_degree",
            "scale", "noise", "sigma", "seed", "rotation_cost_ms")
    return {k: getattr(args, k, None) for k in keep}


def cmd_infer(args) -> int:
    bundle = catalog.get(args.arch)
    weights = _load_weights(args)
    ctx = _context(args, bundle)
    if args.backbone:
        _, labels, images = _decomposed(args, bundle, weights)
        recs, logits = [], []
        if args.pack == "bhw":
            eff = min(args.batch, len(images))
            chunks = [images[i:i + eff] for i in range(0, len(images), eff)]
        else:
            eff = 1
            chunks = [images[i:i + 1] for i in range(len(images))]
        first_rec = None
        for chunk in chunks:
            res = forward_backbone(bundle.backbone, chunk, weights, ctx, strategy=args.pack)
            logits.append(res.decrypt_logits())
            first_rec = first_rec or res.recorder
        logits = np.concatenate(logits)
        rec, eff_batch, n_runs = first_rec, (eff if args.pack == "bhw" else 1), len(chunks)
        spec_for_taint = bundle.backbone
    else:
        dec, labels, _ = _decomposed(args, bundle, weights)
        logits, rec, eff_batch, n_runs = _run_batches(bundle, dec, weights, ctx, args.pack, args.batch)
        spec_for_taint = bundle.bi
    report = _report_common(args, rec, eff_batch)
    verdict = taint_check(spec_for_taint, rec)
    report.update({
        "config": _config_dict(args),
        "backend": active_backend(),
        "n_samples": int(logits.shape[0]),
        "runs": n_runs,
        "predictions": logits.argmax(axis=1).tolist(),
        "logits": logits.tolist(),
        "taint": {"verdict": "PASS" if verdict.passed else "FAIL",
                  "violations": list(verdict.violations)},
    })
    if labels is not None:
        report["labels"] = np.asarray(labels).tolist()
        report["accuracy"] = float((logits.argmax(axis=1) == np.asarray(labels)).mean())
    text = _emit(report, args.out)
    name = f"{args.arch}{'-backbone' if args.backbone else ''} ({args.pack})"
    print(format_table([{**report, "name": name}]))
    print(f"taint: {report['taint']['verdict']}")
    if not args.out:
        print(text)
    return EXIT_OK


def cmd_verify(args) -> int:
    bundle = catalog.get(args.arch)
    weights = _load_weights(args)
    ctx = _context(args, bundle)
    dec, _, _ = _decomposed(args, bundle, weights)
    logits, rec, eff_batch, _ = _run_batches(bundle, dec, weights, ctx, args.pack, args.batch)
    ref = reference_forward(bundle.bi, dec, weights)
    diffs = np.abs(logits - ref).max(axis=1)
    agree = logits.argmax(axis=1) == ref.argmax(axis=1)
    verdict = taint_check(bundle.bi, rec)
    ok = bool(agree.all() and (diffs <= args.threshold).all() and verdict.passed)
    report = {
        "config": _config_dict(args),
        "threshold": args.threshold,
        "n_samples": int(len(dec)),
        "argmax_agreement": float(agree.mean()),
        "max_logit_diff": float(diffs.max()),
        "taint": {"verdict": "PASS" if verdict.passed else "FAIL",
                  "violations": list(verdict.violations)},
        "verdict": "PASS" if ok else "FAIL",
    }
    if not ok:
        bad = int(np.argmax(~agree | (diffs > args.threshold)))
        report["first_divergent_sample"] = bad
    _emit(report, args.out)
    print(f"verify: {report['verdict']}  (agreement {report['argmax_agreement']:.3f}, "
          f"max |diff| {report['max_logit_diff']:.3g}, taint {report['taint']['verdict']})")
    if not ok:
        print(f"first divergent sample: {report.get('first_divergent_sample')}")
        return EXIT_VERIFY
    return EXIT_OK


def cmd_count(args) -> int:
    bundle = catalog.get(args.arch)
    weights = _load_weights(args)
    ctx = _context(args, bundle)
    dec, _, images = _decomposed(args, bundle, weights)
    logits, rec, eff_batch, _ = _run_batches(bundle, dec, weights, ctx, args.pack, args.batch)
    report = _report_common(args, rec, eff_batch)
    rows = [{**report, "name": f"{args.arch} bi-branch"}]
    out = {"bi": report, "config": _config_dict(args)}
    if args.compare_backbone:
        res = forward_backbone(bundle.backbone, images[:1], weights, ctx, strategy="hw")
        bb_rep = _report_common(args, res.recorder, 1)
        rows.append({**bb_rep, "name": f"{args.arch} backbone (encrypted)"})
        out["backbone"] = bb_rep
        out["heops_ratio"] = report["heops"] / bb_rep["heops"]
    _emit(out, args.out)
    print(format_table(rows))
    if "heops_ratio" in out:
        print(f"HEOPs ratio (bi / backbone): {out['heops_ratio']:.3f}")
    return EXIT_OK


def cmd_spread(args) -> int:
    if args.arch:
        bundle = catalog.get(args.arch)
        result = spread_network(bundle.bi)
        print(f"{args.arch}: plaintext-branch max tainted fraction "
              f"{result['plain_max_fraction']:.3f}")
        for row in result["cipher"]:
            print(f"  cipher {row['layer']:>12}: {row['fraction']:.3f}")
    else:
        from .costs import centered_mask, full_taint_layer

        mask = centered_mask(args.grid, args.region)
        layers = [LayerSpec("conv", kernel=(args.kernel, args.kernel),
                            stride=(args.stride, args.stride),
                            padding=(args.pad, args.pad),
                            in_channels=1, out_channels=1, weight="w", bias=None)
                  for _ in range(args.layers)]
        states = spread_stack(mask, layers)
        result = {
            "kind": "stack",
            "fractions": [s.fraction for s in states],
            "full_at": full_taint_layer(states),
        }
        for i, s in enumerate(states):
            print(f"layer {i:2d}: tainted fraction {s.fraction:.4f}")
        print(f"fully tainted at layer: {result['full_at']}")
    _emit(result, args.out)
    return EXIT_OK


def cmd_pack_demo(args) -> int:
    layout = PackLayout(args.strategy, args.n, args.height, args.width,
                        args.channels, args.slot_count)
    ctx = make_context(2 * args.slot_count, 1, 2.0 ** 30)
    rng = np.random.default_rng(0)
    batch = rng.integers(0, 10, size=(args.n, args.channels, args.height, args.width)).astype(float)
    cts = pack(batch, layout, ctx)
    print(f"strategy={args.strategy}: {len(cts)} ciphertexts, "
          f"{layout.slots_needed()}/{layout.slot_count} slots used each")
    print("first ciphertext slots:", np.asarray(cts[0].slots[:layout.slots_needed()], dtype=int).tolist())
    for b in range(args.n):
        row = [slot_index(b, i, j, layout) for i in range(args.height) for j in range(args.width)]
        print(f"slot_index(image {b}):", row)
    roundtrip = unpack(cts, layout, ctx)
    print("roundtrip exact:", bool(np.array_equal(roundtrip, batch)))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "infer": cmd_infer,
        "verify": cmd_verify,
        "count": cmd_count,
        "spread": cmd_spread,
        "pack-demo": cmd_pack_demo,
    }
    try:
        return handlers[args.cmd](args)
    except tuple(e for e, _ in _EXIT_BY_ERROR) as exc:
        code = next(c for e, c in _EXIT_BY_ERROR if isinstance(exc, e))
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
