"""Command-line surface: one executable, six subcommands.

    mvbr dct               transform a raw video into its coefficient video
    mvbr synth             generate a planted-signal dataset
    mvbr train             run the training loop from a key=value config
    mvbr eval              score a checkpoint on a dataset split
    mvbr attention-report  mean attention per view on a split
    mvbr gradcheck         finite-difference check of a miniature model

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
failure. Unknown flags are rejected, and identical invocations with the
same seed produce byte-identical output files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import dct as dct_ops
from . import video_io
from .dataset import (
    CLASS_NAMES,
    SynthSpec,
    generate_synthetic,
    read_dataset,
    split_records,
    write_dataset,
)
from .errors import (
    FormatError,
    InsufficientFramesError,
    NumericError,
    ValidationError,
)
from .fusion import FusionConfig, build_model, load_model, save_model
from .metrics import classwise_table, mean_average_precision, write_classwise_csv
from .training import evaluate, fit, parse_kv_file, parse_run_config
from .transformer import EncoderConfig, TransformerEncoderNet

GRADCHECK_THRESHOLD = 1e-4


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.format_usage()}error: {message}")


def build_parser():
    parser = _Parser(prog="mvbr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("dct", help="transform a raw video into its coefficient video")
    p.add_argument("--input", required=True, help="MTVF file or image-sequence directory")
    p.add_argument("--output", required=True, help="MTVF file for the coefficient video")
    p.add_argument("--visualize", help="directory for per-frame log-magnitude PNGs")
    p.add_argument("--snippet-len", type=int, default=64, help="frames kept (centered window)")
    p.set_defaults(func=cmd_dct)

    p = sub.add_parser("synth", help="generate a planted-signal dataset")
    p.add_argument("--spec", required=True, help="key=value synthesis spec file")
    p.add_argument("--output", required=True, help="dataset file to write")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a fusion model")
    p.add_argument("--config", required=True, help="key=value run configuration file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", required=True, choices=("val", "test"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attention-report", help="mean attention per view on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="val", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_attention_report)

    p = sub.add_parser("gradcheck", help="finite-difference check of a miniature model")
    p.add_argument(
        "--model",
        required=True,
        choices=("multiview", "bimodal", "trimodal", "transformer"),
    )
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def cmd_dct(args):
    source = Path(args.input)
    if source.is_dir():
        video = video_io.frames_from_image_dir(source)
    else:
        video = video_io.read_video(source)
    video_io.validate_pixel_range(video)
    snippet = dct_ops.take_snippet(video, args.snippet_len)
    coefficients = dct_ops.video_dct(snippet)
    video_io.write_video(args.output, coefficients)
    if args.visualize:
        rendered = np.stack([dct_ops.dct_visualize(f) for f in coefficients])
        video_io.write_frame_images(args.visualize, rendered)
    print(f"wrote {coefficients.shape[0]} coefficient frames to {args.output}")
    return 0


def cmd_synth(args):
    spec = SynthSpec.from_strings(parse_kv_file(args.spec))
    manifest, records = generate_synthetic(spec)
    write_dataset(records, manifest, args.output)
    counts = {s: sum(1 for r in records if r.split == s) for s in ("train", "val", "test")}
    print(
        f"wrote {manifest.n_samples} samples "
        f"(train {counts['train']}, val {counts['val']}, test {counts['test']}) "
        f"to {args.output}"
    )
    return 0


def _class_names(n_classes):
    if n_classes == len(CLASS_NAMES):
        return CLASS_NAMES
    return tuple(f"class{i:02d}" for i in range(n_classes))


def cmd_train(args):
    config, dataset_path, modalities, output_dir = parse_run_config(args.config)
    manifest, records = read_dataset(dataset_path)
    for m in modalities:
        if m not in manifest.modalities:
            raise ValidationError(
                f"dataset lacks modality {m!r} (has {manifest.modalities})"
            )
    fusion_config = FusionConfig(
        feat_dim=manifest.feat_dim,
        n_views=manifest.n_views,
        n_classes=manifest.n_classes,
        lavila_dim=manifest.lavila_dim,
        seed=config.seed,
    )
    model = build_model(modalities, fusion_config)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    fit(model, records, config, history_path=out / "history.jsonl")
    save_model(model, out / "best.mtbp")
    val = split_records(records, "val")
    _, per_class, val_map = evaluate(model, val)
    probs, _ = model.evaluate_batch(
        {
            m: np.stack([np.asarray(r.features[m], dtype=np.float64) for r in val])
            for m in model.modalities
        }
    )
    labels = np.stack([np.asarray(r.labels, dtype=np.float64) for r in val])
    write_classwise_csv(
        out / "classwise_val.csv",
        mean_average_precision(probs, labels),
        _class_names(manifest.n_classes),
    )
    print(f"val mAP: {val_map:.6f}")
    return 0


def cmd_eval(args):
    model = load_model(args.checkpoint)
    manifest, records = read_dataset(args.dataset)
    subset = split_records(records, args.split)
    if not subset:
        raise ValidationError(f"dataset has no {args.split!r} records")
    loss, per_class, val_map = evaluate(model, subset)
    labels = np.stack([np.asarray(r.labels, dtype=np.float64) for r in subset])
    probs, _ = model.evaluate_batch(
        {
            m: np.stack([np.asarray(r.features[m], dtype=np.float64) for r in subset])
            for m in model.modalities
        }
    )
    result = mean_average_precision(probs, labels)
    print(f"split: {args.split}")
    print(f"loss: {loss:.6f}")
    print(f"mAP: {val_map:.6f}")
    print(classwise_table(result, _class_names(manifest.n_classes)))
    return 0


def cmd_attention_report(args):
    model = load_model(args.checkpoint)
    _, records = read_dataset(args.dataset)
    subset = split_records(records, args.split)
    if not subset:
        raise ValidationError(f"dataset has no {args.split!r} records")
    features = {
        m: np.stack([np.asarray(r.features[m], dtype=np.float64) for r in subset])
        for m in model.modalities
    }
    means = model.attention_means(features)
    payload = {
        "split": args.split,
        "attention": {m: [float(x) for x in a] for m, a in sorted(means.items())},
    }
    print(json.dumps(payload, sort_keys=True))
    views = model.config.n_views
    header = "modality  " + "  ".join(f"view{v}" for v in range(views))
    print(header)
    for m in sorted(means):
        cells = "  ".join(f"{x:.3f}" for x in means[m])
        print(f"{m:<8}  {cells}")
    return 0


def _gradcheck_case(kind, seed):
    """Miniature model, fixed data, and the loss closure for one check."""
    rng = np.random.default_rng([seed, 0xC0FFEE])
    if kind == "transformer":
        config = EncoderConfig(
            d_model=8, n_heads=2, d_ff=16, n_layers=1, seq_len=3, n_classes=3, seed=seed
        )
        net = TransformerEncoderNet(config)
        tokens = rng.standard_normal((config.seq_len, config.d_model))
        labels = (rng.random((1, config.n_classes)) < 0.5).astype(np.float64)

        def loss_fn(_params):
            probs = net.classify(net.tokens_variable(tokens))
            return ad.bce_loss(ad.reshape(probs, (1, config.n_classes)), labels)

        return net.named_parameters(), loss_fn

    config = FusionConfig(
        feat_dim=6, hidden=8, n_views=3, n_classes=4, lavila_dim=5, seed=seed
    )
    mods = {
        "multiview": ("rgb",),
        "bimodal": ("rgb", "dct"),
        "trimodal": ("rgb", "dct", "lavila"),
    }[kind]
    model = build_model(mods, config)
    batch = 3
    features = {}
    for m in mods:
        if m == "lavila":
            features[m] = rng.standard_normal((batch, config.lavila_dim))
        else:
            features[m] = rng.standard_normal((batch, config.n_views, config.feat_dim))
    labels = (rng.random((batch, config.n_classes)) < 0.5).astype(np.float64)

    def loss_fn(_params):
        probs, _ = model.forward_batch(features)
        return ad.bce_loss(probs, labels)

    return model.named_parameters(), loss_fn


def run_gradcheck(kind, seed, h=1e-4):
    """Max relative gradient error of a miniature model and the worst parameter."""
    named, loss_fn = _gradcheck_case(kind, seed)
    worst, per_param = ad.grad_check_detailed(loss_fn, named, h=h)
    worst_name = max(per_param, key=per_param.get)
    return worst, worst_name


def cmd_gradcheck(args):
    worst, worst_name = run_gradcheck(args.model, args.seed)
    if worst < GRADCHECK_THRESHOLD:
        print(f"gradcheck {args.model}: max relative error {worst:.3e} (pass)")
        return 0
    print(
        f"gradcheck {args.model}: max relative error {worst:.3e} "
        f"at parameter {worst_name!r} (fail, threshold {GRADCHECK_THRESHOLD:.0e})"
    )
    raise NumericError(f"gradient check failed for {args.model} at {worst_name!r}")


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse -h exits directly
        return 0 if exc.code in (0, None) else int(exc.code)
    try:
        return args.func(args)
    except (FormatError, ValidationError, InsufficientFramesError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


def entrypoint():
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
