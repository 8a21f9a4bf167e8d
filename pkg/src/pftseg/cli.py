"""Command-line surface.

Every subcommand reads one JSON config (schema = BenchmarkConfig.to_dict(),
all fields optional) plus `--set dotted.key=value` overrides, and writes a
manifest next to its outputs. Exit codes: 0 success, 2 configuration /
usage errors, 3 data validation errors, 4 training errors.
"""

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from . import __version__, bench, checkpoint, data, finetune, inversion, metrics, pixclass
from .bench import BenchmarkConfig, SeedContext
from .errors import (
    ConfigurationError,
    PftsegError,
    TrainingError,
    UsageError,
    ValidationError,
)
from .generator import init_two_stream
from .palette import make_palette, project_labels
from .ploss import PerceptualLoss


def _load_config(args) -> BenchmarkConfig:
    raw = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {args.config}")
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"malformed config {args.config}: {e}")
    for item in args.set or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            pass  # keep as string
        node = raw
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    try:
        return BenchmarkConfig.from_dict(raw)
    except TypeError as e:
        raise ConfigurationError(f"bad config field: {e}")


def _write_manifest(out_dir, config, extra=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": __version__,
        "config": config.to_dict(),
        "config_hash": config.hash(),
    }
    manifest.update(extra or {})
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))


def _load_latents(path):
    with np.load(path) as d:
        return {k: torch.as_tensor(d[k]) for k in d.files}


def _load_split_data(path):
    splits, ds_cfg = data.load_dataset(path)
    return splits, ds_cfg


def cmd_gen_data(args):
    config = _load_config(args)
    splits = data.generate_dataset(config.dataset)
    data.save_dataset(args.out, splits, config.dataset)
    print(f"wrote dataset ({sum(len(v) for v in splits.values())} samples) to {args.out}")


def cmd_pretrain(args):
    config = _load_config(args)
    splits, _ = _load_split_data(args.data)
    pool = splits["support"] + splits["test"]
    loss_fn = PerceptualLoss(seed=config.ploss_seed)
    encoder, decoder, history = inversion.pretrain(
        pool, config.pretrain, config.decoder, loss_fn
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint.save_decoder(out / "pretrained.npz", decoder)
    torch.save(encoder.state_dict(), out / "encoder.pt")
    _write_manifest(out, config, {"pretrain_history": history})
    print(
        f"pretrained: held-out loss {history['initial_val_loss']:.4f} -> "
        f"{history['final_val_loss']:.4f}; weights in {out}"
    )


def _load_pretrained(config, weights_dir):
    weights_dir = Path(weights_dir)
    decoder = checkpoint.load_decoder(weights_dir / "pretrained.npz")
    encoder = inversion.Encoder(config.decoder)
    try:
        encoder.load_state_dict(
            torch.load(weights_dir / "encoder.pt", weights_only=True)
        )
    except (FileNotFoundError, RuntimeError) as e:
        raise UsageError(
            f"cannot load encoder from {weights_dir} (run `pftseg pretrain` "
            f"first): {e}"
        )
    return encoder, decoder


def cmd_invert(args):
    config = _load_config(args)
    splits, _ = _load_split_data(args.data)
    encoder, decoder = _load_pretrained(config, args.weights)
    loss_fn = PerceptualLoss(seed=config.ploss_seed)
    samples = [s for split in splits.values() for s in split]
    w, losses = inversion.encode_batch(
        [s.image for s in samples], encoder, decoder, config.invert,
        loss_fn=loss_fn,
    )
    np.savez(args.out, **{s.sample_id: w[i].numpy() for i, s in enumerate(samples)})
    print(
        f"inverted {len(samples)} images (mean loss {losses.mean():.4f}) "
        f"-> {args.out}"
    )


def _finetune_setup(args, config):
    splits, ds_cfg = _load_split_data(args.data)
    encoder, pretrained = _load_pretrained(config, args.weights)
    latents = _load_latents(args.latents)
    palette = make_palette(ds_cfg.num_classes)
    labeled = [
        finetune.LabeledExample(s.image, s.label, latents[s.sample_id])
        for s in splits["labeled"][: args.shots]
    ]
    pool = splits["test"] if config.transductive else splits["support"]
    support = finetune.SupportSet.from_arrays(
        [s.image for s in pool], [latents[s.sample_id] for s in pool],
        sample_ids=[s.sample_id for s in pool],
    )
    ft_data = finetune.FinetuneData(labeled, support, palette)
    return splits, ds_cfg, pretrained, latents, palette, ft_data


def cmd_finetune(args):
    config = _load_config(args)
    _, _, pretrained, _, _, ft_data = _finetune_setup(args, config)
    decoder = init_two_stream(config.decoder, pretrained)
    loss_fn = PerceptualLoss(seed=config.ploss_seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    schedule = finetune.default_schedule(
        config.stage_iterations, config.stage_step_size, config.lam
    )
    if args.method == "vanilla":
        traces = {
            "vanilla": finetune.vanilla_finetune(
                decoder, ft_data, iterations=3 * config.stage_iterations,
                step_size=config.stage_step_size, seed=args.seed, loss_fn=loss_fn,
            )
        }
    else:
        traces = finetune.run_schedule(
            decoder, schedule, ft_data, seed=args.seed, loss_fn=loss_fn,
            single_stream=(args.method == "single-stream"),
            checkpoint_dir=str(out / "ckpt"),
            support_batch=config.support_batch,
        )
    checkpoint.save_decoder(out / "finetuned.npz", decoder)
    bench._write_traces(traces, out / "loss_trace.csv")
    _write_manifest(out, config, {"method": args.method, "shots": args.shots,
                                  "seed": args.seed})
    print(f"fine-tuned ({args.method}, {args.shots}-shot) -> {out}")


def cmd_classify(args):
    config = _load_config(args)
    splits, ds_cfg = _load_split_data(args.data)
    decoder = checkpoint.load_decoder(args.decoder)
    latents = _load_latents(args.latents)
    train = splits["labeled"][: args.shots]
    feats = [
        pixclass.extract_pixel_features(decoder, latents[s.sample_id])
        for s in train
    ]
    clf = pixclass.train_classifier(
        feats, [s.label for s in train], ds_cfg.num_classes, config.classifier
    )
    pixclass.save_classifier(args.out, clf)
    print(f"trained classifier on {len(train)} image(s) -> {args.out}")


def cmd_eval(args):
    config = _load_config(args)
    splits, ds_cfg = _load_split_data(args.data)
    decoder = checkpoint.load_decoder(args.decoder)
    latents = _load_latents(args.latents)
    clf, _ = pixclass.load_classifier(args.classifier)
    cm = np.zeros((ds_cfg.num_classes, ds_cfg.num_classes), dtype=np.int64)
    for s in splits["test"]:
        f = pixclass.extract_pixel_features(decoder, latents[s.sample_id])
        cm += metrics.confusion(pixclass.predict(clf, f), s.label, ds_cfg.num_classes)
    print(f"test mIoU: {metrics.miou(cm):.4f}")
    print("per-class IoU:", [round(v, 4) for v in metrics.per_class_iou(cm)])


def cmd_render(args):
    config = _load_config(args)
    splits, ds_cfg = _load_split_data(args.data)
    decoder = checkpoint.load_decoder(args.decoder)
    latents = _load_latents(args.latents)
    clf, _ = pixclass.load_classifier(args.classifier)
    palette = make_palette(ds_cfg.num_classes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for s in splits["test"][: args.count]:
        f = pixclass.extract_pixel_features(decoder, latents[s.sample_id])
        pred = pixclass.predict(clf, f)
        bench._save_render(out / f"{s.sample_id}_input.png", s.image)
        bench._save_render(out / f"{s.sample_id}_pred.png", project_labels(pred, palette))
        bench._save_render(out / f"{s.sample_id}_gt.png", project_labels(s.label, palette))
    print(f"wrote renders to {out}")


def cmd_bench(args):
    config = _load_config(args)
    report = bench.run_benchmark(config, work_dir=args.out, renders=args.renders)
    for method, shots in sorted({(r["method"], r["shots"]) for r in report.rows}):
        print(
            f"{method:>14s} {shots}-shot: mean mIoU "
            f"{report.mean_miou(method, shots):.4f}"
        )
    print(f"report in {args.out}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pftseg",
        description="few-shot part segmentation via progressive generator fine-tuning",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kw):
        p = sub.add_parser(name, **kw)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry (dotted path)")
        p.set_defaults(fn=fn)
        return p

    p = add("gen-data", cmd_gen_data, help="generate the synthetic dataset")
    p.add_argument("--out", required=True)

    p = add("pretrain", cmd_pretrain, help="pretrain encoder + decoder")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = add("invert", cmd_invert, help="compute latent codes for all samples")
    p.add_argument("--data", required=True)
    p.add_argument("--weights", required=True, help="pretrain output directory")
    p.add_argument("--out", required=True, help="latents .npz file")

    p = add("finetune", cmd_finetune, help="progressively fine-tune the decoder")
    p.add_argument("--data", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--latents", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", default="pftgan",
                   choices=["pftgan", "vanilla", "single-stream"])
    p.add_argument("--shots", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)

    p = add("classify", cmd_classify, help="train the pixel classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--decoder", required=True, help="decoder checkpoint .npz")
    p.add_argument("--latents", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--shots", type=int, default=1)

    p = add("eval", cmd_eval, help="score test mIoU")
    p.add_argument("--data", required=True)
    p.add_argument("--decoder", required=True)
    p.add_argument("--latents", required=True)
    p.add_argument("--classifier", required=True)

    p = add("render", cmd_render, help="write prediction PNG triplets")
    p.add_argument("--data", required=True)
    p.add_argument("--decoder", required=True)
    p.add_argument("--latents", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=4)

    p = add("bench", cmd_bench, help="run the full n-shot benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--renders", action="store_true")

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except (ConfigurationError, UsageError) as e:
        print(f"error (configuration): {e}", file=sys.stderr)
        return 2
    except ValidationError as e:
        print(f"error (validation): {e}", file=sys.stderr)
        return 3
    except TrainingError as e:
        print(f"error (training): {e}", file=sys.stderr)
        return 4
    except PftsegError as e:
        print(f"error: {e}", file=sys.stderr)
        return 5
    return 0


if __name__ == "__main__":
    sys.exit(main())
