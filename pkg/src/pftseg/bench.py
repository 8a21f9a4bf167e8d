"""End-to-end n-shot benchmark over the synthetic dataset.

For every (method, shot count, seed) cell: generate the dataset, pretrain
(or load) the encoder/decoder pair, invert the labeled, support and test
images once, fine-tune the two-stream decoder according to the method,
extract pixel features, train the classifier on the shot images, and score
pooled test mIoU. Per-seed artifacts (pretrained weights, latents) are
cached in the work directory and shared across methods.

Absent-class convention: a class with empty union contributes IoU 0 and
stays in the denominator.
"""

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import checkpoint, finetune, inversion, metrics, pixclass
from .data import DatasetConfig, generate_dataset
from .errors import ConfigurationError
from .generator import DecoderConfig, init_two_stream
from .inversion import InvertConfig, PretrainConfig
from .palette import make_palette, project_labels
from .pixclass import ClassifierConfig
from .ploss import PerceptualLoss

METHODS = ("baseline", "pftgan", "vanilla", "single-stream", "step1", "step12")


@dataclass
class BenchmarkConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    pretrain: PretrainConfig = field(
        default_factory=lambda: PretrainConfig(iterations=1500)
    )
    # Amortized-only inversion: refining latents per image overfits them to
    # the frozen decoder, and the labeled latents then stop transferring to
    # the test latents after fine-tuning. The encoder's shared map keeps the
    # latent geometry consistent, which is what the benchmark relies on.
    invert: InvertConfig = field(
        default_factory=lambda: InvertConfig(iterations=0)
    )
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    methods: tuple = ("baseline", "pftgan", "vanilla", "single-stream")
    shots: tuple = (1,)
    seeds: tuple = (0, 2, 5)
    stage_iterations: int = 600
    stage_step_size: float = 2e-3
    lam: float = 0.1
    support_batch: int = 16
    transductive: bool = True
    ploss_seed: int = 0

    def __post_init__(self):
        for m in self.methods:
            if m not in METHODS:
                raise ConfigurationError(f"unknown method {m!r}; choose from {METHODS}")
        for s in self.shots:
            if not 1 <= s <= self.dataset.n_train_labeled:
                raise ConfigurationError(
                    f"shot count {s} exceeds n_train_labeled "
                    f"{self.dataset.n_train_labeled}"
                )

    def to_dict(self):
        d = asdict(self)
        for key in ("methods", "shots", "seeds"):
            d[key] = list(d[key])
        return d

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d):
        sub = {
            "dataset": DatasetConfig, "decoder": DecoderConfig,
            "pretrain": PretrainConfig, "invert": InvertConfig,
            "classifier": ClassifierConfig,
        }
        kwargs = {}
        for key, value in d.items():
            if key in sub and isinstance(value, dict):
                value = sub[key](**{
                    k: tuple(v) if isinstance(v, list) else v
                    for k, v in value.items()
                })
            elif isinstance(value, list):
                value = tuple(value)
            kwargs[key] = value
        return cls(**kwargs)


@dataclass
class BenchmarkReport:
    config_hash: str
    rows: list  # dicts: method, shots, seed, miou, per_class_iou, runtime_s

    def mean_miou(self, method, shots):
        vals = [
            r["miou"] for r in self.rows
            if r["method"] == method and r["shots"] == shots
        ]
        return float(np.mean(vals)) if vals else float("nan")


class SeedContext:
    """Per-seed artifacts shared by every method and shot count."""

    def __init__(self, config: BenchmarkConfig, seed: int, work_dir=None):
        self.config = config
        self.seed = seed
        self.loss_fn = PerceptualLoss(seed=config.ploss_seed)
        ds_cfg = replace(config.dataset, seed=config.dataset.seed + seed)
        self.splits = generate_dataset(ds_cfg)
        self.palette = make_palette(ds_cfg.num_classes)
        self.num_classes = ds_cfg.num_classes

        cache = Path(work_dir) / f"seed{seed}" if work_dir else None
        if cache:
            cache.mkdir(parents=True, exist_ok=True)
        ckpt = cache / "pretrained.npz" if cache else None
        enc_ckpt = cache / "encoder.pt" if cache else None

        pre_cfg = replace(config.pretrain, seed=config.pretrain.seed + seed)
        if ckpt and ckpt.exists() and enc_ckpt.exists():
            self.pretrained = checkpoint.load_decoder(ckpt)
            self.encoder = inversion.Encoder(config.decoder)
            self.encoder.load_state_dict(torch.load(enc_ckpt, weights_only=True))
        else:
            all_images = self.splits["support"] + self.splits["test"]
            self.encoder, self.pretrained, self.history = inversion.pretrain(
                all_images, pre_cfg, config.decoder, self.loss_fn
            )
            if ckpt:
                checkpoint.save_decoder(ckpt, self.pretrained)
                torch.save(self.encoder.state_dict(), enc_ckpt)

        self.latents = self._invert_all(cache)

    def _invert_all(self, cache):
        lat_file = cache / "latents.npz" if cache else None
        samples = [s for split in ("labeled", "support", "test")
                   for s in self.splits[split]]
        if lat_file and lat_file.exists():
            with np.load(lat_file) as data:
                if set(data.files) == {s.sample_id for s in samples}:
                    return {k: torch.as_tensor(data[k]) for k in data.files}
        w, _ = inversion.encode_batch(
            [s.image for s in samples], self.encoder, self.pretrained,
            self.config.invert, loss_fn=self.loss_fn,
        )
        latents = {s.sample_id: w[i] for i, s in enumerate(samples)}
        if lat_file:
            np.savez(lat_file, **{k: v.numpy() for k, v in latents.items()})
        return latents

    def finetune_data(self, shots: int) -> finetune.FinetuneData:
        labeled = [
            finetune.LabeledExample(s.image, s.label, self.latents[s.sample_id])
            for s in self.splits["labeled"][:shots]
        ]
        pool = self.splits["test"] if self.config.transductive else self.splits["support"]
        support = finetune.SupportSet.from_arrays(
            [s.image for s in pool],
            [self.latents[s.sample_id] for s in pool],
            sample_ids=[s.sample_id for s in pool],
        )
        return finetune.FinetuneData(labeled=labeled, support=support,
                                     palette=self.palette)


def finetune_for_method(ctx: SeedContext, method: str, shots: int):
    """Fresh two-stream decoder fine-tuned per the requested method."""
    cfg = ctx.config
    decoder = init_two_stream(cfg.decoder, ctx.pretrained)
    if method == "baseline":
        return decoder, {}
    data = ctx.finetune_data(shots)
    kwargs = dict(seed=ctx.seed, loss_fn=ctx.loss_fn,
                  support_batch=cfg.support_batch)
    schedule = finetune.default_schedule(
        cfg.stage_iterations, cfg.stage_step_size, cfg.lam
    )
    if method == "pftgan":
        traces = finetune.run_schedule(decoder, schedule, data, **kwargs)
    elif method == "single-stream":
        traces = finetune.run_schedule(decoder, schedule, data,
                                       single_stream=True, **kwargs)
    elif method == "step1":
        traces = finetune.run_schedule(decoder, schedule[:1], data, **kwargs)
    elif method == "step12":
        traces = finetune.run_schedule(decoder, schedule[:2], data, **kwargs)
    elif method == "vanilla":
        traces = {
            "vanilla": finetune.vanilla_finetune(
                decoder, data, iterations=3 * cfg.stage_iterations,
                step_size=cfg.stage_step_size, seed=ctx.seed,
                loss_fn=ctx.loss_fn,
            )
        }
    else:
        raise ConfigurationError(f"unknown method {method!r}")
    return decoder, traces


def evaluate_decoder(ctx: SeedContext, decoder, shots: int):
    """Classifier pipeline on a (possibly fine-tuned) decoder -> results."""
    cfg = ctx.config
    train_samples = ctx.splits["labeled"][:shots]
    feats = [
        pixclass.extract_pixel_features(decoder, ctx.latents[s.sample_id])
        for s in train_samples
    ]
    labels = [s.label for s in train_samples]
    clf_cfg = replace(cfg.classifier, seed=cfg.classifier.seed + ctx.seed)
    clf = pixclass.train_classifier(feats, labels, ctx.num_classes, clf_cfg)

    cm = np.zeros((ctx.num_classes, ctx.num_classes), dtype=np.int64)
    preds = {}
    for s in ctx.splits["test"]:
        f = pixclass.extract_pixel_features(decoder, ctx.latents[s.sample_id])
        pred = pixclass.predict(clf, f)
        preds[s.sample_id] = pred
        cm += metrics.confusion(pred, s.label, ctx.num_classes)
    return {
        "miou": metrics.miou(cm),
        "per_class_iou": metrics.per_class_iou(cm).tolist(),
        "confusion": cm,
        "predictions": preds,
        "classifier": clf,
    }


def run_cell(ctx: SeedContext, method: str, shots: int):
    start = time.time()
    decoder, traces = finetune_for_method(ctx, method, shots)
    result = evaluate_decoder(ctx, decoder, shots)
    result.update(
        method=method, shots=shots, seed=ctx.seed,
        runtime_s=time.time() - start, traces=traces, decoder=decoder,
    )
    return result


def _save_render(path, image):
    img8 = np.round(np.clip(image, 0, 1) * 255.0).astype(np.uint8)
    Image.fromarray(img8, mode="RGB").save(path)


def write_renders(ctx: SeedContext, result, out_dir, count=4):
    """PNG triplets (input, prediction, ground truth) for a few test images."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for s in ctx.splits["test"][:count]:
        pred_rgb = project_labels(result["predictions"][s.sample_id], ctx.palette)
        gt_rgb = project_labels(s.label, ctx.palette)
        _save_render(out_dir / f"{s.sample_id}_input.png", s.image)
        _save_render(out_dir / f"{s.sample_id}_pred.png", pred_rgb)
        _save_render(out_dir / f"{s.sample_id}_gt.png", gt_rgb)


def _write_traces(traces, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "iteration", "seg_loss", "img_loss", "support_loss"])
        for stage, rows in traces.items():
            for r in rows:
                writer.writerow(
                    [stage, r["iteration"], r["seg_loss"], r["img_loss"],
                     r["support_loss"]]
                )


def run_benchmark(config: BenchmarkConfig, work_dir=None, renders=False) -> BenchmarkReport:
    """Run every (method, shots, seed) cell; emit report files to work_dir."""
    work = Path(work_dir) if work_dir else None
    if work:
        work.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in config.seeds:
        ctx = SeedContext(config, seed, work)
        for shots in config.shots:
            for method in config.methods:
                result = run_cell(ctx, method, shots)
                rows.append(
                    {
                        "method": method, "shots": shots, "seed": seed,
                        "miou": result["miou"],
                        "per_class_iou": result["per_class_iou"],
                        "runtime_s": result["runtime_s"],
                    }
                )
                if work:
                    cell = work / f"seed{seed}" / f"{method}_{shots}shot"
                    cell.mkdir(parents=True, exist_ok=True)
                    if result["traces"]:
                        _write_traces(result["traces"], cell / "loss_trace.csv")
                    if renders:
                        write_renders(ctx, result, cell / "renders")

    report = BenchmarkReport(config_hash=config.hash(), rows=rows)
    if work:
        write_report(report, config, work)
    return report


def write_report(report: BenchmarkReport, config: BenchmarkConfig, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "shots", "seed", "miou", "runtime_s",
                         "per_class_iou"])
        for r in report.rows:
            writer.writerow(
                [r["method"], r["shots"], r["seed"], f"{r['miou']:.6f}",
                 f"{r['runtime_s']:.2f}",
                 json.dumps([round(v, 6) for v in r["per_class_iou"]])]
            )
    manifest = {
        "config": config.to_dict(),
        "config_hash": report.config_hash,
        "absent_class_convention": "IoU 0, kept in the denominator",
        "palette": make_palette(config.dataset.num_classes).to_list(),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))

    lines = [f"benchmark {report.config_hash}", ""]
    combos = sorted({(r["method"], r["shots"]) for r in report.rows})
    for method, shots in combos:
        vals = [r["miou"] for r in report.rows
                if r["method"] == method and r["shots"] == shots]
        lines.append(
            f"{method:>14s} {shots}-shot: mean mIoU {np.mean(vals):.4f} "
            f"over seeds {sorted(r['seed'] for r in report.rows if r['method'] == method and r['shots'] == shots)}"
        )
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")
