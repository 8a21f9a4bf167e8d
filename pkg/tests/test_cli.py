import json

import pytest

from pftseg.cli import main

TINY = {
    "dataset": {"resolution": 16, "n_train_labeled": 2, "n_support": 6,
                "n_test": 3, "seed": 0},
    "decoder": {"output_resolution": 16, "shared_cutoff": 8,
                "channels": [16, 16, 8], "latent_dim": 16},
    "pretrain": {"iterations": 30},
    "invert": {"iterations": 10},
    "classifier": {"epochs": 10, "pixels_per_image": 256},
    "methods": ["baseline", "pftgan"],
    "seeds": [0],
    "stage_iterations": 3,
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(TINY))
    return root, str(cfg)


def test_missing_config_file_exits_2(workspace, capsys):
    root, _ = workspace
    code = main(["gen-data", "--config", str(root / "nope.json"),
                 "--out", str(root / "d")])
    assert code == 2
    assert "configuration" in capsys.readouterr().err


def test_malformed_set_exits_2(workspace):
    root, cfg = workspace
    assert main(["gen-data", "--config", cfg, "--set", "oops",
                 "--out", str(root / "d")]) == 2


def test_unknown_config_field_exits_2(workspace):
    root, cfg = workspace
    assert main(["gen-data", "--config", cfg, "--set", "bogus_field=1",
                 "--out", str(root / "d")]) == 2


def test_pipeline_end_to_end(workspace, capsys):
    """gen-data -> pretrain -> invert -> finetune -> classify -> eval -> render."""
    root, cfg = workspace
    ds = str(root / "dataset")
    weights = str(root / "weights")
    latents = str(root / "latents.npz")
    ft = str(root / "finetuned")
    clf = str(root / "clf.npz")

    assert main(["gen-data", "--config", cfg, "--out", ds]) == 0
    assert (root / "dataset" / "manifest.json").exists()
    assert (root / "dataset" / "images").is_dir()

    assert main(["pretrain", "--config", cfg, "--data", ds,
                 "--out", weights]) == 0
    assert (root / "weights" / "pretrained.npz").exists()
    assert (root / "weights" / "encoder.pt").exists()

    assert main(["invert", "--config", cfg, "--data", ds,
                 "--weights", weights, "--out", latents]) == 0

    assert main(["finetune", "--config", cfg, "--data", ds,
                 "--weights", weights, "--latents", latents,
                 "--out", ft]) == 0
    assert (root / "finetuned" / "finetuned.npz").exists()
    assert (root / "finetuned" / "loss_trace.csv").exists()

    assert main(["classify", "--config", cfg, "--data", ds,
                 "--decoder", str(root / "finetuned" / "finetuned.npz"),
                 "--latents", latents, "--out", clf]) == 0

    capsys.readouterr()
    assert main(["eval", "--config", cfg, "--data", ds,
                 "--decoder", str(root / "finetuned" / "finetuned.npz"),
                 "--latents", latents, "--classifier", clf]) == 0
    assert "mIoU" in capsys.readouterr().out

    renders = root / "renders"
    assert main(["render", "--config", cfg, "--data", ds,
                 "--decoder", str(root / "finetuned" / "finetuned.npz"),
                 "--latents", latents, "--classifier", clf,
                 "--out", str(renders), "--count", "2"]) == 0
    assert len(list(renders.glob("*_pred.png"))) == 2


def test_eval_with_missing_dataset_exits_3(workspace):
    root, cfg = workspace
    assert main(["pretrain", "--config", cfg,
                 "--data", str(root / "no-such-dataset"),
                 "--out", str(root / "w2")]) == 3


def test_bench_subcommand(workspace, capsys):
    root, cfg = workspace
    out = str(root / "bench")
    assert main(["bench", "--config", cfg, "--out", out,
                 "--set", "methods=[\"baseline\"]"]) == 0
    assert (root / "bench" / "report.csv").exists()
    assert "baseline" in capsys.readouterr().out
