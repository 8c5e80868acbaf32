import json
import os

import numpy as np

from ldag.cli import main
from ldag.netpbm import read_mask, read_pgm, read_ppm


def run(argv):
    return main(argv)


def test_gen_fixtures_and_force(tmp_path, capsys):
    out = str(tmp_path / "fx")
    assert run(["gen-fixtures", "--out", out, "--seed", "7"]) == 0
    manifest = json.loads((tmp_path / "fx" / "manifest.json").read_text())
    assert len(manifest["classes"]) == 8
    assert manifest["dataset"] == "synthetic-8"
    # refuses to overwrite
    assert run(["gen-fixtures", "--out", out, "--seed", "7"]) == 1
    assert run(["gen-fixtures", "--out", out, "--seed", "7", "--force"]) == 0
    # deterministic artifacts per seed
    sample = (tmp_path / "fx" / "azure_square.sample.ppm").read_bytes()
    run(["gen-fixtures", "--out", str(tmp_path / "fx2"), "--seed", "7"])
    assert (tmp_path / "fx2" / "azure_square.sample.ppm").read_bytes() == sample
    # images and masks parse
    read_ppm(tmp_path / "fx" / "jade_circle.sample.ppm")
    read_mask(tmp_path / "fx" / "jade_circle.sample.pgm")


def test_attributes_offline_prints_n_plus_one(tmp_path, capsys):
    assert run(["attributes", "azure square", "--offline", "--n", "3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    foreground = [l for l in lines if not l.startswith("[background]")]
    assert len(foreground) == 4  # n attribute prompts + the template
    assert foreground[-1] == "a photo of azure square"
    assert lines[-1] == "[background] a photo without azure square"


def test_attributes_bad_class_exits_2(capsys):
    assert run(["attributes", "paisley dodecahedron", "--offline"]) == 2


def test_prior_emits_maps_and_scores(tmp_path):
    out = str(tmp_path / "pr")
    assert run(["prior", "jade circle", "--out", out, "--offline", "--seed", "7"]) == 0
    maps = sorted(f for f in os.listdir(out) if f.endswith(".pgm"))
    assert len(maps) == 6  # n+1 at the default n=5
    for f in maps:
        gray = read_pgm(os.path.join(out, f))
        assert gray.shape == (8, 8)
    scores = json.loads((tmp_path / "pr" / "jade_circle.scores.json").read_text())
    assert len(scores["s_f"]) == 6
    assert len(scores["softmaxed"]) == 6
    # deterministic bytes per seed
    out2 = str(tmp_path / "pr2")
    run(["prior", "jade circle", "--out", out2, "--offline", "--seed", "7"])
    for f in maps:
        assert (tmp_path / "pr" / f).read_bytes() == (tmp_path / "pr2" / f).read_bytes()


def test_train_eval_quickstart(tmp_path):
    out = str(tmp_path / "run")
    args = ["--offline", "--seed", "11", "--epochs", "1", "--episodes-per-epoch", "2",
            "--eval-episodes", "1", "--out", out]
    assert run(["train"] + args) == 0
    assert os.path.isdir(os.path.join(out, "checkpoint"))
    assert os.path.exists(os.path.join(out, "train.metrics.jsonl"))
    assert run(["eval", "--checkpoint", os.path.join(out, "checkpoint")] + args) == 0
    report = json.loads((tmp_path / "run" / "report.json").read_text())
    assert 0.0 <= report["miou"] <= 1.0
    assert report["config"]["seed"] == 11
    assert os.path.exists(os.path.join(out, "episodes.csv"))


def test_eval_without_checkpoint_is_valid(tmp_path):
    out = str(tmp_path / "ev")
    assert run(["eval", "--offline", "--epochs", "0", "--eval-episodes", "1",
                "--out", out]) == 0
    report = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert report["episode_count"] == 2


def test_eval_deterministic_report_bytes(tmp_path):
    argv = ["eval", "--offline", "--eval-episodes", "1", "--seed", "3"]
    run(argv + ["--out", str(tmp_path / "a")])
    run(argv + ["--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "report.json").read_bytes() == \
        (tmp_path / "b" / "report.json").read_bytes()


def test_ablate_modules_cardinality(tmp_path):
    out = str(tmp_path / "ab")
    assert run(["ablate", "--sweep", "modules", "--offline", "--epochs", "1",
                "--episodes-per-epoch", "1", "--eval-episodes", "1", "--out", out]) == 0
    summary = json.loads((tmp_path / "ab" / "ablation_summary.json").read_text())
    assert set(summary) == {"base", "mae", "mae_maa"}
    for tag in summary:
        report = json.loads((tmp_path / "ab" / f"{tag}.report.json").read_text())
        assert "config" in report and "miou" in report


def test_ablate_alpha_cardinality(tmp_path):
    out = str(tmp_path / "ab")
    assert run(["ablate", "--sweep", "alpha", "--offline", "--epochs", "1",
                "--episodes-per-epoch", "1", "--eval-episodes", "1", "--out", out]) == 0
    summary = json.loads((tmp_path / "ab" / "ablation_summary.json").read_text())
    assert len(summary) == 5
    # each cell echoes its own alpha
    for alpha in (0.0, 0.3, 0.5, 0.8, 1.0):
        report = json.loads((tmp_path / "ab" / f"alpha_{alpha}.report.json").read_text())
        assert report["config"]["alpha"] == alpha


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("seed=5\nepochs=1\nepisodes_per_epoch=1\neval_episodes=1\nn=2\n")
    out = str(tmp_path / "o")
    assert run(["eval", "--config", str(cfg), "--offline", "--seed", "6",
                "--out", out]) == 0
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["config"]["seed"] == 6  # flag wins
    assert report["config"]["n"] == 2  # file value survives


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("warp_factor=9\n")
    assert run(["eval", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_validate_subcommand(tmp_path):
    from ldag.ldagtnsr import write_tensor
    good = tmp_path / "good.ldt"
    write_tensor(good, np.ones((2, 2), dtype=np.float32), {"kind": "sam_features", "source": "toy"})
    assert run(["validate", str(good)]) == 0
    bad = tmp_path / "bad.ldt"
    bad.write_bytes(b"NOT A TENSOR")
    assert run(["validate", str(bad)]) == 1
    assert run(["validate", str(good), str(bad)]) == 1
