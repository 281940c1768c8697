"""Regenerate the golden CSVs used by the CLI regression test.

Mirrors the fixture recipe in tests/test_cli.py exactly; run from the repo
root after intentional behavior changes:

    python3 scripts/make_golden.py
"""

import json
import pathlib
import shutil
import tempfile

from click.testing import CliRunner

from actionsynth import cli

GOLDEN_DIR = pathlib.Path(__file__).resolve().parent.parent / "tests" / "golden"


def main():
    runner = CliRunner()
    with tempfile.TemporaryDirectory() as tmp:
        root = pathlib.Path(tmp)
        toy_cfg = root / "toy.json"
        toy_cfg.write_text(json.dumps({"n_tags": 2, "items_per_tag": 5,
                                       "duration_range": [8, 12], "seed": 0}))
        dataset = root / "toy.mot"
        res = runner.invoke(cli.main, ["make-toy-dataset", str(toy_cfg),
                                       "--out", str(dataset)])
        assert res.exit_code == 0, res.output

        train_cfg = root / "train.json"
        train_cfg.write_text(json.dumps({
            "model": {"d_model": 32, "d_ctrl_latent": 24, "n_heads": 4,
                      "n_encoder_layers": 1, "n_unroll_layers": 1,
                      "n_decoder_layers": 1, "dropout": 0.0, "max_duration": 64},
            "train": {"epochs": 3, "activate_epoch": 1, "accomplish_epoch": 3,
                      "batch_size": 10, "learning_rate": 1e-3, "seed": 0},
        }))
        ckpt = root / "model.pt"
        res = runner.invoke(cli.main, ["train", str(dataset), str(train_cfg),
                                       "--out", str(ckpt)])
        assert res.exit_code == 0, res.output

        clf = root / "clf.pt"
        res = runner.invoke(cli.main, ["train-classifier", str(dataset),
                                       "--out", str(clf), "--epochs", "3"])
        assert res.exit_code == 0, res.output

        report_dir = root / "report"
        res = runner.invoke(cli.main, [
            "evaluate", str(dataset), "--mode", "sufficient",
            "--checkpoint", str(ckpt), "--classifier", str(clf),
            "--report", str(report_dir), "--n-actions", "3", "--n-chains", "2",
            "--split-ratio", "0.4", "--confidence", "0.0", "--seed", "1"])
        assert res.exit_code == 0, res.output

        GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
        for name in ("summary.csv", "per_index.csv"):
            shutil.copy(report_dir / name, GOLDEN_DIR / name)
            print(f"wrote {GOLDEN_DIR / name}")


if __name__ == "__main__":
    main()
