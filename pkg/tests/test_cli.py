"""End-to-end CLI chain on a miniature dataset, plus the error contract.

The chain runs synth -> train -> stain -> qc -> eval in one temp tree.
Training is two iterations of a tiny bank; the point is that every
subcommand writes what the next one reads, not model quality.
"""

import json

import numpy as np
import pytest

from virtstain.cli import main
from virtstain.raster_io import read_wsi

MINI_INI = """
[run]
seed = 5
[synth]
n_pairs = 4
tile = 64
slide_width = 128
slide_height = 96
[arch]
latent_channels = 4
disc_features = 4
param_dtype = float32
[training]
batch_size = 2
"""


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    root = tmp_path_factory.mktemp("chain")
    ini = root / "mini.ini"
    ini.write_text(MINI_INI)
    data = root / "data"
    ckpt = root / "ckpt"
    rc = main(["synth", "--config", str(ini), "--out", str(data)])
    assert rc == 0
    rc = main(
        [
            "train",
            "--config",
            str(ini),
            "--data",
            str(data),
            "--iterations",
            "2",
            "--out",
            str(ckpt),
        ]
    )
    assert rc == 0
    return {"root": root, "ini": ini, "data": data, "ckpt": ckpt}


def test_synth_outputs(chain):
    data = chain["data"]
    assert (data / "he.tiff").exists()
    manifest = json.loads((data / "synth.json").read_text())
    assert set(manifest["n_pairs"]) == {"cd3", "cd8", "panck"}
    for sid in manifest["n_pairs"]:
        assert (data / f"truth_{sid}.tiff").exists()
        assert (data / f"mask_{sid}.png").exists()
        assert len(list((data / "tiles" / sid).glob("he_*.png"))) == 4


def test_train_outputs(chain):
    ckpt = chain["ckpt"]
    assert (ckpt / "manifest.json").exists()
    assert (ckpt / "he.npz").exists()
    assert (ckpt / "cd3.npz").exists()
    log_lines = (ckpt / "training_log.jsonl").read_text().splitlines()
    assert log_lines
    first = json.loads(log_lines[0])
    assert "total" in first and "iteration" in first


def test_stain_writes_slides_and_accounts_archives(chain, capsys):
    out = chain["root"] / "stained"
    rc = main(
        [
            "stain",
            "--config",
            str(chain["ini"]),
            "--input",
            str(chain["data"] / "he.tiff"),
            "--stains",
            "cd3",
            "--overlap",
            "0.6",
            "--checkpoints",
            str(chain["ckpt"]),
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    report = json.loads((out / "stain_report.json").read_text())
    # one requested stain: the shared H&E archive plus that stain's
    assert len(report["opened_archives"]) == 2
    slide = read_wsi(out / "cd3.tiff")
    he = read_wsi(chain["data"] / "he.tiff")
    assert slide.levels[0].shape == he.levels[0].shape
    assert slide.levels[0].min() >= 0.0 and slide.levels[0].max() <= 1.0


def test_qc_emits_heatmaps_and_report(chain, capsys):
    out = chain["root"] / "heat"
    rc = main(
        [
            "qc",
            "--config",
            str(chain["ini"]),
            "--input",
            str(chain["data"] / "he.tiff"),
            "--domain",
            "he",
            "--interval",
            "auto",
            "--checkpoints",
            str(chain["ckpt"]),
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    report = json.loads((out / "qc_report.json").read_text())
    assert report["domain"] == "he"
    assert report["tiles"]
    assert len(list((out / "heatmaps").glob("tile_*.png"))) == len(report["tiles"])
    assert sum(report["summary"].values()) == len(report["tiles"])


def test_eval_reports_metrics(chain, capsys):
    out = chain["root"] / "report.json"
    rc = main(
        [
            "eval",
            "--pred",
            str(chain["data"] / "truth_cd3.tiff"),
            "--truth",
            str(chain["data"] / "truth_cd3.tiff"),
            "--he",
            str(chain["data"] / "he.tiff"),
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    payload = json.loads(out.read_text())
    assert payload["mse_raw"]["mean"] == 0.0
    assert payload["psnr_db"]["mean"] == 100.0


def _stderr_payload(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(err)


def test_unknown_config_key_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[tiles]\nnope = 1\n")
    rc = main(["synth", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert rc == 2
    payload = _stderr_payload(capsys)
    assert payload["error"] == "ConfigurationError"
    assert payload["code"] == 2


def test_missing_dataset_exit_code(tmp_path, capsys):
    rc = main(
        [
            "train",
            "--data",
            str(tmp_path / "nowhere"),
            "--out",
            str(tmp_path / "o"),
        ]
    )
    assert rc == 2
    assert _stderr_payload(capsys)["code"] == 2


def test_empty_stains_rejected(tmp_path, capsys):
    rc = main(
        [
            "stain",
            "--input",
            "x.tiff",
            "--stains",
            ",",
            "--checkpoints",
            str(tmp_path),
            "--out",
            str(tmp_path / "o"),
        ]
    )
    assert rc == 2


def test_bad_interval_rejected(chain, capsys):
    rc = main(
        [
            "qc",
            "--input",
            str(chain["data"] / "he.tiff"),
            "--domain",
            "he",
            "--interval",
            "0.9,0.1",
            "--checkpoints",
            str(chain["ckpt"]),
            "--out",
            str(chain["root"] / "h2"),
        ]
    )
    assert rc == 2
    assert "interval" in _stderr_payload(capsys)["message"]
