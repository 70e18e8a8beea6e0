"""Secondary acceptance: exporter conformance against the primary component.

Exercises the real hand-off: the primary pipeline's tile stage emits the PNG
directory + manifest, the exporter CLI produces embedding CSVs, and the
primary loader must parse them with zero warnings.
"""

import csv
import json
import logging
import os
import time

import numpy as np
import pytest
from PIL import Image

from urbanvit_exporter.cli import main as export_main


def _ok(name, detail=""):
    print(f"[PASS] {name}" + (f" ({detail})" if detail else ""))


@pytest.fixture(scope="module")
def png_dir(tmp_path_factory):
    """Imagelet PNGs produced by the primary pipeline's tile stage."""
    urbanvit_synth = pytest.importorskip("urbanvit.synth")
    from urbanvit.cli import main as urbanvit_main

    root = tmp_path_factory.mktemp("hand_off")
    bundle = str(root / "bundle")
    urbanvit_synth.generate(
        urbanvit_synth.SynthSpec(n_cities=1, districts_per_city=20, seed=21), bundle
    )
    out = str(root / "run")
    rc = urbanvit_main(
        [
            "run",
            "--config",
            os.path.join(bundle, "pipeline.toml"),
            "--stage",
            "tile",
            "--out",
            out,
            "--set",
            "raster.emit_pngs=true",
        ]
    )
    assert rc == 0
    d = os.path.join(out, "pngs")
    assert os.path.exists(os.path.join(d, "imagelets.csv"))
    return {"dir": d, "root": str(root)}


@pytest.fixture(scope="module")
def small_png_dir(png_dir, tmp_path_factory):
    """A 12-imagelet subset for the (slow) pretrained-CNN mode."""
    import shutil

    src = png_dir["dir"]
    dst = str(tmp_path_factory.mktemp("small") / "pngs")
    os.makedirs(dst)
    rows = list(csv.reader(open(os.path.join(src, "imagelets.csv"))))
    keep = rows[1:13]
    for fname, _ in keep:
        shutil.copy(os.path.join(src, fname), os.path.join(dst, fname))
    with open(os.path.join(dst, "imagelets.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(rows[0])
        w.writerows(keep)
    return dst


class TestSecondaryAcceptance:
    def test_exporter_conformance_and_smoke(self, png_dir, small_png_dir, caplog):
        urbanvit_features = pytest.importorskip("urbanvit.features")
        t0 = time.monotonic()
        root = png_dir["root"]

        # Pretrained mode: 4096 dims, parsed with zero warnings.
        pre_out = os.path.join(root, "pretrained.csv")
        rc = export_main(
            ["--mode", "pretrained-cnn", "--imagelets", small_png_dir, "--out", pre_out,
             "--seed", "3"]
        )
        assert rc == 0
        with caplog.at_level(logging.WARNING, logger="urbanvit"):
            vecs = urbanvit_features.load_embeddings(pre_out)
        assert [r for r in caplog.records if r.name.startswith("urbanvit.")] == []
        assert len(vecs) == 12
        assert all(len(v.z) == 4096 for v in vecs)
        caplog.clear()

        # CAE mode: 20-epoch smoke training on 256 synthetic imagelets.
        n_avail = sum(1 for _ in open(os.path.join(png_dir["dir"], "imagelets.csv"))) - 1
        assert n_avail >= 256, f"fixture produced only {n_avail} imagelets"
        cae_dir = self._subset(png_dir["dir"], root, 256)
        cae_out = os.path.join(root, "cae.csv")
        weights = os.path.join(root, "cae.pt")
        rc = export_main(
            ["--mode", "cae", "--imagelets", cae_dir, "--out", cae_out, "--train",
             "--weights", weights, "--epochs", "20", "--batch-size", "128", "--seed", "3"]
        )
        assert rc == 0
        curve = [
            float(r["loss"]) for r in csv.DictReader(open(weights + ".loss.csv"))
        ]
        assert len(curve) == 20
        assert curve[19] < curve[0], (curve[0], curve[19])

        with caplog.at_level(logging.WARNING, logger="urbanvit"):
            vecs = urbanvit_features.load_embeddings(cae_out)
        assert [r for r in caplog.records if r.name.startswith("urbanvit.")] == []
        assert len(vecs) == 256
        assert all(len(v.z) == 512 for v in vecs)

        elapsed = time.monotonic() - t0
        assert elapsed < 600.0
        _ok(
            "secondary exporter conformance",
            f"4096/512 dims, zero loader warnings, CAE loss {curve[0]:.4f}->{curve[19]:.4f} "
            f"over 20 epochs, {elapsed:.0f}s",
        )

    @staticmethod
    def _subset(src, root, n):
        import shutil

        dst = os.path.join(root, f"subset_{n}")
        os.makedirs(dst, exist_ok=True)
        rows = list(csv.reader(open(os.path.join(src, "imagelets.csv"))))
        keep = rows[1 : n + 1]
        for fname, _ in keep:
            shutil.copy(os.path.join(src, fname), os.path.join(dst, fname))
        with open(os.path.join(dst, "imagelets.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(rows[0])
            w.writerows(keep)
        return dst

    def test_seeded_determinism_both_modes(self, small_png_dir, tmp_path):
        out1 = str(tmp_path / "a.csv")
        out2 = str(tmp_path / "b.csv")
        for out in (out1, out2):
            assert export_main(
                ["--mode", "pretrained-cnn", "--imagelets", small_png_dir, "--out", out,
                 "--seed", "9"]
            ) == 0
        assert open(out1).read() == open(out2).read()
        _ok("secondary determinism", "pretrained exports byte-identical under one seed")
