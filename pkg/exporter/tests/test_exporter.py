import csv
import logging
import os

import numpy as np
import pytest
import torch
from PIL import Image

from urbanvit_exporter.data import (
    ImageletDirError,
    load_imagelets,
    write_embedding_csv,
)
from urbanvit_exporter.export import (
    ExporterConfig,
    export_cae,
    export_pretrained,
    reconstruction_mse,
    train_cae,
)
from urbanvit_exporter.models import Cae, reconstruction_loss


def make_imagelet_dir(path, n=3, seed=0, size=64):
    os.makedirs(path, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        arr = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
        name = f"c_0_{i}.png"
        Image.fromarray(arr, mode="RGB").save(os.path.join(path, name))
        rows.append((name, f"c:0:{i}"))
    with open(os.path.join(path, "imagelets.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["filename", "imagelet_id"])
        w.writerows(rows)
    return path


class TestData:
    def test_load_sorted_by_id(self, tmp_path):
        d = make_imagelet_dir(str(tmp_path / "ims"), n=5)
        ids, pixels, skipped = load_imagelets(d)
        assert ids == sorted(ids)
        assert pixels.shape == (5, 64, 64, 3)
        assert skipped == []

    def test_unreadable_skipped_with_report(self, tmp_path):
        d = make_imagelet_dir(str(tmp_path / "ims"), n=3)
        with open(os.path.join(d, "c_0_1.png"), "wb") as fh:
            fh.write(b"not a png")
        ids, pixels, skipped = load_imagelets(d)
        assert len(ids) == 2
        assert len(skipped) == 1 and skipped[0]["imagelet_id"] == "c:0:1"

    def test_wrong_size_skipped(self, tmp_path):
        d = make_imagelet_dir(str(tmp_path / "ims"), n=2)
        Image.fromarray(np.zeros((32, 32, 3), dtype=np.uint8)).save(
            os.path.join(d, "c_0_0.png")
        )
        ids, _, skipped = load_imagelets(d)
        assert ids == ["c:0:1"] and len(skipped) == 1

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ImageletDirError):
            load_imagelets(str(tmp_path))

    def test_embedding_csv_id_order(self, tmp_path):
        ids = ["b:0:0", "a:0:0"]
        Z = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = str(tmp_path / "e.csv")
        write_embedding_csv(ids, Z, out)
        lines = open(out).read().strip().splitlines()
        assert lines[0] == "imagelet_id,z_0,z_1"
        assert lines[1].startswith("a:0:0,3")
        assert lines[2].startswith("b:0:0,1")


class TestCaeModel:
    def test_autoencoder_shapes(self):
        torch.manual_seed(0)
        net = Cae()
        x = torch.rand(2, 3, 64, 64)
        with torch.no_grad():
            z = net.encode(x)
            recon = net(x)
        assert z.shape == (2, 512)
        assert recon.shape == (2, 3, 64, 64)
        assert float(recon.min()) >= 0.0 and float(recon.max()) <= 1.0

    def test_loss_matches_direct_recomputation(self):
        torch.manual_seed(1)
        batch = torch.rand(6, 3, 64, 64)
        recon = torch.rand(6, 3, 64, 64)
        loss = float(reconstruction_loss(batch, recon))
        per_image = [float(((batch[i] - recon[i]) ** 2).mean()) for i in range(6)]
        assert loss == pytest.approx(np.mean(per_image), rel=1e-6)


@pytest.fixture(scope="module")
def cae_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cae")
    d = make_imagelet_dir(str(root / "ims"), n=140, seed=3)
    cfg = ExporterConfig(
        mode="cae", imagelet_dir=d, out_path=str(root / "emb.csv"),
        epochs=3, batch_size=128, seed=5,
    )
    weights = train_cae(cfg, str(root / "w.pt"))
    export_cae(cfg, weights)
    return {"root": str(root), "dir": d, "cfg": cfg, "weights": weights}


class TestCaeTraining:
    def test_loss_curve_written(self, cae_run):
        curve_path = cae_run["weights"] + ".loss.csv"
        rows = list(csv.DictReader(open(curve_path)))
        assert len(rows) == 3
        assert all(float(r["loss"]) > 0 for r in rows)

    def test_seeded_determinism(self, cae_run, tmp_path):
        cfg2 = ExporterConfig(
            mode="cae", imagelet_dir=cae_run["dir"], out_path=str(tmp_path / "e2.csv"),
            epochs=3, batch_size=128, seed=5,
        )
        w2 = train_cae(cfg2, str(tmp_path / "w2.pt"))
        c1 = [float(r["loss"]) for r in csv.DictReader(open(cae_run["weights"] + ".loss.csv"))]
        c2 = [float(r["loss"]) for r in csv.DictReader(open(w2 + ".loss.csv"))]
        assert all(abs(a - b) <= 1e-4 for a, b in zip(c1, c2))

    def test_export_dim_512(self, cae_run):
        header = open(cae_run["cfg"].out_path).readline().strip().split(",")
        assert len(header) - 1 == 512

    def test_duplicate_imagelets_duplicate_rows(self, cae_run, tmp_path):
        d2 = str(tmp_path / "dup")
        os.makedirs(d2)
        src = os.path.join(cae_run["dir"], "c_0_0.png")
        import shutil

        shutil.copy(src, os.path.join(d2, "a.png"))
        shutil.copy(src, os.path.join(d2, "b.png"))
        with open(os.path.join(d2, "imagelets.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["filename", "imagelet_id"])
            w.writerow(["a.png", "x:0:0"])
            w.writerow(["b.png", "x:0:1"])
        cfg = ExporterConfig(mode="cae", imagelet_dir=d2, out_path=str(tmp_path / "dup.csv"), seed=5)
        export_cae(cfg, cae_run["weights"])
        lines = open(tmp_path / "dup.csv").read().strip().splitlines()
        assert lines[1].split(",")[1:] == lines[2].split(",")[1:]

    def test_training_image_reconstructs_better_than_noise(self, cae_run):
        _, pixels, _ = load_imagelets(cae_run["dir"])
        train_mse = reconstruction_mse(cae_run["weights"], pixels[:16])
        rng = np.random.default_rng(0)
        # Structured out-of-distribution input: binary checkerboard noise.
        noise = (rng.integers(0, 2, size=(16, 64, 64, 3)) * 255).astype(np.uint8)
        noise_mse = reconstruction_mse(cae_run["weights"], noise)
        assert train_mse < noise_mse

    def test_weight_mismatch_rejected(self, cae_run, tmp_path):
        bad = Cae(embedding_dim=64)
        torch.save(bad.state_dict(), str(tmp_path / "bad.pt"))
        cfg = ExporterConfig(
            mode="cae", imagelet_dir=cae_run["dir"], out_path=str(tmp_path / "x.csv"), seed=5
        )
        with pytest.raises(ValueError):
            export_cae(cfg, str(tmp_path / "bad.pt"))

    def test_too_few_imagelets_rejected(self, tmp_path):
        d = make_imagelet_dir(str(tmp_path / "few"), n=4)
        cfg = ExporterConfig(
            mode="cae", imagelet_dir=d, out_path=str(tmp_path / "x.csv"),
            epochs=1, batch_size=128,
        )
        with pytest.raises(ValueError):
            train_cae(cfg, str(tmp_path / "w.pt"))


class TestPretrained:
    def test_three_imagelet_fixture(self, tmp_path):
        d = make_imagelet_dir(str(tmp_path / "ims"), n=3, seed=1)
        cfg = ExporterConfig(mode="pretrained-cnn", imagelet_dir=d,
                             out_path=str(tmp_path / "e.csv"), seed=2)
        export_pretrained(cfg)
        rows = open(tmp_path / "e.csv").read().strip().splitlines()
        assert len(rows) == 4  # header + 3
        assert len(rows[0].split(",")) - 1 == 4096

    def test_identical_imagelets_identical_rows(self, tmp_path):
        d = str(tmp_path / "same")
        os.makedirs(d)
        arr = np.full((64, 64, 3), 127, dtype=np.uint8)
        for i in range(2):
            Image.fromarray(arr).save(os.path.join(d, f"s_{i}.png"))
        with open(os.path.join(d, "imagelets.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["filename", "imagelet_id"])
            w.writerow(["s_0.png", "s:0:0"])
            w.writerow(["s_1.png", "s:0:1"])
        cfg = ExporterConfig(mode="pretrained-cnn", imagelet_dir=d,
                             out_path=str(tmp_path / "e.csv"), seed=2)
        export_pretrained(cfg)
        lines = open(tmp_path / "e.csv").read().strip().splitlines()
        assert lines[1].split(",")[1:] == lines[2].split(",")[1:]

    def test_all_black_imagelet_finite(self, tmp_path):
        d = str(tmp_path / "black")
        os.makedirs(d)
        Image.fromarray(np.zeros((64, 64, 3), dtype=np.uint8)).save(os.path.join(d, "b.png"))
        with open(os.path.join(d, "imagelets.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["filename", "imagelet_id"])
            w.writerow(["b.png", "b:0:0"])
        cfg = ExporterConfig(mode="pretrained-cnn", imagelet_dir=d,
                             out_path=str(tmp_path / "e.csv"), seed=2)
        export_pretrained(cfg)
        vals = open(tmp_path / "e.csv").read().strip().splitlines()[1].split(",")[1:]
        assert all(np.isfinite(float(v)) for v in vals)


class TestCrossComponentRoundTrip:
    def test_primary_loader_parses_both_modes(self, cae_run, tmp_path, caplog):
        urbanvit_features = pytest.importorskip("urbanvit.features")

        with caplog.at_level(logging.WARNING):
            vecs = urbanvit_features.load_embeddings(cae_run["cfg"].out_path)
        assert len(vecs) == 140
        assert all(len(v.z) == 512 for v in vecs)
        assert not caplog.records

        d = make_imagelet_dir(str(tmp_path / "ims"), n=3, seed=4)
        cfg = ExporterConfig(mode="pretrained-cnn", imagelet_dir=d,
                             out_path=str(tmp_path / "p.csv"), seed=1)
        export_pretrained(cfg)
        with caplog.at_level(logging.WARNING):
            vecs = urbanvit_features.load_embeddings(str(tmp_path / "p.csv"))
        assert len(vecs) == 3 and all(len(v.z) == 4096 for v in vecs)

    def test_cae_embeddings_reduce_with_pca(self, cae_run):
        urbanvit_features = pytest.importorskip("urbanvit.features")

        vecs = urbanvit_features.load_embeddings(cae_run["cfg"].out_path)
        model = urbanvit_features.pca_fit(vecs, n_comp=16)
        cv = urbanvit_features.pca_transform(model, vecs[0])
        assert len(cv.v) == 16
