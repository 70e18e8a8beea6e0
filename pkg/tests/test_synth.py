import filecmp
import math
import os

import numpy as np
import pytest

from urbanvit import vector_io
from urbanvit.proxies import ProxyLayers, compute_all
from urbanvit.synth import SynthSpec, generate


def load_layers(d):
    districts = vector_io.load_districts(os.path.join(d, "districts.geojson"))
    vector_io.load_blocks(os.path.join(d, "blocks.geojson"), districts)
    layers = ProxyLayers(
        land_use=vector_io.load_land_use(os.path.join(d, "land_use.geojson")),
        parks=vector_io.load_polygons(os.path.join(d, "parks.geojson")),
        heights=vector_io.load_building_heights(
            os.path.join(d, "building_heights.csv"), os.path.join(d, "height_mapping.csv")
        ),
        intersections=vector_io.load_points(os.path.join(d, "intersections.geojson")),
        activity=vector_io.load_radio_sites(os.path.join(d, "radio_sites.geojson")),
    )
    return districts, layers


def load_truth(d):
    import csv

    out = {}
    with open(os.path.join(d, "ground_truth.csv"), newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["district_id"]] = {k: float(v) for k, v in row.items() if k not in ("district_id", "city")}
    return out


class TestClosedLoop:
    def test_noise_zero_proxies_match_ground_truth(self, tmp_path):
        d = str(tmp_path / "bundle")
        generate(SynthSpec(n_cities=1, districts_per_city=12, noise_std=0.0, seed=5), d)
        districts, layers = load_layers(d)
        truth = load_truth(d)
        records, problems = compute_all(districts, layers)
        assert problems == {}
        for rec in records:
            t = truth[rec.district_id]
            for name in (
                "land_use_mix",
                "building_height",
                "small_parks",
                "block_size",
                "intersection_density",
                "anisotropicity",
            ):
                got = getattr(rec, name)
                assert got == pytest.approx(t[name], rel=1e-9), name
            # Noise 0: activity density equals the planted linear signal.
            assert rec.activity_density == pytest.approx(t["vitality"], rel=1e-9)
            assert t["noise"] == 0.0

    def test_square_blocks_anisotropicity(self, tmp_path):
        d = str(tmp_path / "bundle")
        generate(
            SynthSpec(n_cities=1, districts_per_city=6, aspect_ratio=1.0, noise_std=0.0, seed=9),
            d,
        )
        districts, layers = load_layers(d)
        records, _ = compute_all(districts, layers)
        for rec in records:
            assert rec.anisotropicity == pytest.approx(2.0 / math.pi, abs=1e-9)

    def test_equal_thirds_entropy_bound(self, tmp_path):
        # Land-use mix of every district must stay in (0, 1]; equality with 1
        # only for exact thirds (checked separately at the proxy level).
        d = str(tmp_path / "bundle")
        generate(SynthSpec(n_cities=1, districts_per_city=8, noise_std=0.0, seed=2), d)
        districts, layers = load_layers(d)
        records, _ = compute_all(districts, layers)
        for rec in records:
            assert 0.0 < rec.land_use_mix <= 1.0


class TestDeterminism:
    def test_same_seed_byte_identical(self, tmp_path):
        a = str(tmp_path / "a")
        b = str(tmp_path / "b")
        spec = SynthSpec(n_cities=2, districts_per_city=6, seed=7, target_r2=0.6)
        generate(spec, a)
        generate(spec, b)
        files = sorted(os.listdir(a))
        assert files == sorted(os.listdir(b))
        for f in files:
            assert filecmp.cmp(os.path.join(a, f), os.path.join(b, f), shallow=False), f

    def test_different_seed_differs(self, tmp_path):
        a = str(tmp_path / "a")
        b = str(tmp_path / "b")
        generate(SynthSpec(n_cities=1, districts_per_city=6, seed=1), a)
        generate(SynthSpec(n_cities=1, districts_per_city=6, seed=2), b)
        assert not filecmp.cmp(
            os.path.join(a, "ground_truth.csv"), os.path.join(b, "ground_truth.csv"), shallow=False
        )


class TestSpecValidation:
    def test_bad_weights_length(self):
        with pytest.raises(Exception):
            SynthSpec(weights=(1.0, 2.0))

    def test_bad_target_r2(self):
        with pytest.raises(Exception):
            SynthSpec(target_r2=1.5)

    def test_varying_imagelet_counts(self, tmp_path):
        # District cell sizes vary so the n column cannot be constant.
        d = str(tmp_path / "bundle")
        generate(SynthSpec(n_cities=1, districts_per_city=12, seed=11), d)
        districts = vector_io.load_districts(os.path.join(d, "districts.geojson"))
        sizes = set()
        for dd in districts:
            x0, y0, x1, y1 = dd.polygon.bounds()
            sizes.add((round(x1 - x0), round(y1 - y0)))
        assert len(sizes) > 1
