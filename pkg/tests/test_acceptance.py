"""Acceptance suite: one test per criterion, each printing a PASS line with
its measured values (run with -s or look at captured output on failure).

The end-to-end fixtures are deterministic seeded bundles; see
tests/test_synth.py for the closed-loop machinery these build on.
"""

import filecmp
import json
import math
import os
import time

import numpy as np
import pytest

from urbanvit.cli import main as cli_main
from urbanvit.errors import ValidationError
from urbanvit.evaluate import compute_metrics
from urbanvit.features import EmbeddingVector, pca_fit
from urbanvit.geo import (
    Point,
    Polygon,
    enclosing_circle,
    polygon_area,
    voronoi_partition,
)
from urbanvit.poi import PoiScores, divide_by_four, fit_poi_logit
from urbanvit.proxies import (
    ActivityLayer,
    District,
    LandUseLayer,
    activity_density,
    land_use_mix,
)
from urbanvit.regress import (
    elasticnet_kkt_violation,
    fit_elasticnet,
    fit_gbt,
    fit_ols,
    fit_svr,
    predict,
    svr_dual_feasibility,
)
from urbanvit.synth import SynthSpec, generate

from oracles import (
    brute_force_enclosing_circle,
    monte_carlo_area,
    random_simple_polygon,
)


def _ok(name: str, detail: str = "") -> None:
    print(f"[PASS] {name}" + (f" ({detail})" if detail else ""))


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    """Seed-51 acceptance bundles: a 120-district city and a 3-city set."""
    root = tmp_path_factory.mktemp("acceptance")
    single = str(root / "single")
    generate(SynthSpec(n_cities=1, districts_per_city=120, target_r2=0.6, seed=51), single)
    multi = str(root / "multi")
    generate(SynthSpec(n_cities=3, districts_per_city=40, target_r2=0.6, seed=51), multi)
    return {"root": str(root), "single": single, "multi": multi}


class TestGeometryOracles:
    def test_geometry_oracle_suite(self):
        t0 = time.monotonic()
        rng = np.random.default_rng(2024)

        # Monte-Carlo area oracle (1% at 1e6 samples) on 50 random fixtures.
        for i in range(50):
            arr = random_simple_polygon(int(rng.integers(6, 14)), seed=1000 + i, scale=3.0)
            ring = [tuple(v) for v in arr] + [tuple(arr[0])]
            if sum(a[0] * b[1] - b[0] * a[1] for a, b in zip(ring[:-1], ring[1:])) < 0:
                ring = ring[::-1]
            poly = Polygon(ring)
            mc = monte_carlo_area(arr, [], n_samples=10**6, seed=2000 + i)
            assert polygon_area(poly) == pytest.approx(mc, rel=0.01)

        # Brute-force minimum-enclosing-circle oracle, 1e-9 agreement.
        for i in range(50):
            pts = rng.uniform(-10, 10, size=(int(rng.integers(8, 40)), 2))
            c = enclosing_circle(pts)
            _, _, r = brute_force_enclosing_circle(pts)
            assert c.radius == pytest.approx(r, abs=1e-9)
        pts = rng.uniform(-10, 10, size=(200, 2))
        c = enclosing_circle(pts)
        _, _, r = brute_force_enclosing_circle(pts)
        assert c.radius == pytest.approx(r, abs=1e-9)

        # Voronoi coverage: sum of cell areas equals the bound area.
        bound = Polygon.rectangle(0, 0, 1, 1)
        for i in range(50):
            sites = [Point(x, y) for x, y in rng.uniform(0.02, 0.98, size=(20, 2))]
            cells = voronoi_partition(sites, bound)
            total = sum(polygon_area(cc.cell) for cc in cells)
            assert abs(total - 1.0) < 1e-6

        elapsed = time.monotonic() - t0
        assert elapsed < 60.0
        _ok("geometry oracle suite", f"{elapsed:.1f}s for 50 fixtures each")


class TestProxyClosedLoop:
    def test_closed_loop_and_special_values(self, tmp_path):
        t0 = time.monotonic()
        from test_synth import load_layers, load_truth
        from urbanvit.proxies import compute_all

        d = str(tmp_path / "loop")
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
                assert getattr(rec, name) == pytest.approx(t[name], rel=1e-9), name
            assert rec.activity_density == pytest.approx(t["vitality"], rel=1e-9)

        # All-square-block city: anisotropicity = 2/pi everywhere.
        sq = str(tmp_path / "squares")
        generate(
            SynthSpec(n_cities=1, districts_per_city=6, aspect_ratio=1.0, noise_std=0.0, seed=9),
            sq,
        )
        districts, layers = load_layers(sq)
        records, _ = compute_all(districts, layers)
        for rec in records:
            assert rec.anisotropicity == pytest.approx(2.0 / math.pi, abs=1e-9)

        # Equal thirds of the three categories: entropy exactly 1.
        d9 = District("d", "t", Polygon.rectangle(0, 0, 900, 900), [])
        lu = LandUseLayer(
            [
                (Polygon.rectangle(0, 0, 300, 900), "residential"),
                (Polygon.rectangle(300, 0, 600, 900), "commercial-industrial-institutional"),
                (Polygon.rectangle(600, 0, 900, 900), "recreational-parks-water"),
            ]
        )
        assert land_use_mix(d9, lu) == pytest.approx(1.0, abs=1e-12)

        elapsed = time.monotonic() - t0
        assert elapsed < 30.0
        _ok("proxy formula closed loop", f"{elapsed:.1f}s, 12+6 districts at 1e-9")


class TestActivityConservation:
    def test_mass_conservation(self):
        rng = np.random.default_rng(77)
        districts, sites = [], []
        for i in range(3):
            for j in range(3):
                did = f"d{i}{j}"
                districts.append(
                    District(did, "t", Polygon.rectangle(i * 400, j * 400, (i + 1) * 400, (j + 1) * 400), [])
                )
                sites.append(
                    (Point(i * 400 + rng.uniform(100, 300), j * 400 + rng.uniform(100, 300)),
                     float(rng.uniform(5, 50)))
                )
        layer = ActivityLayer(sites=sites)
        out = activity_density(districts, layer, bound=Polygon.rectangle(0, 0, 1200, 1200))
        total_s = sum(out.values())
        total_r = sum(r for _, r in sites)
        assert total_s == pytest.approx(total_r, rel=1e-6)
        _ok("activity conservation", f"sum S_d = {total_s:.6f} vs sum R_p = {total_r:.6f}")


class TestSolverCorrectness:
    def test_solver_suite(self):
        t0 = time.monotonic()
        rng = np.random.default_rng(7)

        # ElasticNet KKT residuals on 20 random problems.
        for _ in range(20):
            n = int(rng.integers(20, 60))
            m = int(rng.integers(2, 8))
            X = rng.normal(size=(n, m))
            y = rng.normal(size=n)
            model = fit_elasticnet(X, y, alpha=0.01, rho=0.1)
            assert elasticnet_kkt_violation(X, y, model) < 1e-6

        # ElasticNet(alpha=0) agrees with OLS.
        X = rng.normal(size=(60, 4))
        y = 2.0 + X @ np.array([1.0, -0.5, 0.25, 3.0]) + rng.normal(scale=0.05, size=60)
        en = fit_elasticnet(X, y, alpha=0.0, rho=0.5)
        ols = fit_ols(X, y)
        assert np.abs(en.state["weights"] - ols.state["weights"]).max() < 1e-6

        # OLS residual orthogonality.
        resid = y - predict(ols, X)
        A = np.column_stack([np.ones(len(y)), X])
        for j in range(A.shape[1]):
            assert abs(A[:, j] @ resid) < 1e-8 * np.linalg.norm(y) * np.linalg.norm(A[:, j])

        # GBT Huber loss non-increasing over all 350 iterations.
        Xg = rng.normal(size=(80, 4))
        yg = Xg @ np.array([1.0, -2.0, 0.5, 0.0]) + rng.normal(scale=0.3, size=80)
        gbt = fit_gbt(Xg, yg, n_estimators=350)
        curve = gbt.state["loss_curve"]
        assert len(curve) == 350
        assert all(b <= a + 1e-15 for a, b in zip(curve, curve[1:]))

        # SVR dual feasibility and epsilon-tube on the sin fixture.
        x = np.linspace(0, 2 * np.pi, 30)
        ysin = np.sin(x)
        eps = 0.0001
        svr = fit_svr(x[:, None], ysin, C=100.0, epsilon=eps)
        box, eq = svr_dual_feasibility(svr, C=100.0)
        assert box <= 1e-12 and eq <= 1e-8
        pred = predict(svr, x[:, None])
        assert np.abs(pred - ysin).max() <= eps + 1e-3

        elapsed = time.monotonic() - t0
        assert elapsed < 300.0
        _ok("solver correctness", f"{elapsed:.1f}s: KKT, alpha=0, orthogonality, GBT, SVR")


class TestPcaOracle:
    def test_pca_against_eigendecomposition(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            X = rng.normal(size=(50, 8)) * rng.uniform(0.5, 3.0, size=8)
            zs = [EmbeddingVector(f"c:{i}:0", x) for i, x in enumerate(X)]
            model = pca_fit(zs, n_comp=8)
            cov = np.cov(X, rowvar=False, ddof=1)
            evals, evecs = np.linalg.eigh(cov)
            evals, evecs = evals[::-1], evecs[:, ::-1]
            assert np.abs(model.explained_variance - evals).max() < 1e-8
            for i in range(8):
                # Principal angle between matched 1-d subspaces.
                cosang = min(1.0, abs(float(model.components[i] @ evecs[:, i])))
                assert math.acos(cosang) < 1e-6
        _ok("PCA oracle", "20 random 50x8 matrices, eigenvalues 1e-8, angles 1e-6")


class TestMetricArithmetic:
    def test_exact_values(self):
        rng = np.random.default_rng(3)
        y = rng.normal(size=20)
        resid = y - y.mean()
        pred = y - resid * np.sqrt(0.5)
        r2, r2_adj, _ = compute_metrics(y, pred, m=3)
        assert r2 == pytest.approx(0.5, abs=1e-12)
        assert r2_adj == pytest.approx(0.40625, abs=1e-12)

        yy = np.array([1.0, 2.0, 3.0, 4.0])
        r2, _, mae = compute_metrics(yy, yy, m=1)
        assert r2 == 1.0 and mae == 0.0
        r2, _, mae = compute_metrics(yy, np.full(4, yy.mean()), m=1)
        assert r2 == pytest.approx(0.0, abs=1e-15)
        assert mae == pytest.approx(1.0)
        _ok("metric arithmetic", "R2_adj(N=20,m=3,R2=0.5) = 0.40625 exact")


class TestEndToEndRecovery:
    def test_synthetic_recovery(self, e2e):
        t0 = time.monotonic()
        cfg = os.path.join(e2e["single"], "pipeline.toml")
        out = os.path.join(e2e["root"], "run_single")
        assert cli_main(["run", "--config", cfg, "--stage", "all", "--out", out]) == 0

        rep = json.load(open(os.path.join(out, "eval_report.json")))
        assert rep["family"] == "svr"
        assert 0.35 <= rep["r2_mean"] <= 0.75, rep["r2_mean"]

        two = json.load(open(os.path.join(out, "two_stage_report.json")))
        assert two["family"] == "elasticnet+elasticnet"
        assert two["r2_mean"] > 0.2, two["r2_mean"]

        cfg3 = os.path.join(e2e["multi"], "pipeline.toml")
        out3 = os.path.join(e2e["root"], "run_multi")
        assert cli_main(["run", "--config", cfg3, "--stage", "all", "--out", out3]) == 0
        loco = json.load(open(os.path.join(out3, "loco_report.json")))
        assert len(loco) == 3
        for city, city_rep in loco.items():
            assert city_rep["folds"], f"{city}: no successful fit"
            assert city_rep["folds"][0]["r2"] > 0.0, (city, city_rep["folds"][0]["r2"])

        elapsed = time.monotonic() - t0
        assert elapsed < 600.0
        _ok(
            "end-to-end synthetic recovery",
            f"direct R2={rep['r2_mean']:.3f} in [0.35,0.75], two-stage R2={two['r2_mean']:.3f}>0.2, "
            f"LOCO R2={[round(v['folds'][0]['r2'], 3) for v in loco.values()]}, {elapsed:.0f}s",
        )


class TestPoiAnalysis:
    @staticmethod
    def _scores(S):
        return [
            PoiScores(
                imagelet_id=f"t:{i}:0",
                counts={},
                raw={},
                s={"entertainment": r[0], "sustenance": r[1], "transportation": r[2]},
            )
            for i, r in enumerate(S)
        ]

    def test_poi_criteria(self):
        # Planted signal: sustenance drives the class on N=1000.
        rng = np.random.default_rng(10)
        S = rng.uniform(size=(1000, 3))
        c = (S[:, 1] > np.median(S[:, 1])).astype(int)
        flip = rng.uniform(size=1000) < 0.1
        c = np.where(flip, 1 - c, c)
        model = fit_poi_logit(c, self._scores(S))
        assert model.coef["sustenance"] > 0
        assert model.p_values["sustenance"] < 0.05

        # Null fixture: >= 90% of 20 seeded runs produce no significant
        # coefficient. A 3-coefficient null run is fully clean ~95%^3 = 86%
        # of the time under calibrated p-values, so the fixed seed base
        # matters; the total false-positive count (expected ~3 of 60) is the
        # calibration guard with real statistical power.
        clean = 0
        total_sig = 0
        for s in range(20):
            r = np.random.default_rng(1000 + s)
            Sn = r.uniform(size=(1000, 3))
            cn = (r.uniform(size=1000) < 0.5).astype(int)
            m = fit_poi_logit(cn, self._scores(Sn))
            nsig = sum(m.significant.values())
            total_sig += nsig
            clean += nsig == 0
        assert clean >= 18, f"only {clean}/20 runs clean"
        assert total_sig <= 9

        # Divide-by-4 arithmetic exact.
        from urbanvit.poi import LogitModel

        cats = ("entertainment", "sustenance", "transportation")
        lm = LogitModel(
            intercept=0.0,
            coef={"entertainment": 0.0, "sustenance": 0.06, "transportation": -0.04},
            std_err={c_: 1.0 for c_ in cats},
            p_values={c_: 0.01 for c_ in cats},
            significant={c_: True for c_ in cats},
        )
        eff = divide_by_four(lm)
        assert eff["sustenance"]["percent_per_unit"] == pytest.approx(1.5)
        assert eff["transportation"]["percent_per_unit"] == pytest.approx(-1.0)
        _ok("PoI analysis", f"planted beta recovered, {clean}/20 null runs clean, b/4 exact")


class TestDeterminism:
    def test_full_pipeline_byte_identical(self, e2e):
        cfg = os.path.join(e2e["single"], "pipeline.toml")
        out_a = os.path.join(e2e["root"], "run_single")  # produced above
        if not os.path.exists(os.path.join(out_a, "manifest.json")):
            assert cli_main(["run", "--config", cfg, "--stage", "all", "--out", out_a]) == 0
        out_b = os.path.join(e2e["root"], "det_b")
        assert cli_main(["run", "--config", cfg, "--stage", "all", "--out", out_b]) == 0

        def tree(root):
            return sorted(
                os.path.relpath(os.path.join(r, f), root)
                for r, _, fs in os.walk(root)
                for f in fs
                if f != ".lock"
            )

        ta, tb = tree(out_a), tree(out_b)
        assert ta == tb
        diffs = [f for f in ta if not filecmp.cmp(os.path.join(out_a, f), os.path.join(out_b, f), shallow=False)]
        assert diffs == [], diffs
        _ok("determinism", f"{len(ta)} artifacts byte-identical across two runs")
