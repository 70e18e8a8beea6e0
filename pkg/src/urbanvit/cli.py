"""Command-line entry point.

Subcommands: run (pipeline stages), validate (config lint), report
(re-render a scatter from a saved report JSON), synth (fixture generator).

Stages hand artifacts through files in the output directory; a manifest of
content hashes makes re-running a satisfied stage a no-op. Exit codes:
0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys

import numpy as np
from filelock import FileLock, Timeout

from . import features as feat
from . import poi as poi_mod
from . import raster as raster_mod
from . import vector_io
from .config import STAGES, PipelineConfig, load_config, stage_seed
from .errors import UrbanVitError, ValidationError
from .evaluate import (
    EvalReport,
    FoldPlan,
    leave_one_city_out,
    repeated_kfold,
    residual_report,
    two_stage_vitality,
)
from .geo import Polygon, polygon_centroid
from .proxies import PROXY_NAMES, ProxyLayers, compute_all, read_proxies, write_proxies
from .regress import RegressorSpec, fit, fit_preprocessor, load_model, save_model
from .scatter import emit_scatter
from .synth import SynthSpec, generate

log = logging.getLogger("urbanvit")

STAGE_DEPS = {
    "tile": [],
    "features": ["imagelets.npy", "imagelet_index.csv", "assignments.csv"],
    "proxies": [],
    "train": ["district_features.csv", "proxies.csv"],
    "eval": ["model.json", "district_features.csv", "proxies.csv"],
    "loco": ["district_features.csv", "proxies.csv"],
    "two-stage": ["district_features.csv", "proxies.csv"],
    "poi": ["imagelet_components.csv", "assignments.csv", "imagelet_index.csv", "proxies.csv"],
}

STAGE_ORDER = ["tile", "features", "proxies", "train", "eval", "two-stage", "loco", "poi"]


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _stage_config(cfg: PipelineConfig, stage: str) -> dict:
    common = {"seed": cfg.seed}
    if stage == "tile":
        return {
            **common,
            "rasters": cfg.inputs.get("rasters"),
            "boundaries": cfg.inputs.get("boundaries"),
            "districts": cfg.inputs.get("districts"),
            "emit_pngs": cfg.raster["emit_pngs"],
        }
    if stage == "features":
        return {
            **common,
            "n_comp": cfg.n_comp,
            "features": cfg.features,
            "embeddings": cfg.inputs.get("embeddings"),
        }
    if stage == "proxies":
        return {
            **common,
            "layers": {k: cfg.inputs.get(k) for k in (
                "districts", "land_use", "parks", "blocks", "intersections",
                "radio_sites", "building_heights", "height_mapping", "water")},
            "activity": cfg.activity,
        }
    if stage == "train":
        return {**common, "regressor": cfg.regressor, "preprocess": cfg.preprocess}
    if stage in ("eval", "loco"):
        return {
            **common,
            "regressor": cfg.regressor,
            "preprocess": cfg.preprocess,
            "eval": {k: v for k, v in cfg.eval.items() if k != "two_stage"},
        }
    if stage == "two-stage":
        return {**common, "preprocess": cfg.preprocess, "two_stage": cfg.eval["two_stage"],
                "eval": {k: cfg.eval[k] for k in ("k", "repeats")}}
    if stage == "poi":
        return {**common, "poi": cfg.poi, "pois": cfg.inputs.get("pois")}
    return common


class StageRunner:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.out = cfg.out_dir()
        os.makedirs(self.out, exist_ok=True)
        self.manifest_path = os.path.join(self.out, "manifest.json")
        self.manifest = {}
        if os.path.exists(self.manifest_path):
            with open(self.manifest_path) as fh:
                self.manifest = json.load(fh)

    def opath(self, name: str) -> str:
        return os.path.join(self.out, name)

    def _input_hashes(self, stage: str, input_files: list[str]) -> dict:
        h = {"config": hashlib.sha256(
            json.dumps(_stage_config(self.cfg, stage), sort_keys=True).encode()
        ).hexdigest()}
        for p in input_files:
            h[os.path.basename(p) if p.startswith(self.out) else p] = _sha256(p)
        return h

    def check_deps(self, stage: str) -> None:
        missing = [a for a in STAGE_DEPS[stage] if not os.path.exists(self.opath(a))]
        if missing:
            producers = sorted(
                {s for s in STAGE_ORDER for a in missing if a in _stage_outputs(s)}
            )
            raise StageDependencyError(
                f"stage {stage!r} needs missing artifact(s) {missing}; "
                f"run stage(s) {producers} first"
            )

    def satisfied(self, stage: str, input_files: list[str], outputs: list[str]) -> bool:
        entry = self.manifest.get(stage)
        if not entry:
            return False
        if entry.get("inputs") != self._input_hashes(stage, input_files):
            return False
        for name, digest in entry.get("outputs", {}).items():
            p = self.opath(name)
            if not os.path.exists(p) or _sha256(p) != digest:
                return False
        return set(entry.get("outputs", {})) == set(outputs)

    def record(self, stage: str, input_files: list[str], outputs: list[str]) -> None:
        self.manifest[stage] = {
            "inputs": self._input_hashes(stage, input_files),
            "outputs": {name: _sha256(self.opath(name)) for name in outputs},
        }
        with open(self.manifest_path, "w") as fh:
            json.dump(self.manifest, fh, indent=1, sort_keys=True)
            fh.write("\n")


class StageDependencyError(UrbanVitError):
    pass


def _stage_outputs(stage: str) -> list[str]:
    return {
        "tile": ["imagelets.npy", "imagelet_index.csv", "assignments.csv"],
        "features": ["imagelet_components.csv", "district_features.csv", "pca_model.json"],
        "proxies": ["proxies.csv", "proxy_problems.json"],
        "train": ["model.json"],
        "eval": [
            "eval_report.json",
            "residuals.geojson",
            "residuals.csv",
            "scatter.svg",
        ],
        "loco": ["loco_report.json"],
        "two-stage": ["two_stage_report.json"],
        "poi": ["poi_scores.csv", "poi_classes.csv", "poi_analysis.json"],
    }[stage]


# ---------------------------------------------------------------------------
# Stage implementations
# ---------------------------------------------------------------------------


def stage_tile(r: StageRunner) -> list[str]:
    cfg = r.cfg
    districts = vector_io.load_districts(cfg.path("districts"))
    ims: list[raster_mod.Imagelet] = []
    for city in cfg.cities():
        gr = raster_mod.load_raster(cfg.path("rasters", city))
        bpath = cfg.path("boundaries", city)
        if bpath:
            boundary = vector_io.load_boundary(bpath)
        else:
            xs, ys = [], []
            for d in districts:
                if d.city != city:
                    continue
                x0, y0, x1, y1 = d.polygon.bounds()
                xs += [x0, x1]
                ys += [y0, y1]
            if not xs:
                raise ValidationError(f"no districts found for city {city!r}")
            pad = raster_mod.TILE * gr.px_x
            boundary = Polygon.rectangle(
                min(xs) - pad, min(ys) - pad, max(xs) + pad, max(ys) + pad
            )
        ims.extend(raster_mod.tile_imagelets(gr, boundary, city))

    table = raster_mod.assign_imagelets(ims, districts)
    raster_mod.write_assignments(table, ims, r.opath("assignments.csv"))
    np.save(r.opath("imagelets.npy"), np.stack([im.pixels for im in ims]))
    with open(r.opath("imagelet_index.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["imagelet_id", "city", "row", "col", "x0", "y0", "x1", "y1"])
        for im in ims:
            x0, y0, x1, y1 = im.bounds.bounds()
            w.writerow([im.id, im.city, im.row, im.col, repr(x0), repr(y0), repr(x1), repr(y1)])
    outputs = _stage_outputs("tile")
    if cfg.raster["emit_pngs"]:
        raster_mod.emit_pngs(ims, r.opath("pngs"))
    log.info("tile: %d imagelets, %d assigned", len(ims), len(table.entries))
    return outputs


def _load_imagelet_index(r: StageRunner):
    ims = []
    with open(r.opath("imagelet_index.csv"), newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            ims.append(
                {
                    "id": row["imagelet_id"],
                    "city": row["city"],
                    "row": int(row["row"]),
                    "col": int(row["col"]),
                    "bounds": Polygon.rectangle(
                        float(row["x0"]), float(row["y0"]), float(row["x1"]), float(row["y1"])
                    ),
                }
            )
    return ims


def _load_assignments(r: StageRunner) -> dict[str, str]:
    out = {}
    with open(r.opath("assignments.csv"), newline="") as fh:
        for row in csv.DictReader(fh):
            if row["district_id"]:
                out[row["imagelet_id"]] = row["district_id"]
    return out


def stage_features(r: StageRunner) -> list[str]:
    cfg = r.cfg
    index = _load_imagelet_index(r)
    pixels = np.load(r.opath("imagelets.npy"))
    assignments = _load_assignments(r)
    districts = vector_io.load_districts(cfg.path("districts"))

    emb_path = cfg.path("embeddings")
    if emb_path:
        by_id = {v.imagelet_id: v for v in feat.load_embeddings(emb_path)}
        missing = [m["id"] for m in index if m["id"] in assignments and m["id"] not in by_id]
        if missing:
            raise ValidationError(
                f"embedding file lacks {len(missing)} assigned imagelets (e.g. {missing[:3]})"
            )
        vectors = [by_id[m["id"]] for m in index if m["id"] in by_id]
    else:
        vectors = []
        for meta, px in zip(index, pixels):
            im = raster_mod.Imagelet(
                city=meta["city"], row=meta["row"], col=meta["col"],
                pixels=px, bounds=meta["bounds"],
            )
            vectors.append(feat.baseline_features(im))

    def fit_scope(vecs):
        pool = vecs if cfg.features["pca_scope"] == "all" else [
            v for v in vecs if v.imagelet_id in assignments
        ]
        return feat.pca_fit(pool, n_comp=cfg.n_comp)

    models = {}
    components: dict[str, feat.ComponentVector] = {}
    if cfg.features["pca_per_city"]:
        for city in cfg.cities():
            city_vecs = [v for v in vectors if v.imagelet_id.split(":")[0] == city]
            models[city] = fit_scope(city_vecs)
            for v in city_vecs:
                components[v.imagelet_id] = feat.pca_transform(models[city], v)
    else:
        models["__global__"] = fit_scope(vectors)
        for v in vectors:
            components[v.imagelet_id] = feat.pca_transform(models["__global__"], v)

    k = min(m.n_comp for m in models.values())
    with open(r.opath("imagelet_components.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["imagelet_id"] + [f"v_{i}" for i in range(k)])
        for meta in index:
            cv = components[meta["id"]]
            w.writerow([meta["id"]] + [format(x, ".10g") for x in cv.v[:k]])

    by_district: dict[str, list] = {}
    for meta in index:
        did = assignments.get(meta["id"])
        if did:
            by_district.setdefault(did, []).append(components[meta["id"]])
    xs = []
    cities = {}
    for d in sorted(districts, key=lambda d: d.district_id):
        if d.district_id not in by_district:
            continue
        vs = sorted(by_district[d.district_id], key=lambda cv: cv.imagelet_id)
        vs = [feat.ComponentVector(cv.imagelet_id, cv.v[:k]) for cv in vs]
        xs.append(feat.aggregate_district(d.district_id, vs, polygon_centroid(d.polygon)))
        cities[d.district_id] = d.city
    feat.write_district_features(xs, cities, r.opath("district_features.csv"))

    payload = {}
    for name, m in models.items():
        payload[name] = {
            "mean": m.mean.tolist(),
            "components": m.components.tolist(),
            "explained_variance": m.explained_variance.tolist(),
            "rank_deficient": m.rank_deficient,
        }
    with open(r.opath("pca_model.json"), "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    log.info("features: %d imagelets -> %d districts, n_comp=%d", len(index), len(xs), k)
    return _stage_outputs("features")


def stage_proxies(r: StageRunner) -> list[str]:
    cfg = r.cfg
    districts = vector_io.load_districts(cfg.path("districts"))
    vector_io.load_blocks(cfg.path("blocks"), districts)
    water = vector_io.load_polygons(cfg.path("water")) if cfg.path("water") else []
    layers = ProxyLayers(
        land_use=vector_io.load_land_use(cfg.path("land_use")),
        parks=vector_io.load_polygons(cfg.path("parks")),
        heights=vector_io.load_building_heights(
            cfg.path("building_heights"), cfg.path("height_mapping")
        ),
        intersections=vector_io.load_points(cfg.path("intersections")),
        activity=vector_io.load_radio_sites(cfg.path("radio_sites"), water=water),
    )
    records, problems = compute_all(districts, layers, margin=cfg.activity["bound_margin"])
    write_proxies(records, r.opath("proxies.csv"))
    with open(r.opath("proxy_problems.json"), "w") as fh:
        json.dump(problems, fh, indent=1, sort_keys=True)
        fh.write("\n")
    log.info("proxies: %d districts, %d with problems", len(records), len(problems))
    return _stage_outputs("proxies")


def _design_and_target(r: StageRunner, target: str = "activity_density"):
    xs, cities = feat.read_district_features(r.opath("district_features.csv"))
    records = {p.district_id: p for p in read_proxies(r.opath("proxies.csv"))}
    rows = []
    for x in xs:
        p = records.get(x.district_id)
        if p is None or getattr(p, target) is None:
            continue
        rows.append((x, getattr(p, target), cities[x.district_id]))
    if not rows:
        raise ValidationError("no districts with both features and a target value")
    X, names = feat.build_design_matrix([x for x, _, _ in rows])
    y = np.array([t for _, t, _ in rows])
    ids = [x.district_id for x, _, _ in rows]
    city_of = [c for _, _, c in rows]
    return X, names, y, ids, city_of, records


def _plans(cfg: PipelineConfig, names: list[str], target: str):
    x_log = [False] * len(names)  # satellite feature columns are not skewed counts
    y_log = target in cfg.preprocess["log_columns"]
    return x_log, y_log


def stage_train(r: StageRunner) -> list[str]:
    cfg = r.cfg
    X, names, y, ids, _, _ = _design_and_target(r)
    x_log, y_log = _plans(cfg, names, "activity_density")
    pre = fit_preprocessor(X, y, x_log=x_log, y_log=y_log, x_names=names, y_name="activity_density")
    spec = _regressor_spec(cfg)
    model = fit(spec, pre.transform_x(X), pre.transform_y(y))
    model.column_names = names
    save_model(
        model,
        pre,
        r.opath("model.json"),
        extra={"district_ids": ids, "target": "activity_density", "seed": cfg.seed},
    )
    log.info("train: fitted %s on %d districts", spec.family, len(y))
    return _stage_outputs("train")


def _regressor_spec(cfg: PipelineConfig, family: str | None = None) -> RegressorSpec:
    fam = family or cfg.regressor["family"]
    params = dict(cfg.regressor.get(fam, {}))
    return RegressorSpec(family=fam, params=params, seed=cfg.seed)


def _eval_seed(cfg: PipelineConfig, stage: str) -> int:
    explicit = cfg.eval.get("seed")
    return explicit if explicit is not None else stage_seed(cfg.seed, stage)


def stage_eval(r: StageRunner) -> list[str]:
    cfg = r.cfg
    load_model(r.opath("model.json"))  # verifies the train artifact parses
    X, names, y, ids, _, _ = _design_and_target(r)
    x_log, y_log = _plans(cfg, names, "activity_density")
    plan = FoldPlan(k=cfg.eval["k"], repeats=cfg.eval["repeats"], seed=_eval_seed(cfg, "eval"))
    report = repeated_kfold(
        _regressor_spec(cfg), X, y, plan,
        district_ids=ids, x_log=x_log, y_log=y_log, x_names=names, target="activity_density",
    )
    report.save(r.opath("eval_report.json"))
    districts = vector_io.load_districts(cfg.path("districts"))
    residual_report(report, districts, r.opath("residuals.geojson"), r.opath("residuals.csv"))
    emit_scatter(report, r.opath("scatter.svg"))
    mean, std = report.aggregate("r2")
    log.info("eval: %s mean R^2 = %.3f +- %.3f over %d folds", report.family, mean, std, len(report.folds))
    return _stage_outputs("eval")


def stage_loco(r: StageRunner) -> list[str]:
    cfg = r.cfg
    X, names, y, ids, city_of, _ = _design_and_target(r)
    x_log, y_log = _plans(cfg, names, "activity_density")
    city_data = {}
    for city in sorted(set(city_of)):
        sel = [i for i, c in enumerate(city_of) if c == city]
        city_data[city] = (X[sel], y[sel], [ids[i] for i in sel])
    reports = leave_one_city_out(
        _regressor_spec(cfg), city_data, x_log=x_log, y_log=y_log, x_names=names,
        target="activity_density",
    )
    payload = {city: rep.to_dict() for city, rep in reports.items()}
    with open(r.opath("loco_report.json"), "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    for city, rep in sorted(reports.items()):
        if rep.folds:
            log.info("loco %s: R^2 = %.3f", city, rep.folds[0].r2)
    return _stage_outputs("loco")


def stage_two_stage(r: StageRunner) -> list[str]:
    cfg = r.cfg
    X, names, y, ids, _, records = _design_and_target(r)
    proxy_rows = []
    keep = []
    for i, did in enumerate(ids):
        rec = records[did]
        vals = [getattr(rec, name) for name in PROXY_NAMES]
        if any(v is None for v in vals):
            log.warning("two-stage: district %s dropped (missing proxies)", did)
            continue
        proxy_rows.append(vals)
        keep.append(i)
    X2 = X[keep]
    y2 = y[keep]
    ids2 = [ids[i] for i in keep]
    P = np.array(proxy_rows)
    proxy_log = [name in cfg.preprocess["log_columns"] for name in PROXY_NAMES]
    ts = cfg.eval["two_stage"]
    plan = FoldPlan(
        k=cfg.eval["k"], repeats=cfg.eval["repeats"], seed=_eval_seed(cfg, "two-stage")
    )
    report = two_stage_vitality(
        _regressor_spec(cfg, ts["stage1_family"]),
        _regressor_spec(cfg, ts["stage2_family"]),
        X2,
        P,
        list(PROXY_NAMES),
        proxy_log,
        y2,
        plan,
        district_ids=ids2,
        y_log="activity_density" in cfg.preprocess["log_columns"],
        train_on_true_proxies=ts["train_on_true_proxies"],
    )
    report.save(r.opath("two_stage_report.json"))
    mean, std = report.aggregate("r2")
    log.info("two-stage: mean R^2 = %.3f +- %.3f", mean, std)
    return _stage_outputs("two-stage")


def stage_poi(r: StageRunner) -> list[str]:
    cfg = r.cfg
    if not cfg.path("pois"):
        raise ValidationError("inputs.pois is required for the poi stage")
    index = _load_imagelet_index(r)
    assignments = _load_assignments(r)
    records = {p.district_id: p for p in read_proxies(r.opath("proxies.csv"))}

    assigned = [m for m in index if m["id"] in assignments]
    ims = [
        raster_mod.Imagelet(
            city=m["city"], row=m["row"], col=m["col"],
            pixels=np.zeros((1, 1, 3), dtype=np.uint8), bounds=m["bounds"],
        )
        for m in assigned
    ]
    pois = vector_io.load_pois(cfg.path("pois"))
    scores = poi_mod.poi_scores(ims, pois)

    comp: dict[str, np.ndarray] = {}
    with open(r.opath("imagelet_components.csv"), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        for row in reader:
            comp[row[0]] = np.array([float(v) for v in row[1:]])

    analysis = {}
    with open(r.opath("poi_scores.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["imagelet_id"]
            + [f"count_{c}" for c in poi_mod.POI_CATEGORIES]
            + [f"s_{c}" for c in poi_mod.POI_CATEGORIES]
        )
        for sc in scores:
            w.writerow(
                [sc.imagelet_id]
                + [sc.counts[c] for c in poi_mod.POI_CATEGORIES]
                + [format(sc.s[c], ".10g") for c in poi_mod.POI_CATEGORIES]
            )

    score_by_id = {sc.imagelet_id: sc for sc in scores}
    class_rows: list[tuple[str, str, str, str, str]] = []
    for var in cfg.poi["variables"]:
        values = {}
        for m in assigned:
            rec = records.get(assignments[m["id"]])
            v = getattr(rec, var) if rec else None
            if v is not None:
                values[m["id"]] = v
        entry = {"variable": var}
        try:
            labels = poi_mod.tertile_labels(values, var)
            label_ids = [l.imagelet_id for l in labels]
            yv = np.array([1 if l.label == "high" else 0 for l in labels])
            Xv = np.stack([comp[i] for i in label_ids])
            clf = poi_mod.fit_binary_classifier(
                Xv, yv, seed=stage_seed(cfg.seed, f"poi-auc-{var}")
            )
            entry["auc_mean"] = clf.auc_mean
            entry["auc_std"] = clf.auc_std

            # Seeded 50/50 split: train the classifier on one half, predict
            # classes on the other, and regress those predictions on the PoI
            # scores.
            rng = np.random.default_rng(stage_seed(cfg.seed, f"poi-split-{var}"))
            order = rng.permutation(len(label_ids))
            half = len(order) // 2
            tr, te = order[:half], order[half:]
            if len(set(yv[tr])) < 2 or len(set(yv[te])) < 2:
                raise ValidationError("50/50 split left a single class on one side")
            clf2 = poi_mod.fit_binary_classifier(
                Xv[tr], yv[tr], seed=stage_seed(cfg.seed, f"poi-clf-{var}")
            )
            pred = clf2.predict(Xv[te])
            te_set = {int(i): p for i, p in zip(te, pred)}
            for i, (iid, true_label) in enumerate(zip(label_ids, labels)):
                split = "test" if i in te_set else "train"
                predicted = (
                    ("high" if te_set[i] else "low") if i in te_set else ""
                )
                class_rows.append((iid, var, true_label.label, split, predicted))
            if len(set(pred)) < 2:
                raise ValidationError("predicted classes collapsed to one side")
            logit = poi_mod.fit_poi_logit(pred, [score_by_id[label_ids[i]] for i in te])
            entry["logit"] = {
                "intercept": logit.intercept,
                "coef": logit.coef,
                "std_err": logit.std_err,
                "p_values": logit.p_values,
                "significant": logit.significant,
                "separated": logit.separated,
                "n": logit.n,
            }
            entry["divide_by_four"] = poi_mod.divide_by_four(logit)
        except (ValidationError, UrbanVitError) as exc:
            entry["error"] = str(exc)
        analysis[var] = entry

    with open(r.opath("poi_classes.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["imagelet_id", "variable", "class", "split", "predicted_class"])
        w.writerows(class_rows)
    with open(r.opath("poi_analysis.json"), "w") as fh:
        json.dump(analysis, fh, indent=1, sort_keys=True)
        fh.write("\n")
    log.info("poi: analyzed %d variables over %d imagelets", len(analysis), len(assigned))
    return _stage_outputs("poi")


STAGE_FUNCS = {
    "tile": stage_tile,
    "features": stage_features,
    "proxies": stage_proxies,
    "train": stage_train,
    "eval": stage_eval,
    "loco": stage_loco,
    "two-stage": stage_two_stage,
    "poi": stage_poi,
}


def _stage_inputs(cfg: PipelineConfig, runner: StageRunner, stage: str) -> list[str]:
    files = []
    if stage == "tile":
        files.append(cfg.path("districts"))
        for city in cfg.cities():
            files.append(cfg.path("rasters", city))
            b = cfg.path("boundaries", city)
            if b:
                files.append(b)
    elif stage == "features":
        if cfg.path("embeddings"):
            files.append(cfg.path("embeddings"))
        files.append(cfg.path("districts"))
    elif stage == "proxies":
        for key in ("districts", "land_use", "parks", "blocks", "intersections",
                    "radio_sites", "building_heights", "height_mapping"):
            files.append(cfg.path(key))
        if cfg.path("water"):
            files.append(cfg.path("water"))
    elif stage == "poi":
        if cfg.path("pois"):
            files.append(cfg.path("pois"))
    elif stage == "eval":
        files.append(cfg.path("districts"))
    files += [runner.opath(a) for a in STAGE_DEPS[stage]]
    return [f for f in files if f and os.path.exists(f)]


def run_stage(runner: StageRunner, stage: str) -> None:
    runner.check_deps(stage)
    inputs = _stage_inputs(runner.cfg, runner, stage)
    outputs = _stage_outputs(stage)
    if runner.satisfied(stage, inputs, outputs):
        log.info("stage %s: up to date, skipping", stage)
        return
    produced = STAGE_FUNCS[stage](runner)
    runner.record(stage, inputs, produced)


def run_pipeline(cfg: PipelineConfig, stage: str) -> int:
    runner = StageRunner(cfg)
    lock = FileLock(os.path.join(runner.out, ".lock"))
    try:
        lock.acquire(timeout=0.5)
    except Timeout:
        log.error("output directory %s is locked by another pipeline instance", runner.out)
        return 1
    try:
        if stage == "all":
            stages = list(STAGE_ORDER)
            if not cfg.eval.get("loco"):
                stages.remove("loco")
            if not cfg.path("pois"):
                stages.remove("poi")
            for s in stages:
                run_stage(runner, s)
        else:
            run_stage(runner, stage)
    except StageDependencyError as exc:
        log.error("%s", exc)
        return 2
    except UrbanVitError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 1
    finally:
        lock.release()
    return 0


# ---------------------------------------------------------------------------
# argparse wiring
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="urbanvit", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run pipeline stages")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--stage", default="all", choices=STAGES)
    run_p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    run_p.add_argument("--out", default=None)
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument(
        "--emit-pngs",
        action="store_true",
        help="also write per-imagelet PNGs + manifest during the tile stage "
        "(shorthand for --set raster.emit_pngs=true)",
    )

    val_p = sub.add_parser("validate", help="lint a config file")
    val_p.add_argument("--config", required=True)
    val_p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    rep_p = sub.add_parser("report", help="re-render a scatter plot from a report JSON")
    rep_p.add_argument("--report", required=True)
    rep_p.add_argument("--out", required=True)

    syn_p = sub.add_parser("synth", help="generate a synthetic city bundle")
    syn_p.add_argument("--spec", default=None, help="TOML with [synth] keys")
    syn_p.add_argument("--out", required=True)
    syn_p.add_argument("--seed", type=int, default=None)
    return ap


def _report_from_json(path: str) -> EvalReport:
    with open(path) as fh:
        d = json.load(fh)
    rep = EvalReport(family=d["family"], target=d["target"], m=d["m"])
    rep.district_ids = d["district_ids"]
    rep.y_true_raw = d["y_true_raw"]
    rep.y_pred_raw = d["y_pred_raw"]
    from .evaluate import FoldResult

    rep.folds = [
        FoldResult(
            repeat=f["repeat"], fold=f["fold"], r2=f["r2"], r2_adj=f["r2_adj"],
            mae=f["mae"], test_indices=f["test_indices"],
            y_true_t=f["y_true_t"], y_pred_t=f["y_pred_t"],
        )
        for f in d["folds"]
    ]
    return rep


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=os.environ.get("URBANVIT_LOG", "INFO").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )

    if args.command == "validate":
        cfg, errors = load_config(args.config, overrides=args.set)
        if errors:
            for e in errors:
                print(f"config error: {e}", file=sys.stderr)
            return 2
        print("config ok")
        return 0

    if args.command == "run":
        overrides = list(args.set)
        if args.emit_pngs:
            overrides.append("raster.emit_pngs=true")
        cfg, errors = load_config(args.config, overrides=overrides, out=args.out, seed=args.seed)
        if errors:
            for e in errors:
                print(f"config error: {e}", file=sys.stderr)
            return 2
        return run_pipeline(cfg, args.stage)

    if args.command == "report":
        try:
            rep = _report_from_json(args.report)
            emit_scatter(rep, args.out)
        except (UrbanVitError, OSError, KeyError) as exc:
            log.error("%s", exc)
            return 1
        return 0

    if args.command == "synth":
        kwargs = {}
        if args.spec:
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            with open(args.spec, "rb") as fh:
                raw = tomllib.load(fh)
            kwargs = raw.get("synth", raw)
        if args.seed is not None:
            kwargs["seed"] = args.seed
        if "weights" in kwargs:
            kwargs["weights"] = tuple(kwargs["weights"])
        try:
            spec = SynthSpec(**kwargs)
            summary = generate(spec, args.out)
        except (UrbanVitError, TypeError) as exc:
            log.error("%s", exc)
            return 2
        print(json.dumps({k: v for k, v in summary.items()}, sort_keys=True))
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())
