"""Synthetic-city generator.

Produces internally consistent input bundles (districts, blocks, land use,
parks, intersections, radio sites, building heights, rasters, PoIs) with a
planted linear proxy->vitality relationship, written in exactly the file
formats the pipeline consumes. Every ground-truth value is computed from the
realized geometry, so the closed-loop test (recompute proxies from the files
and compare) is exact up to float round-off.

Layout: each city is a grid of rectangular districts whose cell sizes are
multiples of the 640 m imagelet footprint (so imagelets nest inside
districts and the count column varies); each district holds a street grid of
rectangular blocks. Radio connection counts R_p are solved from the Voronoi
geometry so that the pipeline's activity density reproduces the planted
vitality exactly.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .geo import Point, Polygon, intersection_area, polygon_area, voronoi_partition
from .gtiff import write_geotiff
from .proxies import LAND_USE_CATEGORIES, PROXY_NAMES, activity_bound
from . import vector_io

TILE_M = 640.0  # 64 px at 10 m/px
PX = 10.0
STREET_M = 20.0
ORIGIN_X = 500_000.0
ORIGIN_Y = 5_030_000.0

# Rendering maps shared by all cities (leave-one-city-out relies on a global
# proxy->pixel encoding). District channel means carry a 3-dim projection of
# the six standardized proxies whose first axis is the planted weight
# direction, so the raster genuinely encodes the vitality signal; per-block
# color jitter amplitudes additionally carry proxies 3..5 so each individual
# proxy stays recoverable for the two-stage model.
COLOR_GAIN = 30.0
JITTER_BASE = np.array([7.0, 7.0, 7.0])
JITTER_GAIN = np.array([3.0, 3.0, 3.0])  # channel c amplitude ~ proxy 3+c
PIXEL_NOISE = 2.0
STREET_COLOR = 95.0


def _color_projection(weights: np.ndarray) -> np.ndarray:
    """3x6 map: row 0 along the planted weights, rows 1-2 fixed complements
    (Gram-Schmidt), all scaled by COLOR_GAIN."""
    w = np.asarray(weights, dtype=float)
    rows = [w / np.linalg.norm(w)]
    for seedvec in (
        np.array([1.0, 0.0, -1.0, 0.0, 1.0, 0.0]),
        np.array([0.0, 1.0, 0.0, -1.0, 0.0, 1.0]),
        np.array([1.0, -1.0, 0.0, 0.0, 0.0, 0.0]),
        np.array([0.0, 0.0, 1.0, 1.0, -1.0, 0.0]),
    ):
        v = seedvec.copy()
        for u in rows:
            v -= (v @ u) * u
        norm = np.linalg.norm(v)
        if norm > 1e-9:
            rows.append(v / norm)
        if len(rows) == 3:
            break
    return COLOR_GAIN * np.stack(rows)
HEIGHT_CATEGORIES = {"h1": 1, "h2": 2, "h3": 3, "h5": 5, "h8": 8}


@dataclass
class SynthSpec:
    n_cities: int = 1
    districts_per_city: int = 120
    blocks_per_district: int = 16
    weights: tuple = (1.3, -1.1, 0.9, -0.5, 0.35, 0.2)  # over the six proxies
    noise_std: float = 0.0
    target_r2: float | None = None  # overrides noise_std when set
    aspect_ratio: float = 2.0  # 1.0 -> exactly square blocks
    seed: int = 7

    def __post_init__(self) -> None:
        if self.n_cities < 1 or self.districts_per_city < 1:
            raise ValidationError("need at least one city and one district")
        if len(self.weights) != len(PROXY_NAMES):
            raise ValidationError(f"weights must have {len(PROXY_NAMES)} entries")
        if self.noise_std < 0:
            raise ValidationError("noise std must be >= 0")
        if self.target_r2 is not None and not (0.0 < self.target_r2 < 1.0):
            raise ValidationError("target_r2 must be in (0, 1)")
        if self.aspect_ratio < 1.0:
            raise ValidationError("aspect_ratio must be >= 1")


@dataclass
class DistrictTruth:
    district_id: str
    city: str
    rect: tuple[float, float, float, float]
    blocks: list[tuple[float, float, float, float]] = field(default_factory=list)
    proxies: dict[str, float] = field(default_factory=dict)
    signal: float = 0.0
    noise: float = 0.0
    vitality: float = 0.0


def _grid_shape(n: int) -> tuple[int, int]:
    rows = max(1, int(math.isqrt(n)))
    while n % rows:
        rows -= 1
    return rows, n // rows


def _rect_poly(r: tuple[float, float, float, float]) -> Polygon:
    return Polygon.rectangle(*r)


def _rect_centroid(r) -> tuple[float, float]:
    return (r[0] + r[2]) / 2.0, (r[1] + r[3]) / 2.0


def _block_grid(rect, n_bx: int, n_by: int, square: bool):
    """Rectangular blocks separated by streets; returns block rects."""
    x0, y0, x1, y1 = rect
    W, H = x1 - x0, y1 - y0
    if square:
        # Square blocks of a fixed size; remaining slack goes to margins.
        usable = min(
            (W - (n_bx + 1) * STREET_M) / n_bx, (H - (n_by + 1) * STREET_M) / n_by
        )
        bw = bh = usable
        mx = (W - n_bx * bw - (n_bx - 1) * STREET_M) / 2.0
        my = (H - n_by * bh - (n_by - 1) * STREET_M) / 2.0
    else:
        bw = (W - (n_bx + 1) * STREET_M) / n_bx
        bh = (H - (n_by + 1) * STREET_M) / n_by
        mx = my = STREET_M
    blocks = []
    for i in range(n_bx):
        for j in range(n_by):
            bx0 = x0 + mx + i * (bw + STREET_M)
            by0 = y0 + my + j * (bh + STREET_M)
            blocks.append((bx0, by0, bx0 + bw, by0 + bh))
    return blocks


def _entropy3(shares) -> float:
    acc = 0.0
    for s in shares:
        if s > 0:
            acc -= s * math.log(s)
    return acc / math.log(3)


def _phi_rect(r) -> float:
    w, h = r[2] - r[0], r[3] - r[1]
    return (w * h) / (math.pi * (w * w + h * h) / 4.0)


def generate(spec: SynthSpec, out_dir: str) -> dict:
    """Writes the full input bundle plus ground truth and a ready-to-run
    pipeline config; returns a summary dict."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    rows, cols = _grid_shape(spec.districts_per_city)
    bside = max(2, math.isqrt(max(spec.blocks_per_district, 4)))

    all_truth: list[DistrictTruth] = []
    district_features = []
    block_features = []
    land_use_features = []
    park_features = []
    intersection_features = []
    poi_features = []
    height_rows = []
    city_rects = {}

    # Cities sit side by side with a two-tile gap: coordinates must be
    # disjoint (shared radio-site positions would be duplicate Voronoi
    # sites), while staying close enough that centroid features do not
    # become wild extrapolations under leave-one-city-out.
    next_origin_x = ORIGIN_X
    for ci in range(spec.n_cities):
        city = f"c{ci}"
        col_widths = rng.choice([3, 4], size=cols) * TILE_M
        row_heights = rng.choice([3, 4], size=rows) * TILE_M
        xs = next_origin_x + np.concatenate([[0.0], np.cumsum(col_widths)])
        ys_top = ORIGIN_Y - np.concatenate([[0.0], np.cumsum(row_heights)])
        city_rects[city] = (xs[0], ys_top[-1], xs[-1], ys_top[0])
        next_origin_x = xs[-1] + 2 * TILE_M

        for r in range(rows):
            for c in range(cols):
                did = f"{city}_d{r:02d}{c:02d}"
                rect = (xs[c], ys_top[r + 1], xs[c + 1], ys_top[r])
                truth = DistrictTruth(district_id=did, city=city, rect=rect)

                n_bx = int(rng.integers(2, bside + 1))
                n_by = int(rng.integers(2, bside + 1))
                truth.blocks = _block_grid(rect, n_bx, n_by, spec.aspect_ratio == 1.0)

                # Land use: three vertical strips with seeded shares.
                raw = rng.uniform(0.1, 1.0, 3)
                shares = raw / raw.sum()
                e0, e1 = rect[0], rect[2]
                cut1 = e0 + shares[0] * (e1 - e0)
                cut2 = e0 + (shares[0] + shares[1]) * (e1 - e0)
                edges = [e0, cut1, cut2, e1]
                for k, cat in enumerate(LAND_USE_CATEGORIES):
                    land_use_features.append(
                        (
                            vector_io.polygon_geometry(
                                Polygon.rectangle(edges[k], rect[1], edges[k + 1], rect[3])
                            ),
                            {"category": cat},
                        )
                    )
                realized = [
                    (edges[k + 1] - edges[k]) / (e1 - e0) for k in range(3)
                ]
                truth.proxies["land_use_mix"] = _entropy3(realized)

                # Building heights.
                cats = list(HEIGHT_CATEGORIES)
                counts = rng.integers(0, 30, size=len(cats))
                if counts.sum() == 0:
                    counts[int(rng.integers(0, len(cats)))] = 1
                for cat, cnt in zip(cats, counts):
                    if cnt > 0:
                        height_rows.append((did, cat, int(cnt)))
                truth.proxies["building_height"] = float(
                    sum(c_ * HEIGHT_CATEGORIES[cat] for cat, c_ in zip(cats, counts))
                    / counts.sum()
                )

                truth.proxies["block_size"] = float(
                    np.mean([(b[2] - b[0]) * (b[3] - b[1]) for b in truth.blocks])
                )
                truth.proxies["anisotropicity"] = float(
                    np.mean([_phi_rect(b) for b in truth.blocks])
                )

                # Street intersections strictly inside the district.
                pts = []
                for i in range(1, n_bx):
                    for j in range(1, n_by):
                        bx = truth.blocks[(i - 1) * n_by + (j - 1)]
                        px_ = bx[2] + STREET_M / 2.0
                        py_ = bx[3] + STREET_M / 2.0
                        pts.append((px_, py_))
                for p in pts:
                    intersection_features.append(
                        (vector_io.point_geometry(Point(*p)), {})
                    )
                area = (rect[2] - rect[0]) * (rect[3] - rect[1])
                truth.proxies["intersection_density"] = len(pts) / area

                all_truth.append(truth)

        # Parks: one small park per macro-cell of roughly 2x2 districts, at a
        # jittered position, so nearest-park distances (and their inverses)
        # stay bounded instead of producing heavy-tailed proxies; plus one
        # large park (excluded by the < 1 km^2 rule).
        cx0, cy0, cx1, cy1 = city_rects[city]
        n_px = max(1, cols // 2)
        n_py = max(1, rows // 2)
        cell_w = (cx1 - cx0) / n_px
        cell_h = (cy1 - cy0) / n_py
        for gi in range(n_px):
            for gj in range(n_py):
                side = float(rng.uniform(100.0, 300.0))
                jx = float(rng.uniform(0.2, 0.8))
                jy = float(rng.uniform(0.2, 0.8))
                px_ = cx0 + (gi + jx) * cell_w - side / 2.0
                py_ = cy0 + (gj + jy) * cell_h - side / 2.0
                park_features.append(
                    (
                        vector_io.polygon_geometry(
                            Polygon.rectangle(px_, py_, px_ + side, py_ + side)
                        ),
                        {"city": city, "small": True},
                    )
                )
        big = 1100.0
        park_features.append(
            (
                vector_io.polygon_geometry(
                    Polygon.rectangle(cx0 - 2 * big, cy0 - 2 * big, cx0 - big, cy0 - big)
                ),
                {"city": city, "small": False},
            )
        )

    # Small-park distances need the realized park centroids per city.
    small_centroids: dict[str, list[tuple[float, float]]] = {}
    for geom, props in park_features:
        if not props["small"]:
            continue
        ring = geom["coordinates"][0]
        xs_ = [p[0] for p in ring[:-1]]
        ys_ = [p[1] for p in ring[:-1]]
        small_centroids.setdefault(props["city"], []).append(
            (sum(xs_) / len(xs_), sum(ys_) / len(ys_))
        )
    for truth in all_truth:
        cents = small_centroids[truth.city]
        acc = 0.0
        for b in truth.blocks:
            bc = _rect_centroid(b)
            acc += min(math.hypot(bc[0] - pc[0], bc[1] - pc[1]) for pc in cents)
        truth.proxies["small_parks"] = 1.0 / max(acc / len(truth.blocks), 1e-6)

    # Planted vitality: y = base + w . standardized(proxies) + noise, solved
    # back to per-site connection counts through the Voronoi geometry.
    P = np.array([[t.proxies[name] for name in PROXY_NAMES] for t in all_truth])
    mu, sd = P.mean(axis=0), P.std(axis=0)
    sd[sd == 0] = 1.0
    Z = (P - mu) / sd
    w = np.array(spec.weights, dtype=float)
    color_map = _color_projection(w)
    signal = Z @ w
    sigma = spec.noise_std
    if spec.target_r2 is not None:
        sigma = float(signal.std() * math.sqrt((1.0 - spec.target_r2) / spec.target_r2))
    base = 8.0 * math.sqrt(float(signal.var()) + sigma * sigma) + 1.0

    truth_index = {t.district_id: k for k, t in enumerate(all_truth)}

    # Solve the connection counts against the same global Voronoi geometry
    # the pipeline will compute (one bound over every city's districts and
    # sites).
    districts_poly = [_rect_poly(t.rect) for t in all_truth]
    sites = [Point(*_rect_centroid(t.rect)) for t in all_truth]

    class _D:  # activity_bound wants .polygon
        def __init__(self, p):
            self.polygon = p

    class _A:
        def __init__(self, s):
            self.sites = [(p, 0.0) for p in s]

    bound = activity_bound([_D(p) for p in districts_poly], _A(sites), margin=0.10)
    cells = voronoi_partition(sites, bound)
    n_d = len(all_truth)
    M = np.zeros((n_d, n_d))
    boxes = [p.bounds() for p in districts_poly]
    for pi, cell in enumerate(cells):
        a_p = polygon_area(cell.cell)
        cx0, cy0, cx1, cy1 = cell.cell.bounds()
        for di, dp in enumerate(districts_poly):
            dx0, dy0, dx1, dy1 = boxes[di]
            if dx0 >= cx1 or dx1 <= cx0 or dy0 >= cy1 or dy1 <= cy0:
                continue
            ov = intersection_area(cell.cell, dp)
            if ov > 0:
                M[di, pi] = ov / a_p

    for attempt in range(101):
        noise = rng.normal(0.0, sigma, size=n_d) if sigma > 0 else np.zeros(n_d)
        y = base + signal + noise
        R = np.linalg.solve(M, y)
        if (R >= 0).all() and (y > 0).all():
            break
    else:
        raise ValidationError("could not find non-negative connection counts in 100 draws")

    site_features = []
    for t, ns, yv, site, r_p in zip(all_truth, noise, y, sites, R):
        t.signal = float(base + signal[truth_index[t.district_id]])
        t.noise = float(ns)
        t.vitality = float(yv)
        site_features.append(
            (vector_io.point_geometry(site), {"connections": float(r_p), "city": t.city})
        )

    # PoIs: seeded Poisson counts whose sustenance/entertainment rates rise
    # with standardized vitality.
    yz_all = np.array([t.vitality for t in all_truth])
    yz = (yz_all - yz_all.mean()) / (yz_all.std() if yz_all.std() > 0 else 1.0)
    for t, z in zip(all_truth, yz):
        rates = {
            "sustenance": math.exp(1.0 + 0.8 * z),
            "entertainment": math.exp(0.5 + 0.5 * z),
            "transportation": math.exp(0.8),
        }
        x0, y0, x1, y1 = t.rect
        for cat, lam in rates.items():
            for _ in range(int(rng.poisson(lam))):
                poi_features.append(
                    (
                        vector_io.point_geometry(
                            Point(float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1)))
                        ),
                        {"category": cat},
                    )
                )

    # District and block features.
    for t in all_truth:
        district_features.append(
            (
                vector_io.polygon_geometry(_rect_poly(t.rect)),
                {"district_id": t.district_id, "city": t.city},
            )
        )
        for b in t.blocks:
            block_features.append(
                (
                    vector_io.polygon_geometry(_rect_poly(b)),
                    {"district_id": t.district_id},
                )
            )

    # Rasters: one per city, districts bbox plus a one-tile margin ring.
    raster_paths = {}
    boundary_paths = {}
    for ci in range(spec.n_cities):
        city = f"c{ci}"
        raster_paths[city] = os.path.join(out_dir, f"{city}.tif")
        _render_city_raster(
            raster_paths[city],
            city_rects[city],
            [t for t in all_truth if t.city == city],
            Z,
            truth_index,
            color_map,
            rng,
        )
        bx0, by0, bx1, by1 = city_rects[city]
        bpath = os.path.join(out_dir, f"{city}_boundary.geojson")
        vector_io.write_feature_collection(
            [
                (
                    vector_io.polygon_geometry(
                        Polygon.rectangle(
                            bx0 - TILE_M / 2, by0 - TILE_M / 2, bx1 + TILE_M / 2, by1 + TILE_M / 2
                        )
                    ),
                    {"city": city},
                )
            ],
            bpath,
        )
        boundary_paths[city] = bpath

    vector_io.write_feature_collection(district_features, os.path.join(out_dir, "districts.geojson"))
    vector_io.write_feature_collection(block_features, os.path.join(out_dir, "blocks.geojson"))
    vector_io.write_feature_collection(land_use_features, os.path.join(out_dir, "land_use.geojson"))
    vector_io.write_feature_collection(park_features, os.path.join(out_dir, "parks.geojson"))
    vector_io.write_feature_collection(
        intersection_features, os.path.join(out_dir, "intersections.geojson")
    )
    vector_io.write_feature_collection(site_features, os.path.join(out_dir, "radio_sites.geojson"))
    vector_io.write_feature_collection(poi_features, os.path.join(out_dir, "pois.geojson"))

    with open(os.path.join(out_dir, "building_heights.csv"), "w", newline="") as fh:
        wcsv = csv.writer(fh)
        wcsv.writerow(["district_id", "height_category", "count"])
        wcsv.writerows(height_rows)
    with open(os.path.join(out_dir, "height_mapping.csv"), "w", newline="") as fh:
        wcsv = csv.writer(fh)
        wcsv.writerow(["height_category", "floors"])
        for cat, fl in HEIGHT_CATEGORIES.items():
            wcsv.writerow([cat, fl])

    with open(os.path.join(out_dir, "ground_truth.csv"), "w", newline="") as fh:
        wcsv = csv.writer(fh)
        wcsv.writerow(
            ["district_id", "city"] + list(PROXY_NAMES) + ["signal", "noise", "vitality"]
        )
        for t in all_truth:
            wcsv.writerow(
                [t.district_id, t.city]
                + [repr(float(t.proxies[n])) for n in PROXY_NAMES]
                + [repr(float(t.signal)), repr(float(t.noise)), repr(float(t.vitality))]
            )

    config = _pipeline_config(out_dir, raster_paths, boundary_paths, spec)
    cfg_path = os.path.join(out_dir, "pipeline.toml")
    with open(cfg_path, "w") as fh:
        fh.write(config)

    summary = {
        "n_cities": spec.n_cities,
        "districts": len(all_truth),
        "noise_std": float(sigma),
        "base": float(base),
        "config": "pipeline.toml",
    }
    with open(os.path.join(out_dir, "synth_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    summary["config"] = cfg_path
    return summary


def _render_city_raster(path, city_rect, truths, Z, truth_index, color_map, rng):
    x0, y0, x1, y1 = city_rect
    margin_px = 64
    wpx = int(round((x1 - x0) / PX)) + 2 * margin_px
    hpx = int(round((y1 - y0) / PX)) + 2 * margin_px
    origin_x = x0 - margin_px * PX
    origin_y = y1 + margin_px * PX

    img = rng.normal(90.0, PIXEL_NOISE, size=(hpx, wpx, 3))

    def to_px(mx, my):
        return int(round((origin_y - my) / PX)), int(round((mx - origin_x) / PX))

    for t in truths:
        z = Z[truth_index[t.district_id]]
        color = np.clip(128.0 + color_map @ z, 25.0, 230.0)
        jitter = np.clip(JITTER_BASE + JITTER_GAIN * z[3:6], 1.0, 24.0)
        r0, c0 = to_px(t.rect[0], t.rect[3])
        r1, c1 = to_px(t.rect[2], t.rect[1])
        img[r0:r1, c0:c1] = STREET_COLOR  # street background inside district
        for b in t.blocks:
            br0, bc0 = to_px(b[0], b[3])
            br1, bc1 = to_px(b[2], b[1])
            block_color = color + rng.normal(0.0, 1.0, 3) * jitter
            img[br0:br1, bc0:bc1] = block_color
        img[r0:r1, c0:c1] += rng.normal(0.0, PIXEL_NOISE, size=img[r0:r1, c0:c1].shape)

    np.clip(img, 0.0, 255.0, out=img)
    write_geotiff(path, img.astype(np.uint8), origin_x, origin_y, PX, PX)


def _pipeline_config(out_dir, raster_paths, boundary_paths, spec: SynthSpec) -> str:
    lines = [
        f"seed = {spec.seed}",
        'out = "run"',
        "n_comp = 16",
        "",
        "[inputs]",
        'districts = "districts.geojson"',
        'land_use = "land_use.geojson"',
        'parks = "parks.geojson"',
        'blocks = "blocks.geojson"',
        'intersections = "intersections.geojson"',
        'radio_sites = "radio_sites.geojson"',
        'building_heights = "building_heights.csv"',
        'height_mapping = "height_mapping.csv"',
        'pois = "pois.geojson"',
        "",
        "[inputs.rasters]",
    ]
    for city, p in raster_paths.items():
        lines.append(f'{city} = "{os.path.basename(p)}"')
    lines.append("")
    lines.append("[inputs.boundaries]")
    for city, p in boundary_paths.items():
        lines.append(f'{city} = "{os.path.basename(p)}"')
    lines += [
        "",
        "[preprocess]",
        'log_columns = ["activity_density", "land_use_mix", "building_height", "small_parks"]',
        "",
        "[regressor]",
        'family = "svr"',
        "",
        "[eval]",
        "k = 5",
        "repeats = 10",
        f"loco = {'true' if spec.n_cities >= 2 else 'false'}",
        "",
        "[eval.two_stage]",
        'stage1_family = "elasticnet"',
        'stage2_family = "elasticnet"',
    ]
    return "\n".join(lines) + "\n"
