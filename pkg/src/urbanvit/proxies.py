"""The six vitality proxies and the activity-density vitality label.

Formulas (district d, blocks B_d):
  land use mix   = -sum_j P_dj * ln(P_dj) / ln(3), shares over covered area
  small parks    = 1 / mean_{j in B_d} dist(centroid_j, nearest small park)
  building height= sum_hc b_hc*f_hc / sum_hc b_hc
  block size     = mean block area
  intersections  = count inside district / district area
  anisotropicity = mean_j area_j / (pi * r_j^2), r_j = min enclosing circle
  activity S_d   = sum_p R_p * A_{p & d} / (A_p - A_{p & W})
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

from shapely.ops import unary_union

from .errors import FormatError, MissingDataError, ValidationError
from .geo import (
    Point,
    Polygon,
    distance,
    intersection_area,
    min_enclosing_circle,
    point_in_polygon,
    polygon_area,
    polygon_centroid,
    voronoi_partition,
)

log = logging.getLogger(__name__)

LAND_USE_CATEGORIES = (
    "residential",
    "commercial-industrial-institutional",
    "recreational-parks-water",
)
SMALL_PARK_MAX_M2 = 1_000_000.0  # strictly below 1 km^2
MIN_PARK_DISTANCE_M = 1e-6
MIN_CELL_LAND_M2 = 1e-6
PROXY_NAMES = (
    "land_use_mix",
    "building_height",
    "small_parks",
    "block_size",
    "intersection_density",
    "anisotropicity",
)


@dataclass
class Block:
    polygon: Polygon
    area: float = field(init=False)
    phi: float = field(init=False)

    def __post_init__(self) -> None:
        self.area = polygon_area(self.polygon)
        circle = min_enclosing_circle(self.polygon)
        denom = math.pi * circle.radius**2
        self.phi = self.area / denom if denom > 0 else 0.0


@dataclass
class District:
    district_id: str
    city: str
    polygon: Polygon
    blocks: list[Block] = field(default_factory=list)


@dataclass
class LandUseLayer:
    features: list[tuple[Polygon, str]]

    def __post_init__(self) -> None:
        for _, cat in self.features:
            if cat not in LAND_USE_CATEGORIES:
                raise ValidationError(
                    f"unknown land-use category {cat!r}; expected one of {LAND_USE_CATEGORIES}"
                )


@dataclass
class BuildingHeightTable:
    counts: dict[str, dict[str, float]]  # district id -> height category -> count
    floors: dict[str, float]  # height category -> number of floors

    def __post_init__(self) -> None:
        for hc, f in self.floors.items():
            if f <= 0:
                raise ValidationError(f"height category {hc!r} has non-positive floors {f}")
        for d, row in self.counts.items():
            for hc, c in row.items():
                if c < 0:
                    raise ValidationError(f"negative building count for {d}/{hc}")
                if hc not in self.floors:
                    raise ValidationError(f"height category {hc!r} missing from floor mapping")


@dataclass
class ActivityLayer:
    sites: list[tuple[Point, float]]  # (location, R_p connection count)
    water: list[Polygon] = field(default_factory=list)

    def __post_init__(self) -> None:
        for pt, r in self.sites:
            if not math.isfinite(r) or r < 0:
                raise ValidationError(f"site ({pt.x}, {pt.y}) has bad connection count {r}")


@dataclass
class ProxyRecord:
    district_id: str
    land_use_mix: float | None = None
    building_height: float | None = None
    small_parks: float | None = None
    block_size: float | None = None
    intersection_density: float | None = None
    anisotropicity: float | None = None
    activity_density: float | None = None


def land_use_mix(d: District, lu: LandUseLayer) -> float:
    areas = {cat: 0.0 for cat in LAND_USE_CATEGORIES}
    for poly, cat in lu.features:
        areas[cat] += intersection_area(d.polygon, poly)
    total = sum(areas.values())
    if total <= 0.0:
        raise MissingDataError(f"district {d.district_id}: no land-use coverage")
    entropy = 0.0
    for a in areas.values():
        share = a / total
        if share > 0.0:
            entropy -= share * math.log(share)
    return entropy / math.log(len(LAND_USE_CATEGORIES))


def small_parks(d: District, parks: list[Polygon]) -> float:
    small = [p for p in parks if polygon_area(p) < SMALL_PARK_MAX_M2]
    if not small:
        raise MissingDataError("no parks below 1 km^2 in the dataset")
    if not d.blocks:
        raise MissingDataError(f"district {d.district_id}: no blocks")
    centroids = [polygon_centroid(p) for p in small]
    acc = 0.0
    for b in d.blocks:
        c = polygon_centroid(b.polygon)
        acc += min(distance(c, pc) for pc in centroids)
    mean_dist = acc / len(d.blocks)
    if mean_dist < MIN_PARK_DISTANCE_M:
        log.warning(
            "district %s: mean park distance %.3g m clamped to %.0e",
            d.district_id,
            mean_dist,
            MIN_PARK_DISTANCE_M,
        )
        mean_dist = MIN_PARK_DISTANCE_M
    return 1.0 / mean_dist


def building_height(d: District, t: BuildingHeightTable) -> float:
    row = t.counts.get(d.district_id, {})
    total = sum(row.values())
    if total <= 0:
        raise MissingDataError(f"district {d.district_id}: no buildings in height table")
    return sum(c * t.floors[hc] for hc, c in row.items()) / total


def block_size(d: District) -> float:
    if not d.blocks:
        raise MissingDataError(f"district {d.district_id}: no blocks")
    return sum(b.area for b in d.blocks) / len(d.blocks)


def intersection_density(d: District, intersections: list[Point]) -> float:
    area = polygon_area(d.polygon)
    if area <= 0.0:
        raise ValidationError(f"district {d.district_id}: non-positive area")
    count = sum(1 for pt in intersections if point_in_polygon(d.polygon, pt))
    return count / area


def anisotropicity(d: District) -> float:
    if not d.blocks:
        raise MissingDataError(f"district {d.district_id}: no blocks")
    phis = []
    for i, b in enumerate(d.blocks):
        if b.phi <= 0.0 or not math.isfinite(b.phi):
            log.warning("district %s: skipping degenerate block %d", d.district_id, i)
            continue
        phis.append(b.phi)
    if not phis:
        raise MissingDataError(f"district {d.district_id}: all blocks degenerate")
    return sum(phis) / len(phis)


def activity_bound(districts: list[District], a: ActivityLayer, margin: float = 0.10) -> Polygon:
    """Bounding box of all district polygons and sites, expanded by
    ``margin`` of its width/height on each side."""
    xs: list[float] = []
    ys: list[float] = []
    for d in districts:
        x0, y0, x1, y1 = d.polygon.bounds()
        xs += [x0, x1]
        ys += [y0, y1]
    for pt, _ in a.sites:
        xs.append(pt.x)
        ys.append(pt.y)
    x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
    mx = (x1 - x0) * margin
    my = (y1 - y0) * margin
    return Polygon.rectangle(x0 - mx, y0 - my, x1 + mx, y1 + my)


def activity_density(
    districts: list[District],
    a: ActivityLayer,
    margin: float = 0.10,
    bound: Polygon | None = None,
) -> dict[str, float]:
    """S_d per district. Voronoi cells of the radio sites are clipped to
    ``bound`` (default: expanded bounding box of districts and sites); each
    cell's connection count is spread over districts in proportion to
    overlap, with water area removed from the cell denominator."""
    if not a.sites:
        raise ValidationError("activity layer has no sites")
    if bound is None:
        bound = activity_bound(districts, a, margin)
    cells = voronoi_partition([pt for pt, _ in a.sites], bound)
    water_union = unary_union([w.to_shapely() for w in a.water]) if a.water else None

    out = {d.district_id: 0.0 for d in districts}
    boxes = {d.district_id: d.polygon.bounds() for d in districts}
    for cell, (_, r_p) in zip(cells, a.sites):
        a_p = polygon_area(cell.cell)
        a_pw = float(cell.cell.to_shapely().intersection(water_union).area) if water_union is not None else 0.0
        denom = a_p - a_pw
        if denom <= MIN_CELL_LAND_M2:
            log.warning(
                "skipping water-dominated Voronoi cell at (%.1f, %.1f): land area %.3g m^2",
                cell.site.x,
                cell.site.y,
                denom,
            )
            continue
        cx0, cy0, cx1, cy1 = cell.cell.bounds()
        for d in districts:
            dx0, dy0, dx1, dy1 = boxes[d.district_id]
            if dx0 >= cx1 or dx1 <= cx0 or dy0 >= cy1 or dy1 <= cy0:
                continue
            overlap = intersection_area(cell.cell, d.polygon)
            if overlap > 0.0:
                out[d.district_id] += r_p * overlap / denom
    return out


@dataclass
class ProxyLayers:
    land_use: LandUseLayer
    parks: list[Polygon]
    heights: BuildingHeightTable
    intersections: list[Point]
    activity: ActivityLayer


def compute_all(
    districts: list[District], layers: ProxyLayers, margin: float = 0.10
) -> tuple[list[ProxyRecord], dict[str, dict[str, str]]]:
    """One ProxyRecord per district; missing-data problems are collected per
    district/field instead of aborting the batch."""
    problems: dict[str, dict[str, str]] = {}

    def note(d_id: str, fieldname: str, exc: Exception) -> None:
        problems.setdefault(d_id, {})[fieldname] = str(exc)

    activity = activity_density(districts, layers.activity, margin=margin)
    records = []
    for d in districts:
        rec = ProxyRecord(district_id=d.district_id)
        try:
            rec.land_use_mix = land_use_mix(d, layers.land_use)
        except (MissingDataError, ValidationError) as exc:
            note(d.district_id, "land_use_mix", exc)
        try:
            rec.building_height = building_height(d, layers.heights)
        except MissingDataError as exc:
            note(d.district_id, "building_height", exc)
        try:
            rec.small_parks = small_parks(d, layers.parks)
        except MissingDataError as exc:
            note(d.district_id, "small_parks", exc)
        try:
            rec.block_size = block_size(d)
        except MissingDataError as exc:
            note(d.district_id, "block_size", exc)
        try:
            rec.intersection_density = intersection_density(d, layers.intersections)
        except (MissingDataError, ValidationError) as exc:
            note(d.district_id, "intersection_density", exc)
        try:
            rec.anisotropicity = anisotropicity(d)
        except MissingDataError as exc:
            note(d.district_id, "anisotropicity", exc)
        rec.activity_density = activity.get(d.district_id, 0.0)
        records.append(rec)
    return records, problems


CSV_FIELDS = ("district_id",) + PROXY_NAMES + ("activity_density",)


def write_proxies(records: list[ProxyRecord], path: str) -> None:
    """Raw, untransformed values; missing fields are left empty."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for rec in records:
            row = [rec.district_id]
            for name in CSV_FIELDS[1:]:
                v = getattr(rec, name)
                row.append("" if v is None else format(v, ".17g"))
            w.writerow(row)


def read_proxies(path: str) -> list[ProxyRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != CSV_FIELDS:
            raise FormatError(f"{path}: unexpected proxy CSV header {header}")
        for row in reader:
            rec = ProxyRecord(district_id=row[0])
            for name, val in zip(CSV_FIELDS[1:], row[1:]):
                setattr(rec, name, float(val) if val != "" else None)
            records.append(rec)
    return records
