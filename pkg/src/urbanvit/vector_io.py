"""GeoJSON and CSV layer I/O.

All vector layers are FeatureCollections in the projected CRS. Coordinates
are written with repr precision (exact float round trip); metric properties
in report outputs are written with 10 significant digits.
"""

from __future__ import annotations

import csv
import json
import os

from .errors import FormatError
from .geo import Point, Polygon
from .proxies import (
    ActivityLayer,
    Block,
    BuildingHeightTable,
    District,
    LandUseLayer,
)


def read_geojson(path: str) -> list[dict]:
    if not os.path.exists(path):
        raise FormatError(f"vector file not found: {path}")
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if data.get("type") != "FeatureCollection" or "features" not in data:
        raise FormatError(f"{path}: expected a GeoJSON FeatureCollection")
    return data["features"]


def to_polygon(geom: dict, where: str) -> Polygon:
    if geom.get("type") != "Polygon":
        raise FormatError(f"{where}: expected Polygon geometry, got {geom.get('type')!r}")
    rings = geom["coordinates"]
    if not rings:
        raise FormatError(f"{where}: empty Polygon coordinates")
    return Polygon(rings[0], rings[1:])


def to_point(geom: dict, where: str) -> Point:
    if geom.get("type") != "Point":
        raise FormatError(f"{where}: expected Point geometry, got {geom.get('type')!r}")
    x, y = geom["coordinates"][:2]
    return Point(float(x), float(y))


def polygon_geometry(p: Polygon) -> dict:
    return {
        "type": "Polygon",
        "coordinates": [[(pt.x, pt.y) for pt in p.exterior]]
        + [[(pt.x, pt.y) for pt in h] for h in p.holes],
    }


def point_geometry(p: Point) -> dict:
    return {"type": "Point", "coordinates": (p.x, p.y)}


def write_feature_collection(features: list[tuple[dict, dict]], path: str) -> None:
    """``features`` is a list of (geometry dict, properties dict)."""
    fc = {
        "type": "FeatureCollection",
        "features": [
            {"type": "Feature", "geometry": geom, "properties": props}
            for geom, props in features
        ],
    }
    with open(path, "w") as fh:
        json.dump(fc, fh, separators=(",", ":"), sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Layer-specific loaders
# ---------------------------------------------------------------------------


def load_districts(path: str) -> list[District]:
    out = []
    seen: set[str] = set()
    for i, f in enumerate(read_geojson(path)):
        props = f.get("properties") or {}
        did = props.get("district_id")
        city = props.get("city")
        if not did or not city:
            raise FormatError(f"{path}: feature {i} missing district_id/city properties")
        if did in seen:
            raise FormatError(f"{path}: duplicate district_id {did!r}")
        seen.add(did)
        poly = to_polygon(f.get("geometry") or {}, f"{path}: feature {i}")
        out.append(District(district_id=did, city=city, polygon=poly, blocks=[]))
    return out


def load_boundary(path: str) -> Polygon:
    feats = read_geojson(path)
    if len(feats) != 1:
        raise FormatError(f"{path}: boundary file must contain exactly one feature")
    return to_polygon(feats[0].get("geometry") or {}, f"{path}: boundary")


def load_blocks(path: str, districts: list[District]) -> None:
    """Attaches blocks to their districts in place via the district_id
    property."""
    by_id = {d.district_id: d for d in districts}
    for i, f in enumerate(read_geojson(path)):
        props = f.get("properties") or {}
        did = props.get("district_id")
        if did not in by_id:
            raise FormatError(f"{path}: feature {i} references unknown district {did!r}")
        poly = to_polygon(f.get("geometry") or {}, f"{path}: feature {i}")
        by_id[did].blocks.append(Block(poly))


def load_land_use(path: str) -> LandUseLayer:
    feats = []
    for i, f in enumerate(read_geojson(path)):
        props = f.get("properties") or {}
        cat = props.get("category")
        poly = to_polygon(f.get("geometry") or {}, f"{path}: feature {i}")
        feats.append((poly, cat))
    return LandUseLayer(feats)


def load_polygons(path: str) -> list[Polygon]:
    return [
        to_polygon(f.get("geometry") or {}, f"{path}: feature {i}")
        for i, f in enumerate(read_geojson(path))
    ]


def load_points(path: str) -> list[Point]:
    return [
        to_point(f.get("geometry") or {}, f"{path}: feature {i}")
        for i, f in enumerate(read_geojson(path))
    ]


def load_radio_sites(path: str, water: list[Polygon] | None = None) -> ActivityLayer:
    sites = []
    for i, f in enumerate(read_geojson(path)):
        props = f.get("properties") or {}
        if "connections" not in props:
            raise FormatError(f"{path}: feature {i} missing 'connections' property")
        pt = to_point(f.get("geometry") or {}, f"{path}: feature {i}")
        sites.append((pt, float(props["connections"])))
    return ActivityLayer(sites=sites, water=list(water or []))


POI_CATEGORIES = ("sustenance", "transportation", "entertainment")


def load_pois(path: str) -> list[tuple[Point, str]]:
    out = []
    for i, f in enumerate(read_geojson(path)):
        props = f.get("properties") or {}
        cat = props.get("category")
        if cat not in POI_CATEGORIES:
            raise FormatError(
                f"{path}: feature {i} has category {cat!r}; expected one of {POI_CATEGORIES}"
            )
        out.append((to_point(f.get("geometry") or {}, f"{path}: feature {i}"), cat))
    return out


def load_building_heights(counts_path: str, mapping_path: str) -> BuildingHeightTable:
    floors: dict[str, float] = {}
    with open(mapping_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["height_category", "floors"]:
            raise FormatError(f"{mapping_path}: expected header height_category,floors")
        for row in reader:
            floors[row[0]] = float(row[1])
    counts: dict[str, dict[str, float]] = {}
    with open(counts_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["district_id", "height_category", "count"]:
            raise FormatError(f"{counts_path}: expected header district_id,height_category,count")
        for row in reader:
            counts.setdefault(row[0], {})[row[1]] = counts.setdefault(row[0], {}).get(
                row[1], 0.0
            ) + float(row[2])
    return BuildingHeightTable(counts=counts, floors=floors)
