"""Raster loading, 64x64 imagelet tiling, and district assignment."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import gtiff
from .errors import FormatError, ValidationError
from .geo import Polygon, intersection_area

log = logging.getLogger(__name__)

TILE = 64


@dataclass
class GeoRaster:
    pixels: np.ndarray  # H x W x 3 uint8
    origin_x: float  # outer corner of the top-left pixel
    origin_y: float
    px_x: float  # meters per pixel, > 0
    px_y: float

    def __post_init__(self) -> None:
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise FormatError(f"raster must be HxWx3, got {self.pixels.shape}")
        if self.pixels.dtype != np.uint8:
            raise FormatError(f"raster must be 8-bit, got {self.pixels.dtype}")
        if self.px_x <= 0 or self.px_y <= 0:
            raise FormatError(f"pixel sizes must be positive, got ({self.px_x}, {self.px_y})")
        if self.width < TILE or self.height < TILE:
            raise FormatError(
                f"raster {self.width}x{self.height} smaller than one {TILE}x{TILE} tile"
            )

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def extent(self) -> Polygon:
        x1 = self.origin_x + self.width * self.px_x
        y0 = self.origin_y - self.height * self.px_y
        return Polygon.rectangle(self.origin_x, y0, x1, self.origin_y)


@dataclass
class Imagelet:
    city: str
    row: int
    col: int
    pixels: np.ndarray  # 64 x 64 x 3 uint8
    bounds: Polygon
    district_id: str | None = None

    @property
    def id(self) -> str:
        return f"{self.city}:{self.row}:{self.col}"


@dataclass
class AssignmentTable:
    entries: dict[str, str]  # imagelet id -> district id
    overlaps: dict[str, float]  # imagelet id -> overlap with its district, m^2
    unassigned: list[str]
    city_counts: dict[str, int] = field(default_factory=dict)


def load_raster(path: str) -> GeoRaster:
    pixels, (ox, oy, sx, sy) = gtiff.read_geotiff(path)
    return GeoRaster(pixels=pixels, origin_x=ox, origin_y=oy, px_x=sx, px_y=sy)


def tile_imagelets(r: GeoRaster, boundary: Polygon, city: str) -> list[Imagelet]:
    """Full 64x64 tiles on a grid anchored at the raster origin; edge
    remainders are dropped and tiles not overlapping the boundary are
    discarded."""
    extent = r.extent()
    if intersection_area(extent, boundary) <= 0.0:
        raise ValidationError("boundary polygon does not intersect the raster extent")

    out: list[Imagelet] = []
    n_rows = r.height // TILE
    n_cols = r.width // TILE
    for row in range(n_rows):
        for col in range(n_cols):
            x0 = r.origin_x + col * TILE * r.px_x
            x1 = x0 + TILE * r.px_x
            y1 = r.origin_y - row * TILE * r.px_y
            y0 = y1 - TILE * r.px_y
            bounds = Polygon.rectangle(x0, y0, x1, y1)
            if intersection_area(bounds, boundary) <= 0.0:
                continue
            px = r.pixels[row * TILE : (row + 1) * TILE, col * TILE : (col + 1) * TILE]
            out.append(Imagelet(city=city, row=row, col=col, pixels=px, bounds=bounds))
    if not out:
        log.warning("no %dx%d tile intersects the boundary polygon for city %s", TILE, TILE, city)
    return out


def assign_imagelets(ims: list[Imagelet], districts) -> AssignmentTable:
    """Assigns each imagelet to the district with the largest overlap.

    Zero-overlap imagelets stay unassigned; exact ties go to the smallest
    district id. ``districts`` are objects with .district_id and .polygon.
    """
    ds = sorted(districts, key=lambda d: d.district_id)
    ids = [d.district_id for d in ds]
    if len(set(ids)) != len(ids):
        raise ValidationError("district ids must be unique")
    boxes = [d.polygon.bounds() for d in ds]

    entries: dict[str, str] = {}
    overlaps: dict[str, float] = {}
    unassigned: list[str] = []
    city_counts: dict[str, int] = {}
    for im in ims:
        bx0, by0, bx1, by1 = im.bounds.bounds()
        best_id: str | None = None
        best_area = 0.0
        for d, (dx0, dy0, dx1, dy1) in zip(ds, boxes):
            if dx0 >= bx1 or dx1 <= bx0 or dy0 >= by1 or dy1 <= by0:
                continue
            a = intersection_area(im.bounds, d.polygon)
            if a > best_area:  # ties keep the earlier (smaller) district id
                best_area = a
                best_id = d.district_id
        if best_id is None:
            im.district_id = None
            unassigned.append(im.id)
        else:
            im.district_id = best_id
            entries[im.id] = best_id
            overlaps[im.id] = best_area
            city_counts[im.city] = city_counts.get(im.city, 0) + 1
    return AssignmentTable(
        entries=entries, overlaps=overlaps, unassigned=unassigned, city_counts=city_counts
    )


def write_assignments(table: AssignmentTable, ims: list[Imagelet], path: str) -> None:
    """CSV with header imagelet_id,city,row,col,district_id,overlap_m2;
    unassigned imagelets get an empty district_id and overlap."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["imagelet_id", "city", "row", "col", "district_id", "overlap_m2"])
        for im in ims:
            if im.id in table.entries:
                w.writerow(
                    [
                        im.id,
                        im.city,
                        im.row,
                        im.col,
                        table.entries[im.id],
                        format(table.overlaps[im.id], ".10g"),
                    ]
                )
            else:
                w.writerow([im.id, im.city, im.row, im.col, "", ""])


def emit_pngs(ims: list[Imagelet], out_dir: str) -> str:
    """PNG per imagelet plus a manifest CSV (the hand-off consumed by the
    external embedding exporter). Returns the manifest path."""
    import os

    from PIL import Image

    os.makedirs(out_dir, exist_ok=True)
    manifest = os.path.join(out_dir, "imagelets.csv")
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["filename", "imagelet_id"])
        for im in ims:
            name = f"{im.city}_{im.row}_{im.col}.png"
            Image.fromarray(im.pixels, mode="RGB").save(os.path.join(out_dir, name))
            w.writerow([name, im.id])
    return manifest
