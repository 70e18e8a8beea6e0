"""Planar computational-geometry kernel.

All coordinates are meters in a projected CRS (inputs must be pre-projected;
no geodesic math here). Operations are pure functions on immutable values and
are safe to call concurrently.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

import numpy as np
import shapely
import shapely.geometry as sgeom
from shapely.geometry.polygon import orient as shapely_orient

from .errors import GeometryError, ValidationError

# Tolerance for point-on-boundary decisions, in meters.
EPS = 1e-9


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValidationError(f"non-finite point coordinates ({self.x}, {self.y})")


def _ring_signed_area(ring: list[Point]) -> float:
    """Shoelace signed area of a closed ring (positive = counter-clockwise).

    Computed in a local frame anchored at the first vertex: projected
    coordinates are ~1e6 m and absolute-frame cross products would lose
    most of the mantissa.
    """
    x0, y0 = ring[0].x, ring[0].y
    acc = 0.0
    for a, b in zip(ring[:-1], ring[1:]):
        acc += (a.x - x0) * (b.y - y0) - (b.x - x0) * (a.y - y0)
    return 0.5 * acc


def _validate_ring(ring: list[Point], what: str) -> None:
    if len(ring) < 4:
        raise ValidationError(f"{what} has {len(ring)} points; a closed ring needs >= 4")
    if ring[0] != ring[-1]:
        raise ValidationError(f"{what} is not closed (first point != last point)")


@dataclass(frozen=True)
class Polygon:
    """Simple polygon with optional holes.

    Rings are closed (first == last). The exterior is counter-clockwise,
    holes are clockwise; rings must not self-intersect.
    """

    exterior: tuple[Point, ...]
    holes: tuple[tuple[Point, ...], ...] = field(default_factory=tuple)

    def __init__(self, exterior, holes=()):
        ext = tuple(p if isinstance(p, Point) else Point(*p) for p in exterior)
        hls = tuple(tuple(p if isinstance(p, Point) else Point(*p) for p in h) for h in holes)
        _validate_ring(list(ext), "exterior ring")
        if _ring_signed_area(list(ext)) <= 0:
            raise ValidationError("exterior ring must be counter-clockwise with positive area")
        for i, h in enumerate(hls):
            _validate_ring(list(h), f"hole ring {i}")
            if _ring_signed_area(list(h)) >= 0:
                raise ValidationError(f"hole ring {i} must be clockwise")
        object.__setattr__(self, "exterior", ext)
        object.__setattr__(self, "holes", hls)
        if not self.to_shapely().is_valid:
            raise ValidationError("polygon rings self-intersect or holes are misplaced")

    def to_shapely(self) -> sgeom.Polygon:
        return sgeom.Polygon(
            [(p.x, p.y) for p in self.exterior],
            [[(p.x, p.y) for p in h] for h in self.holes],
        )

    @staticmethod
    def from_shapely(sp: sgeom.Polygon) -> "Polygon":
        sp = shapely_orient(sp, sign=1.0)  # CCW exterior, CW holes
        ext = list(sp.exterior.coords)
        holes = [list(r.coords) for r in sp.interiors]
        return Polygon(ext, holes)

    @staticmethod
    def rectangle(x0: float, y0: float, x1: float, y1: float) -> "Polygon":
        if not (x1 > x0 and y1 > y0):
            raise ValidationError(f"degenerate rectangle ({x0},{y0})-({x1},{y1})")
        return Polygon([(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)])

    def bounds(self) -> tuple[float, float, float, float]:
        xs = [p.x for p in self.exterior]
        ys = [p.y for p in self.exterior]
        return min(xs), min(ys), max(xs), max(ys)


@dataclass(frozen=True)
class Circle:
    center: Point
    radius: float

    def __post_init__(self) -> None:
        if self.radius < 0:
            raise ValidationError(f"negative circle radius {self.radius}")


@dataclass(frozen=True)
class VoronoiCell:
    site: Point
    cell: Polygon


def polygon_area(p: Polygon) -> float:
    """Shoelace area of the exterior minus the holes, in square meters."""
    area = _ring_signed_area(list(p.exterior))
    for h in p.holes:
        area += _ring_signed_area(list(h))  # holes are CW, so this subtracts
    return area


def polygon_centroid(p: Polygon) -> Point:
    """Area-weighted centroid; holes subtracted.

    Moments accumulate in a frame anchored at the first exterior vertex
    (same precision argument as the shoelace)."""
    ax0, ay0 = p.exterior[0].x, p.exterior[0].y

    def ring_moments(ring: tuple[Point, ...]) -> tuple[float, float, float]:
        a = cx = cy = 0.0
        for u, v in zip(ring[:-1], ring[1:]):
            ux, uy = u.x - ax0, u.y - ay0
            vx, vy = v.x - ax0, v.y - ay0
            cross = ux * vy - vx * uy
            a += cross
            cx += (ux + vx) * cross
            cy += (uy + vy) * cross
        return a / 2.0, cx / 6.0, cy / 6.0

    area, mx, my = ring_moments(p.exterior)
    for h in p.holes:
        ha, hx, hy = ring_moments(h)  # negative for CW rings
        area += ha
        mx += hx
        my += hy
    if abs(area) < EPS * EPS:
        raise GeometryError("zero-area polygon has no centroid")
    return Point(ax0 + mx / area, ay0 + my / area)


def distance(a: Point, b: Point) -> float:
    """Euclidean distance in the projected plane."""
    return math.hypot(a.x - b.x, a.y - b.y)


def intersection_area(a: Polygon, b: Polygon) -> float:
    """Area of a ∩ b; 0 when disjoint or when the overlap is degenerate.

    Arguments are ordered canonically first: GEOS results can differ by one
    ulp between intersection(a,b) and intersection(b,a), and symmetry here
    must be exact.
    """
    ka = tuple((p.x, p.y) for p in a.exterior)
    kb = tuple((p.x, p.y) for p in b.exterior)
    if (kb, tuple(tuple((p.x, p.y) for p in h) for h in b.holes)) < (
        ka,
        tuple(tuple((p.x, p.y) for p in h) for h in a.holes),
    ):
        a, b = b, a
    inter = a.to_shapely().intersection(b.to_shapely())
    return float(inter.area)


def _circumcircle(a: Point, b: Point, c: Point) -> Circle | None:
    d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y))
    if d == 0.0:
        return None  # collinear
    a2, b2, c2 = a.x * a.x + a.y * a.y, b.x * b.x + b.y * b.y, c.x * c.x + c.y * c.y
    ux = (a2 * (b.y - c.y) + b2 * (c.y - a.y) + c2 * (a.y - b.y)) / d
    uy = (a2 * (c.x - b.x) + b2 * (a.x - c.x) + c2 * (b.x - a.x)) / d
    center = Point(ux, uy)
    r = max(distance(center, a), distance(center, b), distance(center, c))
    return Circle(center, r)


def _diameter_circle(a: Point, b: Point) -> Circle:
    center = Point((a.x + b.x) / 2.0, (a.y + b.y) / 2.0)
    return Circle(center, max(distance(center, a), distance(center, b)))


def _in_circle(c: Circle, p: Point) -> bool:
    return distance(c.center, p) <= c.radius * (1.0 + 1e-12) + 1e-14


def _cross(ox: float, oy: float, ax: float, ay: float, bx: float, by: float) -> float:
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


def _circle_two_boundary(pts: list[Point], p: Point, q: Point) -> Circle:
    """Smallest circle enclosing ``pts`` with p and q on its boundary.

    Among the pencil of circles through p,q, picks the extreme circumcircle
    on each side of the chord and keeps the smaller enclosing one.
    """
    circ = _diameter_circle(p, q)
    left: Circle | None = None
    right: Circle | None = None
    for r in pts:
        if _in_circle(circ, r):
            continue
        cross = _cross(p.x, p.y, q.x, q.y, r.x, r.y)
        c = _circumcircle(p, q, r)
        if c is None:
            continue
        side = _cross(p.x, p.y, q.x, q.y, c.center.x, c.center.y)
        if cross > 0.0 and (
            left is None or side > _cross(p.x, p.y, q.x, q.y, left.center.x, left.center.y)
        ):
            left = c
        elif cross < 0.0 and (
            right is None or side < _cross(p.x, p.y, q.x, q.y, right.center.x, right.center.y)
        ):
            right = c
    if left is None and right is None:
        return circ
    if left is None:
        return right
    if right is None:
        return left
    return left if left.radius <= right.radius else right


def _circle_one_boundary(pts: list[Point], p: Point) -> Circle:
    circle = Circle(p, 0.0)
    for i, q in enumerate(pts):
        if not _in_circle(circle, q):
            if circle.radius == 0.0:
                circle = _diameter_circle(p, q)
            else:
                circle = _circle_two_boundary(pts[: i + 1], p, q)
    return circle


def enclosing_circle(points) -> Circle:
    """Smallest circle containing every point (Welzl-style incremental
    construction).

    Deterministic: the working order is a fixed-seed shuffle, and the optimum
    itself is unique.
    """
    raw = list(dict.fromkeys(p if isinstance(p, Point) else Point(*p) for p in points))
    if len(raw) < 3:
        raise GeometryError(f"minimum enclosing circle needs >= 3 distinct points, got {len(raw)}")
    # Work in a local frame: circumcenters of far-from-origin points lose
    # precision quadratically in the coordinate magnitude.
    ax, ay = raw[0].x, raw[0].y
    pts = [Point(p.x - ax, p.y - ay) for p in raw]
    rng = random.Random(0x5EED)
    rng.shuffle(pts)

    circle: Circle | None = None
    for i, q in enumerate(pts):
        if circle is None or not _in_circle(circle, q):
            circle = _circle_one_boundary(pts[: i + 1], q)
    return Circle(Point(circle.center.x + ax, circle.center.y + ay), circle.radius)


def min_enclosing_circle(p: Polygon) -> Circle:
    """Smallest circle containing all exterior-ring vertices."""
    return enclosing_circle(p.exterior[:-1])


def _halfplane_quad(site: Point, other: Point, extent: float) -> sgeom.Polygon:
    """Rectangle covering { x : |x - site| <= |x - other| } out to ``extent``."""
    mx, my = (site.x + other.x) / 2.0, (site.y + other.y) / 2.0
    nx, ny = site.x - other.x, site.y - other.y  # normal pointing toward site
    norm = math.hypot(nx, ny)
    nx, ny = nx / norm, ny / norm
    tx, ty = -ny, nx
    c1 = (mx + tx * extent, my + ty * extent)
    c2 = (mx - tx * extent, my - ty * extent)
    c3 = (c2[0] + nx * extent, c2[1] + ny * extent)
    c4 = (c1[0] + nx * extent, c1[1] + ny * extent)
    return sgeom.Polygon([c1, c2, c3, c4])


def voronoi_partition(sites: list[Point], bound: Polygon) -> list[VoronoiCell]:
    """Clipped Voronoi cells, one per site, covering ``bound``.

    Each cell is bound ∩ (half-planes nearer to its site than to any other
    site). Sites sorted by distance allow early termination: once every
    remaining bisector is farther than the cell's farthest vertex, no further
    clip can change the cell.
    """
    if not sites:
        raise ValidationError("voronoi_partition needs at least one site")
    for i, a in enumerate(sites):
        for b in sites[i + 1 :]:
            if distance(a, b) <= EPS:
                raise ValidationError(f"duplicate sites at ({a.x}, {a.y})")
    sbound = bound.to_shapely()
    for s in sites:
        if sbound.distance(sgeom.Point(s.x, s.y)) > EPS:
            raise ValidationError(f"site ({s.x}, {s.y}) lies outside the bound polygon")
    if len(sites) == 1:
        return [VoronoiCell(sites[0], bound)]

    x0, y0, x1, y1 = bound.bounds()
    extent = 4.0 * math.hypot(x1 - x0, y1 - y0) + 1.0

    cells: list[VoronoiCell] = []
    for i, site in enumerate(sites):
        others = sorted(
            (s for j, s in enumerate(sites) if j != i),
            key=lambda o: (distance(site, o), o.x, o.y),
        )
        cell = sbound
        for other in others:
            if isinstance(cell, sgeom.MultiPolygon):
                raise GeometryError(
                    "Voronoi cell split into multiple parts by a non-convex bound; "
                    "use a convex bound polygon"
                )
            # Bisector distance from the site; beyond the farthest cell
            # vertex it cannot cut anything.
            reach = max(
                math.hypot(vx - site.x, vy - site.y)
                for vx, vy in cell.exterior.coords
            )
            if distance(site, other) / 2.0 > reach:
                break
            cell = cell.intersection(_halfplane_quad(site, other, extent))
            if cell.is_empty:
                raise GeometryError(f"site ({site.x}, {site.y}) produced an empty Voronoi cell")
        if not isinstance(cell, sgeom.Polygon) or cell.is_empty:
            raise GeometryError(
                f"degenerate Voronoi cell for site ({site.x}, {site.y}); "
                "non-convex bounds that split cells are unsupported"
            )
        cells.append(VoronoiCell(site, Polygon.from_shapely(cell)))
    return cells


def point_in_polygon(p: Polygon, pt: Point, tol: float = EPS) -> bool:
    """Boundary-inclusive containment with ``tol`` meters of slack."""
    return p.to_shapely().distance(sgeom.Point(pt.x, pt.y)) <= tol


def points_in_polygon(p: Polygon, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Vectorized boundary-inclusive containment for many points."""
    sp = p.to_shapely()
    inside = shapely.contains_xy(sp, xs, ys)
    if not inside.all():
        border = shapely.dwithin(sp, shapely.points(xs[~inside], ys[~inside]), EPS)
        inside = inside.copy()
        inside[np.flatnonzero(~inside)[border]] = True
    return inside
