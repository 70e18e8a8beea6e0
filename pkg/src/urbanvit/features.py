"""Per-imagelet feature vectors, PCA reduction, and district aggregation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ValidationError
from .geo import Point
from .raster import Imagelet

log = logging.getLogger(__name__)

BASELINE_DIM = 32
DEFAULT_N_COMP = 16


@dataclass
class EmbeddingVector:
    imagelet_id: str
    z: np.ndarray


@dataclass
class PcaModel:
    mean: np.ndarray  # (D,)
    components: np.ndarray  # (n_comp, D), orthonormal rows
    explained_variance: np.ndarray  # (n_comp,), non-increasing
    rank_deficient: bool = False

    @property
    def n_comp(self) -> int:
        return self.components.shape[0]


@dataclass
class ComponentVector:
    imagelet_id: str
    v: np.ndarray


@dataclass
class DistrictFeatureVector:
    district_id: str
    mu: np.ndarray
    sigma: np.ndarray
    p: float  # mean pairwise Pearson correlation of the component vectors
    n: int
    c: tuple[float, float]  # district centroid, projected meters


def baseline_features(im: Imagelet) -> EmbeddingVector:
    """Deterministic 32-dim summary of one imagelet.

    Per band: mean, population std, and 8-bin histogram fractions over
    [0,32),...,[224,256). Then mean and std of the central-difference
    gradient magnitude of the grayscale image (computed on the 62x62
    interior where both central differences exist).
    """
    px = im.pixels.astype(np.float64)
    feats: list[float] = []
    for b in range(3):
        band = px[:, :, b]
        feats.append(float(band.mean()))
        feats.append(float(band.std()))
        hist, _ = np.histogram(band, bins=8, range=(0.0, 256.0))
        feats.extend((hist / band.size).tolist())
    gray = px.mean(axis=2)
    gx = (gray[1:-1, 2:] - gray[1:-1, :-2]) / 2.0
    gy = (gray[2:, 1:-1] - gray[:-2, 1:-1]) / 2.0
    mag = np.hypot(gx, gy)
    feats.append(float(mag.mean()))
    feats.append(float(mag.std()))
    return EmbeddingVector(imagelet_id=im.id, z=np.array(feats))


def _parse_imagelet_id(s: str) -> tuple[str, int, int]:
    parts = s.split(":")
    if len(parts) != 3 or not parts[0]:
        raise FormatError(f"bad imagelet id {s!r}; expected <city>:<row>:<col>")
    try:
        return parts[0], int(parts[1]), int(parts[2])
    except ValueError as exc:
        raise FormatError(f"bad imagelet id {s!r}; row/col must be integers") from exc


def load_embeddings(path: str) -> list[EmbeddingVector]:
    """Reads the shared embedding CSV: header imagelet_id,z_0,...,z_{D-1}."""
    out: list[EmbeddingVector] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "imagelet_id":
            raise FormatError(f"{path}: first column must be imagelet_id")
        dim = len(header) - 1
        if dim < 1 or header[1:] != [f"z_{i}" for i in range(dim)]:
            raise FormatError(f"{path}: embedding columns must be z_0..z_{{D-1}}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != dim + 1:
                raise FormatError(f"{path}:{lineno}: expected {dim + 1} fields, got {len(row)}")
            _parse_imagelet_id(row[0])
            try:
                z = np.array([float(v) for v in row[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: non-numeric embedding value") from exc
            if not np.isfinite(z).all():
                raise FormatError(f"{path}:{lineno}: non-finite embedding value")
            out.append(EmbeddingVector(imagelet_id=row[0], z=z))
    return out


def write_embeddings(vectors: list[EmbeddingVector], path: str) -> None:
    dim = len(vectors[0].z) if vectors else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["imagelet_id"] + [f"z_{i}" for i in range(dim)])
        for v in vectors:
            w.writerow([v.imagelet_id] + [format(x, ".10g") for x in v.z])


def pca_fit(zs: list[EmbeddingVector], n_comp: int = DEFAULT_N_COMP) -> PcaModel:
    """Mean-centered PCA via SVD; components are the top right singular
    directions with signs fixed so each row's largest-magnitude entry is
    positive."""
    if n_comp < 1:
        raise ValidationError(f"n_comp must be >= 1, got {n_comp}")
    if len(zs) <= n_comp:
        raise ValidationError(f"need more than {n_comp} samples, got {len(zs)}")
    X = np.stack([z.z for z in zs])
    if X.shape[1] < n_comp:
        raise ValidationError(f"vector length {X.shape[1]} below n_comp {n_comp}")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    var = s**2 / (X.shape[0] - 1)
    tol = max(X.shape) * np.finfo(float).eps * (s[0] if len(s) else 0.0)
    rank = int((s > tol).sum())
    kept = n_comp
    deficient = False
    if rank < n_comp:
        kept = max(rank, 1)
        deficient = True
        log.warning("PCA rank %d below requested n_comp %d; keeping %d", rank, n_comp, kept)
    comps = vt[:kept].copy()
    for i in range(kept):
        j = int(np.abs(comps[i]).argmax())
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return PcaModel(
        mean=mean,
        components=comps,
        explained_variance=var[:kept].copy(),
        rank_deficient=deficient,
    )


def pca_transform(m: PcaModel, z: EmbeddingVector) -> ComponentVector:
    if len(z.z) != len(m.mean):
        raise ValidationError(f"embedding length {len(z.z)} != model dimension {len(m.mean)}")
    return ComponentVector(imagelet_id=z.imagelet_id, v=m.components @ (z.z - m.mean))


def _pair_pearson(a: np.ndarray, b: np.ndarray) -> float:
    ac = a - a.mean()
    bc = b - b.mean()
    denom = math.sqrt(float(ac @ ac)) * math.sqrt(float(bc @ bc))
    if denom <= 0.0:
        return 0.0  # constant vector in the pair
    return float(ac @ bc) / denom


def aggregate_district(
    district_id: str, vs: list[ComponentVector], centroid: Point
) -> DistrictFeatureVector:
    """x_d = (mu, sigma, p, n, c): element-wise mean, population std, mean
    pairwise Pearson correlation, imagelet count, and centroid coordinates.
    Single-imagelet districts get sigma = 0 and p = 0."""
    if not vs:
        raise ValidationError(f"district {district_id} has no component vectors")
    V = np.stack([cv.v for cv in vs])
    n = V.shape[0]
    mu = V.mean(axis=0)
    sigma = V.std(axis=0)  # population std: well-defined at n = 1
    if n == 1:
        p = 0.0
    else:
        acc = 0.0
        count = 0
        for i in range(n):
            for j in range(i + 1, n):
                acc += _pair_pearson(V[i], V[j])
                count += 1
        p = acc / count
    return DistrictFeatureVector(
        district_id=district_id, mu=mu, sigma=sigma, p=p, n=n, c=(centroid.x, centroid.y)
    )


def feature_length(n_comp: int) -> int:
    return 2 * n_comp + 4


def build_design_matrix(
    xs: list[DistrictFeatureVector],
) -> tuple[np.ndarray, list[str]]:
    """N x m matrix (m = 2*n_comp + 4) plus column names, ordered
    mu_0..mu_{k-1}, sigma_0..sigma_{k-1}, p, n, c_x, c_y."""
    if not xs:
        raise ValidationError("no district feature vectors")
    k = len(xs[0].mu)
    for x in xs:
        if len(x.mu) != k or len(x.sigma) != k:
            raise ValidationError(
                f"district {x.district_id} has n_comp {len(x.mu)}, expected {k}"
            )
    names = (
        [f"mu_{i}" for i in range(k)]
        + [f"sigma_{i}" for i in range(k)]
        + ["p", "n", "c_x", "c_y"]
    )
    rows = [
        np.concatenate([x.mu, x.sigma, [x.p, float(x.n), x.c[0], x.c[1]]]) for x in xs
    ]
    return np.stack(rows), names


def write_district_features(
    xs: list[DistrictFeatureVector], cities: dict[str, str], path: str
) -> None:
    """CSV: district_id,city,mu_0..,sigma_0..,p,n,c_x,c_y."""
    if not xs:
        raise ValidationError("no district feature vectors to write")
    k = len(xs[0].mu)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["district_id", "city"]
            + [f"mu_{i}" for i in range(k)]
            + [f"sigma_{i}" for i in range(k)]
            + ["p", "n", "c_x", "c_y"]
        )
        for x in xs:
            w.writerow(
                [x.district_id, cities.get(x.district_id, "")]
                + [format(v, ".10g") for v in x.mu]
                + [format(v, ".10g") for v in x.sigma]
                + [format(x.p, ".10g"), x.n, format(x.c[0], ".10g"), format(x.c[1], ".10g")]
            )


def read_district_features(
    path: str,
) -> tuple[list[DistrictFeatureVector], dict[str, str]]:
    xs: list[DistrictFeatureVector] = []
    cities: dict[str, str] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["district_id", "city"]:
            raise FormatError(f"{path}: expected district feature CSV header")
        k = sum(1 for h in header if h.startswith("mu_"))
        for row in reader:
            vals = [float(v) for v in row[2:]]
            xs.append(
                DistrictFeatureVector(
                    district_id=row[0],
                    mu=np.array(vals[:k]),
                    sigma=np.array(vals[k : 2 * k]),
                    p=vals[2 * k],
                    n=int(vals[2 * k + 1]),
                    c=(vals[2 * k + 2], vals[2 * k + 3]),
                )
            )
            cities[row[0]] = row[1]
    return xs, cities
