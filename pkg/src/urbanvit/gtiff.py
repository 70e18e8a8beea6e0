"""Minimal GeoTIFF reader/writer on top of Pillow.

Supports exactly what the pipeline needs: single-tile 8-bit RGB TIFFs with an
axis-aligned geotransform carried by the ModelPixelScale (33550) +
ModelTiepoint (33922) tags, or an axis-aligned ModelTransformation (34264).
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image, TiffImagePlugin

from .errors import FormatError

MODEL_PIXEL_SCALE = 33550
MODEL_TIEPOINT = 33922
MODEL_TRANSFORMATION = 34264
_TIFF_DOUBLE = 12


def read_geotiff(path: str) -> tuple[np.ndarray, tuple[float, float, float, float]]:
    """Returns (HxWx3 uint8 pixels, (origin_x, origin_y, px_x, px_y)).

    The origin is the outer corner of the top-left pixel; y decreases with
    row index (north-up raster).
    """
    if not os.path.exists(path):
        raise FormatError(f"raster file not found: {path}")
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise FormatError(f"{path}: not a readable TIFF ({exc})") from exc
    if img.format != "TIFF":
        raise FormatError(f"{path}: expected TIFF, got {img.format}")
    if img.mode != "RGB":
        raise FormatError(f"{path}: expected 3-band 8-bit RGB raster, got mode {img.mode}")

    tags = img.tag_v2
    if MODEL_PIXEL_SCALE in tags and MODEL_TIEPOINT in tags:
        sx, sy = float(tags[MODEL_PIXEL_SCALE][0]), float(tags[MODEL_PIXEL_SCALE][1])
        tp = [float(v) for v in tags[MODEL_TIEPOINT][:6]]
        i, j, _, x, y, _ = tp
        origin_x = x - i * sx
        origin_y = y + j * sy
    elif MODEL_TRANSFORMATION in tags:
        t = [float(v) for v in tags[MODEL_TRANSFORMATION]]
        if t[1] != 0.0 or t[4] != 0.0:
            raise FormatError(f"{path}: rotated geotransform not supported")
        sx, sy = t[0], -t[5]
        origin_x, origin_y = t[3], t[7]
    else:
        raise FormatError(f"{path}: missing georeferencing tags (33550+33922 or 34264)")
    if sx <= 0 or sy <= 0:
        raise FormatError(f"{path}: non-positive pixel size ({sx}, {sy})")

    pixels = np.asarray(img, dtype=np.uint8)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise FormatError(f"{path}: expected HxWx3 pixel array, got {pixels.shape}")
    return pixels, (origin_x, origin_y, sx, sy)


def write_geotiff(
    path: str,
    pixels: np.ndarray,
    origin_x: float,
    origin_y: float,
    px_x: float,
    px_y: float,
) -> None:
    """Writes an uncompressed RGB GeoTIFF with pixel-scale/tiepoint tags."""
    arr = np.asarray(pixels, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise FormatError(f"write_geotiff needs HxWx3 uint8 pixels, got {arr.shape}")
    img = Image.fromarray(arr, mode="RGB")
    info = TiffImagePlugin.ImageFileDirectory_v2()
    info[MODEL_PIXEL_SCALE] = (float(px_x), float(px_y), 0.0)
    info.tagtype[MODEL_PIXEL_SCALE] = _TIFF_DOUBLE
    info[MODEL_TIEPOINT] = (0.0, 0.0, 0.0, float(origin_x), float(origin_y), 0.0)
    info.tagtype[MODEL_TIEPOINT] = _TIFF_DOUBLE
    img.save(path, format="TIFF", tiffinfo=info)
