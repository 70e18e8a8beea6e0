"""Imagelet directory loading.

Input contract (written by the pipeline's tile stage with PNG emission
enabled): a directory of 64x64 RGB PNGs plus a manifest CSV
``imagelets.csv`` with header ``filename,imagelet_id``.
"""

from __future__ import annotations

import csv
import logging
import os

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

MANIFEST = "imagelets.csv"
SIZE = 64


class ImageletDirError(Exception):
    pass


def load_imagelets(directory: str) -> tuple[list[str], np.ndarray, list[dict]]:
    """Returns (imagelet ids, N x 64 x 64 x 3 uint8 pixels, skipped report),
    sorted by imagelet id. Unreadable or mis-sized files are skipped with a
    warning and listed in the report."""
    manifest = os.path.join(directory, MANIFEST)
    if not os.path.exists(manifest):
        raise ImageletDirError(f"manifest not found: {manifest}")
    entries: list[tuple[str, str]] = []
    with open(manifest, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["filename", "imagelet_id"]:
            raise ImageletDirError(f"{manifest}: expected header filename,imagelet_id")
        for row in reader:
            entries.append((row[0], row[1]))
    entries.sort(key=lambda e: e[1])

    ids: list[str] = []
    pixels: list[np.ndarray] = []
    skipped: list[dict] = []
    for fname, iid in entries:
        path = os.path.join(directory, fname)
        try:
            img = Image.open(path)
            img.load()
            if img.mode != "RGB":
                img = img.convert("RGB")
            arr = np.asarray(img, dtype=np.uint8)
            if arr.shape != (SIZE, SIZE, 3):
                raise ValueError(f"expected {SIZE}x{SIZE}x3, got {arr.shape}")
        except Exception as exc:  # noqa: BLE001 - skip-and-report contract
            log.warning("skipping imagelet %s (%s): %s", iid, fname, exc)
            skipped.append({"imagelet_id": iid, "filename": fname, "error": str(exc)})
            continue
        ids.append(iid)
        pixels.append(arr)
    if not ids:
        raise ImageletDirError(f"no readable imagelets in {directory}")
    return ids, np.stack(pixels), skipped


def write_embedding_csv(ids: list[str], Z: np.ndarray, path: str) -> None:
    """The shared embedding format: header imagelet_id,z_0,...,z_{D-1};
    rows in imagelet-id order."""
    dim = Z.shape[1]
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["imagelet_id"] + [f"z_{i}" for i in range(dim)])
        for i in order:
            w.writerow([ids[i]] + [format(float(v), ".8g") for v in Z[i]])
