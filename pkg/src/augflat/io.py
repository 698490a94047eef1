"""Dataset files (IDX, CSV) and parameter checkpoints.

IDX files follow the classic handwritten-digit layout: a big-endian magic
word ``0x000008DD`` (``08`` = unsigned byte, ``DD`` = number of dims) followed
by big-endian uint32 dimensions and the raw bytes. Images are rescaled to the
unit range on load and back to bytes on save.

A checkpoint is a raw little-endian float vector plus a JSON sidecar at
``<path>.json`` describing architecture, dtype, seed and layout.
"""

from __future__ import annotations

import csv
import glob
import json
import os
import struct

import numpy as np

from .data import Dataset
from .nnet import Model

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def read_idx(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic >> 8 != 0x08:
        raise ValueError(f"{path}: unsupported IDX type/magic {magic:#010x}")
    ndim = magic & 0xFF
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    body = np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim)
    if body.size != int(np.prod(dims)):
        raise ValueError(f"{path}: expected {int(np.prod(dims))} bytes, found {body.size}")
    return body.reshape(dims)


def write_idx(path: str, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("IDX writer expects uint8 data")
    header = struct.pack(">I", 0x0800 | array.ndim)
    header += struct.pack(f">{array.ndim}I", *array.shape)
    with open(path, "wb") as fh:
        fh.write(header + array.tobytes())


def load_idx(images_path: str, labels_path: str, name: str | None = None,
             n_classes: int | None = None) -> Dataset:
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim == 3:
        shape = (1, images.shape[1], images.shape[2])
    elif images.ndim == 4:
        shape = tuple(images.shape[1:])
    else:
        raise ValueError("IDX images must have 3 or 4 dims")
    if labels.ndim != 1 or len(labels) != len(images):
        raise ValueError("IDX labels must be one byte per image")
    x = images.reshape(len(images), -1).astype(np.float64) / 255.0
    c = n_classes or int(labels.max()) + 1
    return Dataset(x, labels.astype(np.int64), c, name or os.path.basename(images_path), shape)


def save_idx(dataset: Dataset, images_path: str, labels_path: str) -> None:
    shape = dataset.resolved_image_shape()
    pix = np.clip(np.rint(dataset.x * 255.0), 0, 255).astype(np.uint8)
    if shape[0] == 1:
        pix = pix.reshape(len(dataset), shape[1], shape[2])
    else:
        pix = pix.reshape(len(dataset), *shape)
    write_idx(images_path, pix)
    write_idx(labels_path, dataset.y.astype(np.uint8))


def load_csv(path: str, name: str | None = None, n_classes: int | None = None,
             image_shape=None) -> Dataset:
    """Rows of ``label,feature_1,...,feature_n``; a non-numeric first row is a header."""
    rows = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                if i == 0:
                    continue
                raise
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise ValueError(f"{path}: expected label plus at least one feature per row")
    y = arr[:, 0]
    if not np.all(y == np.round(y)):
        raise ValueError(f"{path}: labels must be integers")
    y = y.astype(np.int64)
    c = n_classes or int(y.max()) + 1
    return Dataset(arr[:, 1:], y, c, name or os.path.basename(path), image_shape)


def save_csv(dataset: Dataset, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for xi, yi in zip(dataset.x, dataset.y):
            w.writerow([int(yi), *(repr(float(v)) for v in xi)])


def load_dataset(spec: str, n_classes: int | None = None) -> Dataset:
    """Load from ``file.csv``, ``images.idx,labels.idx`` or a directory holding one
    ``*images*`` and one ``*labels*`` IDX file."""
    if "," in spec:
        images, labels = spec.split(",", 1)
        return load_idx(images, labels, n_classes=n_classes)
    if os.path.isdir(spec):
        imgs = sorted(glob.glob(os.path.join(spec, "*images*")))
        labs = sorted(glob.glob(os.path.join(spec, "*labels*")))
        if len(imgs) != 1 or len(labs) != 1:
            raise ValueError(f"{spec}: need exactly one *images* and one *labels* file")
        return load_idx(imgs[0], labs[0], name=os.path.basename(os.path.normpath(spec)),
                        n_classes=n_classes)
    if spec.lower().endswith(".csv"):
        return load_csv(spec, n_classes=n_classes)
    raise ValueError(f"cannot tell the format of {spec!r}")


def save_dataset(dataset: Dataset, path: str, fmt: str) -> list[str]:
    """Write ``dataset`` as ``csv`` (one file) or ``idx`` (an images/labels pair)."""
    if fmt == "csv":
        save_csv(dataset, path)
        return [path]
    if fmt == "idx":
        os.makedirs(path, exist_ok=True)
        ip = os.path.join(path, "images.idx3-ubyte")
        lp = os.path.join(path, "labels.idx1-ubyte")
        save_idx(dataset, ip, lp)
        return [ip, lp]
    raise ValueError(f"unknown dataset format {fmt!r}")


def save_checkpoint(path: str, model: Model, params, dtype: str = "float64",
                    seed: int | None = None) -> None:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (model.param_count,):
        raise ValueError("parameter vector does not match the model")
    if dtype not in ("float32", "float64"):
        raise ValueError("dtype must be float32 or float64")
    params.astype("<f4" if dtype == "float32" else "<f8").tofile(path)
    meta = {"arch": model.to_dict(), "dtype": dtype, "seed": seed,
            "layout": "layer-major", "param_count": model.param_count}
    with open(path + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_checkpoint(path: str) -> tuple[Model, np.ndarray, dict]:
    with open(path + ".json") as fh:
        meta = json.load(fh)
    if meta.get("layout") != "layer-major":
        raise ValueError("unsupported parameter layout")
    model = Model.from_dict(meta["arch"])
    dt = "<f4" if meta["dtype"] == "float32" else "<f8"
    params = np.fromfile(path, dtype=dt).astype(np.float64)
    if params.shape != (model.param_count,):
        raise ValueError("checkpoint size does not match its architecture")
    return model, params, meta
