"""Dataset ingestion, the synthetic interval task, augmentation and the TensorFile format.

TensorFile layout (all integers little-endian)::

    b"SPT1" | u8 dtype code (0=f32, 1=f64, 2=u8) | u8 rank | rank x u64 extents | payload

The payload is the row-major array in little-endian byte order.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SPT1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.uint8): 2}


class TensorFileError(ValueError):
    pass


class ArffError(ValueError):
    pass


# ---------------------------------------------------------------------------
# TensorFile


def write_tensor_file(path, array) -> None:
    """Write ``array`` as a TensorFile. Scalars are stored as shape (1,)."""
    arr = np.asarray(getattr(array, "data", array))
    if arr.ndim == 0:
        arr = arr.reshape(1)
    code = _CODES.get(arr.dtype)
    if code is None:
        raise TensorFileError(f"unsupported dtype {arr.dtype}; use float32, float64 or uint8")
    if arr.ndim > 255:
        raise TensorFileError("rank above 255")
    header = MAGIC + struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    Path(path).write_bytes(header + payload)


def read_tensor_file(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 6 or raw[:4] != MAGIC:
        raise TensorFileError(f"{path}: bad magic {raw[:4]!r}")
    code, rank = raw[4], raw[5]
    if code not in _DTYPES:
        raise TensorFileError(f"{path}: unknown dtype code {code}")
    head = 6 + 8 * rank
    if len(raw) < head:
        raise TensorFileError(f"{path}: truncated header")
    shape = struct.unpack(f"<{rank}Q", raw[6:head])
    dtype = _DTYPES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    actual = len(raw) - head
    if actual != expected:
        raise TensorFileError(f"{path}: payload length {actual} bytes, expected {expected}")
    return np.frombuffer(raw, dtype=dtype, offset=head).reshape(shape).astype(dtype.newbyteorder("="))


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Splits:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.int64)
        self.val = np.asarray(self.val, dtype=np.int64)
        self.test = np.asarray(self.test, dtype=np.int64)

    def __getitem__(self, name: str) -> np.ndarray:
        if name not in ("train", "val", "test"):
            raise KeyError(f"unknown split {name!r}")
        return getattr(self, name)


def seeded_splits(n: int, seed: int = 0, fractions=(0.8, 0.1, 0.1)) -> Splits:
    """Deterministic shuffled split of ``range(n)``."""
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return Splits(order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])


def sized_splits(n_train: int, n_val: int, n_test: int) -> Splits:
    idx = np.arange(n_train + n_val + n_test)
    return Splits(idx[:n_train], idx[n_train:n_train + n_val], idx[n_train + n_val:])


@dataclass
class MultiLabelDataset:
    features: np.ndarray
    labels: np.ndarray
    splits: Splits
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.features) != len(self.labels):
            raise ValueError(f"row count mismatch: {len(self.features)} features, {len(self.labels)} labels")
        if self.labels.size and not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be binary")

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def label_dim(self) -> int:
        return self.labels.shape[1]

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.splits[name]
        return self.features[idx], self.labels[idx]


@dataclass
class SegmentationDataset:
    images: np.ndarray  # N, H, W, 3 in [0, 1]
    masks: np.ndarray  # N, H, W, C one-hot
    splits: Splits
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.images) != len(self.masks):
            raise ValueError("image/mask count mismatch")
        if self.masks.size and not np.allclose(self.masks.sum(axis=-1), 1.0):
            raise ValueError("masks must be one-hot over the class axis")

    @property
    def classes(self) -> int:
        return self.masks.shape[-1]

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.splits[name]
        return self.images[idx], self.masks[idx]


# ---------------------------------------------------------------------------
# ARFF


_ATTR_RE = re.compile(r"@attribute\s+('(?:[^']|\\')*'|\"[^\"]*\"|\S+)\s+(.+)$", re.IGNORECASE)


def _parse_attribute(line: str, lineno: int) -> str:
    m = _ATTR_RE.match(line)
    if not m:
        raise ArffError(f"line {lineno}: malformed @attribute declaration")
    kind = m.group(2).strip()
    low = kind.lower()
    if low in ("numeric", "real", "integer"):
        return "numeric"
    if kind.startswith("{") and kind.endswith("}"):
        values = [v.strip().strip("'\"") for v in kind[1:-1].split(",")]
        if set(values) <= {"0", "1"}:
            return "numeric"
    raise ArffError(f"line {lineno}: unsupported attribute type {kind!r}")


def _parse_arff(path) -> tuple[int, list[tuple[int, dict[int, float] | list[float]]]]:
    n_attrs = 0
    rows = []
    in_data = False
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("%"):
                continue
            if not in_data:
                low = line.lower()
                if low.startswith("@relation"):
                    continue
                if low.startswith("@attribute"):
                    _parse_attribute(line, lineno)
                    n_attrs += 1
                    continue
                if low.startswith("@data"):
                    in_data = True
                    continue
                raise ArffError(f"line {lineno}: unexpected header line {line[:40]!r}")
            if line.startswith("{"):
                if not line.endswith("}"):
                    raise ArffError(f"line {lineno}: truncated sparse row")
                entries: dict[int, float] = {}
                body = line[1:-1].strip()
                for item in filter(None, (s.strip() for s in body.split(","))):
                    parts = item.split()
                    if len(parts) != 2:
                        raise ArffError(f"line {lineno}: malformed sparse entry {item!r}")
                    try:
                        idx, val = int(parts[0]), float(parts[1].strip("'\""))
                    except ValueError:
                        raise ArffError(f"line {lineno}: malformed sparse entry {item!r}") from None
                    if not 0 <= idx < n_attrs:
                        raise ArffError(f"line {lineno}: attribute index {idx} out of range [0, {n_attrs})")
                    entries[idx] = val
                rows.append((lineno, entries))
            else:
                vals = [v.strip().strip("'\"") for v in line.split(",")]
                if len(vals) != n_attrs:
                    raise ArffError(f"line {lineno}: expected {n_attrs} values, got {len(vals)}")
                try:
                    rows.append((lineno, [float(v) for v in vals]))
                except ValueError:
                    raise ArffError(f"line {lineno}: non-numeric value") from None
    if not in_data:
        raise ArffError(f"{path}: truncated file, no @data section")
    return n_attrs, rows


def read_arff_arrays(path, label_count: int, labels_first: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Parse a sparse or dense multi-label ARFF file into (features, labels)."""
    n_attrs, rows = _parse_arff(path)
    if not 0 < label_count < n_attrs:
        raise ArffError(f"{path}: label_count {label_count} incompatible with {n_attrs} attributes")
    dense = np.zeros((len(rows), n_attrs))
    for r, (_, row) in enumerate(rows):
        if isinstance(row, dict):
            for idx, val in row.items():
                dense[r, idx] = val
        else:
            dense[r] = row
    if labels_first:
        labels, features = dense[:, :label_count], dense[:, label_count:]
    else:
        features, labels = dense[:, :-label_count], dense[:, -label_count:]
    bad = np.argwhere(~np.isin(labels, (0.0, 1.0)))
    if len(bad):
        lineno = rows[bad[0][0]][0]
        raise ArffError(f"line {lineno}: non-binary label value {labels[tuple(bad[0])]:g}")
    return features, labels.astype(np.float64)


def load_arff_multilabel(path, label_count: int, labels_first: bool = False, seed: int = 0,
                         test_path=None, val_fraction: float = 0.1) -> MultiLabelDataset:
    """Load a multi-label ARFF dataset.

    With a single file the rows get a seeded 80/10/10 split. With ``test_path``
    the published train/test split is kept and the validation rows are a seeded
    ``val_fraction`` of the training file.
    """
    x, y = read_arff_arrays(path, label_count, labels_first)
    meta = {"source": str(path)}
    if test_path is None:
        splits = seeded_splits(len(x), seed)
    else:
        xt, yt = read_arff_arrays(test_path, label_count, labels_first)
        if xt.shape[1] != x.shape[1]:
            raise ArffError(f"{test_path}: feature count {xt.shape[1]} differs from {x.shape[1]}")
        order = np.random.default_rng(seed).permutation(len(x))
        n_val = int(round(val_fraction * len(x)))
        splits = Splits(np.sort(order[n_val:]), np.sort(order[:n_val]), np.arange(len(x), len(x) + len(xt)))
        x, y = np.vstack([x, xt]), np.vstack([y, yt])
        meta["test_source"] = str(test_path)
    return MultiLabelDataset(x, y, splits, meta)


# ---------------------------------------------------------------------------
# synthetic multi-label task


def interval_labels(n: int, m: int, k: int, rng: np.random.Generator, max_len: int | None = None) -> np.ndarray:
    """Binary label vectors, each the union of ``k`` random contiguous runs."""
    max_len = max_len or max(1, m // 4)
    y = np.zeros((n, m))
    for i in range(n):
        for _ in range(k):
            length = int(rng.integers(1, max_len + 1))
            start = int(rng.integers(0, m - length + 1))
            y[i, start:start + length] = 1.0
    return y


def gen_synthetic_multilabel(n: int, d: int, m: int, k_intervals: int, noise: float, seed: int,
                             max_len: int | None = None) -> MultiLabelDataset:
    """Synthetic task whose labels are unions of contiguous intervals.

    Features are ``x = A y* + noise * N(0, I)`` for a fixed random ``A`` of
    shape (d, M) drawn from the same seed. Rows are split 80/10/10 in order.
    """
    if min(n, d, m, k_intervals) <= 0:
        raise ValueError("n, d, M and k_intervals must be positive")
    if m < k_intervals:
        raise ValueError(f"M={m} smaller than k_intervals={k_intervals}")
    if not 0.0 <= noise < 0.5:
        raise ValueError(f"noise must be in [0, 0.5), got {noise}")
    rng = np.random.default_rng(seed)
    mixing = rng.normal(0.0, 1.0 / np.sqrt(m), size=(d, m))
    y = interval_labels(n, m, k_intervals, rng, max_len)
    x = y @ mixing.T + noise * rng.normal(size=(n, d))
    n_train = int(round(0.8 * n))
    n_val = int(round(0.1 * n))
    meta = {"kind": "synthetic", "seed": seed, "noise": noise, "k_intervals": k_intervals}
    ds = MultiLabelDataset(x, y, sized_splits(n_train, n_val, n - n_train - n_val), meta)
    ds.meta["mixing"] = mixing
    return ds


def count_runs(y: np.ndarray) -> np.ndarray:
    """Number of maximal runs of ones along the last axis."""
    y = np.asarray(y) > 0.5
    starts = y[..., :1].astype(int) + (y[..., 1:] & ~y[..., :-1]).sum(axis=-1, keepdims=True)
    return starts[..., 0]


def least_squares_decoder(x: np.ndarray, mixing: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Invert the synthetic mixing by least squares and binarize."""
    est, *_ = np.linalg.lstsq(mixing, np.asarray(x).T, rcond=None)
    return (est.T >= threshold).astype(np.float64)


# ---------------------------------------------------------------------------
# augmentation


def augment_crop_mirror(image, mask, crop: int, seed=None, mirror: bool | None = None):
    """Random ``crop`` x ``crop`` window plus optional horizontal flip, applied jointly.

    ``seed`` may be an int or a numpy Generator. ``mirror`` forces the flip
    decision when not None.
    """
    image = np.asarray(image)
    mask = np.asarray(mask)
    h, w = image.shape[:2]
    if mask.shape[:2] != (h, w):
        raise ValueError(f"image {image.shape} and mask {mask.shape} differ spatially")
    if crop > h or crop > w:
        raise ValueError(f"crop {crop} larger than image {h}x{w}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    top = int(rng.integers(0, h - crop + 1))
    left = int(rng.integers(0, w - crop + 1))
    flip = bool(rng.integers(0, 2)) if mirror is None else mirror
    img = image[top:top + crop, left:left + crop]
    msk = mask[top:top + crop, left:left + crop]
    if flip:
        img, msk = img[:, ::-1], msk[:, ::-1]
    return np.ascontiguousarray(img), np.ascontiguousarray(msk)


def augment_batch(images, masks, crop: int, rng: np.random.Generator):
    pairs = [augment_crop_mirror(i, m, crop, rng) for i, m in zip(images, masks)]
    return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


# ---------------------------------------------------------------------------
# manifests


def read_keyvalue(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def write_keyvalue(path, values: dict) -> None:
    lines = [f"{k}={v}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


MANIFEST_KEYS = {
    "kind", "arff", "arff_test", "label_count", "labels_first", "features", "labels",
    "images", "masks", "n_train", "n_val", "n_test", "split_seed", "mixing",
}


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def _require(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    return path


def load_manifest(path):
    """Load the dataset described by a key=value manifest.

    ``kind`` is ``arff`` (keys ``arff``, optional ``arff_test``, ``label_count``),
    ``tensor`` (``features``/``labels`` TensorFiles) or ``segmentation``
    (``images``/``masks`` TensorFiles). Tensor kinds take ``n_train``/``n_val``/
    ``n_test`` split sizes, otherwise a seeded 80/10/10 split. Relative paths
    resolve against the manifest's directory.
    """
    path = Path(_require(Path(path)))
    vals = read_keyvalue(path)
    unknown = set(vals) - MANIFEST_KEYS
    if unknown:
        raise ValueError(f"{path}: unknown manifest keys {sorted(unknown)}")
    base = path.parent
    kind = vals.get("kind", "tensor")
    seed = int(vals.get("split_seed", 0))

    def splits_for(n):
        if "n_train" in vals:
            sizes = [int(vals.get(k, 0)) for k in ("n_train", "n_val", "n_test")]
            if sum(sizes) != n:
                raise ValueError(f"{path}: split sizes {sizes} do not sum to {n} rows")
            return sized_splits(*sizes)
        return seeded_splits(n, seed)

    if kind == "arff":
        test = vals.get("arff_test")
        ds = load_arff_multilabel(
            _require(_resolve(base, vals["arff"])), int(vals["label_count"]),
            labels_first=vals.get("labels_first", "false").lower() == "true", seed=seed,
            test_path=_require(_resolve(base, test)) if test else None)
    elif kind == "tensor":
        x = read_tensor_file(_require(_resolve(base, vals["features"]))).astype(np.float64)
        y = read_tensor_file(_require(_resolve(base, vals["labels"]))).astype(np.float64)
        ds = MultiLabelDataset(x, y, splits_for(len(x)))
        if "mixing" in vals:
            ds.meta["mixing"] = read_tensor_file(_require(_resolve(base, vals["mixing"])))
    elif kind == "segmentation":
        imgs = read_tensor_file(_require(_resolve(base, vals["images"])))
        masks = read_tensor_file(_require(_resolve(base, vals["masks"])))
        if imgs.dtype == np.uint8:
            imgs = imgs / 255.0
        ds = SegmentationDataset(imgs.astype(np.float64), masks.astype(np.float64), splits_for(len(imgs)))
    else:
        raise ValueError(f"{path}: unknown dataset kind {kind!r}")
    ds.meta["manifest"] = str(path.resolve())
    return ds


def write_synthetic(out_dir, ds: MultiLabelDataset) -> Path:
    """Write a synthetic dataset as TensorFiles plus a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_tensor_file(out / "features.spt", ds.features)
    write_tensor_file(out / "labels.spt", ds.labels)
    entries = {"kind": "tensor", "features": "features.spt", "labels": "labels.spt",
               "n_train": len(ds.splits.train), "n_val": len(ds.splits.val), "n_test": len(ds.splits.test)}
    if "mixing" in ds.meta:
        write_tensor_file(out / "mixing.spt", ds.meta["mixing"])
        entries["mixing"] = "mixing.spt"
    write_keyvalue(out / "manifest.txt", entries)
    return out / "manifest.txt"
