"""IDX (MNIST) parsing, experiment configuration files and result tables."""
from __future__ import annotations

import csv
import dataclasses
import gzip
import hashlib
import io
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import IdxFormatError, IdxLengthError, InvalidArgumentError, MissingDataError
from .models import Dataset
from .rng import DATA_STREAM, make_rng

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
DATA_DIR_ENV = "SKETCHCL_DATA_DIR"
MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
FETCH_HINT = ("download the four MNIST IDX files (train-images-idx3-ubyte.gz, "
              "train-labels-idx1-ubyte.gz, t10k-images-idx3-ubyte.gz, t10k-labels-idx1-ubyte.gz) "
              f"into a directory and pass it with --data-dir or ${DATA_DIR_ENV}")


def _read_bytes(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _header(raw, expected_magic, ndims, path):
    if len(raw) < 4:
        raise IdxLengthError(f"{path}: file too short for an IDX header ({len(raw)} bytes)")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    need = 4 + 4 * ndims
    if len(raw) < need:
        raise IdxLengthError(f"{path}: header truncated ({len(raw)} of {need} bytes)")
    dims = struct.unpack(f">{ndims}I", raw[4:need])
    size = int(np.prod(dims, dtype=np.int64))
    if len(raw) - need < size:
        raise IdxLengthError(f"{path}: payload has {len(raw) - need} bytes, header promises {size}")
    return dims, np.frombuffer(raw, dtype=np.uint8, count=size, offset=need)


def load_idx_images(path) -> np.ndarray:
    """Images as a uint8 array (n, rows, cols); gzip input is decompressed transparently."""
    dims, payload = _header(_read_bytes(path), IMAGES_MAGIC, 3, path)
    return payload.reshape(dims).copy()


def load_idx_labels(path) -> np.ndarray:
    """Labels as an int64 vector with values 0-9."""
    dims, payload = _header(_read_bytes(path), LABELS_MAGIC, 1, path)
    if payload.size and payload.max() > 9:
        raise IdxFormatError(f"{path}: label value {int(payload.max())} outside 0-9")
    return payload.astype(np.int64)


def idx_bytes(array, magic=None) -> bytes:
    """Serialize a uint8 array as IDX (3-d images or 1-d labels)."""
    a = np.asarray(array)
    if a.ndim not in (1, 3):
        raise InvalidArgumentError("IDX writer handles 1-d labels or 3-d images")
    if np.any(a < 0) or np.any(a > 255):
        raise InvalidArgumentError("IDX values must fit in unsigned bytes")
    if magic is None:
        magic = IMAGES_MAGIC if a.ndim == 3 else LABELS_MAGIC
    head = struct.pack(f">I{a.ndim}I", magic, *a.shape)
    return head + a.astype(np.uint8).tobytes()


def write_idx(path, array, compress=None):
    data = idx_bytes(array)
    compress = str(path).endswith(".gz") if compress is None else compress
    if compress:
        data = gzip.compress(data, mtime=0)
    Path(path).write_bytes(data)


def resolve_data_dir(data_dir=None) -> Path:
    d = data_dir or os.environ.get(DATA_DIR_ENV)
    if not d:
        raise MissingDataError(f"no MNIST directory given; {FETCH_HINT}")
    return Path(d)


def _find(data_dir: Path, stem):
    for name in (stem, stem + ".gz"):
        if (data_dir / name).is_file():
            return data_dir / name
    raise MissingDataError(f"{data_dir / stem}[.gz] not found; {FETCH_HINT}")


def mnist_available(data_dir=None) -> bool:
    try:
        d = resolve_data_dir(data_dir)
        for stem in MNIST_FILES.values():
            _find(d, stem)
    except MissingDataError:
        return False
    return True


def load_mnist(data_dir=None, subsample: Optional[int] = None, seed=0):
    """Train and test ``Dataset`` objects with pixels scaled to [0, 1].

    ``subsample`` keeps a seeded random subset of that many training examples.
    """
    d = resolve_data_dir(data_dir)
    paths = {k: _find(d, v) for k, v in MNIST_FILES.items()}
    out = []
    for split in ("train", "test"):
        images = load_idx_images(paths[f"{split}_images"])
        labels = load_idx_labels(paths[f"{split}_labels"])
        if images.shape[0] != labels.size:
            raise IdxFormatError(f"{split}: {images.shape[0]} images but {labels.size} labels")
        if split == "train" and subsample is not None and subsample < labels.size:
            if subsample < 1:
                raise InvalidArgumentError("subsample must be positive")
            keep = np.sort(make_rng(seed, DATA_STREAM, 101).permutation(labels.size)[:subsample])
            images, labels = images[keep], labels[keep]
        X = images.reshape(images.shape[0], -1).astype(float) / 255.0
        out.append(Dataset.classification(X, labels, 10, {
            "source": str(d), "split": split, "pixel_scale": "x/255", "shape": images.shape[1:]}))
    return out[0], out[1]


# ----------------------------------------------------------------- configuration

@dataclass
class ExperimentConfig:
    """Everything needed to rerun an experiment; stored as JSON."""

    experiment: str
    methods: list = field(default_factory=lambda: ["rsj-100"])
    lam: float = 1.0
    group_scales: dict = field(default_factory=dict)
    num_tasks: int = 10
    pairs: Optional[list] = None
    model: str = "random-features"
    num_features: Optional[int] = None
    hidden_units: int = 100
    subsample: Optional[int] = None
    seeds: list = field(default_factory=lambda: [0])
    stepsize: object = "auto"
    max_iters: int = 1000
    grad_tol: float = 1e-8
    batch_size: object = "full"
    data_dir: Optional[str] = None
    out: Optional[str] = None
    format: str = "csv"
    deterministic: bool = False
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise InvalidArgumentError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())

    def config_hash(self):
        """First 12 hex digits of the SHA-256 of the canonical JSON (output path excluded)."""
        d = self.to_dict()
        d.pop("out", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


# ----------------------------------------------------------------- results

RESULT_COLUMNS = ("experiment", "config_hash", "task_index", "method", "s", "lam", "seed",
                  "metric", "value", "memory_cost", "wall_time")


@dataclass
class ResultRow:
    experiment: str
    task_index: int
    method: str
    value: float
    metric: str = "accuracy"
    s: Optional[int] = None
    lam: float = 0.0
    seed: int = 0
    memory_cost: int = 0
    wall_time: float = 0.0
    config_hash: str = ""

    def __post_init__(self):
        if self.metric == "accuracy" and not 0.0 <= self.value <= 1.0:
            raise InvalidArgumentError(f"accuracy {self.value} outside [0, 1]")
        if self.memory_cost < 0:
            raise InvalidArgumentError("memory_cost must be nonnegative")

    def as_dict(self):
        return {c: getattr(self, c) for c in RESULT_COLUMNS}


def fmt_number(x):
    """Integers verbatim, floats with 6 significant digits."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.6g}"
    return str(x)


def _sort_key(row):
    return (row.task_index, row.method, row.seed)


def _json_value(x):
    if x is None or isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    return float(fmt_number(x))


def format_records(records: Sequence[dict], fmt="csv", columns=None) -> str:
    """Render plain dict records as CSV (header first) or a JSON array."""
    if not records:
        raise InvalidArgumentError("nothing to write")
    if columns is None:
        columns = []
        for r in records:
            columns += [k for k in r if k not in columns]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in records:
            w.writerow([fmt_number(r.get(c)) for c in columns])
        text = buf.getvalue()
    elif fmt == "json":
        text = json.dumps([{c: _json_value(r.get(c)) for c in columns} for r in records], indent=1) + "\n"
    else:
        raise InvalidArgumentError(f"unknown format {fmt!r}")
    return text


def write_records(records: Sequence[dict], path, fmt="csv", columns=None):
    Path(path).write_text(format_records(records, fmt, columns))


def results_to_dat(rows: Sequence[ResultRow]) -> str:
    """Wide whitespace table: ``task_index`` then one column per method (seed-averaged)."""
    methods = sorted({r.method for r in rows})
    tasks = sorted({r.task_index for r in rows})
    lines = [" ".join(["task_index"] + methods)]
    for t in tasks:
        vals = []
        for m in methods:
            v = [r.value for r in rows if r.task_index == t and r.method == m]
            vals.append(fmt_number(float(np.mean(v))) if v else "nan")
        lines.append(" ".join([str(t)] + vals))
    return "\n".join(lines) + "\n"


def format_results(rows: Sequence[ResultRow], fmt="csv") -> str:
    """Rows sorted by (task_index, method, seed); numbers with 6 significant digits."""
    if not rows:
        raise InvalidArgumentError("rows must be nonempty")
    rows = sorted(rows, key=_sort_key)
    if fmt == "dat":
        return results_to_dat(rows)
    return format_records([r.as_dict() for r in rows], fmt, RESULT_COLUMNS)


def write_results(rows: Sequence[ResultRow], path, fmt="csv"):
    Path(path).write_text(format_results(rows, fmt))


_INT_FIELDS = {"task_index", "seed", "memory_cost"}
_FLOAT_FIELDS = {"value", "lam", "wall_time"}


def _coerce(key, v):
    if v == "" or v is None:
        return None
    if key in _INT_FIELDS:
        return int(v)
    if key in _FLOAT_FIELDS:
        return float(v)
    if key == "s":
        return int(v)
    return str(v)


def read_results(path, fmt=None) -> list:
    """Inverse of :func:`write_results` for CSV and JSON files."""
    fmt = fmt or Path(path).suffix.lstrip(".")
    text = Path(path).read_text()
    if fmt == "csv":
        records = list(csv.DictReader(io.StringIO(text)))
    elif fmt == "json":
        records = json.loads(text)
    else:
        raise InvalidArgumentError(f"cannot read results format {fmt!r}")
    rows = []
    for rec in records:
        kw = {k: _coerce(k, rec.get(k)) for k in RESULT_COLUMNS}
        for k in ("lam", "wall_time"):
            kw[k] = kw[k] if kw[k] is not None else 0.0
        kw["config_hash"] = kw["config_hash"] or ""
        rows.append(ResultRow(**kw))
    return rows
