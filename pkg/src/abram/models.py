"""Desk-scale classifiers, datasets and checkpoints.

The MLP is affine -> tanh stacks followed by softmax cross-entropy, with a
hand-written backward pass giving both parameter and input gradients.
Parameters live in one flat float64 vector; layer ``l`` stores its weight
matrix ``(fan_in, fan_out)`` row-major followed by its bias.
"""
from __future__ import annotations

import csv
import gzip
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, ParseError
from .rng import derive_seed, stream

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


# datasets -------------------------------------------------------------------

@dataclass
class Dataset:
    features: np.ndarray  # (K, d)
    labels: np.ndarray  # (K,)
    name: str = "data"
    n_classes: int | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise InvalidInputError("dataset needs a (K, d) feature matrix with K >= 1")
        if self.labels.shape != (self.features.shape[0],):
            raise InvalidInputError("one label per feature row required")
        if not np.all(np.isfinite(self.features)):
            raise InvalidInputError("features must be finite")
        if np.any(self.labels < 0):
            raise InvalidInputError("labels must be nonnegative class indices")
        if self.n_classes is None:
            self.n_classes = int(self.labels.max()) + 1
        elif np.any(self.labels >= self.n_classes):
            raise InvalidInputError("label out of range for class count")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, idx, name=None):
        return Dataset(self.features[idx], self.labels[idx], name or self.name, self.n_classes)

    def split(self, n_first):
        return self.subset(slice(0, n_first)), self.subset(slice(n_first, None))


def make_blobs(n_per_class: int, classes: int, dim: int, spread: float, seed: int = 0,
               scale: float = 1.0) -> Dataset:
    """Gaussian clusters around ``classes`` equidistant centres.

    Centres are ``scale * e_k / sqrt(2)`` (pairwise distance ``scale``), so
    ``dim >= classes`` is required.  Rows are interleaved by class.
    """
    if dim < classes:
        raise InvalidInputError("make_blobs needs dim >= classes")
    rng = stream(derive_seed(seed, 0xB10B), 0)
    centres = np.zeros((classes, dim))
    centres[np.arange(classes), np.arange(classes)] = scale / np.sqrt(2.0)
    labels = np.tile(np.arange(classes), n_per_class)
    feats = centres[labels] + spread * rng.standard_normal((labels.size, dim))
    return Dataset(feats, labels, f"blobs{classes}x{n_per_class}", classes)


def make_prototypes(n: int, classes: int = 3, dim: int = 784, spread: float = 0.2, seed: int = 0,
                    density: float = 0.2, proto_seed: int = 0) -> Dataset:
    """Pixel-range stand-in for a digit subset.

    Each class has a sparse binary prototype in ``[0, 1]^dim`` (drawn from
    ``proto_seed``, shared between train and test splits); a sample is its
    prototype at a random contrast in ``[0.5, 1]`` plus Gaussian pixel noise,
    clipped to ``[0, 1]``.  Labels cycle through the classes.
    """
    if n < 1 or classes < 2:
        raise InvalidInputError("make_prototypes needs n >= 1 and classes >= 2")
    protos = (stream(derive_seed(proto_seed, 0x9807), 0).random((classes, dim)) < density).astype(float)
    rng = stream(derive_seed(seed, 0x5A3), 0)
    labels = np.arange(n) % classes
    contrast = rng.uniform(0.5, 1.0, (n, 1))
    feats = np.clip(protos[labels] * contrast + spread * rng.standard_normal((n, dim)), 0.0, 1.0)
    return Dataset(feats, labels, f"prototypes{classes}x{n}", classes)


def _idx_dtype(code, offset):
    table = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
    if code not in table:
        raise ParseError(f"unknown IDX element type 0x{code:02x} at byte {offset}", offset)
    return np.dtype(table[code])


def read_idx(path) -> np.ndarray:
    """Parse an IDX file (optionally gzip-compressed) into an array."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise ParseError(f"{path}: truncated header at byte {len(raw)}", len(raw))
    zero, code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or ndim == 0:
        raise ParseError(f"{path}: bad magic 0x{int.from_bytes(raw[:4], 'big'):08x} at byte 0", 0)
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise ParseError(f"{path}: truncated dimension header at byte {len(raw)}", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    dtype = _idx_dtype(code, 2)
    need = int(np.prod(dims)) * dtype.itemsize
    have = len(raw) - header_end
    if have < need:
        raise ParseError(
            f"{path}: truncated payload, expected {need} bytes after byte {header_end} "
            f"but file ends at byte {len(raw)}", len(raw))
    return np.frombuffer(raw, dtype=dtype, count=int(np.prod(dims)), offset=header_end).reshape(dims)


def load_idx(images_path, labels_path=None, name=None) -> Dataset:
    """Pair an IDX image file (magic 0x803) with its label file (0x801).

    Pixels are flattened and scaled to [0, 1].  When ``labels_path`` is
    omitted it is guessed by the MNIST naming convention.
    """
    images_path = Path(images_path)
    if labels_path is None:
        labels_path = images_path.with_name(images_path.name.replace("images-idx3", "labels-idx1"))
    for p, magic in ((images_path, IDX_IMAGES), (labels_path, IDX_LABELS)):
        opener = gzip.open if Path(p).suffix == ".gz" else open
        with opener(p, "rb") as f:
            head = f.read(4)
        if len(head) == 4 and int.from_bytes(head, "big") != magic:
            raise ParseError(f"{p}: bad magic 0x{int.from_bytes(head, 'big'):08x} "
                             f"(expected 0x{magic:08x}) at byte 0", 0)
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ParseError(f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    feats = images.reshape(images.shape[0], -1).astype(float) / 255.0
    return Dataset(feats, labels.astype(np.int64), name or images_path.stem)


def write_idx(path, array: np.ndarray):
    """Write an unsigned-byte IDX file (used for tests and fixtures)."""
    array = np.asarray(array, dtype=np.uint8)
    header = struct.pack(">HBB", 0, 0x08, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.tobytes())


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"):
        if (directory / name).exists():
            return directory / name
    raise FileNotFoundError(f"no {stem}[.gz] in {directory}")


def load_mnist_subset(directory, split: str = "train", n: int = 2000, classes: int = 3) -> Dataset:
    """First ``n`` examples with label < ``classes`` from the standard MNIST
    IDX files in ``directory`` (``train-*`` or ``t10k-*``)."""
    if split not in ("train", "test"):
        raise InvalidInputError("split must be 'train' or 'test'")
    directory = Path(directory)
    prefix = "train" if split == "train" else "t10k"
    full = load_idx(_find(directory, f"{prefix}-images-idx3-ubyte"),
                    _find(directory, f"{prefix}-labels-idx1-ubyte"))
    keep = np.flatnonzero(full.labels < classes)[:n]
    if keep.size < n:
        raise InvalidInputError(f"only {keep.size} examples with label < {classes} in {split} split")
    return Dataset(full.features[keep], full.labels[keep], f"mnist{classes}-{split}", classes)


def load_csv(path, label_column: int = -1, header: bool | None = None, name=None) -> Dataset:
    """Numeric CSV, one row per datum; ``label_column`` holds class indices.

    ``header=None`` detects a header row by whether the first row parses.
    """
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r]
    if not rows:
        raise ParseError(f"{path}: empty file")
    if header is None:
        try:
            [float(c) for c in rows[0]]
            header = False
        except ValueError:
            header = True
    start = 1 if header else 0
    data = []
    for i, row in enumerate(rows[start:], start=start + 1):
        vals = []
        for j, cell in enumerate(row):
            try:
                vals.append(float(cell))
            except ValueError:
                raise ParseError(f"{path}: non-numeric cell {cell!r} at row {i}, column {j + 1}") from None
        data.append(vals)
    if not data:
        raise ParseError(f"{path}: no data rows")
    width = len(data[0])
    if any(len(r) != width for r in data):
        raise ParseError(f"{path}: ragged rows")
    arr = np.array(data)
    col = label_column if label_column >= 0 else width + label_column
    if not 0 <= col < width:
        raise ParseError(f"{path}: label column {label_column} out of range for {width} columns")
    labels = arr[:, col]
    if np.any(labels != np.round(labels)):
        raise ParseError(f"{path}: label column holds non-integer values")
    feats = np.delete(arr, col, axis=1)
    return Dataset(feats, labels.astype(np.int64), name or Path(path).stem)


def save_csv(data: Dataset, path, label_column: int = -1):
    """Write features with labels inserted at ``label_column``; no header."""
    width = data.dim + 1
    col = label_column if label_column >= 0 else width + label_column
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        for x, z in zip(data.features, data.labels):
            row = [repr(float(v)) for v in x]
            row.insert(col, str(int(z)))
            w.writerow(row)


# model ----------------------------------------------------------------------

def _log_softmax(logits):
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


class MLP:
    """``sizes = [d_in, h_1, ..., n_classes]``; tanh between affine layers."""

    activation = "tanh"

    def __init__(self, sizes):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise InvalidInputError(f"invalid architecture {sizes}")
        self.sizes = sizes
        self._slices = []
        off = 0
        for a, b in zip(sizes[:-1], sizes[1:]):
            w = slice(off, off + a * b)
            off += a * b
            bias = slice(off, off + b)
            off += b
            self._slices.append((w, bias, a, b))
        self.n_params = off

    @property
    def input_dim(self):
        return self.sizes[0]

    @property
    def n_classes(self):
        return self.sizes[-1]

    def descriptor(self):
        return {"kind": "mlp", "sizes": list(self.sizes), "activation": self.activation}

    def init_params(self, seed: int = 0) -> np.ndarray:
        rng = stream(derive_seed(seed, 0x1417), 0)
        theta = np.zeros(self.n_params)
        for w, _, a, b in self._slices:
            theta[w] = rng.normal(0.0, 1.0 / np.sqrt(a), a * b)
        return theta

    def _layers(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise InvalidInputError(f"expected {self.n_params} parameters, got {theta.shape}")
        return [(theta[w].reshape(a, b), theta[bs]) for w, bs, a, b in self._slices]

    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.input_dim:
            raise InvalidInputError(f"expected {self.input_dim} input features, got {x.shape[1]}")
        return x

    def _forward(self, theta, x):
        layers = self._layers(theta)
        acts = [x]
        h = x
        for i, (W, b) in enumerate(layers):
            h = h @ W + b
            if i < len(layers) - 1:
                h = np.tanh(h)
            acts.append(h)
        return layers, acts

    def logits(self, theta, x):
        return self._forward(theta, self._check_x(x))[1][-1]

    def forward(self, theta, x):
        """Class probabilities, shape ``(n, n_classes)``."""
        return np.exp(_log_softmax(self.logits(theta, x)))

    def predict(self, theta, x):
        return np.argmax(self.logits(theta, x), axis=1)

    def loss(self, theta, x, z):
        """Per-sample cross-entropy, shape ``(n,)``."""
        x = self._check_x(x)
        z = np.broadcast_to(np.asarray(z, dtype=np.int64), (x.shape[0],))
        lsm = _log_softmax(self._forward(theta, x)[1][-1])
        return -lsm[np.arange(x.shape[0]), z]

    def _backward(self, theta, x, z, row_weights):
        """Backpropagate ``sum_i row_weights[i] * loss_i``; returns the layer
        list, activations and the per-layer output deltas (already weighted)."""
        x = self._check_x(x)
        n = x.shape[0]
        z = np.broadcast_to(np.asarray(z, dtype=np.int64), (n,))
        layers, acts = self._forward(theta, x)
        probs = np.exp(_log_softmax(acts[-1]))
        delta = probs
        delta[np.arange(n), z] -= 1.0
        if row_weights is not None:
            delta = delta * row_weights[:, None]
        deltas = [None] * len(layers)
        deltas[-1] = delta
        for i in range(len(layers) - 1, 0, -1):
            delta = (delta @ layers[i][0].T) * (1.0 - acts[i] ** 2)
            deltas[i - 1] = delta
        return layers, acts, deltas

    def grad_input(self, theta, x, z):
        """``d loss_i / d x_i`` for every row, shape ``(n, d_in)``."""
        layers, _, deltas = self._backward(theta, x, z, None)
        return deltas[0] @ layers[0][0].T

    def grad_params(self, theta, x, z, weights=None):
        """``sum_i weights[i] * grad_theta loss_i``; default weights ``1/n``."""
        x = self._check_x(x)
        n = x.shape[0]
        weights = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
        _, acts, deltas = self._backward(theta, x, z, weights)
        g = np.empty(self.n_params)
        for (w, bs, a, b), act, d in zip(self._slices, acts[:-1], deltas):
            g[w] = (act.T @ d).ravel()
            g[bs] = d.sum(axis=0)
        return g

    def per_sample_grad_params(self, theta, x, z):
        """Shape ``(n, n_params)``; memory grows with ``n * n_params``."""
        x = self._check_x(x)
        n = x.shape[0]
        _, acts, deltas = self._backward(theta, x, z, None)
        g = np.empty((n, self.n_params))
        for (w, bs, a, b), act, d in zip(self._slices, acts[:-1], deltas):
            g[:, w] = (act[:, :, None] * d[:, None, :]).reshape(n, a * b)
            g[:, bs] = d
        return g

    def accuracy(self, theta, x, z):
        return float(np.mean(self.predict(theta, x) == np.asarray(z)))


def mlp(arch) -> MLP:
    return MLP(arch)


def model_from_descriptor(desc) -> MLP:
    if desc.get("kind") != "mlp" or desc.get("activation", "tanh") != "tanh":
        raise InvalidInputError(f"unsupported architecture {desc}")
    return MLP(desc["sizes"])


# checkpoints ----------------------------------------------------------------

MAGIC = b"ABRAM1"
CHECKPOINT_VERSION = 1


@dataclass
class ModelParams:
    theta: np.ndarray
    arch: dict
    version: int = CHECKPOINT_VERSION
    config: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (model_from_descriptor(self.arch).n_params,):
            raise InvalidInputError("parameter vector does not match architecture")

    @property
    def model(self) -> MLP:
        return model_from_descriptor(self.arch)


def save_checkpoint(m: ModelParams, path):
    """Layout: magic ``ABRAM1``, u32 version, u32 header length, UTF-8 JSON
    header (architecture, config, seed, parameter count), then the parameters
    as little-endian float64."""
    header = json.dumps({"arch": m.arch, "config": m.config, "seed": int(m.seed),
                         "n_params": int(m.theta.size)}, sort_keys=True).encode()
    blob = (MAGIC + struct.pack("<II", m.version, len(header)) + header
            + m.theta.astype("<f8").tobytes())
    Path(path).write_bytes(blob)


def load_checkpoint(path) -> ModelParams:
    raw = Path(path).read_bytes()
    if raw[:6] != MAGIC:
        raise ParseError(f"{path}: bad checkpoint magic {raw[:6]!r} at byte 0", 0)
    if len(raw) < 14:
        raise ParseError(f"{path}: truncated checkpoint header", len(raw))
    version, hlen = struct.unpack("<II", raw[6:14])
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version} at byte 6", 6)
    try:
        header = json.loads(raw[14:14 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: corrupt checkpoint header at byte 14: {exc}", 14) from None
    body = raw[14 + hlen:]
    if len(body) != 8 * header["n_params"]:
        raise ParseError(f"{path}: expected {8 * header['n_params']} parameter bytes, got {len(body)}",
                         14 + hlen)
    theta = np.frombuffer(body, dtype="<f8").astype(float)
    return ModelParams(theta, header["arch"], version, header["config"], header["seed"])
