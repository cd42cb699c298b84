"""Dataset ingestion and deterministic batch streams.

MNIST is read from the standard IDX files (optionally gzipped) in a data
directory; ``fetch_mnist`` downloads them on a networked machine, or imports
them from a directory of per-digit JSON dumps (files ``0.json``..``9.json``,
each ``{"data": [flat 28x28 floats in 0..1, ...]}``) for offline setups.
The 2-D ring dataset is synthesized on the fly from its seed.

Batches are a pure function of (seed, step): every epoch's ordering is a
permutation seeded by (seed, epoch), partial trailing batches are dropped,
and samples are normalized to [-1, 1].
"""

import gzip
import json
import logging
import os
import struct
import urllib.request
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DataError, ValidationError

log = logging.getLogger(__name__)

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
MNIST_MIRRORS = (
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
)


def data_dir(explicit: str | None = None) -> Path:
    """Resolve the data directory: explicit arg > GANCOMPRESS_DATA_DIR > ./data."""
    if explicit:
        return Path(explicit)
    return Path(os.environ.get("GANCOMPRESS_DATA_DIR", "data"))


# ---------------------------------------------------------------------------
# IDX container

def read_idx(path: Path) -> np.ndarray:
    """Parse one IDX file (plain or .gz) into a numpy array."""
    opener = gzip.open if str(path).endswith(".gz") else open
    try:
        with opener(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise DataError(f"cannot read dataset file {path}: {e}") from e
    if len(raw) < 4:
        raise DataError(f"corrupt IDX file {path}: too short")
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code != 0x08:
        raise DataError(f"corrupt IDX file {path}: bad magic {raw[:4].hex()}")
    dims = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    data = np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim)
    expected = int(np.prod(dims))
    if data.size != expected:
        raise DataError(
            f"corrupt IDX file {path}: header says {expected} bytes, found {data.size}"
        )
    return data.reshape(dims)


def write_idx(path: Path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">HBB", 0, 0x08, array.ndim))
        f.write(struct.pack(f">{array.ndim}I", *array.shape))
        f.write(array.tobytes())


def _find_idx(directory: Path, stem: str) -> Path:
    for cand in (directory / stem, directory / (stem + ".gz")):
        if cand.exists():
            return cand
    raise DataError(
        f"MNIST file '{stem}[.gz]' not found under {directory}; "
        f"run `gancompress fetch-mnist --out {directory}` first"
    )


def load_mnist_split(directory: Path, split: str):
    """(images uint8 (N, 28, 28), labels uint8 (N,)) for 'train' or 'test'."""
    if split not in ("train", "test"):
        raise ValidationError(f"split must be 'train' or 'test', got '{split}'")
    images = read_idx(_find_idx(directory, MNIST_FILES[f"{split}_images"]))
    labels = read_idx(_find_idx(directory, MNIST_FILES[f"{split}_labels"]))
    if images.ndim != 3 or images.shape[1:] != (28, 28):
        raise DataError(f"unexpected MNIST image shape {images.shape}")
    if labels.shape[0] != images.shape[0]:
        raise DataError(
            f"MNIST {split}: {images.shape[0]} images but {labels.shape[0]} labels"
        )
    return images, labels


def fetch_mnist(out_dir: Path, from_json: Path | None = None) -> None:
    """Materialize the four canonical IDX files under ``out_dir``.

    Downloads from public mirrors by default; with ``from_json``, converts a
    directory of per-digit JSON dumps instead (no network needed).  The JSON
    import splits each digit class 90/10 into train/test deterministically.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    if from_json is not None:
        _mnist_from_json(Path(from_json), out_dir)
        return
    for stem in MNIST_FILES.values():
        target = out_dir / stem
        if target.exists():
            log.info("%s already present", target)
            continue
        last_err = None
        for mirror in MNIST_MIRRORS:
            url = mirror + stem + ".gz"
            try:
                log.info("downloading %s", url)
                with urllib.request.urlopen(url, timeout=60) as r:
                    payload = gzip.decompress(r.read())
                target.write_bytes(payload)
                last_err = None
                break
            except OSError as e:
                last_err = e
        if last_err is not None:
            raise DataError(f"could not download {stem} from any mirror: {last_err}")


def _mnist_from_json(json_dir: Path, out_dir: Path) -> None:
    train_imgs, train_labels, test_imgs, test_labels = [], [], [], []
    for digit in range(10):
        path = json_dir / f"{digit}.json"
        if not path.exists():
            raise DataError(f"JSON import: missing {path}")
        flat = json.loads(path.read_text())["data"]
        if len(flat) % 784 != 0:
            raise DataError(f"JSON import: {path} length {len(flat)} is not a multiple of 784")
        arr = (np.asarray(flat, dtype=np.float64).reshape(-1, 28, 28) * 255.0).round()
        arr = arr.astype(np.uint8)
        n_train = int(len(arr) * 0.9)
        train_imgs.append(arr[:n_train])
        test_imgs.append(arr[n_train:])
        train_labels.append(np.full(n_train, digit, dtype=np.uint8))
        test_labels.append(np.full(len(arr) - n_train, digit, dtype=np.uint8))

    def shuffled(images, labels):
        # canonical MNIST files are class-shuffled; keep that property so any
        # prefix of the file is class-balanced
        images = np.concatenate(images)
        labels = np.concatenate(labels)
        order = np.random.default_rng(20240).permutation(len(images))
        return images[order], labels[order]

    tr_i, tr_l = shuffled(train_imgs, train_labels)
    te_i, te_l = shuffled(test_imgs, test_labels)
    write_idx(out_dir / MNIST_FILES["train_images"], tr_i)
    write_idx(out_dir / MNIST_FILES["train_labels"], tr_l)
    write_idx(out_dir / MNIST_FILES["test_images"], te_i)
    write_idx(out_dir / MNIST_FILES["test_labels"], te_l)
    log.info("imported %d train / %d test images from %s", len(tr_i), len(te_i), json_dir)


# ---------------------------------------------------------------------------
# synthetic ring

RING_MODES = 8
RING_RADIUS = 0.8
RING_STD = 0.05


def synthesize_ring(n: int, seed: int):
    """n points from 8 Gaussian modes on a circle; returns (points, mode ids).

    Points are float32 (n, 2) in [-1, 1]; the mode assignment is a pure
    function of the seed.
    """
    g = torch.Generator().manual_seed(seed)
    modes = torch.randint(0, RING_MODES, (n,), generator=g)
    angles = modes.to(torch.float64) * (2 * torch.pi / RING_MODES)
    centers = torch.stack([RING_RADIUS * torch.cos(angles), RING_RADIUS * torch.sin(angles)], dim=1)
    points = centers + RING_STD * torch.randn(n, 2, dtype=torch.float64, generator=g)
    return points.clamp(-1.0, 1.0).to(torch.float32), modes


# ---------------------------------------------------------------------------
# datasets and batch streams

class Dataset:
    """In-memory sample store with seeded, epoch-permuted batch access."""

    def __init__(self, samples: torch.Tensor, labels: torch.Tensor | None, name: str):
        self.samples = samples  # normalized float32, (N, C, H, W)
        self.labels = labels
        self.name = name

    def __len__(self):
        return self.samples.shape[0]

    def batch_at(self, step: int, batch_size: int, seed: int) -> torch.Tensor:
        """Batch for global ``step``: a pure function of (seed, step)."""
        n = len(self)
        per_epoch = n // batch_size
        if per_epoch == 0:
            raise ValidationError(
                f"batch_size {batch_size} exceeds dataset size {n} for {self.name}"
            )
        epoch, idx = divmod(step, per_epoch)
        perm = torch.randperm(n, generator=torch.Generator().manual_seed(seed * 1_000_003 + epoch))
        sel = perm[idx * batch_size : (idx + 1) * batch_size]
        return self.samples[sel]

    def steps_per_epoch(self, batch_size: int) -> int:
        return len(self) // batch_size


def _resize_images(images: torch.Tensor, hw: tuple[int, int]) -> torch.Tensor:
    if images.shape[-2:] == hw:
        return images
    return F.interpolate(images, size=hw, mode="bilinear", align_corners=False, antialias=True)


def load_dataset(dataset_id: str, split: str, seed: int,
                 directory: Path | None = None,
                 image_shape: tuple | None = None,
                 ring_size: int = 20000) -> Dataset:
    """Load one dataset split, normalized to [-1, 1].

    ``dataset_id`` may also be a task id, which resolves to the task's
    dataset and image shape.  ``image_shape`` (C, H, W) triggers resizing for
    image datasets.  Ring data is synthesized from (seed, split), so the same
    seed always produces the same stream.
    """
    if dataset_id not in ("mnist", "ring2d"):
        from .models import TASKS

        if dataset_id in TASKS:
            spec = TASKS[dataset_id]
            return load_dataset(spec.dataset, split, seed, directory,
                                image_shape or spec.image_shape, ring_size)
    if dataset_id == "mnist":
        images, labels = load_mnist_split(data_dir(directory), split)
        x = torch.from_numpy(images.copy()).unsqueeze(1).to(torch.float32) / 127.5 - 1.0
        if image_shape is not None:
            x = _resize_images(x, tuple(image_shape[1:]))
        log.info("mnist %s: %d items, shape %s", split, len(x), tuple(x.shape[1:]))
        return Dataset(x, torch.from_numpy(labels.copy()), f"mnist-{split}")
    if dataset_id == "ring2d":
        n = ring_size if split == "train" else max(ring_size // 5, 1000)
        pts, modes = synthesize_ring(n, seed * 7 + (0 if split == "train" else 1))
        log.info("ring2d %s: %d items", split, n)
        return Dataset(pts.reshape(n, 2, 1, 1), modes, f"ring2d-{split}")
    raise ValidationError(f"unknown dataset '{dataset_id}'")
