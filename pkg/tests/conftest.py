import os
from pathlib import Path

import pytest
import torch

REPO_ROOT = Path(__file__).resolve().parent.parent


def repo_data_dir() -> Path:
    return Path(os.environ.get("GANCOMPRESS_DATA_DIR", REPO_ROOT / "data"))


def mnist_available() -> bool:
    d = repo_data_dir()
    return all(
        (d / stem).exists() or (d / (stem + ".gz")).exists()
        for stem in (
            "train-images-idx3-ubyte",
            "train-labels-idx1-ubyte",
            "t10k-images-idx3-ubyte",
            "t10k-labels-idx1-ubyte",
        )
    )


requires_mnist = pytest.mark.skipif(
    not mnist_available(),
    reason="MNIST IDX files not present under the data directory "
    "(run `gancompress fetch-mnist`); desk-scale criteria need them",
)


@pytest.fixture()
def rng():
    return torch.Generator().manual_seed(1234)


@pytest.fixture(scope="session")
def ring_baseline(tmp_path_factory):
    """A small trained ring2d dense baseline shared across engine/CLI tests."""
    from gancompress.config import validate_config
    from gancompress.engine import run_compression

    out = tmp_path_factory.mktemp("ring-baseline")
    manifest = validate_config({
        "task": "ring2d", "recipe": "a", "seed": 5, "steps": 300,
        "out_dir": str(out / "run"),
    })
    result = run_compression(manifest)
    return result
