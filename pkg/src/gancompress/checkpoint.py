"""Checkpoint container: one zip archive holding a JSON manifest, raw
little-endian tensor blobs with a name/shape/dtype index, and bit-packed
pruning masks with shape/granularity metadata.

Round-trips are bit-exact; every payload entry is sha256-checksummed and
verified on load.
"""

import hashlib
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import StorageError, ValidationError
from .pruning import Granularity, PruningMask, sparsity_of

FORMAT_VERSION = 1

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.int32: "<i4",
    torch.uint8: "<u1",
}
_TORCH_DTYPES = {v: k for k, v in _DTYPES.items()}


@dataclass
class Checkpoint:
    manifest: dict
    parameters: dict                    # name -> torch.Tensor
    masks: dict = field(default_factory=dict)  # name -> PruningMask
    step: int = 0
    metric_snapshot: dict = field(default_factory=dict)

    def validate(self) -> None:
        for name, mask in self.masks.items():
            if name not in self.parameters:
                raise ValidationError(f"mask '{name}' has no matching parameter")
            param = self.parameters[name]
            if tuple(mask.bits.shape) != tuple(param.shape):
                raise ValidationError(
                    f"mask '{name}' shape {tuple(mask.bits.shape)} != parameter "
                    f"shape {tuple(param.shape)}"
                )
            if bool((param[~mask.bits] != 0).any()):
                raise ValidationError(
                    f"parameter '{name}' has non-zero values at masked positions"
                )


def _tensor_bytes(t: torch.Tensor) -> bytes:
    if t.dtype not in _DTYPES:
        raise StorageError(f"unsupported tensor dtype {t.dtype}")
    return np.ascontiguousarray(t.detach().cpu().numpy().astype(_DTYPES[t.dtype], copy=False)).tobytes()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write the checkpoint archive; refuses inconsistent mask/parameter sets."""
    ckpt.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = {}  # zip name -> payload bytes
    param_index = []
    for name in sorted(ckpt.parameters):
        t = ckpt.parameters[name]
        entry = f"params/{len(param_index):05d}"
        entries[entry] = _tensor_bytes(t)
        param_index.append({"name": name, "shape": list(t.shape), "dtype": _DTYPES[t.dtype]})
    mask_index = []
    for name in sorted(ckpt.masks):
        m = ckpt.masks[name]
        entry = f"masks/{len(mask_index):05d}"
        bits = m.bits.detach().cpu().numpy().astype(np.uint8)
        entries[entry] = np.packbits(bits.reshape(-1)).tobytes()
        mask_index.append({
            "name": name,
            "shape": list(m.bits.shape),
            "granularity": m.granularity.value,
        })
    index = {
        "format_version": FORMAT_VERSION,
        "parameters": param_index,
        "masks": mask_index,
        "checksums": {k: hashlib.sha256(v).hexdigest() for k, v in entries.items()},
    }
    head = {
        "format_version": FORMAT_VERSION,
        "manifest": ckpt.manifest,
        "step": ckpt.step,
        "metric_snapshot": ckpt.metric_snapshot,
    }
    try:
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as z:
            z.writestr("manifest.json", json.dumps(head, indent=1, sort_keys=True))
            z.writestr("index.json", json.dumps(index, indent=1, sort_keys=True))
            for entry, payload in entries.items():
                z.writestr(entry, payload)
    except OSError as e:
        raise StorageError(f"cannot write checkpoint {path}: {e}") from e


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint archive back, verifying version and checksums."""
    path = Path(path)
    if not path.exists():
        raise StorageError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as z:
            head = json.loads(z.read("manifest.json"))
            index = json.loads(z.read("index.json"))
            payloads = {name: z.read(name) for name in z.namelist()
                        if name.startswith(("params/", "masks/"))}
    except (OSError, zipfile.BadZipFile, KeyError, json.JSONDecodeError) as e:
        raise StorageError(f"cannot read checkpoint {path}: {e}") from e
    for blob in (head, index):
        if blob.get("format_version") != FORMAT_VERSION:
            raise StorageError(
                f"checkpoint {path}: format version {blob.get('format_version')} "
                f"!= supported {FORMAT_VERSION}"
            )
    for entry, digest in index["checksums"].items():
        if entry not in payloads:
            raise StorageError(f"checkpoint {path}: missing entry {entry}")
        if hashlib.sha256(payloads[entry]).hexdigest() != digest:
            raise StorageError(f"checkpoint {path}: checksum mismatch for {entry}")
    parameters = {}
    for i, meta in enumerate(index["parameters"]):
        raw = payloads[f"params/{i:05d}"]
        arr = np.frombuffer(raw, dtype=meta["dtype"]).reshape(meta["shape"]).copy()
        parameters[meta["name"]] = torch.from_numpy(arr).to(_TORCH_DTYPES[meta["dtype"]])
    masks = {}
    for i, meta in enumerate(index["masks"]):
        raw = payloads[f"masks/{i:05d}"]
        numel = int(np.prod(meta["shape"])) if meta["shape"] else 1
        bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), count=numel)
        bits_t = torch.from_numpy(bits.reshape(meta["shape"]).astype(bool))
        masks[meta["name"]] = PruningMask(
            bits=bits_t,
            granularity=Granularity(meta["granularity"]),
            sparsity=sparsity_of(bits_t),
        )
    ckpt = Checkpoint(
        manifest=head["manifest"],
        parameters=parameters,
        masks=masks,
        step=head["step"],
        metric_snapshot=head["metric_snapshot"],
    )
    ckpt.validate()
    return ckpt


def model_parameters(prefix: str, model: torch.nn.Module) -> dict:
    """Named parameter and buffer tensors of one model, prefixed for storage."""
    out = {}
    for name, p in model.named_parameters():
        out[f"{prefix}.{name}"] = p.detach().clone()
    for name, b in model.named_buffers():
        out[f"{prefix}.{name}"] = b.detach().clone()
    return out


def load_model_parameters(params: dict, prefix: str, model: torch.nn.Module) -> None:
    """Copy stored tensors with ``prefix`` into the model; all names must match."""
    state = {}
    want = set()
    for name, _ in list(model.named_parameters()) + list(model.named_buffers()):
        want.add(name)
    for key, tensor in params.items():
        if key.startswith(prefix + "."):
            state[key[len(prefix) + 1:]] = tensor
    missing = want - set(state)
    if missing:
        raise ValidationError(f"checkpoint lacks tensors for {prefix}: {sorted(missing)[:4]}...")
    model.load_state_dict(state, strict=False)
