import json
import zipfile

import pytest
import torch

from gancompress.checkpoint import (
    Checkpoint,
    load_checkpoint,
    load_model_parameters,
    model_parameters,
    save_checkpoint,
)
from gancompress.errors import StorageError, ValidationError
from gancompress.pruning import Granularity, build_mask, compute_group_scores


def make_checkpoint(seed=0, with_masks=True):
    g = torch.Generator().manual_seed(seed)
    w1 = torch.randn(8, 4, 3, 3, generator=g)
    w2 = torch.randn(16, 8, generator=g).to(torch.float64)
    step_counter = torch.tensor(42, dtype=torch.int64)
    masks = {}
    if with_masks:
        mask = build_mask(compute_group_scores(w1, Granularity.ELEMENT),
                          Granularity.ELEMENT, 0.5, tuple(w1.shape))
        w1 = w1 * mask.bits.to(w1.dtype)
        masks["conv.weight"] = mask
    return Checkpoint(
        manifest={"task": "unit-test", "recipe": "b", "seed": seed},
        parameters={"conv.weight": w1, "fc.weight": w2, "bn.num_batches_tracked": step_counter},
        masks=masks,
        step=137,
        metric_snapshot={"fid": 12.5},
    )


class TestRoundTrip:
    def test_bit_exact_parameters(self, tmp_path):
        ckpt = make_checkpoint()
        path = tmp_path / "rt.gcz"
        save_checkpoint(ckpt, path)
        loaded = load_checkpoint(path)
        assert set(loaded.parameters) == set(ckpt.parameters)
        for name in ckpt.parameters:
            a, b = ckpt.parameters[name], loaded.parameters[name]
            assert a.dtype == b.dtype
            assert torch.equal(a, b)

    def test_masks_and_metadata_round_trip(self, tmp_path):
        ckpt = make_checkpoint()
        path = tmp_path / "rt.gcz"
        save_checkpoint(ckpt, path)
        loaded = load_checkpoint(path)
        assert loaded.step == 137
        assert loaded.manifest == ckpt.manifest
        assert loaded.metric_snapshot == {"fid": 12.5}
        assert set(loaded.masks) == {"conv.weight"}
        assert torch.equal(loaded.masks["conv.weight"].bits, ckpt.masks["conv.weight"].bits)
        assert loaded.masks["conv.weight"].granularity == Granularity.ELEMENT
        assert loaded.masks["conv.weight"].sparsity == ckpt.masks["conv.weight"].sparsity

    def test_double_round_trip_identical_bytes_of_tensors(self, tmp_path):
        ckpt = make_checkpoint(seed=3)
        p1, p2 = tmp_path / "a.gcz", tmp_path / "b.gcz"
        save_checkpoint(ckpt, p1)
        save_checkpoint(load_checkpoint(p1), p2)
        r1, r2 = load_checkpoint(p1), load_checkpoint(p2)
        for name in r1.parameters:
            assert torch.equal(r1.parameters[name], r2.parameters[name])

    def test_masked_positions_zero_after_load(self, tmp_path):
        ckpt = make_checkpoint()
        path = tmp_path / "m.gcz"
        save_checkpoint(ckpt, path)
        loaded = load_checkpoint(path)
        mask = loaded.masks["conv.weight"]
        values = loaded.parameters["conv.weight"]
        assert float(values[~mask.bits].abs().max()) == 0.0


class TestValidation:
    def test_mask_without_parameter_rejected(self, tmp_path):
        ckpt = make_checkpoint()
        ckpt.masks["ghost.weight"] = ckpt.masks["conv.weight"]
        with pytest.raises(ValidationError, match="ghost.weight"):
            save_checkpoint(ckpt, tmp_path / "x.gcz")

    def test_mask_shape_conflict_rejected(self, tmp_path):
        ckpt = make_checkpoint()
        ckpt.masks["fc.weight"] = ckpt.masks["conv.weight"]
        with pytest.raises(ValidationError, match="fc.weight"):
            save_checkpoint(ckpt, tmp_path / "x.gcz")

    def test_nonzero_masked_positions_rejected(self, tmp_path):
        ckpt = make_checkpoint()
        ckpt.parameters["conv.weight"] = torch.ones_like(ckpt.parameters["conv.weight"])
        with pytest.raises(ValidationError, match="non-zero"):
            save_checkpoint(ckpt, tmp_path / "x.gcz")


class TestCorruption:
    def _rewrite(self, src, dst, mutate):
        with zipfile.ZipFile(src) as z:
            entries = {name: z.read(name) for name in z.namelist()}
        mutate(entries)
        with zipfile.ZipFile(dst, "w") as z:
            for name, payload in entries.items():
                z.writestr(name, payload)

    def test_checksum_failure_detected(self, tmp_path):
        good, bad = tmp_path / "g.gcz", tmp_path / "b.gcz"
        save_checkpoint(make_checkpoint(), good)

        def flip(entries):
            payload = bytearray(entries["params/00001"])
            payload[0] ^= 0xFF
            entries["params/00001"] = bytes(payload)

        self._rewrite(good, bad, flip)
        with pytest.raises(StorageError, match="checksum"):
            load_checkpoint(bad)

    def test_version_mismatch_detected(self, tmp_path):
        good, bad = tmp_path / "g.gcz", tmp_path / "b.gcz"
        save_checkpoint(make_checkpoint(), good)

        def bump(entries):
            head = json.loads(entries["manifest.json"])
            head["format_version"] = 999
            entries["manifest.json"] = json.dumps(head)

        self._rewrite(good, bad, bump)
        with pytest.raises(StorageError, match="version"):
            load_checkpoint(bad)

    def test_missing_file(self, tmp_path):
        with pytest.raises(StorageError, match="not found"):
            load_checkpoint(tmp_path / "nope.gcz")

    def test_garbage_file(self, tmp_path):
        path = tmp_path / "junk.gcz"
        path.write_bytes(b"definitely not a zip")
        with pytest.raises(StorageError):
            load_checkpoint(path)


class TestModelParameterHelpers:
    def test_model_round_trip(self):
        lin1 = torch.nn.Linear(4, 3)
        params = model_parameters("generator", lin1)
        lin2 = torch.nn.Linear(4, 3)
        load_model_parameters(params, "generator", lin2)
        assert torch.equal(lin1.weight, lin2.weight)
        assert torch.equal(lin1.bias, lin2.bias)

    def test_missing_tensors_rejected(self):
        lin = torch.nn.Linear(4, 3)
        with pytest.raises(ValidationError, match="discriminator"):
            load_model_parameters({"generator.weight": torch.zeros(3, 4)}, "discriminator", lin)
