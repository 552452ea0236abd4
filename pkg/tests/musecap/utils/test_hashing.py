"""Tests for digest helpers."""

import numpy as np
import torch

from musecap.utils.hashing import array_digest, canonical_json, config_digest, file_digest, module_digest, text_digest


class TestConfigDigest:
    """Key-order independent digests."""

    def test_key_order_does_not_matter(self):
        """Dicts with equal content hash equally."""
        assert config_digest({"a": 1, "b": [1, 2]}) == config_digest({"b": [1, 2], "a": 1})

    def test_content_matters(self):
        """Different values give different digests."""
        assert config_digest({"a": 1}) != config_digest({"a": 2})

    def test_canonical_json_is_compact(self):
        """No whitespace between tokens."""
        assert canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'

    def test_text_digest_is_sha256(self):
        """Known SHA-256 of the empty string."""
        assert text_digest("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


class TestFileDigest:
    def test_same_bytes_same_digest(self, tmp_path):
        """Files with identical bytes share a digest."""
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        a.write_bytes(b"music")
        b.write_bytes(b"music")
        assert file_digest(a) == file_digest(b) == text_digest("music")


class TestArrayDigest:
    """Digests of named arrays."""

    def test_shape_is_part_of_digest(self):
        """Same bytes with another shape hash differently."""
        data = np.arange(6, dtype=np.float64)
        assert array_digest({"x": data}) != array_digest({"x": data.reshape(2, 3)})

    def test_single_bit_change(self):
        """Changing one entry changes the digest."""
        data = np.zeros(4)
        changed = data.copy()
        changed[2] = 1e-300
        assert array_digest({"x": data}) != array_digest({"x": changed})

    def test_module_digest_tracks_parameters(self):
        """Module digests change when a parameter changes."""
        module = torch.nn.Linear(2, 2)
        before = module_digest(module)
        assert module_digest(module) == before
        with torch.no_grad():
            module.weight[0, 0] += 1.0
        assert module_digest(module) != before
