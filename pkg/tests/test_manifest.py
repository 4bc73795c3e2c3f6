import json

import numpy as np
import pytest

from tinybat import fixture
from tinybat.engine_float import FloatModel, run_float
from tinybat.engine_int import quantize_input, run_int
from tinybat.errors import ParameterError
from tinybat.manifest import load_model, manifest_dict, save_model
from tinybat.quantize import QuantizedModel


class TestFloatRoundTrip:
    def test_logits_identical(self, tiny_model, tmp_path):
        path = save_model(tiny_model, tmp_path / "m.json")
        loaded = load_model(path)
        assert isinstance(loaded, FloatModel)
        x = fixture.fixture_inputs(2, seed=5)[1]
        a = run_float(tiny_model.graph, tiny_model.weights, x)
        b = run_float(loaded.graph, loaded.weights, x)
        assert np.array_equal(a, b)

    def test_blob_is_exact_float_bytes(self, tiny_model, tmp_path):
        save_model(tiny_model, tmp_path / "m.json")
        blob = (tmp_path / "m.weights.bin").read_bytes()
        total = sum(arr.nbytes for arr in tiny_model.weights.values())
        assert len(blob) == total

    def test_truncated_blob_rejected(self, tiny_model, tmp_path):
        path = save_model(tiny_model, tmp_path / "m.json")
        blob_path = tmp_path / "m.weights.bin"
        blob_path.write_bytes(blob_path.read_bytes()[:-8])
        with pytest.raises(ParameterError):
            load_model(path)


class TestQuantizedRoundTrip:
    def test_bit_identical_inference(self, tiny_quantized, tmp_path):
        path = save_model(tiny_quantized, tmp_path / "q.json")
        loaded = load_model(path)
        assert isinstance(loaded, QuantizedModel)
        x = fixture.fixture_inputs(3, seed=17)[2]
        la, pa = run_int(tiny_quantized, quantize_input(x, tiny_quantized))
        lb, pb = run_int(loaded, quantize_input(x, loaded))
        assert la.data.tobytes() == lb.data.tobytes()
        assert pa == pb

    def test_qparams_and_requant_preserved(self, tiny_quantized, tmp_path):
        loaded = load_model(save_model(tiny_quantized, tmp_path / "q.json"))
        assert loaded.qparams == tiny_quantized.qparams
        assert loaded.requant == tiny_quantized.requant
        assert loaded.clamp == tiny_quantized.clamp

    def test_weight_bytes_match(self, tiny_quantized, tmp_path):
        save_model(tiny_quantized, tmp_path / "q.json")
        blob = (tmp_path / "q.weights.bin").read_bytes()
        assert len(blob) == tiny_quantized.weight_bytes() + tiny_quantized.bias_bytes()

    def test_manifest_flags_quantized(self, tiny_quantized, tmp_path):
        path = save_model(tiny_quantized, tmp_path / "q.json")
        doc = json.loads(path.read_text())
        assert doc["quantized"] is True
        assert doc["classes"] == 2
        assert "qparams" in doc


class TestCommittedAssets:
    def test_assets_match_regeneration(self, tiny_model, assets_dir, tmp_path):
        committed = (assets_dir / "deepfish_tiny.weights.bin").read_bytes()
        save_model(tiny_model, tmp_path / "regen.json")
        assert (tmp_path / "regen.weights.bin").read_bytes() == committed
        fresh = json.loads((tmp_path / "regen.json").read_text())
        fresh["weights_blob"] = "deepfish_tiny.weights.bin"
        stored = json.loads((assets_dir / "deepfish_tiny.json").read_text())
        assert fresh == stored

    def test_manifest_dict_is_canonical(self, tiny_model):
        a = manifest_dict(tiny_model, "blob")
        b = manifest_dict(tiny_model, "blob")
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
