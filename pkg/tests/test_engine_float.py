import numpy as np
import pytest

from tinybat import fixture, graph as g
from tinybat.engine_float import predict_float, run_float, trace_activations
from tinybat.errors import NumericError, WeightLookupError

# frozen on first generation; regression oracle for the reference engine
GOLDEN_INPUT0_LOGITS = (-0.032697584480047226, -0.2913413643836975)
GOLDEN_INPUT0_CLASS = 0


def single_conv_graph(channels=1, out_channels=1):
    spec = g.TensorSpec("input", (2, 2, channels))
    layers = [g.LayerOp(g.CONV2D, "c0", ("input",), "out", kernel=1,
                        out_channels=out_channels)]
    return g.infer_shapes(g.make_graph(spec, layers))


class TestKernels:
    def test_identity_conv(self):
        graph = single_conv_graph(channels=3, out_channels=3)
        weights = {
            "c0.w": np.eye(3, dtype=np.float32).reshape(3, 1, 1, 3),
            "c0.b": np.zeros(3, dtype=np.float32),
        }
        x = np.arange(12, dtype=np.float32).reshape(2, 2, 3)
        acts = trace_activations(graph, weights, x)
        assert np.array_equal(acts["out"], x)

    def test_scale_and_bias(self):
        graph = single_conv_graph()
        weights = {
            "c0.w": np.full((1, 1, 1, 1), 2.0, dtype=np.float32),
            "c0.b": np.full(1, 1.0, dtype=np.float32),
        }
        x = np.array([[1, 2], [3, 4]], dtype=np.float32).reshape(2, 2, 1)
        acts = trace_activations(graph, weights, x)
        assert acts["out"].reshape(2, 2).tolist() == [[3.0, 5.0], [7.0, 9.0]]

    def test_global_avg_pool_mean(self):
        spec = g.TensorSpec("input", (2, 2, 1))
        layers = [g.LayerOp(g.GLOBAL_AVG_POOL, "p", ("input",), "out")]
        graph = g.infer_shapes(g.make_graph(spec, layers))
        x = np.array([[0, 6], [6, 0]], dtype=np.float32).reshape(2, 2, 1)
        acts = trace_activations(graph, {}, x)
        assert acts["out"].reshape(-1)[0] == 3.0

    def test_relu6_clamps(self):
        spec = g.TensorSpec("input", (1, 1, 3))
        layers = [g.LayerOp(g.RELU6, "r", ("input",), "out")]
        graph = g.infer_shapes(g.make_graph(spec, layers))
        x = np.array([-1.0, 3.0, 9.0], dtype=np.float32).reshape(1, 1, 3)
        acts = trace_activations(graph, {}, x)
        assert acts["out"].reshape(-1).tolist() == [0.0, 3.0, 6.0]

    def test_residual_add_zero_identity(self, tiny_model):
        spec = g.TensorSpec("input", (4, 4, 2))
        layers = [
            g.LayerOp(g.RELU6, "r", ("input",), "mid"),
            g.LayerOp(g.RESIDUAL_ADD, "add", ("mid", "input"), "out"),
        ]
        graph = g.infer_shapes(g.make_graph(spec, layers))
        x = np.zeros((4, 4, 2), dtype=np.float32)
        acts = trace_activations(graph, {}, x)
        assert np.array_equal(acts["out"], x)


class TestErrors:
    def test_missing_weight(self):
        graph = single_conv_graph()
        with pytest.raises(WeightLookupError):
            run_float(graph, {}, np.zeros((2, 2, 1), dtype=np.float32))

    def test_nan_weight(self):
        graph = single_conv_graph()
        weights = {
            "c0.w": np.full((1, 1, 1, 1), np.nan, dtype=np.float32),
            "c0.b": np.zeros(1, dtype=np.float32),
        }
        with pytest.raises(NumericError):
            run_float(graph, weights, np.zeros((2, 2, 1), dtype=np.float32))


class TestPredict:
    def test_argmax(self, tiny_model):
        spec = g.TensorSpec("input", (1, 1, 2))
        layers = [g.LayerOp(g.RELU6, "r", ("input",), "out")]
        graph = g.infer_shapes(g.make_graph(spec, layers))
        x = np.array([0.1, 0.9], dtype=np.float32).reshape(1, 1, 2)
        assert predict_float(graph, {}, x) == 1

    def test_tie_breaks_low(self):
        spec = g.TensorSpec("input", (1, 1, 2))
        layers = [g.LayerOp(g.RELU6, "r", ("input",), "out")]
        graph = g.infer_shapes(g.make_graph(spec, layers))
        x = np.array([0.5, 0.5], dtype=np.float32).reshape(1, 1, 2)
        assert predict_float(graph, {}, x) == 0

    def test_argmax_scale_invariance(self, tiny_model):
        x = fixture.fixture_inputs(3, seed=77)
        for xi in x:
            logits = run_float(tiny_model.graph, tiny_model.weights, xi)
            assert int(np.argmax(logits * 3.5)) == int(np.argmax(logits))

    def test_fixture_regression(self, tiny_model):
        x0 = fixture.fixture_inputs(1)[0]
        logits = run_float(tiny_model.graph, tiny_model.weights, x0)
        assert logits == pytest.approx(GOLDEN_INPUT0_LOGITS, abs=1e-6)
        assert predict_float(tiny_model.graph, tiny_model.weights, x0) == GOLDEN_INPUT0_CLASS

    def test_deterministic_across_calls(self, tiny_model):
        x0 = fixture.fixture_inputs(1)[0]
        a = run_float(tiny_model.graph, tiny_model.weights, x0)
        b = run_float(tiny_model.graph, tiny_model.weights, x0)
        assert np.array_equal(a, b)
