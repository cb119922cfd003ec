import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrpkt.errors import DimensionError, EncodingError, FormatVersionError, MalformedModelError, ModelError
from lrpkt.model import (
    Interaction,
    InteractionSequence,
    ModelConfig,
    ModelParams,
    encode_input,
    forward_sequence,
    init_params,
    load_model,
    lstm_step,
    output_step,
    predict_next,
    save_model,
)

from conftest import random_params
from oracles import mp_lstm_step, mp_output


class TestEncodeInput:
    def test_correct_answer(self):
        x = encode_input(Interaction("q", 0, True), 3)
        np.testing.assert_array_equal(x, [1, 0, 0, 0, 0, 0])

    def test_incorrect_answer(self):
        x = encode_input(Interaction("q", 2, False), 3)
        np.testing.assert_array_equal(x, [0, 0, 0, 0, 0, 1])

    def test_out_of_range(self):
        with pytest.raises(EncodingError):
            encode_input(Interaction("q", 3, True), 3)
        with pytest.raises(EncodingError):
            encode_input(Interaction("q", -1, True), 3)

    @given(st.integers(1, 20), st.data())
    def test_exactly_one_hot(self, M, data):
        c = data.draw(st.integers(0, M - 1))
        ok = data.draw(st.booleans())
        x = encode_input(Interaction(0, c, ok), M)
        assert x.shape == (2 * M,)
        assert x.sum() == 1.0 and np.count_nonzero(x) == 1


class TestLstmStep:
    def test_zero_weights(self):
        p = ModelParams.zeros(2, 3)
        c_prev = np.array([0.3, -1.2, 2.0])
        f, i, g, c, o, h = lstm_step(p, np.array([1.0, 0, 0, 0]), np.zeros(3), c_prev)
        np.testing.assert_array_equal(f, 0.5)
        np.testing.assert_array_equal(i, 0.5)
        np.testing.assert_array_equal(o, 0.5)
        np.testing.assert_array_equal(g, 0.0)
        np.testing.assert_array_equal(c, 0.5 * c_prev)
        np.testing.assert_allclose(h, 0.5 * np.tanh(0.5 * c_prev), rtol=0, atol=1e-15)

    def test_zero_fixed_point(self):
        p = ModelParams.zeros(2, 3)
        *_, h = lstm_step(p, np.array([0, 0, 1.0, 0]), np.zeros(3), np.zeros(3))
        np.testing.assert_array_equal(h, 0.0)

    def test_scalar_hand_set(self):
        # H = 1, M = 1 with every weight chosen by hand
        p = ModelParams(
            w_fh=[[0.5]], w_fx=[[0.3, -0.2]], b_f=[0.1],
            w_ih=[[-0.4]], w_ix=[[0.7, 0.2]], b_i=[-0.05],
            w_ch=[[0.9]], w_cx=[[-1.1, 0.6]], b_c=[0.2],
            w_oh=[[0.25]], w_ox=[[0.45, -0.35]], b_o=[0.0],
            w_yh=[[1.5]], b_y=[-0.3],
        )
        x, h_prev, c_prev = np.array([0.0, 1.0]), np.array([0.4]), np.array([-0.7])
        got = lstm_step(p, x, h_prev, c_prev)
        want = mp_lstm_step(p.as_dict(), x, h_prev, c_prev)
        for a, b in zip(got, want):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)

    @pytest.mark.parametrize("M,H", [(1, 1), (1, 2), (2, 1), (2, 2)])
    def test_matches_direct_formula(self, rng, M, H):
        for _ in range(5):
            p = random_params(rng, M, H)
            x = np.zeros(2 * M)
            x[rng.integers(2 * M)] = 1.0
            h_prev, c_prev = rng.uniform(-1, 1, H), rng.normal(0, 1.5, H)
            for a, b in zip(lstm_step(p, x, h_prev, c_prev), mp_lstm_step(p.as_dict(), x, h_prev, c_prev)):
                np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_dimension_mismatch(self):
        p = ModelParams.zeros(2, 3)
        with pytest.raises(ModelError):
            lstm_step(p, np.zeros(5), np.zeros(3), np.zeros(3))
        with pytest.raises(ModelError):
            lstm_step(p, np.zeros(4), np.zeros(2), np.zeros(3))

    def test_batched_rows_match_single(self, rng):
        p = random_params(rng, 2, 3)
        xs = np.eye(4)[[0, 3, 1]]
        hs, cs = rng.uniform(-1, 1, (3, 3)), rng.normal(size=(3, 3))
        batched = lstm_step(p, xs, hs, cs)
        for b in range(3):
            single = lstm_step(p, xs[b], hs[b], cs[b])
            for a, s in zip(batched, single):
                np.testing.assert_allclose(a[b], s, rtol=0, atol=1e-15)


class TestOutputStep:
    def test_zero_layer(self):
        np.testing.assert_array_equal(output_step(ModelParams.zeros(3, 2), np.array([0.3, -0.9])), 0.5)

    def test_saturation(self):
        p = ModelParams.zeros(2, 2).replace(b_y=np.array([30.0, 0.0]))
        y = output_step(p, np.array([0.1, 0.2]))
        assert abs(y[0] - 1.0) < 1e-9

    def test_matches_direct_formula(self, rng):
        for _ in range(10):
            p = random_params(rng, 2, 2, scale=0.3)
            h = rng.uniform(-1, 1, 2)
            np.testing.assert_allclose(output_step(p, h), mp_output(p.as_dict(), h), rtol=0, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ModelError):
            output_step(ModelParams.zeros(2, 2), np.zeros(3))


def _seq(pairs):
    return InteractionSequence.from_pairs(pairs)


class TestForwardSequence:
    def test_single_step_is_one_cell_update(self, rng):
        p = random_params(rng, 3, 4)
        seq = _seq([(1, False)])
        tr = forward_sequence(p, seq)
        x = encode_input(seq.steps[0], 3)
        f, i, g, c, o, h = lstm_step(p, x, np.zeros(4), np.zeros(4))
        np.testing.assert_array_equal(tr.c[1], c)
        np.testing.assert_array_equal(tr.h[1], h)
        np.testing.assert_array_equal(tr.y[0], output_step(p, h))
        np.testing.assert_array_equal(tr.h[0], 0.0)
        np.testing.assert_array_equal(tr.c[0], 0.0)

    def test_order_matters(self, rng):
        p = random_params(rng, 3, 4)
        a = forward_sequence(p, _seq([(0, True), (2, False), (1, True)])).y[-1]
        b = forward_sequence(p, _seq([(2, False), (0, True), (1, True)])).y[-1]
        assert not np.allclose(a, b)

    def test_zero_model(self):
        p = ModelParams.zeros(3, 5)
        tr = forward_sequence(p, _seq([(0, True), (1, False), (2, True), (2, True)]))
        np.testing.assert_array_equal(tr.y, 0.5)

    def test_matches_stepwise_oracle(self, rng):
        p = random_params(rng, 2, 2)
        seq = _seq([(0, True), (1, False), (1, True)])
        tr = forward_sequence(p, seq)
        h, c = np.zeros(2), np.zeros(2)
        for t, step in enumerate(seq.steps):
            *_, c, _, h = mp_lstm_step(p.as_dict(), encode_input(step, 2), h, c)
            np.testing.assert_allclose(tr.h[t + 1], h, rtol=0, atol=1e-12)
            np.testing.assert_allclose(tr.y[t], mp_output(p.as_dict(), h), rtol=0, atol=1e-12)

    def test_deterministic(self, rng):
        p = random_params(rng, 4, 6)
        seq = _seq([(k % 4, k % 3 == 0) for k in range(12)])
        assert forward_sequence(p, seq).bitwise_equal(forward_sequence(p, seq))

    def test_trace_is_read_only(self, rng):
        tr = forward_sequence(random_params(rng, 2, 2), _seq([(0, True)]))
        with pytest.raises(ValueError):
            tr.h[0, 0] = 1.0

    def test_empty_sequence_rejected(self):
        with pytest.raises(EncodingError):
            InteractionSequence("x", ())

    @settings(max_examples=40, deadline=None)
    @given(
        st.integers(0, 2**32 - 1),
        st.floats(0.1, 6.0),
        st.lists(st.tuples(st.integers(0, 2), st.booleans()), min_size=1, max_size=8),
    )
    def test_gate_ranges(self, seed, scale, pairs):
        p = random_params(np.random.default_rng(seed), 3, 3, scale=scale)
        tr = forward_sequence(p, _seq(pairs))
        # large weights saturate tanh/sigmoid to exactly +-1 or 0 in float64,
        # so only the closed interval holds at every scale
        strict = scale <= 1.0
        for gate in (tr.f, tr.i, tr.o, tr.y):
            assert np.all(gate >= 0) and np.all(gate <= 1)
            if strict:
                assert np.all(gate > 0) and np.all(gate < 1)
        for v in (tr.c_tilde, tr.h[1:]):
            assert np.all(v >= -1) and np.all(v <= 1)
            if strict:
                assert np.all(v > -1) and np.all(v < 1)


class TestPredictNext:
    def test_zero_model(self):
        assert predict_next(ModelParams.zeros(3, 2), _seq([(0, True), (1, False)]), 2) == 0.5

    def test_out_of_range(self):
        with pytest.raises(EncodingError):
            predict_next(ModelParams.zeros(3, 2), _seq([(0, True)]), 3)

    @given(st.integers(0, 2**32 - 1), st.lists(st.tuples(st.integers(0, 1), st.booleans()), min_size=1, max_size=6))
    @settings(max_examples=30, deadline=None)
    def test_strictly_inside_unit_interval(self, seed, pairs):
        p = random_params(np.random.default_rng(seed), 2, 3, scale=2.0)
        assert 0.0 < predict_next(p, _seq(pairs), 1) < 1.0


class TestInit:
    def test_bounds_and_zero_biases(self):
        cfg = ModelConfig(num_concepts=4, hidden_size=16, seed=3)
        p = init_params(cfg)
        bound = 1 / math.sqrt(16)
        for name, arr in p.as_dict().items():
            if name.startswith("b_"):
                np.testing.assert_array_equal(arr, 0.0)
            else:
                assert np.all(np.abs(arr) <= bound)
        assert cfg.input_size == 8
        assert init_params(cfg).equals(p)
        assert not init_params(ModelConfig(4, 16, seed=4)).equals(p)

    def test_config_invariants(self):
        with pytest.raises(ModelError):
            ModelConfig(num_concepts=0)
        with pytest.raises(ModelError):
            ModelConfig(num_concepts=2, hidden_size=0)
        with pytest.raises(ModelError):
            ModelConfig(num_concepts=2, seed=2**64)

    def test_non_finite_rejected(self):
        p = ModelParams.zeros(2, 2).as_dict()
        p["b_c"] = np.array([np.nan, 0.0])
        with pytest.raises(ModelError):
            ModelParams(**p)


class TestPersistence:
    def test_round_trip_bitwise(self, tmp_path, rng):
        p = random_params(rng, 3, 5)
        cfg = ModelConfig(3, 5, seed=11)
        save_model(p, cfg, tmp_path / "m.json")
        q, cfg2 = load_model(tmp_path / "m.json")
        assert q.equals(p)
        assert cfg2 == cfg
        for name, arr in p.as_dict().items():
            assert arr.tobytes() == getattr(q, name).tobytes()

    def test_file_layout(self, tmp_path):
        save_model(ModelParams.zeros(2, 3), ModelConfig(2, 3), tmp_path / "m.json", concept_labels=["a", "b"])
        doc = json.loads((tmp_path / "m.json").read_text())
        assert doc["format_version"] == 1
        assert doc["num_concepts"] == 2 and doc["hidden_size"] == 3
        assert set(doc["weights"]) == {
            "w_fh", "w_fx", "b_f", "w_ih", "w_ix", "b_i", "w_ch", "w_cx", "b_c",
            "w_oh", "w_ox", "b_o", "w_yh", "b_y",
        }
        assert len(doc["weights"]["w_fx"]) == 3 and len(doc["weights"]["w_fx"][0]) == 4
        _, _, labels = load_model(tmp_path / "m.json", with_labels=True)
        assert labels == ["a", "b"]

    def test_dimension_contradiction(self, tmp_path):
        save_model(ModelParams.zeros(2, 3), ModelConfig(2, 3), tmp_path / "m.json")
        doc = json.loads((tmp_path / "m.json").read_text())
        doc["hidden_size"] = 4
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(DimensionError):
            load_model(tmp_path / "m.json")

    def test_truncated_file(self, tmp_path):
        save_model(ModelParams.zeros(2, 3), ModelConfig(2, 3), tmp_path / "m.json")
        text = (tmp_path / "m.json").read_text()
        (tmp_path / "m.json").write_text(text[: len(text) // 2])
        with pytest.raises(MalformedModelError):
            load_model(tmp_path / "m.json")

    def test_version_mismatch(self, tmp_path):
        save_model(ModelParams.zeros(2, 3), ModelConfig(2, 3), tmp_path / "m.json")
        doc = json.loads((tmp_path / "m.json").read_text())
        doc["format_version"] = 2
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(FormatVersionError):
            load_model(tmp_path / "m.json")

    def test_missing_weight(self, tmp_path):
        save_model(ModelParams.zeros(2, 3), ModelConfig(2, 3), tmp_path / "m.json")
        doc = json.loads((tmp_path / "m.json").read_text())
        del doc["weights"]["b_y"]
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(MalformedModelError):
            load_model(tmp_path / "m.json")

    def test_ragged_matrix(self, tmp_path):
        save_model(ModelParams.zeros(2, 3), ModelConfig(2, 3), tmp_path / "m.json")
        doc = json.loads((tmp_path / "m.json").read_text())
        doc["weights"]["w_fh"][1] = [0.0]
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(MalformedModelError):
            load_model(tmp_path / "m.json")
