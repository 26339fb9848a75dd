"""Tests for the ansatz, encoder, decoder and batched probability kernels.

The batched kernels are compared with the object-level simulator, which
applies one gate and one Kraus channel at a time.
"""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aqcp.model import (
    AngleEncoder,
    AnsatzConfig,
    ConfigurationError,
    GridMap,
    TrainedModel,
    build_circuit,
    circuit_from_angles,
    circuit_probabilities,
    elu,
    encoder_forward,
    load_model,
    map_bitstring,
    model_probabilities,
    save_model,
)
from aqcp.noise import Constant, NoiseSchedule, noisy_probabilities
from aqcp.qsim import StateVector, apply_gate


class TestAnsatz:
    def test_parameter_count(self):
        assert AnsatzConfig().num_parameters == 75

    def test_gate_count_default(self):
        enc = AngleEncoder.initialise((1, 10, 10, 75), seed=0)
        gates = build_circuit(0.3, enc, AnsatzConfig())
        assert len(gates) == 95
        assert sum(g.kind == "CZ" for g in gates) == 20

    def test_full_entangler_pairs(self):
        assert len(AnsatzConfig(num_qubits=4, entangler="full").cz_pairs()) == 6

    def test_circular_entangler_closes_ring(self):
        assert AnsatzConfig(num_qubits=4, entangler="circular").cz_pairs()[-1] == (3, 0)

    def test_layer_order(self):
        gates = circuit_from_angles(np.arange(6.0), AnsatzConfig(num_qubits=2, num_layers=1))
        assert [g.kind for g in gates] == ["RZ", "RY", "RZ", "RZ", "RY", "RZ", "CZ"]
        assert [g.angle for g in gates[:6]] == [0, 1, 2, 3, 4, 5]

    def test_shape_mismatch(self):
        enc = AngleEncoder.initialise((1, 4, 10), seed=0)
        with pytest.raises(ConfigurationError):
            build_circuit(0.0, enc, AnsatzConfig())

    def test_bad_entangler(self):
        with pytest.raises(ConfigurationError):
            AnsatzConfig(entangler="star")


class TestEncoder:
    def test_zero_encoder(self):
        enc = AngleEncoder.zeros((1, 10, 10, 75))
        assert np.array_equal(encoder_forward(1.7, enc), np.zeros(75))

    def test_elu_hand_case(self):
        enc = AngleEncoder([np.array([[1.0]]), np.array([[1.0]])], [np.zeros(1), np.zeros(1)])
        assert encoder_forward(-1.0, enc)[0] == pytest.approx(np.exp(-1) - 1, abs=1e-12)
        assert encoder_forward(-1.0, enc)[0] == pytest.approx(-0.63212, abs=1e-5)

    def test_output_layer_linear(self):
        enc = AngleEncoder.initialise((1, 10, 10, 75), seed=3)
        doubled = enc.copy()
        doubled.weights[-1] *= 2
        doubled.biases[-1] *= 2
        assert np.allclose(encoder_forward(0.4, doubled), 2 * encoder_forward(0.4, enc))

    def test_initialisation_bounds(self):
        enc = AngleEncoder.initialise((1, 10, 10, 75), seed=1)
        for w, fan_in in zip(enc.weights, (1, 10, 10)):
            assert np.all(np.abs(w) <= 1 / np.sqrt(fan_in))

    def test_flat_roundtrip(self):
        enc = AngleEncoder.initialise((1, 3, 6), seed=2)
        back = enc.with_flat(enc.flat())
        assert np.array_equal(back.flat(), enc.flat())

    def test_elu_continuous_at_zero(self):
        assert elu(np.array([-1e-12, 0.0, 1e-12])) == pytest.approx([-1e-12, 0, 1e-12])

    def test_backward_matches_finite_difference(self):
        enc = AngleEncoder.initialise((1, 5, 4, 6), seed=11)
        rng = np.random.default_rng(0)
        xs = rng.uniform(-3, 3, 7)
        g = rng.normal(size=(7, 6))
        gw, gb = enc.backward(xs, g)
        analytic = AngleEncoder(gw, gb).flat()
        flat = enc.flat()
        h = 1e-6
        numeric = np.empty_like(flat)
        for i in range(flat.size):
            up, dn = flat.copy(), flat.copy()
            up[i] += h
            dn[i] -= h
            numeric[i] = (np.sum(g * enc.with_flat(up).forward(xs)) - np.sum(g * enc.with_flat(dn).forward(xs))) / (2 * h)
        assert np.max(np.abs(analytic - numeric)) / np.max(np.abs(numeric)) <= 1e-6


class TestGridMap:
    def test_endpoints(self):
        g = GridMap()
        assert map_bitstring("00000", g) == -1.5
        assert map_bitstring("11111", g) == pytest.approx(1.5)

    def test_first_step(self):
        assert map_bitstring("00001", GridMap()) == pytest.approx(-1.403226, abs=1e-6)

    def test_msb_first(self):
        assert map_bitstring("10000", GridMap()) == pytest.approx(0.048387, abs=1e-6)

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            map_bitstring("0101", GridMap())

    def test_bijection_and_monotone(self):
        g = GridMap()
        vals = [g.map_bitstring(g.bitstring(i)) for i in range(32)]
        assert np.all(np.diff(vals) > 0)
        assert np.array_equal(g.nearest_index(vals), np.arange(32))

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-5, 5))
    def test_nearest_index_is_nearest(self, y):
        g = GridMap()
        idx = int(g.nearest_index(y))
        assert abs(g.values[idx] - y) <= np.min(np.abs(g.values - y)) + 1e-12


class TestProbabilities:
    @pytest.fixture
    def angles(self, small_config):
        return np.random.default_rng(5).uniform(-np.pi, np.pi, (4, small_config.num_parameters))

    def object_level(self, angles, config, schedule):
        return np.array([noisy_probabilities(circuit_from_angles(a, config), schedule, 0.0, config.num_qubits) for a in angles])

    def test_statevector_path(self, angles, small_config):
        ref = []
        for a in angles:
            psi = StateVector.zero(3)
            for g in circuit_from_angles(a, small_config):
                psi = apply_gate(psi, g)
            ref.append(psi.probabilities())
        assert np.allclose(circuit_probabilities(angles, small_config), ref, atol=1e-12)

    @pytest.mark.parametrize("family", ["depolarising", "phase_flip", "amplitude_damping"])
    def test_density_path(self, angles, small_config, family):
        sched = NoiseSchedule(family, Constant(0.07), Constant(0.02))
        got = circuit_probabilities(angles, small_config, family=family, gate_param=0.07, readout_flip=0.02)
        assert np.allclose(got, self.object_level(angles, small_config, sched), atol=1e-12)

    def test_mixed_rows(self, angles, small_config):
        p = np.array([0.0, 0.1, 0.0, 0.2])
        got = circuit_probabilities(angles, small_config, gate_param=p)
        for row, pi in zip(range(4), p):
            ref = self.object_level(angles[row : row + 1], small_config, NoiseSchedule("depolarising", Constant(pi)))
            assert np.allclose(got[row], ref[0], atol=1e-12)

    def test_zero_encoder_point_mass(self):
        enc = AngleEncoder.zeros((1, 10, 10, 75))
        probs = model_probabilities([0.0, 2.0], enc, AnsatzConfig())
        assert np.allclose(probs[:, 0], 1.0)

    def test_rows_are_distributions(self, angles, small_config):
        probs = circuit_probabilities(angles, small_config, gate_param=0.5, readout_flip=0.3)
        assert np.all(probs >= 0)
        assert np.allclose(probs.sum(axis=1), 1, atol=1e-10)


class TestModelFile:
    def test_roundtrip(self, tmp_path):
        enc = AngleEncoder.initialise((1, 10, 10, 75), seed=4)
        model = TrainedModel(enc, AnsatzConfig(), GridMap(), {"note": "x"})
        save_model(tmp_path / "m.json", model)
        back = load_model(tmp_path / "m.json")
        assert np.array_equal(back.encoder.flat(), enc.flat())
        assert back.config == model.config and back.grid == model.grid

    def test_format_version_first(self, tmp_path):
        save_model(tmp_path / "m.json", TrainedModel(AngleEncoder.zeros((1, 2, 75)), AnsatzConfig(), GridMap()))
        doc = json.loads((tmp_path / "m.json").read_text())
        assert next(iter(doc)) == "format_version"

    def test_bad_version(self, tmp_path):
        save_model(tmp_path / "m.json", TrainedModel(AngleEncoder.zeros((1, 2, 75)), AnsatzConfig(), GridMap()))
        doc = json.loads((tmp_path / "m.json").read_text())
        doc["format_version"] = 99
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(ConfigurationError):
            load_model(tmp_path / "m.json")

    def test_ansatz_mismatch(self, tmp_path):
        save_model(tmp_path / "m.json", TrainedModel(AngleEncoder.zeros((1, 2, 75)), AnsatzConfig(), GridMap()))
        doc = json.loads((tmp_path / "m.json").read_text())
        doc["ansatz"]["num_layers"] = 4
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(ConfigurationError):
            load_model(tmp_path / "m.json")
