import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colocate import synth
from colocate.synth import Archetype, SynthError


@pytest.fixture(scope="module")
def default_instance():
    return synth.generate_instance(300, R=500, seed=3)


class TestArchetype:
    def test_unknown(self):
        with pytest.raises(SynthError, match="unknown archetype"):
            Archetype("gamma")

    def test_unknown_param(self):
        with pytest.raises(SynthError, match="no parameter"):
            Archetype.of("constant", scale=0.1)

    @pytest.mark.parametrize("value", [1.5, -0.1, (0.3, 0.1)])
    def test_out_of_range(self, value):
        with pytest.raises(SynthError):
            Archetype.of("constant", level=value)

    @pytest.mark.parametrize("name", synth.ARCHETYPE_NAMES)
    def test_samples_in_unit_interval(self, name):
        t = synth.generate_task(name, 2000, np.random.default_rng(0))
        for d in (t.inst, t.avg):
            assert d.samples.min() >= 0 and d.samples.max() <= 1


class TestGenerateTask:
    def test_constant(self):
        t = synth.generate_task(Archetype.of("constant", level=0.5), 100, np.random.default_rng(0))
        assert t.sigma == 0 and t.mu == 0.5

    def test_uniform_full_band(self):
        t = synth.generate_task(Archetype.of("uniform_band", low=0.0, width=1.0), 10_000, np.random.default_rng(1))
        assert 0.48 <= t.mu <= 0.52
        assert 0.27 <= t.sigma <= 0.31

    def test_deterministic(self):
        a = synth.generate_task("bimodal", 300, np.random.default_rng(4))
        b = synth.generate_task("bimodal", 300, np.random.default_rng(4))
        np.testing.assert_array_equal(a.inst.samples, b.inst.samples)
        np.testing.assert_array_equal(a.avg.samples, b.avg.samples)

    def test_length(self):
        t = synth.generate_task("exponential_like", 37, np.random.default_rng(0))
        assert t.duration_records == 37

    def test_bad_length(self):
        with pytest.raises(SynthError):
            synth.generate_task("constant", 0, np.random.default_rng(0))

    @settings(max_examples=60, deadline=None)
    @given(st.sampled_from(synth.ARCHETYPE_NAMES), st.integers(0, 2**32 - 1))
    def test_avg_less_variable(self, name, seed):
        t = synth.generate_task(name, 500, np.random.default_rng(seed))
        assert t.avg.samples.std() <= t.sigma + 0.02

    def test_avg_is_window_mean(self):
        # Constant hidden draws: avg equals inst.
        t = synth.generate_task(Archetype.of("constant", level=0.2), 10, np.random.default_rng(0))
        np.testing.assert_allclose(t.avg.samples, t.inst.samples)


class TestGenerateInstance:
    def test_shapes(self, default_instance):
        inst = default_instance
        assert inst.inst_matrix.shape == inst.avg_matrix.shape == (300, 500)
        assert inst.n_tasks == 300 and inst.realizations == 500

    def test_rows_drawn_from_task(self, default_instance):
        for i in range(0, 300, 37):
            support = set(default_instance.tasks[i].inst.samples)
            assert set(default_instance.inst_matrix[i]) <= support
            support = set(default_instance.tasks[i].avg.samples)
            assert set(default_instance.avg_matrix[i]) <= support

    def test_constant_mix_needs_one_machine(self):
        inst = synth.generate_instance(10, {Archetype.of("constant", level=0.1): 1.0}, R=5, seed=0)
        assert math.ceil(round(sum(t.mu for t in inst.tasks), 9)) == 1

    def test_zero_tasks(self):
        with pytest.raises(SynthError):
            synth.generate_instance(0)

    @pytest.mark.parametrize("mix", [{"constant": 0.5}, {"constant": 0.7, "bimodal": 0.7}, {"constant": -1, "bimodal": 2}, {}])
    def test_invalid_weights(self, mix):
        with pytest.raises(SynthError):
            synth.generate_instance(5, mix, R=2)

    def test_seed_changes_matrices(self):
        a = synth.generate_instance(20, R=50, seed=5)
        b = synth.generate_instance(20, R=50, seed=6)
        assert not np.array_equal(a.inst_matrix, b.inst_matrix)

    def test_same_seed_identical(self):
        a = synth.generate_instance(20, R=50, seed=5)
        b = synth.generate_instance(20, R=50, seed=5)
        np.testing.assert_array_equal(a.inst_matrix, b.inst_matrix)
        np.testing.assert_array_equal(a.avg_matrix, b.avg_matrix)

    def test_tasks_independent_of_r(self):
        a = synth.generate_instance(10, R=5, seed=2)
        b = synth.generate_instance(10, R=50, seed=2)
        for x, y in zip(a.tasks, b.tasks):
            np.testing.assert_array_equal(x.inst.samples, y.inst.samples)

    def test_mixture_frequencies(self):
        n = 10_000
        inst = synth.generate_instance(n, R=1, seed=8, length_range=(24, 24))
        labels = np.array(inst.archetypes)
        for name, w in synth.DEFAULT_MIX.items():
            freq = np.mean(labels == name)
            assert abs(freq - w) <= 3 * math.sqrt(w * (1 - w) / n)

    def test_default_scale(self):
        totals = [sum(t.mu for t in synth.generate_instance(500, R=1, seed=s).tasks) for s in range(5)]
        assert 12 <= np.mean(totals) <= 16


class TestMix:
    def test_plain(self):
        mix = synth.parse_mix("constant:0.25, bimodal:0.75")
        assert [(a.name, w) for a, w in mix] == [("constant", 0.25), ("bimodal", 0.75)]

    def test_pinned_params(self):
        (a, w), = synth.parse_mix("constant[level=0.1]:1.0")
        assert a.params["level"] == 0.1 and w == 1.0

    def test_range_params(self):
        (a, _), (b, _) = synth.parse_mix("uniform_band[low=0.1;width=0.2~0.3]:0.5,constant:0.5")
        assert a.params["low"] == 0.1 and a.params["width"] == (0.2, 0.3)

    @pytest.mark.parametrize("text", ["constant", "constant:x", "nope:1.0", "constant[level=abc]:1", "constant:0.4"])
    def test_errors(self, text):
        with pytest.raises(SynthError):
            synth.parse_mix(text)


class TestBinary:
    def test_header_layout(self, tmp_path):
        m = np.arange(6, dtype=float).reshape(2, 3) / 10
        synth.write_matrix(tmp_path / "m.bin", m)
        raw = (tmp_path / "m.bin").read_bytes()
        assert raw[:8] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
        assert len(raw) == 8 + 6 * 8
        np.testing.assert_array_equal(np.frombuffer(raw[8:], "<f8"), m.ravel())
        np.testing.assert_array_equal(synth.read_matrix(tmp_path / "m.bin"), m)

    @pytest.mark.parametrize("payload", [b"\x01\x00", (2).to_bytes(4, "little") * 2 + b"\x00" * 8])
    def test_truncated(self, tmp_path, payload):
        (tmp_path / "bad.bin").write_bytes(payload)
        with pytest.raises(SynthError):
            synth.read_matrix(tmp_path / "bad.bin")

    def test_instance_round_trip(self, tmp_path):
        inst = synth.generate_instance(15, R=40, seed=1)
        synth.write_instance(inst, tmp_path / "inst")
        back = synth.read_instance(tmp_path / "inst")
        np.testing.assert_array_equal(back.inst_matrix, inst.inst_matrix)
        np.testing.assert_array_equal(back.avg_matrix, inst.avg_matrix)
        assert [t.task_id for t in back.tasks] == [t.task_id for t in inst.tasks]
        for a, b in zip(inst.tasks, back.tasks):
            assert a.mu == b.mu and a.sigma == b.sigma
