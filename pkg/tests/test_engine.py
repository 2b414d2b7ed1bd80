import gc
import json
import linecache
import tracemalloc

import numpy as np
import pytest

from vstage import wavio
from vstage.engine import Engine, SimulatedDevice
from vstage.errors import BlockSizeError, SampleRateMismatchError
from vstage.session import load_session_config
from vstage.signals import SampledSignal

FS = 48000.0
NAMES = ("violin", "cello")


def make_session(tmp_path, scenario_irs, *, block_size=48, rate=FS,
                 latency=0.004, talkback=False):
    """Write BRIR wavs plus a session document and load it.

    scenario_irs: {scenario_id: {(player, listener): (n, 2) array}}
    Missing pairs get silent responses; self pairs are marked skipped.
    """
    for sid, cells in scenario_irs.items():
        for p in NAMES:
            for l in NAMES:
                ir = cells.get((p, l))
                if ir is None:
                    ir = np.zeros((8, 2))
                path = tmp_path / sid / f"{p}_{l}.wav"
                path.parent.mkdir(parents=True, exist_ok=True)
                wavio.write(path, SampledSignal(np.asarray(ir, dtype=np.float64),
                                                rate), encoding="float32")
    doc = {
        "schema_version": 1,
        "sample_rate": rate,
        "block_size": block_size,
        "device": {"backend": "simulated", "latency_seconds": latency,
                   "buffer_samples": 192},
        "players": [
            {"id": "violin", "mic_channel": 0, "mic_distance_m": 1.0},
            {"id": "cello", "mic_channel": 1, "mic_distance_m": 1.0},
        ],
        "listeners": [
            {"id": "violin", "headphone_channels": [0, 1]},
            {"id": "cello", "headphone_channels": [2, 3]},
        ],
        "scenarios": [
            {"id": sid, "brirs": [
                {"player": p, "listener": l, "path": f"{sid}/{p}_{l}.wav",
                 "direct_sound_skipped": p == l}
                for p in NAMES for l in NAMES
            ]}
            for sid in scenario_irs
        ],
        "feasibility": {"min_distance_m": 3.0, "receiver_height_m": 1.8},
        "talkback": {"enabled": talkback},
    }
    path = tmp_path / "session.json"
    path.write_text(json.dumps(doc))
    return load_session_config(path)


def random_matrix(rng, n_taps=333):
    """Full 2x2 grid of random stereo responses, float32-exact taps."""
    cells = {}
    for p in NAMES:
        for l in NAMES:
            ir = rng.standard_normal((n_taps, 2)) * 0.1
            cells[(p, l)] = ir.astype(np.float32).astype(np.float64)
    return cells


def offline_reference(inputs, cells, n_samples):
    """Straight two-term convolution sum, the oracle for the live path."""
    out = np.zeros((4, n_samples))
    for (p, l), ir in cells.items():
        p_idx = NAMES.index(p)
        l_idx = NAMES.index(l)
        for ear in (0, 1):
            y = np.convolve(inputs[p_idx], ir[:, ear])[:n_samples]
            out[2 * l_idx + ear] += y
    return out


def rel_error(got, want):
    return np.max(np.abs(got - want)) / np.max(np.abs(want))


class TestMixAgainstOfflineOracle:
    @pytest.mark.parametrize("block_size", [48, 64, 256])
    def test_streamed_matrix_matches_offline_sum(self, tmp_path, rng,
                                                 block_size):
        cells = random_matrix(rng)
        cfg = make_session(tmp_path, {"S1": cells}, block_size=block_size)
        engine = Engine(cfg)
        n = block_size * 8
        inputs = rng.standard_normal((2, n))
        got = engine.render(inputs)
        want = offline_reference(inputs, cells, n)
        assert got.shape == (4, n)
        assert rel_error(got, want) < 1e-6

    def test_superposition_over_players(self, tmp_path, rng):
        cells = random_matrix(rng)
        cfg = make_session(tmp_path, {"S1": cells})
        n = 48 * 20
        inputs = rng.standard_normal((2, n))
        solo_v = inputs.copy()
        solo_v[1] = 0.0
        solo_c = inputs.copy()
        solo_c[0] = 0.0
        together = Engine(cfg).render(inputs)
        apart = Engine(cfg).render(solo_v) + Engine(cfg).render(solo_c)
        assert rel_error(together, apart) < 1e-6

    def test_identity_response_passes_input_through(self, tmp_path, rng):
        delta = np.zeros((8, 2))
        delta[0] = 1.0
        cfg = make_session(tmp_path, {"S1": {("violin", "cello"): delta}})
        n = 48 * 10
        inputs = np.zeros((2, n))
        inputs[0] = rng.standard_normal(n)
        out = Engine(cfg).render(inputs)
        np.testing.assert_allclose(out[2], inputs[0], atol=1e-12)
        np.testing.assert_allclose(out[3], inputs[0], atol=1e-12)
        assert np.all(out[:2] == 0.0)

    def test_all_zero_inputs_give_all_zero_outputs(self, tmp_path, rng):
        cfg = make_session(tmp_path, {"S1": random_matrix(rng)})
        out = Engine(cfg).render(np.zeros((2, 480)))
        assert np.all(out == 0.0)

    def test_wrong_block_shape_rejected(self, tmp_path, rng):
        cfg = make_session(tmp_path, {"S1": random_matrix(rng)})
        engine = Engine(cfg)
        engine.start()
        with pytest.raises(BlockSizeError):
            engine.mix_block(np.zeros((2, 47)))

    def test_rate_mismatch_rejected(self, tmp_path, rng):
        cells = random_matrix(rng)
        cfg = make_session(tmp_path, {"S1": cells})
        bad = tmp_path / "S1" / "violin_cello.wav"
        wavio.write(bad, SampledSignal(cells[("violin", "cello")], 44100.0),
                    encoding="float32")
        with pytest.raises(SampleRateMismatchError):
            Engine(cfg)


def sine_inputs(n, freq=997.0, rate=FS, amp=1.0):
    inputs = np.zeros((2, n))
    inputs[0] = amp * np.sin(2 * np.pi * freq * np.arange(n) / rate)
    return inputs


def delta_cells(gain):
    delta = np.zeros((8, 2))
    delta[0] = gain
    return {("violin", "cello"): delta}


class TestScenarioSwitch:
    def run_blocks(self, engine, inputs, switch_at=None, target=None):
        b = engine.config.block_size
        n_blocks = inputs.shape[1] // b
        out = np.zeros((4, n_blocks * b))
        engine.start()
        for i in range(n_blocks):
            if switch_at is not None and i == switch_at:
                engine.switch_scenario(target)
            block = engine.mix_block(inputs[:, i * b:(i + 1) * b])
            out[:, i * b:(i + 1) * b] = block
        engine.stop()
        return out

    def test_output_before_switch_is_bit_identical(self, tmp_path, rng):
        scenarios = {"S1": delta_cells(1.0), "S2": delta_cells(0.5)}
        inputs = rng.standard_normal((2, 48 * 40))
        plain = self.run_blocks(Engine(make_session(tmp_path, scenarios)),
                                inputs)
        switched = self.run_blocks(Engine(make_session(tmp_path, scenarios)),
                                   inputs, switch_at=10, target="S2")
        edge = 10 * 48
        assert np.array_equal(plain[:, :edge], switched[:, :edge])
        assert not np.array_equal(plain[:, edge:], switched[:, edge:])

    def test_switch_to_active_scenario_is_noop(self, tmp_path, rng):
        scenarios = {"S1": delta_cells(1.0), "S2": delta_cells(0.5)}
        inputs = rng.standard_normal((2, 48 * 30))
        plain = self.run_blocks(Engine(make_session(tmp_path, scenarios)),
                                inputs)
        engine = Engine(make_session(tmp_path, scenarios))
        same = self.run_blocks(engine, inputs, switch_at=10, target="S1")
        assert np.array_equal(plain, same)
        assert any(e["event"] == "scenario_switch" for e in engine.events)

    def test_silent_through_crossfade(self, tmp_path):
        scenarios = {"S1": delta_cells(1.0), "S2": delta_cells(0.5)}
        engine = Engine(make_session(tmp_path, scenarios))
        out = self.run_blocks(engine, np.zeros((2, 48 * 120)),
                              switch_at=5, target="S2")
        assert np.all(out == 0.0)

    def test_crossfade_has_no_click(self, tmp_path):
        scenarios = {"S1": delta_cells(1.0), "S2": delta_cells(0.5)}
        n = 48 * 200
        inputs = sine_inputs(n)

        baseline = self.run_blocks(
            Engine(make_session(tmp_path, scenarios)), inputs)
        switched = self.run_blocks(
            Engine(make_session(tmp_path, scenarios)), inputs,
            switch_at=50, target="S2")

        def worst_kink(x):
            return np.max(np.abs(np.diff(x, n=2)))

        # a hard gain step of 0.5 would kink the waveform by ~0.5;
        # -60 dBFS of click on top of the sine's own curvature is the cap
        assert worst_kink(switched[2]) < worst_kink(baseline[2]) + 1e-3
        # and the switch did take effect
        assert np.max(np.abs(switched[2, -480:])) < 0.55
        assert np.max(np.abs(baseline[2, -480:])) > 0.9

    def test_fade_settles_on_new_scenario_exactly(self, tmp_path, rng):
        scenarios = {"S1": delta_cells(1.0), "S2": delta_cells(0.5)}
        inputs = rng.standard_normal((2, 48 * 200))
        only_s2 = Engine(make_session(tmp_path, scenarios))
        only_s2.switch_scenario("S2")      # idle switch, no fade
        want = self.run_blocks(only_s2, inputs)
        got = self.run_blocks(Engine(make_session(tmp_path, scenarios)),
                              inputs, switch_at=10, target="S2")
        # 50 ms at 48 kHz is 50 blocks of 48; after block 10+50 both runs
        # convolve with the same matrix and the same input history
        settle = (10 + 50 + 8) * 48
        np.testing.assert_allclose(got[:, settle:], want[:, settle:],
                                   atol=1e-12)

    def test_switch_during_fade_is_deferred(self, tmp_path, rng):
        scenarios = {"S1": delta_cells(1.0), "S2": delta_cells(0.5),
                     "S3": delta_cells(0.25)}
        engine = Engine(make_session(tmp_path, scenarios))
        inputs = rng.standard_normal((2, 48 * 300))
        b = 48
        engine.start()
        for i in range(300):
            if i == 10:
                engine.switch_scenario("S2")
            if i == 20:
                engine.switch_scenario("S3")   # mid-fade: deferred
            engine.mix_block(inputs[:, i * b:(i + 1) * b])
        engine.stop()
        assert engine.get_state()["active_scenario"] == "S3"

    def test_unknown_scenario_rejected(self, tmp_path, rng):
        engine = Engine(make_session(tmp_path, {"S1": delta_cells(1.0)}))
        with pytest.raises(ValueError, match="S9"):
            engine.switch_scenario("S9")


class TestMetersAndState:
    def test_sine_levels(self, tmp_path):
        engine = Engine(make_session(tmp_path, {"S1": delta_cells(1.0)}))
        n = 48 * 500   # 0.5 s
        engine.start()
        inputs = sine_inputs(n, amp=0.8)
        b = 48
        for i in range(500):
            engine.mix_block(inputs[:, i * b:(i + 1) * b])
        meters = engine.get_meters()
        left = meters["channels"][2]
        assert left["rms_db"] == pytest.approx(
            20 * np.log10(0.8 / np.sqrt(2)), abs=0.2)
        assert left["peak_hold_db"] == pytest.approx(
            20 * np.log10(0.8), abs=0.1)
        # silent channel stays on the floor
        assert meters["channels"][0]["rms_db"] == -120.0

    def test_meters_decay_to_floor_after_silence(self, tmp_path):
        engine = Engine(make_session(tmp_path, {"S1": delta_cells(1.0)}))
        engine.start()
        b = 48
        inputs = sine_inputs(48 * 200, amp=0.8)
        for i in range(200):
            engine.mix_block(inputs[:, i * b:(i + 1) * b])
        loud = engine.get_meters()["channels"][2]
        silence = np.zeros((2, b))
        for _ in range(2000):   # 2 s > both the RMS window and the hold
            engine.mix_block(silence)
        quiet = engine.get_meters()["channels"][2]
        assert loud["peak_hold_db"] > -3.0
        assert quiet["rms_db"] == -120.0
        assert quiet["peak_hold_db"] == -120.0

    def test_state_snapshot(self, tmp_path):
        engine = Engine(make_session(tmp_path, {"S1": delta_cells(1.0),
                                                "S2": delta_cells(0.5)}))
        state = engine.get_state()
        assert state["transport"] == "idle"
        assert state["active_scenario"] == "S1"
        assert state["scenario_ids"] == ["S1", "S2"]
        assert state["sample_rate"] == FS
        assert state["block_size"] == 48
        assert not state["fading"]
        engine.start()
        engine.mix_block(np.zeros((2, 48)))
        state = engine.get_state()
        assert state["transport"] == "running"
        assert state["blocks_processed"] == 1
        assert state["headroom"] <= 1.0


class TestEventsAndXruns:
    def test_dropout_substitutes_silence_and_logs(self, tmp_path):
        cfg = make_session(tmp_path, {"S1": delta_cells(1.0)})
        n = 48 * 10
        inputs = sine_inputs(n)
        device = SimulatedDevice(inputs, 48, FS, dropouts={3: (0,)})
        engine = Engine(cfg)
        out = engine.run(device)
        block3 = out[2, 3 * 48:4 * 48]
        # silence up to the convolver's FFT round-off
        assert np.max(np.abs(block3)) < 1e-12
        assert np.max(np.abs(out[2, 4 * 48:5 * 48])) > 0.1
        xruns = [e for e in engine.events if e["event"] == "xrun"]
        assert len(xruns) == 1
        assert xruns[0]["block"] == 3
        assert xruns[0]["channels"] == [0]
        assert engine.get_state()["xruns"] == 1

    def test_event_log_file_is_json_lines(self, tmp_path):
        log_path = tmp_path / "events.jsonl"
        engine = Engine(make_session(tmp_path, {"S1": delta_cells(1.0),
                                                "S2": delta_cells(0.5)}),
                        log_path=log_path)
        engine.start()
        engine.switch_scenario("S2")
        for _ in range(60):
            engine.mix_block(np.zeros((2, 48)))
        engine.log_marker("take one")
        engine.stop()
        lines = [json.loads(line)
                 for line in log_path.read_text().strip().splitlines()]
        assert [e["seq"] for e in lines] == sorted(e["seq"] for e in lines)
        times = [e["time"] for e in lines]
        assert all(b >= a for a, b in zip(times, times[1:]))
        kinds = {e["event"] for e in lines}
        assert {"transport", "scenario_switch", "marker"} <= kinds
        marker = next(e for e in lines if e["event"] == "marker")
        assert marker["text"] == "take one"


class TestTalkback:
    def test_talkback_routes_voice_around_the_matrix(self, tmp_path):
        # all-silent responses: anything heard must be the talkback bus
        cfg = make_session(tmp_path, {"S1": {}}, talkback=True)
        engine = Engine(cfg)
        n = 48 * 10
        inputs = sine_inputs(n, amp=0.3)
        out = engine.render(inputs)
        np.testing.assert_allclose(out[2], inputs[0], atol=1e-12)
        np.testing.assert_allclose(out[3], inputs[0], atol=1e-12)
        # no talkback into the speaker's own ears
        assert np.all(out[0] == 0.0)
        assert np.all(out[1] == 0.0)

    def test_talkback_toggle_is_logged_and_silences(self, tmp_path):
        cfg = make_session(tmp_path, {"S1": {}}, talkback=True)
        engine = Engine(cfg)
        engine.set_talkback(False)
        out = engine.render(sine_inputs(480, amp=0.3))
        assert np.all(out == 0.0)
        assert any(e["event"] == "talkback" for e in engine.events)


class TestOfflineRender:
    def test_two_fresh_engines_render_bit_identically(self, tmp_path, rng):
        cells = random_matrix(rng)
        inputs = rng.standard_normal((2, 48 * 25))
        a = Engine(make_session(tmp_path, {"S1": cells})).render(inputs)
        b = Engine(make_session(tmp_path, {"S1": cells})).render(inputs)
        assert np.array_equal(a, b)

    def test_same_engine_renders_bit_identically_twice(self, tmp_path, rng):
        engine = Engine(make_session(tmp_path, {"S1": random_matrix(rng)}))
        inputs = rng.standard_normal((2, 48 * 25))
        assert np.array_equal(engine.render(inputs), engine.render(inputs))

    def test_render_pads_partial_final_block(self, tmp_path, rng):
        engine = Engine(make_session(tmp_path, {"S1": random_matrix(rng)}))
        inputs = rng.standard_normal((2, 1000))   # not a block multiple
        out = engine.render(inputs)
        assert out.shape == (4, 1000)

    def test_run_on_device_matches_render(self, tmp_path, rng):
        cells = random_matrix(rng)
        inputs = rng.standard_normal((2, 48 * 25))
        rendered = Engine(make_session(tmp_path, {"S1": cells})).render(inputs)
        engine = Engine(make_session(tmp_path, {"S1": cells}))
        streamed = engine.run(SimulatedDevice(inputs, 48, FS))
        assert np.array_equal(rendered, streamed)


class TestLatencyCheck:
    def test_simulated_loopback_delay_found(self, tmp_path):
        engine = Engine(make_session(tmp_path, {"S1": delta_cells(1.0)}))
        device = SimulatedDevice(np.zeros((2, 48)), 48, FS,
                                 loopback_delay_samples=192)
        m = engine.run_latency_check(device)
        assert abs(m.latency_samples - 192) <= 1
        assert m.buffer_samples == 192
        assert any(e["event"] == "latency_check" for e in engine.events)
        assert engine.get_state()["measured_latency_seconds"] == pytest.approx(
            m.latency_seconds)


class TestSteadyStateAllocations:
    def test_no_net_memory_growth_in_mix_loop(self, tmp_path, rng):
        engine = Engine(make_session(tmp_path, {"S1": random_matrix(rng),
                                                "S2": random_matrix(rng)}))
        engine.start()
        block = np.ascontiguousarray(rng.standard_normal((2, 48)))
        for _ in range(100):                      # warm every code path
            engine.mix_block(block)
        gc.collect()
        tracemalloc.start()
        before = tracemalloc.take_snapshot()
        for _ in range(500):
            engine.mix_block(block)
        gc.collect()
        after = tracemalloc.take_snapshot()
        tracemalloc.stop()
        filters = (
            tracemalloc.Filter(False, tracemalloc.__file__),
            tracemalloc.Filter(False, linecache.__file__),
            tracemalloc.Filter(False, "<frozen importlib._bootstrap>"),
        )
        stats = after.filter_traces(filters).compare_to(
            before.filter_traces(filters), "filename")
        net = sum(s.size_diff for s in stats)
        # a mere 100-byte leak per block would show up as 50 kB here
        assert net < 32768, f"net allocation growth {net} bytes over 500 blocks"
