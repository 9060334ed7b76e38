"""
End-to-end tests for the filtering pipeline.

The fast tests use short records. Tests marked ``slow`` run full-length
records and check the headline behavior: noise suppression below the
crossover, out-of-track rejection, dual-passband tracking and BPSK recovery.
"""

import math
from pathlib import Path

import numpy as np
import pytest

from core import metrics
from core.config import parse_config
from core.models import (
    ChainConfig,
    DlfmSpec,
    FhSpec,
    FrequencyTrack,
    LfmSpec,
    NlfmSpec,
    ObpfSpec,
    OpticalBand,
    PhaseCodedSpec,
    SbsParams,
)
from core.photonic_chain import ChainError
from core.waveforms import WaveformError, phase_code, synthesize, synthesize_tone
from processing.pipeline import (
    behavioral_filter,
    default_probe_grid,
    measure_response,
    optical_carrier,
    resolve_obpf,
    run_experiment,
    run_with_signal,
    summarize_response,
)
from processing.sweep_runner import run_sweep

FS = 64e9
EXPERIMENTS_DIR = Path(__file__).resolve().parents[1] / "configs" / "experiments"


def _line_level(field, freq: float) -> float:
    spectrum = np.abs(np.fft.fft(field.samples)) / len(field)
    freqs = np.fft.fftfreq(len(field), d=1 / field.sample_rate)
    return float(spectrum[np.argmin(np.abs(freqs - freq))])


# ============================================================================
# Optical carrier preparation
# ============================================================================

class TestResolveObpf:

    def test_lower_sideband_with_guard(self, chain):
        spec = resolve_obpf(chain, (13.3e9, 14.5e9))
        assert spec.band.f_low == pytest.approx(-16.5e9)
        assert spec.band.f_high == pytest.approx(-11.3e9)

    def test_upper_sideband(self):
        cfg = ChainConfig(sideband_sign=1)
        spec = resolve_obpf(cfg, (2.5e9, 3.0e9))
        assert spec.band.f_low == pytest.approx(0.5e9)
        assert spec.band.f_high == pytest.approx(5.0e9)

    def test_guard_clipped_near_carrier(self, chain, caplog):
        spec = resolve_obpf(chain, (1.0e9, 2.0e9))
        assert spec.band.f_high == pytest.approx(-chain.obpf.edge_width)
        assert "guard clipped" in caplog.text

    def test_explicit_band_kept(self):
        band = OpticalBand(f_low=-15e9, f_high=-12e9)
        cfg = ChainConfig(obpf=ObpfSpec(band=band))
        assert resolve_obpf(cfg, (13.3e9, 14.5e9)).band == band


def test_optical_carrier_keeps_one_sideband(short_chain):
    control = synthesize_tone(13.9e9, 1.0, FS, short_chain.duration)
    carrier = optical_carrier(control, short_chain, resolve_obpf(short_chain, (13.9e9, 13.9e9)))
    kept = _line_level(carrier, -13.9e9)
    assert kept > 0.2
    assert _line_level(carrier, 13.9e9) < 1e-10 * kept


# ============================================================================
# Experiments
# ============================================================================

class TestRunExperiment:

    def test_noise_free_run(self, short_lfm, short_chain):
        artifacts = run_experiment(short_lfm, None, short_chain)
        np.testing.assert_array_equal(artifacts.filtered.samples, artifacts.reference.samples)
        assert artifacts.mse_after == pytest.approx(0.0, abs=1e-20)
        assert artifacts.mse_before == pytest.approx(0.0, abs=1e-20)
        assert artifacts.snr_target is None

    def test_records_aligned(self, short_lfm, short_chain):
        artifacts = run_experiment(short_lfm, 3.0, short_chain)
        assert len(artifacts.noisy_input) == len(artifacts.filtered) == short_chain.n_samples
        assert artifacts.filtered.sample_rate == FS

    def test_deterministic(self, short_lfm, short_chain):
        a = run_experiment(short_lfm, 0.0, short_chain)
        b = run_experiment(short_lfm, 0.0, short_chain)
        np.testing.assert_array_equal(a.filtered.samples, b.filtered.samples)
        assert a.mse_after == b.mse_after

    def test_seed_changes_noise(self, short_lfm, short_chain):
        a = run_experiment(short_lfm, 0.0, short_chain)
        b = run_experiment(short_lfm, 0.0, short_chain.model_copy(update={"seed": 2}))
        assert not np.array_equal(a.noisy_input.samples, b.noisy_input.samples)

    def test_reference_independent_of_noise(self, short_lfm, short_chain):
        baseline = run_experiment(short_lfm, None, short_chain).reference.samples
        for snr_db, seed in [(-6.0, 1), (3.0, 1), (3.0, 2)]:
            cfg = short_chain.model_copy(update={"seed": seed})
            reference = run_experiment(short_lfm, snr_db, cfg).reference.samples
            np.testing.assert_array_equal(reference, baseline)

    def test_metadata(self, short_lfm, short_chain):
        meta = run_experiment(short_lfm, 3.0, short_chain).metadata
        assert meta["waveform"]["kind"] == "lfm"
        assert meta["control"]["f_start"] == pytest.approx(13.3e9)
        assert meta["control"]["f_stop"] == pytest.approx(14.5e9)
        assert meta["obpf_band"] == pytest.approx([-16.5e9, -11.3e9])
        assert meta["seed"] == short_chain.seed
        assert meta["noise_seed"] != meta["receiver_seed"]
        assert meta["n_samples"] == 64000

    def test_low_snr_improves(self, short_lfm, short_chain):
        artifacts = run_experiment(short_lfm, -12.0, short_chain)
        assert artifacts.mse_before > 0.9
        assert metrics.mse_improvement(artifacts) > 3.0

    def test_high_snr_degrades(self, short_lfm, short_chain):
        """Above the crossover the receiver noise floor dominates."""
        artifacts = run_experiment(short_lfm, 15.5, short_chain)
        assert artifacts.mse_after > artifacts.mse_before

    def test_lfm_at_8_db(self, lfm, chain):
        artifacts = run_experiment(lfm, 8.0, chain)
        assert artifacts.mse_after < artifacts.mse_before


class TestRunWithSignal:

    def test_matches_synthesized_run(self, short_lfm, short_chain):
        signal, _ = synthesize(short_lfm, FS, short_chain.duration)
        imported = run_with_signal(signal, short_lfm, 3.0, short_chain)
        native = run_experiment(short_lfm, 3.0, short_chain)
        np.testing.assert_array_equal(imported.filtered.samples, native.filtered.samples)
        assert imported.metadata["waveform"] == "imported"

    def test_wrong_length(self, short_lfm, chain):
        signal, _ = synthesize(short_lfm, FS, 1e-6)
        with pytest.raises(ChainError, match="sampling grid"):
            run_with_signal(signal, short_lfm, 3.0, chain)


# ============================================================================
# Behavioral oracle
# ============================================================================

class TestBehavioralFilter:

    def test_constant_tone_gets_peak_gain(self):
        tone = synthesize_tone(3e9, 1.0, FS, 1e-6)
        track = FrequencyTrack(components=[np.full(len(tone), 3e9)])
        sbs = SbsParams()
        out = behavioral_filter(tone, track, sbs)
        np.testing.assert_allclose(out.samples, math.exp(0.5 * sbs.peak_gain_nepers) * tone.samples, atol=1e-9)

    def test_two_components_rejected(self):
        signal, track = synthesize(DlfmSpec(), FS, 4e-6)
        with pytest.raises(WaveformError, match="single-component"):
            behavioral_filter(signal, track, SbsParams())

    def test_length_mismatch(self):
        tone = synthesize_tone(3e9, 1.0, FS, 1e-6)
        track = FrequencyTrack(components=[np.full(100, 3e9)])
        with pytest.raises(WaveformError, match="lengths differ"):
            behavioral_filter(tone, track, SbsParams())

    def test_matches_photonic_chain(self, lfm, chain):
        signal, track = synthesize(lfm, FS, chain.duration)
        artifacts = run_experiment(lfm, None, chain)
        oracle = behavioral_filter(signal, track, chain.sbs)
        assert metrics.normalized_correlation(oracle, artifacts.reference) >= 0.99


# ============================================================================
# Static frequency response
# ============================================================================

class TestMeasureResponse:

    def test_passband_at_13_9_ghz_control(self, short_chain):
        curve = measure_response(13.9e9, short_chain, default_probe_grid(3.1e9))
        summary = summarize_response(curve)
        assert summary.peak_freq == pytest.approx(3.1e9, abs=1e6)
        assert summary.bw3db == pytest.approx(22.5e6, rel=0.1)

    def test_far_probe_rejected(self, short_chain):
        curve = dict(measure_response(13.9e9, short_chain, [3.1e9, 4.1e9]))
        assert curve[4.1e9] <= curve[3.1e9] - 30.0

    def test_probe_beyond_nyquist(self, short_chain):
        with pytest.raises(ChainError, match="outside Nyquist"):
            measure_response(13.9e9, short_chain, [3.1e9, 40e9])

    @pytest.mark.slow
    def test_tunable_passband(self, short_chain):
        for f_ctrl in [11.8e9 + 0.5e9 * k for k in range(8)]:
            center = f_ctrl - 10.8e9
            summary = summarize_response(measure_response(f_ctrl, short_chain, default_probe_grid(center)))
            assert summary.peak_freq == pytest.approx(center, abs=1e6), f_ctrl
            assert summary.bw3db == pytest.approx(short_chain.sbs.target_bw3db, rel=0.1), f_ctrl


class TestSummarizeResponse:

    def test_lorentzian_curve(self):
        freqs = default_probe_grid(3.1e9)
        levels = -10 * np.log10(1 + (2 * (freqs - 3.1003e9) / 22.5e6) ** 2)
        summary = summarize_response(list(zip(freqs, levels)))
        assert summary.peak_freq == pytest.approx(3.1003e9, abs=0.2e6)
        assert summary.bw3db == pytest.approx(22.5e6, abs=0.5e6)

    def test_no_half_power_crossing(self):
        freqs = default_probe_grid(3.1e9, span=10e6)
        summary = summarize_response([(f, 0.0 if f == 3.1e9 else -1.0) for f in freqs])
        assert math.isnan(summary.bw3db)


def test_default_probe_grid():
    grid = default_probe_grid(3.1e9)
    assert grid.size == 81
    assert grid[40] == pytest.approx(3.1e9)
    np.testing.assert_allclose(np.diff(grid), 1e6)


# ============================================================================
# Full-length behavior
# ============================================================================

def _clean_frames(track: FrequencyTrack, n_frames: int, window: int, hop: int) -> np.ndarray:
    starts = np.arange(n_frames) * hop
    edges = np.asarray(track.transitions)
    return np.array([not np.any((edges > s) & (edges < s + window)) for s in starts])


@pytest.mark.slow
class TestFullLength:

    def test_fh_out_of_track_suppression(self, chain):
        spec = FhSpec()
        artifacts = run_experiment(spec, 3.0, chain)
        _, track = synthesize(spec, FS, chain.duration)
        band = chain.bpf.band

        def contrast(signal) -> float:
            spec_ = metrics.spectrogram(signal, window_len=512, hop=256, band=band)
            keep = _clean_frames(track, spec_.frame_times.size, 512, 256)
            power = spec_.power[keep]
            away = (spec_.bin_freqs >= 3.2e9) & (spec_.bin_freqs <= 3.8e9)
            ridge = power.max(axis=1).mean()
            return 10 * math.log10(ridge / power[:, away].mean())

        before = contrast(artifacts.noisy_input)
        after = contrast(artifacts.filtered)
        # a single 125 MHz bin against noise spread over the 1.6 GHz band
        assert before < 15.0
        assert after >= 20.0
        assert after - before >= 8.0

    def test_lfm_ridge_follows_track(self, lfm, chain):
        artifacts = run_experiment(lfm, 8.0, chain)
        _, track = synthesize(lfm, FS, chain.duration)
        spec = metrics.spectrogram(artifacts.filtered, window_len=4096, hop=2048, band=chain.bpf.band)
        centers = np.round(spec.frame_times * FS).astype(int)
        inner = (spec.frame_times > 150e-9) & (spec.frame_times < chain.duration - 150e-9)
        ridge = metrics.ridge_frequencies(spec, interpolate=True)
        error = np.abs(ridge - track.components[0][centers])[inner]
        assert error.max() <= chain.sbs.target_bw3db

    def test_dlfm_two_passbands(self, chain):
        spec = DlfmSpec()
        artifacts = run_experiment(spec, None, chain)
        tfd = metrics.spectrogram(artifacts.filtered, band=chain.bpf.band)
        frame = int(np.argmin(np.abs(tfd.frame_times - spec.period / 4)))
        power_db = tfd.magnitudes[frame]
        freqs = tfd.bin_freqs

        peaks = []
        for target in (2.8e9, 3.4e9):
            near = np.abs(freqs - target) <= 125e6
            peaks.append(power_db[near].max())
        main_lobes = (np.abs(freqs - 2.8e9) <= 250e6) | (np.abs(freqs - 3.4e9) <= 250e6)
        assert power_db[~main_lobes].max() <= min(peaks) - 10.0

    @pytest.mark.parametrize("snr_db", [8.0, -2.0])
    def test_bpsk_recovery(self, chain, snr_db):
        spec = PhaseCodedSpec()
        artifacts = run_experiment(spec, snr_db, chain)
        code = phase_code(spec, chain.seed)
        _, pre = metrics.recover_bpsk_phase(artifacts.noisy_input, spec.carrier, spec.bit_duration)
        _, post = metrics.recover_bpsk_phase(artifacts.filtered, spec.carrier, spec.bit_duration)
        post_errors = metrics.count_bit_errors(post, code)
        assert post_errors == 0
        assert post_errors <= metrics.count_bit_errors(pre, code)

    def test_bpsk_deep_noise(self, chain):
        spec = PhaseCodedSpec()
        artifacts = run_experiment(spec, -12.0, chain)
        code = phase_code(spec, chain.seed)
        _, pre = metrics.recover_bpsk_phase(artifacts.noisy_input, spec.carrier, spec.bit_duration)
        _, post = metrics.recover_bpsk_phase(artifacts.filtered, spec.carrier, spec.bit_duration)
        assert metrics.count_bit_errors(post, code) < metrics.count_bit_errors(pre, code)

    @pytest.mark.parametrize(
        "spec",
        [LfmSpec(), NlfmSpec(), NlfmSpec(profile="sinusoidal"), DlfmSpec(), FhSpec(), PhaseCodedSpec()],
        ids=lambda s: f"{s.kind}-{getattr(s, 'profile', '')}".rstrip("-"),
    )
    def test_every_family_improves_at_low_snr(self, chain, spec):
        table = run_sweep(spec, [-12.0, -6.0, 0.0, 3.0], chain, seeds_per_point=5)
        assert (table["mse_after"] < table["mse_before"]).all(), table

    def test_lfm_suppression_over_seeds(self, lfm, chain):
        table = run_sweep(lfm, [-4.5, 8.0], chain, seeds_per_point=5).set_index("snr_db")
        assert (table["mse_after"] < table["mse_before"]).all()
        assert table.loc[-4.5, "mse_after"] <= 0.85 * table.loc[-4.5, "mse_before"]

    def test_bpsk_recovery_over_seeds(self, chain):
        spec = PhaseCodedSpec()
        code = phase_code(spec, chain.seed)
        clean_runs = 0
        for seed in range(1, 6):
            artifacts = run_experiment(spec, 8.0, chain.model_copy(update={"seed": seed}))
            _, post = metrics.recover_bpsk_phase(artifacts.filtered, spec.carrier, spec.bit_duration)
            clean_runs += metrics.count_bit_errors(post, code) == 0
        assert clean_runs >= 4

    def test_high_band_variant(self):
        resolved = parse_config(EXPERIMENTS_DIR / "highband.yaml")
        artifacts = run_experiment(resolved.waveform, resolved.experiment.snr_db, resolved.chain)
        assert resolved.chain.sideband_sign == 1
        assert artifacts.metadata["control"]["f_start"] == pytest.approx(2.5e9)
        assert artifacts.mse_after < artifacts.mse_before
