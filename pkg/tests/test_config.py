"""Tests for experiment configuration and runtime settings."""

import pytest

from core.config import (
    ConfigError,
    ExperimentSpec,
    ResolvedConfig,
    build_config,
    config_schema,
    load_settings,
    parse_config,
    snr_range,
)
from core.models import FhSpec, LfmSpec


def _write(tmp_path, text: str):
    path = tmp_path / "experiment.yaml"
    path.write_text(text, encoding="utf-8")
    return path


class TestParseConfig:

    def test_minimal_config_echoes_defaults(self, tmp_path):
        resolved = parse_config(_write(tmp_path, "waveform:\n  kind: lfm\n"))
        echo = resolved.echo()
        assert echo["chain"]["sample_rate"] == 64e9
        assert echo["chain"]["sbs"]["bfs"] == 10.8e9
        assert echo["chain"]["sbs"]["target_bw3db"] == 22.5e6
        assert echo["chain"]["bpf"]["band"] == {"f_low": 2.4e9, "f_high": 4.0e9}
        assert echo["chain"]["sbs"]["intrinsic_linewidth"] == pytest.approx(44.90e6, rel=1e-3)
        assert echo["waveform"] == LfmSpec().model_dump(mode="json")

    def test_empty_file_uses_defaults(self, tmp_path):
        assert parse_config(_write(tmp_path, "")) == ResolvedConfig()

    def test_discriminated_waveform(self, tmp_path):
        resolved = parse_config(_write(tmp_path, "waveform:\n  kind: fh\n  dwell: 2.0e-8\n"))
        assert isinstance(resolved.waveform, FhSpec)
        assert resolved.waveform.dwell == 2e-8

    def test_down_chirp_names_both_fields(self, tmp_path):
        text = "waveform:\n  kind: lfm\n  f_start: 3.7e9\n  f_stop: 2.5e9\n"
        with pytest.raises(ConfigError) as excinfo:
            parse_config(_write(tmp_path, text))
        message = str(excinfo.value)
        assert "f_start" in message and "f_stop" in message
        assert excinfo.value.field_errors

    def test_band_beyond_nyquist(self, tmp_path):
        text = "chain:\n  bpf:\n    band: {f_low: 30.0e9, f_high: 40.0e9}\n"
        with pytest.raises(ConfigError, match="Nyquist"):
            parse_config(_write(tmp_path, text))

    def test_control_beyond_nyquist(self, tmp_path):
        text = "waveform:\n  kind: lfm\n  f_start: 20.0e9\n  f_stop: 22.0e9\nchain:\n  sideband_sign: -1\n"
        with pytest.raises(ConfigError, match="invariant violation"):
            parse_config(_write(tmp_path, text))

    def test_unknown_field(self, tmp_path):
        with pytest.raises(ConfigError, match="chain.sample_rte"):
            parse_config(_write(tmp_path, "chain:\n  sample_rte: 1.0e9\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            parse_config(tmp_path / "absent.yaml")

    def test_malformed_yaml(self, tmp_path):
        with pytest.raises(ConfigError, match="malformed"):
            parse_config(_write(tmp_path, "waveform: [unclosed\n"))

    def test_non_mapping_root(self, tmp_path):
        with pytest.raises(ConfigError, match="mapping"):
            parse_config(_write(tmp_path, "- 1\n- 2\n"))


def test_build_config_from_dict():
    resolved = build_config({"chain": {"seed": 9}, "experiment": {"name": "sweep"}})
    assert resolved.chain.seed == 9
    assert resolved.experiment == ExperimentSpec(name="sweep")


def test_schema_lists_waveform_kinds():
    schema = config_schema()
    text = str(schema)
    for kind in ("lfm", "nlfm", "dlfm", "fh", "phase_coded"):
        assert kind in text
    assert "chain" in schema["properties"]


class TestSnrRange:

    def test_inclusive_grid(self):
        grid = snr_range(-12.0, 15.5, 0.5)
        assert len(grid) == 56
        assert grid[0] == -12.0 and grid[-1] == 15.5

    def test_bad_step(self):
        with pytest.raises(ValueError, match="positive"):
            snr_range(0.0, 1.0, 0.0)


class TestLoadSettings:

    def test_env_expansion(self, tmp_path, monkeypatch):
        path = tmp_path / "settings.yaml"
        path.write_text(
            'paths:\n  output_dir: "${TVMPF_TEST_OUT:-./fallback}"\n'
            "runtime:\n  n_jobs: ${TVMPF_TEST_JOBS:-1}\n",
            encoding="utf-8",
        )
        monkeypatch.setenv("TVMPF_TEST_OUT", "/data/runs")
        monkeypatch.setenv("TVMPF_TEST_JOBS", "4")
        settings = load_settings(path)
        assert settings["paths"]["output_dir"] == "/data/runs"
        assert settings["runtime"]["n_jobs"] == 4
        assert settings["runtime"]["fft_workers"] == 1
        assert settings["logging"]["level"] == "INFO"

    def test_env_default(self, tmp_path, monkeypatch):
        path = tmp_path / "settings.yaml"
        path.write_text('paths:\n  output_dir: "${TVMPF_TEST_OUT:-./fallback}"\n', encoding="utf-8")
        monkeypatch.delenv("TVMPF_TEST_OUT", raising=False)
        assert load_settings(path)["paths"]["output_dir"] == "./fallback"

    def test_missing_file_defaults(self, tmp_path):
        settings = load_settings(tmp_path / "absent.yaml")
        assert settings["runtime"] == {"n_jobs": 1, "fft_workers": 1}
