# core/config.py

import logging
import os
import re
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import pydantic
import yaml
from dotenv import load_dotenv
from pydantic import Field

from core.models import ChainConfig, FrozenModel, LfmSpec, WaveformSpec
from core.waveforms import WaveformError, check_sampling, derive_control

logger = logging.getLogger("TVMPF-Sim.Config")

DEFAULT_SETTINGS_PATH = Path("configs/settings.yaml")
_ENV_PATTERN = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}")


class ConfigError(ValueError):
    """
    配置文件无法加载、不符合 schema 或违反不变量时抛出。

    Attributes:
        message (str): 错误描述。
        field_errors (List[Tuple[str, str]]): (字段位置, 错误信息) 列表。
        path (Optional[Path]): 出错的配置文件。
    """
    def __init__(self, message: str, field_errors: Optional[List[Tuple[str, str]]] = None, path: Optional[Path] = None):
        super().__init__(message)
        self.field_errors = field_errors or []
        self.path = path

    def __str__(self):
        text = super().__str__()
        if self.path is not None:
            text = f"{self.path}: {text}"
        if self.field_errors:
            text += " | " + "; ".join(f"{loc}: {msg}" for loc, msg in self.field_errors)
        return text

    @classmethod
    def from_validation(cls, err: pydantic.ValidationError, path: Optional[Path] = None) -> "ConfigError":
        fields = [
            (".".join(str(p) for p in e["loc"]) or "<root>", e["msg"])
            for e in err.errors()
        ]
        return cls("schema violation", field_errors=fields, path=path)


def snr_range(start: float, stop: float, step: float) -> List[float]:
    """闭区间 [start, stop] 上步长为 step 的 SNR 列表。"""
    if step <= 0:
        raise ValueError(f"SNR step must be positive, got {step}")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + k * step, 10) for k in range(count)]


class ExperimentSpec(FrozenModel):
    name: Literal["gen", "response", "run", "sweep", "demod"] = "run"
    snr_db: Optional[float] = 8.0
    snr_list: List[float] = Field(default_factory=lambda: snr_range(-12.0, 15.5, 0.5))
    seeds_per_point: int = Field(default=5, ge=1)
    control_freqs: List[float] = Field(default_factory=lambda: [11.8e9 + 0.5e9 * k for k in range(8)])
    probe_span: float = Field(default=80e6, gt=0)
    probe_step: float = Field(default=1e6, gt=0)
    window_len: int = Field(default=512, gt=0)
    hop: Optional[int] = Field(default=None, gt=0)


class ResolvedConfig(FrozenModel):
    waveform: WaveformSpec = LfmSpec()
    chain: ChainConfig = ChainConfig()
    experiment: ExperimentSpec = ExperimentSpec()

    def echo(self) -> Dict[str, Any]:
        """包含全部默认值的配置快照，写入日志与运行清单。"""
        return self.model_dump(mode="json")


def _check_feasible(resolved: ResolvedConfig, path: Optional[Path]) -> None:
    cfg = resolved.chain
    try:
        check_sampling(resolved.waveform, cfg.sample_rate, cfg.duration)
        control = derive_control(resolved.waveform, cfg.sbs.bfs, cfg.sideband_sign)
        check_sampling(control, cfg.sample_rate, cfg.duration)
    except WaveformError as e:
        raise ConfigError(
            "invariant violation",
            field_errors=[("waveform", str(e))],
            path=path,
        ) from e


def build_config(raw: Dict[str, Any], path: Optional[Path] = None) -> ResolvedConfig:
    """由字典构造并校验配置。"""
    try:
        resolved = ResolvedConfig.model_validate(raw)
    except pydantic.ValidationError as e:
        raise ConfigError.from_validation(e, path) from e
    _check_feasible(resolved, path)
    return resolved


def parse_config(path: Union[str, Path]) -> ResolvedConfig:
    """
    加载 YAML/JSON 实验配置，校验 schema 与不变量，补全所有默认值。

    Args:
        path (Union[str, Path]): 配置文件路径。

    Returns:
        ResolvedConfig: 校验后的配置，echo() 回显全部取值。

    Raises:
        ConfigError: 文件不存在、格式错误、字段非法或违反不变量（如奈奎斯特条件）。
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError("configuration file not found", path=path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed configuration: {e}", path=path) from e
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("configuration root must be a mapping", path=path)

    resolved = build_config(raw, path)
    logger.info(f"Loaded configuration from {path}")
    logger.debug(f"Resolved configuration: {resolved.echo()}")
    return resolved


def config_schema() -> Dict[str, Any]:
    """实验配置的 JSON schema。"""
    return ResolvedConfig.model_json_schema()


def _expand_env(value: Any) -> Any:
    if isinstance(value, str):
        return _ENV_PATTERN.sub(lambda m: os.environ.get(m.group(1), m.group(2) or ""), value)
    if isinstance(value, dict):
        return {k: _expand_env(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_expand_env(v) for v in value]
    return value


def load_settings(path: Union[str, Path] = DEFAULT_SETTINGS_PATH) -> Dict[str, Any]:
    """
    加载运行时设置 (configs/settings.yaml)，展开 ${VAR} 与 ${VAR:-default}。
    文件不存在时返回内置默认值。
    """
    load_dotenv()
    defaults = {
        "paths": {"output_dir": os.environ.get("TVMPF_OUTPUT_DIR", "./outputs")},
        "runtime": {"n_jobs": 1, "fft_workers": 1},
        "logging": {"level": "INFO"},
    }
    path = Path(path)
    if not path.is_file():
        logger.debug(f"Settings file {path} not found; using built-in defaults.")
        return defaults
    try:
        loaded = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed settings: {e}", path=path) from e
    settings = _expand_env(loaded)
    for section, values in defaults.items():
        merged = dict(values)
        merged.update(settings.get(section) or {})
        settings[section] = merged
    settings["runtime"]["n_jobs"] = int(settings["runtime"]["n_jobs"])
    settings["runtime"]["fft_workers"] = int(settings["runtime"]["fft_workers"])
    return settings
