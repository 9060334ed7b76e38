# storage/manifest.py

import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from core import __version__
from core.models import Spectrogram
from storage.signal_io import SignalFormatError, atomic_write_text, sha256_file

logger = logging.getLogger("TVMPF-Sim.Storage")

MANIFEST_NAME = "manifest.json"
CSV_FLOAT_FORMAT = "%.10g"


class RunRecord(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", ser_json_inf_nan="constants")

    snr_db: Optional[float]
    mse_before: float
    mse_after: float
    improvement_db: float
    seed: Optional[int] = None


class OutputFile(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    path: str = Field(..., description="相对清单所在目录的路径")
    sha256: str
    size: int = Field(..., ge=0, description="字节数")


class RunManifest(BaseModel):
    """一次 CLI 调用的可复现记录：配置快照、版本、种子、指标与输出文件校验和。"""
    model_config = ConfigDict(extra="forbid")

    command: str
    tool_version: str = __version__
    config: Dict[str, Any] = Field(default_factory=dict)
    seeds: List[int] = Field(default_factory=list)
    runs: List[RunRecord] = Field(default_factory=list)
    outputs: List[OutputFile] = Field(default_factory=list)
    wall_clock_s: float = Field(default=0.0, ge=0)

    def add_output(self, path: Union[str, Path], root: Union[str, Path]) -> OutputFile:
        """登记一个已写出的文件及其 sha256。"""
        path, root = Path(path), Path(root)
        entry = OutputFile(
            path=path.relative_to(root).as_posix(),
            sha256=sha256_file(path),
            size=path.stat().st_size,
        )
        self.outputs.append(entry)
        return entry


def improvement_db(mse_before: float, mse_after: float) -> float:
    """10·log10(mse_before / mse_after)；两者皆为 0 时为 0，仅 mse_after 为 0 时为 +inf。"""
    if mse_after == 0.0:
        if mse_before == 0.0:
            return 0.0
        return float("inf")
    return float(10.0 * np.log10(mse_before / mse_after))


def write_manifest(manifest: RunManifest, out_dir: Union[str, Path]) -> Path:
    """原子写出 manifest.json（键排序）。"""
    path = Path(out_dir) / MANIFEST_NAME
    payload = manifest.model_dump(mode="json")
    atomic_write_text(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")
    logger.info(f"Manifest written to {path} ({len(manifest.outputs)} output file(s)).")
    return path


def load_manifest(path: Union[str, Path]) -> RunManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise SignalFormatError("manifest not found", path) from e
    except json.JSONDecodeError as e:
        raise SignalFormatError(f"malformed manifest: {e}", path) from e
    try:
        return RunManifest.model_validate(raw)
    except ValidationError as e:
        raise SignalFormatError(f"malformed manifest: {e.error_count()} error(s)", path) from e


def verify_manifest(path: Union[str, Path]) -> List[Tuple[str, str]]:
    """
    重新计算清单中每个输出文件的校验和。

    Returns:
        List[Tuple[str, str]]: (相对路径, 问题) 列表；为空表示全部一致。
    """
    path = Path(path)
    manifest = load_manifest(path)
    root = path.parent
    problems = []
    for entry in manifest.outputs:
        target = root / entry.path
        if not target.is_file():
            problems.append((entry.path, "missing"))
        elif target.stat().st_size != entry.size:
            problems.append((entry.path, "size mismatch"))
        elif sha256_file(target) != entry.sha256:
            problems.append((entry.path, "checksum mismatch"))
    for rel, issue in problems:
        logger.warning(f"verify: {rel}: {issue}")
    return problems


def _frame_to_csv(frame: pd.DataFrame) -> str:
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return buffer.getvalue()


def write_table(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    """DataFrame 写为带单行表头的 CSV；格式与区域设置无关。"""
    return atomic_write_text(Path(path), _frame_to_csv(frame))


def write_response_csv(
    curves: Dict[float, Sequence[Tuple[float, float]]],
    path: Union[str, Path],
) -> Path:
    rows = [
        {"f_ctrl_hz": f_ctrl, "probe_hz": probe, "response_db": level}
        for f_ctrl, curve in curves.items()
        for probe, level in curve
    ]
    return write_table(pd.DataFrame(rows, columns=["f_ctrl_hz", "probe_hz", "response_db"]), path)


def write_spectrogram_csv(spec: Spectrogram, path: Union[str, Path]) -> Path:
    """矩阵格式：首列 time_s，其余列为各频点的功率 (dB)。"""
    columns = [CSV_FLOAT_FORMAT % f for f in spec.bin_freqs]
    frame = pd.DataFrame(spec.magnitudes, columns=columns)
    frame.insert(0, "time_s", spec.frame_times)
    return write_table(frame, path)


def write_spectrum_csv(freqs: np.ndarray, power_db: np.ndarray, path: Union[str, Path]) -> Path:
    return write_table(pd.DataFrame({"freq_hz": freqs, "power_db": power_db}), path)
