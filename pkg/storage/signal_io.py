# storage/signal_io.py

import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np

from core.models import OpticalEnvelope, SampledSignal

logger = logging.getLogger("TVMPF-Sim.Storage")

PAYLOAD_DTYPE = "<f8"
SIDECAR_SUFFIX = ".json"


class SignalFormatError(ValueError):
    """
    信号文件或其 JSON 头文件损坏、不一致时抛出。

    Attributes:
        message (str): 错误描述。
        path (Path): 出错的文件。
    """
    def __init__(self, message: str, path: Path):
        super().__init__(message)
        self.path = path

    def __str__(self):
        return f"{super().__str__()} [{self.path}]"


def sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + SIDECAR_SUFFIX)


def atomic_write_bytes(path: Union[str, Path], data: bytes) -> Path:
    """先写同目录临时文件再重命名，保证目标文件要么是旧内容要么是完整新内容。"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def sha256_file(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_signal(signal: Union[SampledSignal, OpticalEnvelope], path: Union[str, Path]) -> Path:
    """
    写出小端 float64 原始数据与 JSON 头文件 {sample_rate, length, t0, kind}。

    复包络按实部/虚部交织存储 (kind = complex-interleaved)。

    Args:
        signal (Union[SampledSignal, OpticalEnvelope]): 要写出的记录。
        path (Union[str, Path]): 原始数据文件路径，头文件为 <path>.json。

    Returns:
        Path: 原始数据文件路径。
    """
    path = Path(path)
    if isinstance(signal, OpticalEnvelope):
        kind = "complex-interleaved"
        payload = signal.samples.astype(np.complex128).view(np.float64)
        extra = {"carrier_offset": signal.carrier_offset}
    else:
        kind = "real"
        payload = signal.samples
        extra = {}
    header: Dict[str, Any] = {
        "sample_rate": signal.sample_rate,
        "length": len(signal),
        "t0": signal.t0,
        "kind": kind,
        **extra,
    }
    atomic_write_bytes(path, payload.astype(PAYLOAD_DTYPE).tobytes())
    atomic_write_text(sidecar_path(path), json.dumps(header, sort_keys=True, indent=2) + "\n")
    logger.debug(f"Wrote {kind} signal ({len(signal)} samples) to {path}")
    return path


def _read_header(path: Path) -> Dict[str, Any]:
    header_path = sidecar_path(path)
    try:
        header = json.loads(header_path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise SignalFormatError("missing signal header", header_path) from e
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise SignalFormatError(f"malformed signal header: {e}", header_path) from e
    if not isinstance(header, dict):
        raise SignalFormatError("malformed signal header: not an object", header_path)
    missing = [k for k in ("sample_rate", "length", "t0", "kind") if k not in header]
    if missing:
        raise SignalFormatError(f"malformed signal header: missing {missing}", header_path)
    if header["kind"] not in ("real", "complex-interleaved"):
        raise SignalFormatError(f"malformed signal header: unknown kind {header['kind']!r}", header_path)
    return header


def read_signal(path: Union[str, Path]) -> Union[SampledSignal, OpticalEnvelope]:
    """
    读取 write_signal 写出的记录，逐位无损还原。

    Raises:
        SignalFormatError: 头文件缺失或损坏，或声明长度与数据长度不一致。
        OSError: 文件读取失败。
    """
    path = Path(path)
    header = _read_header(path)
    raw = np.frombuffer(path.read_bytes(), dtype=PAYLOAD_DTYPE)
    complex_kind = header["kind"] == "complex-interleaved"
    expected = int(header["length"]) * (2 if complex_kind else 1)
    if raw.size != expected:
        raise SignalFormatError(
            f"declared length {header['length']} does not match payload of {raw.size} float64 values",
            path,
        )
    samples = raw.astype(np.float64)
    try:
        if complex_kind:
            return OpticalEnvelope(
                samples=samples.view(np.complex128),
                sample_rate=header["sample_rate"],
                t0=header["t0"],
                carrier_offset=header.get("carrier_offset", 0.0),
            )
        return SampledSignal(samples=samples, sample_rate=header["sample_rate"], t0=header["t0"])
    except ValueError as e:
        raise SignalFormatError(f"invalid signal contents: {e}", path) from e
