# core/models.py

from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    TypeAdapter,
    field_validator,
    model_validator,
)

# --- 通用基类 ---

class FrozenModel(BaseModel):
    """所有配置类模型的基类：不可变，禁止未知字段。"""
    model_config = ConfigDict(frozen=True, extra="forbid")


class ArrayModel(BaseModel):
    """携带 numpy 数组的数据模型基类。数组在构造时复制并设为只读。"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)


def _readonly(values: Any, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D sample sequence, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("samples must be finite (no NaN/Inf)")
    arr.flags.writeable = False
    return arr


class Band(FrozenModel):
    f_low: float = Field(..., gt=0, description="下边界频率 (Hz)")
    f_high: float = Field(..., gt=0, description="上边界频率 (Hz)")

    @model_validator(mode="after")
    def _ordered(self) -> "Band":
        if not self.f_high > self.f_low:
            raise ValueError(f"f_high ({self.f_high:g}) must exceed f_low ({self.f_low:g})")
        return self

    @property
    def width(self) -> float:
        return self.f_high - self.f_low

    def within_nyquist(self, sample_rate: float) -> bool:
        return self.f_high < sample_rate / 2.0


class OpticalBand(FrozenModel):
    """光频偏移带（相对激光载波，可为负）。"""
    f_low: float
    f_high: float

    @model_validator(mode="after")
    def _ordered(self) -> "OpticalBand":
        if not self.f_high > self.f_low:
            raise ValueError(f"f_high ({self.f_high:g}) must exceed f_low ({self.f_low:g})")
        return self

    def within_nyquist(self, sample_rate: float) -> bool:
        half = sample_rate / 2.0
        return -half <= self.f_low and self.f_high <= half


# --- 波形规格 ---

class _WaveformBase(FrozenModel):
    amplitude: float = Field(default=1.0, gt=0, description="峰值幅度（无量纲）")


class ChirpParams(FrozenModel):
    """单个线性调频分量，方向不限（DLFM 的下调频分量 f_stop < f_start）。"""
    f_start: float = Field(..., gt=0)
    f_stop: float = Field(..., gt=0)
    period: float = Field(default=4e-6, gt=0)

    @model_validator(mode="after")
    def _not_degenerate(self) -> "ChirpParams":
        if self.f_start == self.f_stop:
            raise ValueError(f"degenerate chirp: f_start == f_stop == {self.f_start:g}")
        return self


class LfmSpec(_WaveformBase):
    kind: Literal["lfm"] = "lfm"
    f_start: float = Field(default=2.5e9, gt=0)
    f_stop: float = Field(default=3.7e9, gt=0)
    period: float = Field(default=4e-6, gt=0)

    @model_validator(mode="after")
    def _up_chirp(self) -> "LfmSpec":
        if self.f_start == self.f_stop:
            raise ValueError(f"degenerate chirp: f_start == f_stop == {self.f_start:g}")
        if self.f_stop < self.f_start:
            raise ValueError(
                f"f_stop ({self.f_stop:g}) must exceed f_start ({self.f_start:g})"
            )
        return self


class NlfmSpec(LfmSpec):
    kind: Literal["nlfm"] = "nlfm"
    profile: Literal["quadratic", "sinusoidal"] = "quadratic"


class DlfmSpec(_WaveformBase):
    kind: Literal["dlfm"] = "dlfm"
    up: ChirpParams = ChirpParams(f_start=2.5e9, f_stop=3.7e9)
    down: ChirpParams = ChirpParams(f_start=3.7e9, f_stop=2.5e9)

    @model_validator(mode="after")
    def _same_period(self) -> "DlfmSpec":
        if self.up.period != self.down.period:
            raise ValueError(
                f"up.period ({self.up.period:g}) and down.period ({self.down.period:g}) must match"
            )
        return self

    @property
    def period(self) -> float:
        return self.up.period


class FhSpec(_WaveformBase):
    kind: Literal["fh"] = "fh"
    freqs: List[float] = Field(default_factory=lambda: [2.5e9, 2.8e9])
    dwell: float = Field(default=10e-9, gt=0)
    phase_mode: Literal["continuous", "reset"] = "continuous"

    @field_validator("freqs")
    @classmethod
    def _positive(cls, v: List[float]) -> List[float]:
        bad = [f for f in v if not f > 0]
        if bad:
            raise ValueError(f"hop frequencies must be > 0, got {bad}")
        return v

    @property
    def period(self) -> float:
        return len(self.freqs) * self.dwell


class PhaseCodedSpec(_WaveformBase):
    kind: Literal["phase_coded"] = "phase_coded"
    carrier: float = Field(default=2.5e9, gt=0)
    n_bits: int = Field(default=400, gt=0)
    period: float = Field(default=4e-6, gt=0)
    code: Optional[List[int]] = Field(default=None, description="显式码字 (0/1)，优先于 code_seed")
    code_seed: Optional[int] = Field(default=7, description="伪随机码种子；为空时使用 synthesize 的 seed")

    @model_validator(mode="after")
    def _code_shape(self) -> "PhaseCodedSpec":
        if self.code is not None:
            if len(self.code) != self.n_bits:
                raise ValueError(f"code has {len(self.code)} bits but n_bits is {self.n_bits}")
            if any(b not in (0, 1) for b in self.code):
                raise ValueError("code bits must be 0 or 1")
        return self

    @property
    def bit_duration(self) -> float:
        return self.period / self.n_bits


WaveformSpec = Annotated[
    Union[LfmSpec, NlfmSpec, DlfmSpec, FhSpec, PhaseCodedSpec],
    Field(discriminator="kind"),
]
WAVEFORM_ADAPTER: TypeAdapter = TypeAdapter(WaveformSpec)

# CLI --waveform 名称到默认规格的映射
WAVEFORM_KINDS: Dict[str, Any] = {
    "lfm": LfmSpec,
    "nlfm": NlfmSpec,
    "dlfm": DlfmSpec,
    "fh": FhSpec,
    "phase_coded": PhaseCodedSpec,
}


# --- 采样数据 ---

class SampledSignal(ArrayModel):
    samples: np.ndarray
    sample_rate: float = Field(..., gt=0)
    t0: float = 0.0

    @field_validator("samples", mode="before")
    @classmethod
    def _as_real(cls, v: Any) -> np.ndarray:
        if np.iscomplexobj(v):
            raise ValueError("SampledSignal holds real samples; got a complex array")
        return _readonly(v, np.float64)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def time_axis(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> "SampledSignal":
        return SampledSignal(samples=samples, sample_rate=self.sample_rate, t0=self.t0)


class FrequencyTrack(ArrayModel):
    components: List[np.ndarray]
    transitions: Tuple[int, ...] = Field(default=(), description="频率跳变/码元翻转/周期回绕的样点下标")

    @field_validator("components", mode="before")
    @classmethod
    def _as_arrays(cls, v: Any) -> List[np.ndarray]:
        comps = [_readonly(c, np.float64) for c in v]
        if not comps:
            raise ValueError("a frequency track needs at least one component")
        if len({c.size for c in comps}) != 1:
            raise ValueError("all track components must have the same length")
        return comps

    def __len__(self) -> int:
        return self.components[0].size

    @property
    def is_single(self) -> bool:
        return len(self.components) == 1


class OpticalEnvelope(ArrayModel):
    samples: np.ndarray
    sample_rate: float = Field(..., gt=0)
    carrier_offset: float = 0.0
    t0: float = 0.0

    @field_validator("samples", mode="before")
    @classmethod
    def _as_complex(cls, v: Any) -> np.ndarray:
        return _readonly(v, np.complex128)

    def __len__(self) -> int:
        return self.samples.size

    def with_samples(self, samples: np.ndarray) -> "OpticalEnvelope":
        return OpticalEnvelope(
            samples=samples,
            sample_rate=self.sample_rate,
            carrier_offset=self.carrier_offset,
            t0=self.t0,
        )


# --- 光子链路器件参数 ---

class MzmParams(FrozenModel):
    mod_index: float = Field(default=0.5, gt=0, lt=np.pi, description="单位归一化驱动对应的峰值相位摆幅 (rad)")
    bias: Literal["null"] = "null"


class ObpfSpec(FrozenModel):
    band: Optional[OpticalBand] = Field(default=None, description="为空时按控制信号频率范围自动选择")
    edge_width: float = Field(default=50e6, ge=0)
    guard: float = Field(default=2e9, gt=0, description="自动选带时两侧保护带宽 (Hz)")


class SbsParams(FrozenModel):
    bfs: float = Field(default=10.8e9, gt=0)
    target_bw3db: float = Field(default=22.5e6, gt=0)
    peak_gain_db: float = Field(default=15.0, ge=0)
    intrinsic_linewidth: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _resolve_linewidth(self) -> "SbsParams":
        if self.intrinsic_linewidth is None:
            from core.photonic_chain import calibrate_linewidth
            object.__setattr__(self, "intrinsic_linewidth", calibrate_linewidth(self))
        return self

    @property
    def peak_gain_nepers(self) -> float:
        """峰值功率增益 g0（奈培）。"""
        return self.peak_gain_db * np.log(10.0) / 10.0


class PmParams(FrozenModel):
    mod_index: float = Field(default=0.1, gt=0, description="单位驱动幅度对应的相位 (rad)")


class BpfSpec(FrozenModel):
    band: Band = Band(f_low=2.4e9, f_high=4.0e9)
    edge_width: float = Field(default=50e6, ge=0)


class PdParams(FrozenModel):
    noise_snr_db: Optional[float] = Field(
        default=13.5,
        description="接收机噪声：电带通内无噪检测信号与接收机噪声的功率比 (dB)；为空则不加",
    )


class ChainConfig(FrozenModel):
    sample_rate: float = Field(default=64e9, gt=0)
    duration: float = Field(default=4e-6, gt=0)
    sideband_sign: Literal[-1, 1] = -1
    mzm: MzmParams = MzmParams()
    obpf: ObpfSpec = ObpfSpec()
    pm: PmParams = PmParams()
    sbs: SbsParams = SbsParams()
    bpf: BpfSpec = BpfSpec()
    pd: PdParams = PdParams()
    noise_band: Band = Band(f_low=2.4e9, f_high=4.0e9)
    control_skew: float = Field(default=0.0, description="控制信号相对待滤波信号的时延 (s)")
    seed: int = 1

    @model_validator(mode="after")
    def _consistent(self) -> "ChainConfig":
        n = self.sample_rate * self.duration
        if abs(n - round(n)) > 1e-6 * max(n, 1.0):
            raise ValueError(
                f"duration ({self.duration:g} s) is not an integer number of samples at {self.sample_rate:g} Hz"
            )
        for name, band in (("bpf.band", self.bpf.band), ("noise_band", self.noise_band)):
            if not band.within_nyquist(self.sample_rate):
                raise ValueError(
                    f"{name} upper edge {band.f_high:g} Hz is beyond Nyquist ({self.sample_rate / 2:g} Hz)"
                )
        band = self.obpf.band
        if band is not None:
            if not band.within_nyquist(self.sample_rate):
                raise ValueError(f"obpf.band [{band.f_low:g}, {band.f_high:g}] Hz is beyond Nyquist")
            if self.sideband_sign == -1 and band.f_high >= 0:
                raise ValueError("sideband_sign -1 needs an obpf.band of negative optical offsets")
            if self.sideband_sign == 1 and band.f_low <= 0:
                raise ValueError("sideband_sign +1 needs an obpf.band of positive optical offsets")
        return self

    @property
    def n_samples(self) -> int:
        return int(round(self.sample_rate * self.duration))


# --- 结果 ---

class RunArtifacts(ArrayModel):
    noisy_input: SampledSignal
    reference: SampledSignal
    filtered: SampledSignal
    mse_before: float = Field(..., ge=0)
    mse_after: float = Field(..., ge=0)
    snr_target: Optional[float] = None
    metadata: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _aligned(self) -> "RunArtifacts":
        sigs = (self.noisy_input, self.reference, self.filtered)
        if len({len(s) for s in sigs}) != 1 or len({s.sample_rate for s in sigs}) != 1:
            raise ValueError("noisy_input, reference and filtered must share length and sample rate")
        return self


class Spectrogram(ArrayModel):
    power: np.ndarray = Field(..., description="帧 × 频点 的功率（线性，单边），每帧求和等于加窗能量")
    frame_times: np.ndarray
    bin_freqs: np.ndarray
    window_len: int = Field(..., gt=0)
    hop: int = Field(..., gt=0)

    @model_validator(mode="after")
    def _dims(self) -> "Spectrogram":
        if self.power.shape != (self.frame_times.size, self.bin_freqs.size):
            raise ValueError(
                f"power shape {self.power.shape} does not match "
                f"{self.frame_times.size} frames x {self.bin_freqs.size} bins"
            )
        if self.frame_times.size > 1 and not np.all(np.diff(self.frame_times) > 0):
            raise ValueError("frame_times must be strictly increasing")
        return self

    @property
    def magnitudes(self) -> np.ndarray:
        """功率 (dB)。"""
        return 10.0 * np.log10(np.maximum(self.power, np.finfo(float).tiny))

    @property
    def bin_width(self) -> float:
        if self.bin_freqs.size < 2:
            return 0.0
        return float(self.bin_freqs[1] - self.bin_freqs[0])
