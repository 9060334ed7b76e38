# core/waveforms.py

import logging
from typing import List, Optional, Tuple

import numpy as np
from scipy.signal import hilbert

from core.models import (
    ChirpParams,
    DlfmSpec,
    FhSpec,
    FrequencyTrack,
    LfmSpec,
    NlfmSpec,
    PhaseCodedSpec,
    SampledSignal,
    WaveformSpec,
)

logger = logging.getLogger("TVMPF-Sim.Waveforms")

NYQUIST_FACTOR = 2.5
# 瞬时频率估计时，跳变点两侧排除的样点数
TRANSITION_GUARD = 4


class WaveformError(ValueError):
    """
    当波形规格无法在给定采样条件下合成或变换时抛出。

    Attributes:
        message (str): 错误描述。
        offending (dict): 触发错误的参数取值。
    """
    def __init__(self, message: str, **offending):
        super().__init__(message)
        self.offending = offending

    def __str__(self):
        if not self.offending:
            return super().__str__()
        details = ", ".join(f"{k}={v!r}" for k, v in self.offending.items())
        return f"{super().__str__()} ({details})"


def spec_frequencies(spec: WaveformSpec) -> List[float]:
    """返回规格中声明的所有频率（Hz）。"""
    if isinstance(spec, LfmSpec):
        return [spec.f_start, spec.f_stop]
    if isinstance(spec, DlfmSpec):
        return [spec.up.f_start, spec.up.f_stop, spec.down.f_start, spec.down.f_stop]
    if isinstance(spec, FhSpec):
        return list(spec.freqs)
    if isinstance(spec, PhaseCodedSpec):
        return [spec.carrier]
    raise WaveformError(f"unsupported waveform spec {type(spec).__name__}")


def frequency_range(spec: WaveformSpec) -> Tuple[float, float]:
    freqs = spec_frequencies(spec)
    if not freqs:
        raise WaveformError("waveform declares no frequencies", kind=spec.kind)
    return min(freqs), max(freqs)


def check_sampling(spec: WaveformSpec, sample_rate: float, duration: float) -> int:
    """校验奈奎斯特条件与整周期条件，返回周期数。"""
    if isinstance(spec, FhSpec) and not spec.freqs:
        raise WaveformError("frequency-hopping spec has an empty frequency list")
    f_max = frequency_range(spec)[1]
    if sample_rate < NYQUIST_FACTOR * f_max:
        raise WaveformError(
            f"sample rate violates the {NYQUIST_FACTOR} x f_max rule",
            sample_rate=sample_rate, f_max=f_max,
        )
    n_periods = duration / spec.period
    if n_periods < 1 - 1e-9 or abs(n_periods - round(n_periods)) > 1e-6:
        raise WaveformError(
            "duration is not an integer number of periods",
            duration=duration, period=spec.period,
        )
    return int(round(n_periods))


def _chirp_cycles(f_start: float, f_stop: float, period: float, tau: np.ndarray, profile: str = "linear"):
    """
    一个周期内的瞬时频率及其从周期起点积分得到的相位（单位：周）。

    返回 (freq, cycles, cycles_per_period)。
    """
    bw = f_stop - f_start
    x = tau / period
    if profile == "linear":
        freq = f_start + bw * x
        cycles = f_start * tau + 0.5 * bw * period * x ** 2
        per_period = f_start * period + 0.5 * bw * period
    elif profile == "quadratic":
        freq = f_start + bw * x ** 2
        cycles = f_start * tau + bw * period * x ** 3 / 3.0
        per_period = f_start * period + bw * period / 3.0
    elif profile == "sinusoidal":
        f_center = 0.5 * (f_start + f_stop)
        freq = f_center + 0.5 * bw * np.sin(np.pi * (2.0 * x - 1.0))
        cycles = f_center * tau - bw * period / (4.0 * np.pi) * (np.cos(np.pi * (2.0 * x - 1.0)) + 1.0)
        per_period = f_center * period
    else:
        raise WaveformError(f"unknown chirp profile '{profile}'")
    return freq, cycles, per_period


def _periodic_chirp(params: ChirpParams, t: np.ndarray, profile: str = "linear"):
    period_idx = np.floor(t / params.period + 1e-12)
    tau = t - period_idx * params.period
    freq, cycles, per_period = _chirp_cycles(params.f_start, params.f_stop, params.period, tau, profile)
    # 周期数与单周期相位分别取模，避免大数相加损失精度
    total = np.mod(period_idx * np.mod(per_period, 1.0), 1.0) + cycles
    return freq, 2.0 * np.pi * total


def _period_wraps(period: float, sample_rate: float, n: int) -> List[int]:
    step = int(round(period * sample_rate))
    return list(range(step, n, step))


def phase_code(spec: PhaseCodedSpec, seed: int = 0) -> np.ndarray:
    """相位编码信号使用的码字：显式 code 优先，其次 code_seed，最后 seed。"""
    if spec.code is not None:
        return np.asarray(spec.code, dtype=np.int8)
    code_seed = spec.code_seed if spec.code_seed is not None else seed
    rng = np.random.default_rng(code_seed)
    return rng.integers(0, 2, size=spec.n_bits, dtype=np.int8)


def synthesize(
    spec: WaveformSpec,
    sample_rate: float,
    duration: float,
    seed: int = 0,
) -> Tuple[SampledSignal, FrequencyTrack]:
    """
    按规格合成采样波形及其解析瞬时频率轨迹。

    波形为 A·cos(φ(t))（DLFM 为两个等幅分量之和），轨迹 f(t) = φ'(t)/2π
    由解析式直接求值。seed 只影响未指定 code/code_seed 的相位编码信号。

    Raises:
        WaveformError: 奈奎斯特条件不满足、时长不是整周期、跳频表为空。
    """
    n_periods = check_sampling(spec, sample_rate, duration)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    amp = spec.amplitude
    transitions: List[int] = []

    if isinstance(spec, LfmSpec):
        profile = spec.profile if isinstance(spec, NlfmSpec) else "linear"
        params = ChirpParams(f_start=spec.f_start, f_stop=spec.f_stop, period=spec.period)
        freq, phase = _periodic_chirp(params, t, profile)
        samples = amp * np.cos(phase)
        components = [freq]
        transitions = _period_wraps(spec.period, sample_rate, n)
    elif isinstance(spec, DlfmSpec):
        f_up, ph_up = _periodic_chirp(spec.up, t)
        f_dn, ph_dn = _periodic_chirp(spec.down, t)
        samples = amp * (np.cos(ph_up) + np.cos(ph_dn))
        components = [f_up, f_dn]
        transitions = _period_wraps(spec.period, sample_rate, n)
    elif isinstance(spec, FhSpec):
        hop_idx = np.floor(t / spec.dwell + 1e-9).astype(np.int64)
        freqs = np.asarray(spec.freqs, dtype=np.float64)
        freq = freqs[hop_idx % freqs.size]
        if spec.phase_mode == "continuous":
            cycles = np.mod(freq * t, 1.0)
        else:
            cycles = freq * (t - hop_idx * spec.dwell)
        samples = amp * np.cos(2.0 * np.pi * cycles)
        components = [freq]
        transitions = np.flatnonzero(np.diff(hop_idx)).astype(int) + 1
        transitions = transitions.tolist()
    elif isinstance(spec, PhaseCodedSpec):
        bit_len = spec.bit_duration * sample_rate
        if abs(bit_len - round(bit_len)) > 1e-6 * bit_len:
            raise WaveformError(
                "n_bits does not divide the samples of one period",
                n_bits=spec.n_bits, samples_per_period=spec.period * sample_rate,
            )
        bit_len = int(round(bit_len))
        code = phase_code(spec, seed)
        bits = np.tile(np.repeat(code, bit_len), n_periods)[:n]
        cycles = np.mod(spec.carrier * t, 1.0)
        samples = amp * np.cos(2.0 * np.pi * cycles + np.pi * bits)
        components = [np.full(n, spec.carrier)]
        transitions = (np.flatnonzero(np.diff(bits)) + 1).tolist()
    else:
        raise WaveformError(f"unsupported waveform spec {type(spec).__name__}")

    logger.debug(
        f"Synthesized {spec.kind}: {n} samples at {sample_rate:.4g} Hz, "
        f"{n_periods} period(s), {len(transitions)} transition(s)."
    )
    signal = SampledSignal(samples=samples, sample_rate=sample_rate, t0=0.0)
    track = FrequencyTrack(components=components, transitions=tuple(int(i) for i in transitions))
    return signal, track


def synthesize_tone(freq: float, amplitude: float, sample_rate: float, duration: float) -> SampledSignal:
    """单频余弦，用于频响测量的探测信号与控制信号。"""
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    return SampledSignal(
        samples=amplitude * np.cos(2.0 * np.pi * np.mod(freq * t, 1.0)),
        sample_rate=sample_rate,
    )


def _control_frequency(f: float, bfs: float, sideband_sign: int) -> float:
    if sideband_sign == -1:
        return bfs + f
    if sideband_sign == 1:
        return f - bfs
    raise WaveformError("sideband_sign must be +1 or -1", sideband_sign=sideband_sign)


def derive_control(spec: WaveformSpec, bfs: float, sideband_sign: int) -> WaveformSpec:
    """
    由待滤波信号规格推导滤波控制信号规格。

    结构与原规格相同，每个频率 f 替换为 f_ctrl，使得
    mpf_center_frequency(f_ctrl, bfs, sideband_sign) == f。
    相位编码信号沿用同一码字。

    Raises:
        WaveformError: 推导出的控制频率不为正（该边带方向下频移不可行）。
    """
    def shift(f: float) -> float:
        f_ctrl = _control_frequency(f, bfs, sideband_sign)
        if not f_ctrl > 0:
            raise WaveformError(
                "infeasible control shift: control frequency is not positive",
                f=f, bfs=bfs, sideband_sign=sideband_sign, f_ctrl=f_ctrl,
            )
        return f_ctrl

    if isinstance(spec, LfmSpec):
        return spec.model_copy(update={"f_start": shift(spec.f_start), "f_stop": shift(spec.f_stop)})
    if isinstance(spec, DlfmSpec):
        up = spec.up.model_copy(update={"f_start": shift(spec.up.f_start), "f_stop": shift(spec.up.f_stop)})
        down = spec.down.model_copy(update={"f_start": shift(spec.down.f_start), "f_stop": shift(spec.down.f_stop)})
        return spec.model_copy(update={"up": up, "down": down})
    if isinstance(spec, FhSpec):
        if not spec.freqs:
            raise WaveformError("frequency-hopping spec has an empty frequency list")
        return spec.model_copy(update={"freqs": [shift(f) for f in spec.freqs]})
    if isinstance(spec, PhaseCodedSpec):
        return spec.model_copy(update={"carrier": shift(spec.carrier)})
    raise WaveformError(f"unsupported waveform spec {type(spec).__name__}")


def transition_mask(track: FrequencyTrack, guard: int = TRANSITION_GUARD) -> np.ndarray:
    """True 表示该样点远离所有跳变点。"""
    mask = np.ones(len(track), dtype=bool)
    for idx in track.transitions:
        mask[max(idx - guard, 0): idx + guard] = False
    return mask


def instantaneous_frequency_error(
    signal: SampledSignal,
    track: FrequencyTrack,
    edge_guard: Optional[int] = None,
) -> float:
    """
    解析轨迹与由信号相位估计的瞬时频率之间的 RMS 偏差 (Hz)。

    估计值为解析信号展开相位的一阶差分，对应相邻样点中点处的频率，
    因此与相邻两个轨迹样点的均值比较。跳变点附近与记录两端的样点不计入。

    Raises:
        WaveformError: 轨迹包含多个分量（瞬时频率估计无定义）。
    """
    if not track.is_single:
        raise WaveformError(
            "instantaneous frequency is undefined for a multi-component track",
            components=len(track.components),
        )
    if len(track) != len(signal):
        raise WaveformError("signal and track lengths differ", signal=len(signal), track=len(track))

    analytic = hilbert(signal.samples)
    phase = np.unwrap(np.angle(analytic))
    estimate = np.diff(phase) * signal.sample_rate / (2.0 * np.pi)
    truth = track.components[0]
    expected = 0.5 * (truth[:-1] + truth[1:])

    mask = transition_mask(track)[:-1] & transition_mask(track)[1:]
    guard = edge_guard if edge_guard is not None else max(len(signal) // 100, 16)
    mask[:guard] = False
    mask[-guard:] = False
    if not mask.any():
        raise WaveformError("no samples left after excluding transitions", samples=len(signal))

    err = estimate[mask] - expected[mask]
    return float(np.sqrt(np.mean(err ** 2)))
