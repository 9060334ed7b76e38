# core/metrics.py

import logging
import math
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft as sp_fft
from scipy.signal import hilbert
from scipy.signal.windows import hann

from core.models import Band, RunArtifacts, SampledSignal, Spectrogram

logger = logging.getLogger("TVMPF-Sim.Metrics")

NO_ERROR_IMPROVEMENT_DB = math.inf
DEFAULT_WINDOW_LEN = 512
BPSK_AVERAGING_FRACTION = 0.6


class MetricError(ValueError):
    """
    指标计算的前置条件不满足时抛出。

    Attributes:
        message (str): 错误描述。
        offending (dict): 相关参数取值。
    """
    def __init__(self, message: str, **offending):
        super().__init__(message)
        self.offending = offending

    def __str__(self):
        if not self.offending:
            return super().__str__()
        details = ", ".join(f"{k}={v!r}" for k, v in self.offending.items())
        return f"{super().__str__()} ({details})"


def _trimmed_pair(candidate: SampledSignal, reference: SampledSignal) -> Tuple[np.ndarray, np.ndarray]:
    if candidate.sample_rate != reference.sample_rate:
        raise MetricError(
            "sample rates differ",
            candidate=candidate.sample_rate, reference=reference.sample_rate,
        )
    n_c, n_r = len(candidate), len(reference)
    if abs(n_c - n_r) > 0.01 * max(n_c, n_r):
        raise MetricError("record lengths differ by more than 1%", candidate=n_c, reference=n_r)
    n = min(n_c, n_r)
    return candidate.samples[:n], reference.samples[:n]


def best_lag(candidate: np.ndarray, reference: np.ndarray, max_lag: Optional[int] = None) -> int:
    """
    使循环互相关幅值最大的整数时延 k：np.roll(candidate, k) 与 reference 对齐。
    取 |xcorr| 的峰值，符号留给后续的最小二乘增益吸收。
    """
    n = reference.size
    xcorr = sp_fft.irfft(sp_fft.rfft(reference) * np.conj(sp_fft.rfft(candidate)), n=n)
    lags = np.arange(n)
    lags[lags > n // 2] -= n
    if max_lag is not None:
        xcorr = np.where(np.abs(lags) <= max_lag, xcorr, 0.0)
    return int(lags[int(np.argmax(np.abs(xcorr)))])


def mse(candidate: SampledSignal, reference: SampledSignal, max_lag: Optional[int] = None) -> float:
    """
    归一化波形均方误差。

    1) 以互相关最大的整数时延对齐 candidate；2) 乘以最小二乘标量增益
    α = ⟨c, r⟩/⟨c, c⟩；3) 返回 Σ(α·c − r)² / Σ r²。

    Raises:
        MetricError: 参考波形能量为零，或采样率/长度不满足前置条件。
    """
    c, r = _trimmed_pair(candidate, reference)
    ref_energy = float(np.dot(r, r))
    if not ref_energy > 0:
        raise MetricError("reference waveform has zero energy")
    lag = best_lag(c, r, max_lag)
    if lag:
        c = np.roll(c, lag)
    cand_energy = float(np.dot(c, c))
    alpha = float(np.dot(c, r)) / cand_energy if cand_energy > 0 else 0.0
    residual = alpha * c - r
    return float(np.dot(residual, residual)) / ref_energy


def normalized_correlation(a: SampledSignal, b: SampledSignal, max_lag: Optional[int] = None) -> float:
    """
    解析信号的相位不变归一化相关 |⟨a⁺, b⁺⟩| / (‖a⁺‖·‖b⁺‖)，先做整数时延对齐。
    """
    x, y = _trimmed_pair(a, b)
    za, zb = hilbert(x), hilbert(y)
    denom = np.linalg.norm(za) * np.linalg.norm(zb)
    if denom == 0:
        raise MetricError("correlation undefined for a zero-energy record")
    n = za.size
    xcorr = np.abs(sp_fft.ifft(sp_fft.fft(zb) * np.conj(sp_fft.fft(za))))
    if max_lag is not None:
        lags = np.arange(n)
        lags[lags > n // 2] -= n
        xcorr = np.where(np.abs(lags) <= max_lag, xcorr, 0.0)
    return float(np.max(xcorr) / denom)


def mse_improvement(artifacts: RunArtifacts) -> float:
    """
    10·log10(mse_before / mse_after)；mse_after 为 0 时返回 +inf。

    Raises:
        MetricError: mse_before 为零。
    """
    if not artifacts.mse_before > 0:
        raise MetricError("mse_before must be positive", mse_before=artifacts.mse_before)
    if artifacts.mse_after == 0:
        return NO_ERROR_IMPROVEMENT_DB
    return 10.0 * math.log10(artifacts.mse_before / artifacts.mse_after)


def spectrogram(
    signal: SampledSignal,
    window_len: int = DEFAULT_WINDOW_LEN,
    hop: Optional[int] = None,
    band: Optional[Band] = None,
) -> Spectrogram:
    """
    Hann 窗短时功率谱（单边），默认 50% 重叠。

    每帧的功率按单边加权（直流与奈奎斯特点权重 1，其余 2），
    不限频带时每帧求和等于该帧加窗信号能量。band 仅裁剪显示频段。

    Raises:
        MetricError: 窗长超过记录长度或跳步小于 1。
    """
    hop = window_len // 2 if hop is None else hop
    if window_len > len(signal):
        raise MetricError("window is longer than the record", window_len=window_len, samples=len(signal))
    if hop < 1:
        raise MetricError("hop must be at least one sample", hop=hop)

    window = hann(window_len, sym=False)
    frames = sliding_window_view(signal.samples, window_len)[::hop]
    spectra = sp_fft.rfft(frames * window, axis=-1)
    weights = np.full(spectra.shape[-1], 2.0)
    weights[0] = 1.0
    if window_len % 2 == 0:
        weights[-1] = 1.0
    power = weights * np.abs(spectra) ** 2 / window_len

    bin_freqs = sp_fft.rfftfreq(window_len, d=1.0 / signal.sample_rate)
    if band is not None:
        keep = (bin_freqs >= band.f_low) & (bin_freqs <= band.f_high)
        if not keep.any():
            logger.warning(f"Display band [{band.f_low:g}, {band.f_high:g}] Hz holds no spectrogram bins.")
        power, bin_freqs = power[:, keep], bin_freqs[keep]

    frame_times = signal.t0 + (np.arange(frames.shape[0]) * hop + 0.5 * window_len) / signal.sample_rate
    return Spectrogram(
        power=power,
        frame_times=frame_times,
        bin_freqs=bin_freqs,
        window_len=window_len,
        hop=hop,
    )


def ridge_frequencies(spec: Spectrogram, interpolate: bool = False) -> np.ndarray:
    """
    每帧功率最大的频点频率。

    interpolate 为真时在峰值及其两侧频点的对数功率上做抛物线插值，
    分辨率不再受 fs/window_len 限制；峰值落在频段边缘的帧保留频点值。
    """
    peak = np.argmax(spec.power, axis=1)
    freqs = spec.bin_freqs[peak]
    if not interpolate or spec.bin_freqs.size < 3:
        return freqs
    inner = (peak > 0) & (peak < spec.bin_freqs.size - 1)
    rows = np.flatnonzero(inner)
    log_power = np.log(np.maximum(spec.power, np.finfo(float).tiny))
    left = log_power[rows, peak[rows] - 1]
    center = log_power[rows, peak[rows]]
    right = log_power[rows, peak[rows] + 1]
    curvature = left - 2.0 * center + right
    offset = np.where(curvature < 0, 0.5 * (left - right) / np.where(curvature < 0, curvature, -1.0), 0.0)
    freqs = freqs.astype(float)
    freqs[rows] += offset * spec.bin_width
    return freqs


def power_spectrum(signal: SampledSignal) -> Tuple[np.ndarray, np.ndarray]:
    """整段记录的单边功率谱 (频率 Hz, 功率 dB)，用于系统各点的频谱输出。"""
    n = len(signal)
    spectrum = sp_fft.rfft(signal.samples)
    power = 2.0 * np.abs(spectrum) ** 2 / n ** 2
    power[0] /= 2.0
    freqs = sp_fft.rfftfreq(n, d=1.0 / signal.sample_rate)
    return freqs, 10.0 * np.log10(np.maximum(power, np.finfo(float).tiny))


def recover_bpsk_phase(
    signal: SampledSignal,
    carrier: float,
    bit_duration: float,
    fraction: float = BPSK_AVERAGING_FRACTION,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    二进制相位编码信号的相干解调。

    解析信号乘以 exp(−j2π·carrier·t) 下变频，在每个码元中间 fraction 部分取复平均，
    以第一个码元为相位参考，将相位判决到 {0, π}。

    Returns:
        (phases, bits): 每码元相对相位 (rad，范围 (−π, π]) 与硬判决 (0/1)。

    Raises:
        MetricError: 记录不是整数个码元。
    """
    bit_len = bit_duration * signal.sample_rate
    n_bits = len(signal) / bit_len if bit_len > 0 else 0.0
    if bit_len <= 0 or abs(bit_len - round(bit_len)) > 1e-6 * bit_len or abs(n_bits - round(n_bits)) > 1e-6:
        raise MetricError(
            "record does not contain an integer number of bits",
            samples=len(signal), samples_per_bit=bit_len,
        )
    bit_len, n_bits = int(round(bit_len)), int(round(n_bits))

    t = signal.time_axis()
    baseband = hilbert(signal.samples) * np.exp(-2j * np.pi * np.mod(carrier * t, 1.0))
    margin = int(round(0.5 * (1.0 - fraction) * bit_len))
    per_bit = baseband.reshape(n_bits, bit_len)[:, margin: bit_len - margin].mean(axis=1)

    phases = np.angle(per_bit * np.conj(per_bit[0]))
    bits = (np.abs(phases) > np.pi / 2).astype(np.int8)
    return phases, bits


def count_bit_errors(bits: np.ndarray, code: np.ndarray) -> int:
    """按全局 π 模糊度取较小者统计误码数。"""
    bits = np.asarray(bits, dtype=np.int8)
    code = np.asarray(code, dtype=np.int8)[: bits.size]
    errors = int(np.count_nonzero(bits != code))
    return min(errors, bits.size - errors)
