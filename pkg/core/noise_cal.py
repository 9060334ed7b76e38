# core/noise_cal.py

import logging
import math

import numpy as np
from scipy import fft as sp_fft

from core.models import Band, SampledSignal

logger = logging.getLogger("TVMPF-Sim.NoiseCal")

# measure_snr 在无噪声时返回的哨兵值
NO_NOISE_SNR_DB = math.inf


class NoiseCalibrationError(ValueError):
    """
    噪声标定或带内功率测量失败时抛出。

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


def _band_bins(n: int, sample_rate: float, band: Band) -> np.ndarray:
    if not band.within_nyquist(sample_rate):
        raise NoiseCalibrationError(
            "band lies outside Nyquist",
            f_high=band.f_high, nyquist=sample_rate / 2.0,
        )
    freqs = sp_fft.rfftfreq(n, d=1.0 / sample_rate)
    return (freqs >= band.f_low) & (freqs <= band.f_high)


def inband_power(signal: SampledSignal, band: Band) -> float:
    """
    信号在 [f_low, f_high] 内分量的均方值，按 Parseval 对全记录谱积分。

    频带不含直流与奈奎斯特点，单边谱每个频点计两次。
    """
    x = signal.samples
    mask = _band_bins(x.size, signal.sample_rate, band)
    spectrum = sp_fft.rfft(x)
    return float(2.0 * np.sum(np.abs(spectrum[mask]) ** 2) / x.size ** 2)


def bandlimited_gaussian(n: int, sample_rate: float, band: Band, rng: np.random.Generator) -> np.ndarray:
    """白高斯记录经频域砖墙掩模限带后的样点（未标定）。"""
    mask = _band_bins(n, sample_rate, band)
    spectrum = sp_fft.rfft(rng.standard_normal(n))
    spectrum[~mask] = 0.0
    return sp_fft.irfft(spectrum, n=n)


def calibrated_awgn(signal: SampledSignal, band: Band, target_snr_db: float, seed: int) -> SampledSignal:
    """
    生成限带于 band 的高斯噪声记录，并缩放使带内信噪比等于 target_snr_db。

    Args:
        signal (SampledSignal): 作为功率基准的无噪信号。
        band (Band): 噪声带宽，同时也是带内功率的计算频带。
        target_snr_db (float): 目标带内信噪比 (dB)。
        seed (int): 随机种子，相同种子得到相同噪声。

    Returns:
        SampledSignal: 仅含噪声的记录，与 signal 等长同采样率。

    Raises:
        NoiseCalibrationError: 信号带内功率为零。
    """
    p_signal = inband_power(signal, band)
    if not p_signal > 0:
        raise NoiseCalibrationError("signal has zero in-band power", f_low=band.f_low, f_high=band.f_high)

    rng = np.random.default_rng(seed)
    raw = signal.with_samples(bandlimited_gaussian(len(signal), signal.sample_rate, band, rng))
    p_raw = inband_power(raw, band)
    p_target = p_signal / 10.0 ** (target_snr_db / 10.0)
    scale = math.sqrt(p_target / p_raw)
    logger.debug(f"AWGN seed={seed}: target {target_snr_db:.2f} dB, scale {scale:.4g}")
    return signal.with_samples(raw.samples * scale)


def measure_snr(clean: SampledSignal, noisy: SampledSignal, band: Band) -> float:
    """
    10·log10(带内信号功率 / 带内噪声功率)，噪声取 noisy − clean。

    noisy 与 clean 完全相同时返回 NO_NOISE_SNR_DB (+inf)。

    Raises:
        NoiseCalibrationError: 长度或采样率不一致；clean 带内功率为零。
    """
    if len(clean) != len(noisy) or clean.sample_rate != noisy.sample_rate:
        raise NoiseCalibrationError(
            "clean and noisy records differ in length or sample rate",
            clean=(len(clean), clean.sample_rate), noisy=(len(noisy), noisy.sample_rate),
        )
    p_signal = inband_power(clean, band)
    if not p_signal > 0:
        raise NoiseCalibrationError("clean record has zero in-band power")
    p_noise = inband_power(noisy.with_samples(noisy.samples - clean.samples), band)
    if p_noise == 0.0:
        return NO_NOISE_SNR_DB
    return 10.0 * math.log10(p_signal / p_noise)
