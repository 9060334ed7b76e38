# core/photonic_chain.py
"""
光子链路各器件的复包络模型：MZM → OBPF → PM → SBS 增益 → PD → 电带通。

SBS 相互作用建模为光谱上固定的线性时不变复洛伦兹增益（泵浦不耗尽），
微波响应的时变性完全来自控制信号的调制。
"""

import logging
import math

import numpy as np
from scipy import fft as sp_fft
from scipy.optimize import brentq

from core.models import (
    BpfSpec,
    MzmParams,
    ObpfSpec,
    OpticalEnvelope,
    PmParams,
    SampledSignal,
    SbsParams,
)

logger = logging.getLogger("TVMPF-Sim.Chain")

HALF_POWER_DB = 10.0 * math.log10(2.0)


class ChainError(ValueError):
    """
    光子链路器件参数或输入不合法时抛出。

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


class CalibrationError(ChainError):
    """洛伦兹线宽标定找不到有效区间。"""


def raised_cosine_mask(freqs: np.ndarray, f_low: float, f_high: float, edge_width: float) -> np.ndarray:
    """
    升余弦带通掩模。过渡带以带边为中心、宽 edge_width；带内为 1，过渡带外为 0。
    """
    if edge_width <= 0:
        return ((freqs >= f_low) & (freqs <= f_high)).astype(np.float64)
    half = 0.5 * edge_width
    mask = np.zeros(freqs.shape, dtype=np.float64)
    mask[(freqs >= f_low + half) & (freqs <= f_high - half)] = 1.0
    rising = (freqs > f_low - half) & (freqs < f_low + half)
    mask[rising] = 0.5 * (1.0 - np.cos(np.pi * (freqs[rising] - (f_low - half)) / edge_width))
    falling = (freqs > f_high - half) & (freqs < f_high + half)
    mask[falling] = 0.5 * (1.0 + np.cos(np.pi * (freqs[falling] - (f_high - half)) / edge_width))
    return mask


def _optical_freqs(field: OpticalEnvelope) -> np.ndarray:
    return sp_fft.fftfreq(len(field), d=1.0 / field.sample_rate) + field.carrier_offset


# --- 调制器 ---

def mzm_csdsb(drive: SampledSignal, params: MzmParams) -> OpticalEnvelope:
    """
    零偏置 MZM 的载波抑制双边带输出 E(t) = sin(m·c(t))，c 为峰值归一化的驱动。
    单频驱动下只含奇数阶边带，激光载波处为零。
    """
    peak = float(np.max(np.abs(drive.samples))) if len(drive) else 0.0
    normalized = drive.samples / peak if peak > 0 else np.zeros(len(drive))
    field = np.sin(params.mod_index * normalized)
    return OpticalEnvelope(samples=field, sample_rate=drive.sample_rate, t0=drive.t0)


def obpf_select(field: OpticalEnvelope, spec: ObpfSpec) -> OpticalEnvelope:
    """
    光带通滤波：频域升余弦掩模，过渡带外完全抑制。

    Raises:
        ChainError: 未指定频带，或频带超出奈奎斯特范围。
    """
    band = spec.band
    if band is None:
        raise ChainError("obpf_select needs a resolved band; resolve the automatic band first")
    if not band.within_nyquist(field.sample_rate):
        raise ChainError(
            "optical filter band lies outside Nyquist",
            f_low=band.f_low, f_high=band.f_high, sample_rate=field.sample_rate,
        )
    mask = raised_cosine_mask(_optical_freqs(field), band.f_low, band.f_high, spec.edge_width)
    return field.with_samples(sp_fft.ifft(sp_fft.fft(field.samples) * mask))


def phase_modulate(field: OpticalEnvelope, drive: SampledSignal, params: PmParams) -> OpticalEnvelope:
    """
    相位调制 E_out(t) = E_in(t)·exp(j·m·s(t))，逐样点保持幅度。

    Raises:
        ChainError: 长度或采样率不一致。
    """
    if len(field) != len(drive) or field.sample_rate != drive.sample_rate:
        raise ChainError(
            "phase modulator drive does not match the optical record",
            field=(len(field), field.sample_rate), drive=(len(drive), drive.sample_rate),
        )
    return field.with_samples(field.samples * np.exp(1j * params.mod_index * drive.samples))


# --- SBS 增益 ---

def _power_response_db(delta: float, linewidth: float, g0: float) -> float:
    """|exp[(g0/2)/(1 + 2jδ/Δν)]|² (dB)。"""
    x = 2.0 * delta / linewidth
    return 10.0 * (g0 / (1.0 + x * x)) / math.log(10.0)


def calibrate_linewidth(params: SbsParams) -> float:
    """
    求本征布里渊线宽 Δν，使功率响应在 δ = ±target_bw3db/2 处恰好下降 3 dB。

    增益变窄使有效 3 dB 带宽小于本征线宽；由区间求根（brentq）得到，
    相对精度 1e-6 以内。峰值增益为 0 dB 时介质透明，返回 target_bw3db。

    Raises:
        CalibrationError: 带宽不为正，或峰值增益不足 3 dB 导致无法形成有效区间。
    """
    target = params.target_bw3db
    if not target > 0:
        raise CalibrationError("target 3-dB bandwidth must be positive", target_bw3db=target)
    if params.peak_gain_db == 0:
        return target
    g0 = params.peak_gain_db * math.log(10.0) / 10.0
    peak_db = params.peak_gain_db

    def residual(log_lw: float) -> float:
        return _power_response_db(0.5 * target, math.exp(log_lw), g0) - (peak_db - HALF_POWER_DB)

    lo, hi = math.log(target * 1e-3), math.log(target * 1e3)
    if residual(lo) * residual(hi) > 0:
        raise CalibrationError(
            "no bracket for the linewidth root: peak gain too small for a 3-dB point",
            peak_gain_db=params.peak_gain_db, target_bw3db=target,
        )
    linewidth = math.exp(brentq(residual, lo, hi, xtol=1e-12, rtol=1e-10))
    logger.debug(
        f"Calibrated intrinsic linewidth {linewidth / 1e6:.4f} MHz for "
        f"{params.peak_gain_db:.2f} dB peak gain and {target / 1e6:.3f} MHz target bandwidth."
    )
    return linewidth


def sbs_transfer(freqs: np.ndarray, params: SbsParams, pump_offset: float = 0.0) -> np.ndarray:
    """复洛伦兹增益 H(f) = exp[(g0/2) / (1 + 2j(f − f_B)/Δν)]，f_B = pump_offset − bfs。"""
    if params.peak_gain_db == 0:
        return np.ones(freqs.shape, dtype=np.complex128)
    linewidth = params.intrinsic_linewidth or calibrate_linewidth(params)
    g0 = params.peak_gain_db * math.log(10.0) / 10.0
    f_b = pump_offset - params.bfs
    return np.exp((0.5 * g0) / (1.0 + 2j * (freqs - f_b) / linewidth))


def sbs_gain(field: OpticalEnvelope, params: SbsParams, pump_offset: float = 0.0) -> OpticalEnvelope:
    """
    对整段记录的光谱乘以 SBS 复洛伦兹增益（线性时不变）。

    Raises:
        ChainError: 增益谱线中心超出奈奎斯特范围。
    """
    f_b = pump_offset - params.bfs
    half = field.sample_rate / 2.0
    if not -half < f_b - field.carrier_offset < half:
        raise ChainError(
            "Brillouin gain line lies outside Nyquist",
            gain_line=f_b, carrier_offset=field.carrier_offset, sample_rate=field.sample_rate,
        )
    transfer = sbs_transfer(_optical_freqs(field), params, pump_offset)
    return field.with_samples(sp_fft.ifft(sp_fft.fft(field.samples) * transfer))


# --- 探测与电滤波 ---

def photodetect(field: OpticalEnvelope) -> SampledSignal:
    """平方律探测 y(t) = |E(t)|²（响应度 1），并去除直流。"""
    intensity = np.abs(field.samples) ** 2
    return SampledSignal(
        samples=intensity - intensity.mean(),
        sample_rate=field.sample_rate,
        t0=field.t0,
    )


def electrical_bpf(signal: SampledSignal, spec: BpfSpec) -> SampledSignal:
    """
    零相位电带通：频域升余弦掩模。

    Raises:
        ChainError: 频带超出奈奎斯特范围。
    """
    band = spec.band
    if not band.within_nyquist(signal.sample_rate):
        raise ChainError(
            "electrical filter band lies outside Nyquist",
            f_high=band.f_high, nyquist=signal.sample_rate / 2.0,
        )
    n = len(signal)
    freqs = sp_fft.rfftfreq(n, d=1.0 / signal.sample_rate)
    mask = raised_cosine_mask(freqs, band.f_low, band.f_high, spec.edge_width)
    return signal.with_samples(sp_fft.irfft(sp_fft.rfft(signal.samples) * mask, n=n))


def mpf_center_frequency(f_ctrl: float, bfs: float, sideband_sign: int) -> float:
    """
    微波光子滤波器中心频率。

    选负边带 (−1) 时为 |bfs − f_ctrl|，选正边带 (+1) 时为 bfs + f_ctrl。
    """
    if sideband_sign == -1:
        return abs(bfs - f_ctrl)
    if sideband_sign == 1:
        return bfs + f_ctrl
    raise ChainError("sideband_sign must be +1 or -1", sideband_sign=sideband_sign)
