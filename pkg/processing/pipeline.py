# processing/pipeline.py

import logging
import math
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy import fft as sp_fft
from scipy.integrate import cumulative_trapezoid
from scipy.signal import hilbert

from core import metrics
from core.models import (
    ChainConfig,
    FrequencyTrack,
    ObpfSpec,
    OpticalBand,
    OpticalEnvelope,
    RunArtifacts,
    SampledSignal,
    SbsParams,
    WaveformSpec,
)
from core.noise_cal import calibrated_awgn
from core.photonic_chain import (
    HALF_POWER_DB,
    ChainError,
    electrical_bpf,
    mzm_csdsb,
    obpf_select,
    phase_modulate,
    photodetect,
    sbs_gain,
    sbs_transfer,
)
from core.waveforms import (
    WaveformError,
    derive_control,
    frequency_range,
    synthesize,
    synthesize_tone,
)

logger = logging.getLogger("TVMPF-Sim.Pipeline")


class ResponseSummary(NamedTuple):
    peak_freq: float
    bw3db: float
    peak_db: float


def resolve_obpf(cfg: ChainConfig, control_range: Tuple[float, float]) -> ObpfSpec:
    """
    返回带有确定频带的 OBPF 规格。

    配置中未给出频带时，按控制信号频率范围加保护带，在 sideband_sign 指定的一侧选带；
    靠近激光载波或奈奎斯特边缘时截断。
    """
    if cfg.obpf.band is not None:
        return cfg.obpf
    lo, hi = control_range
    edge = cfg.obpf.edge_width
    inner = lo - cfg.obpf.guard
    outer = hi + cfg.obpf.guard
    limit = cfg.sample_rate / 2.0 - edge
    if inner < edge or outer > limit:
        logger.warning(
            f"OBPF guard clipped: requested [{inner:.4g}, {outer:.4g}] Hz, "
            f"allowed [{edge:.4g}, {limit:.4g}] Hz."
        )
    inner, outer = max(inner, edge), min(outer, limit)
    if cfg.sideband_sign == -1:
        band = OpticalBand(f_low=-outer, f_high=-inner)
    else:
        band = OpticalBand(f_low=inner, f_high=outer)
    logger.debug(f"Resolved OBPF band [{band.f_low:.4g}, {band.f_high:.4g}] Hz.")
    return cfg.obpf.model_copy(update={"band": band})


def _skewed(control: SampledSignal, cfg: ChainConfig) -> SampledSignal:
    shift = int(round(cfg.control_skew * cfg.sample_rate))
    if shift == 0:
        return control
    return control.with_samples(np.roll(control.samples, shift))


def optical_carrier(control: SampledSignal, cfg: ChainConfig, obpf: ObpfSpec) -> OpticalEnvelope:
    """MZM 载波抑制双边带调制后经 OBPF 选出的单边带，作为相位调制器的新光载波。"""
    return obpf_select(mzm_csdsb(control, cfg.mzm), obpf)


def detect(carrier: OpticalEnvelope, drive: SampledSignal, cfg: ChainConfig) -> SampledSignal:
    """PM → SBS 增益 → PD，返回去直流后的探测波形（未经电带通）。"""
    field = phase_modulate(carrier, drive, cfg.pm)
    field = sbs_gain(field, cfg.sbs)
    return photodetect(field)


def _child_seeds(seed: int) -> Tuple[int, int]:
    noise_seed, receiver_seed = np.random.SeedSequence(seed).generate_state(2)
    return int(noise_seed), int(receiver_seed)


def _run_chain(
    signal: SampledSignal,
    control_spec: WaveformSpec,
    snr_db: Optional[float],
    cfg: ChainConfig,
    label: str,
) -> RunArtifacts:
    if len(signal) != cfg.n_samples or signal.sample_rate != cfg.sample_rate:
        raise ChainError(
            "signal does not match the chain sampling grid",
            samples=len(signal), expected=cfg.n_samples,
            sample_rate=signal.sample_rate, chain_rate=cfg.sample_rate,
        )
    control, _ = synthesize(control_spec, cfg.sample_rate, cfg.duration, seed=cfg.seed)
    control = _skewed(control, cfg)
    obpf = resolve_obpf(cfg, frequency_range(control_spec))
    carrier = optical_carrier(control, cfg, obpf)

    clean_pd = detect(carrier, signal, cfg)
    reference = electrical_bpf(clean_pd, cfg.bpf)
    reference_direct = electrical_bpf(signal, cfg.bpf)

    noise_seed, receiver_seed = _child_seeds(cfg.seed)
    if snr_db is None:
        drive = signal
        filtered = reference
    else:
        noise = calibrated_awgn(signal, cfg.noise_band, snr_db, noise_seed)
        drive = signal.with_samples(signal.samples + noise.samples)
        noisy_pd = detect(carrier, drive, cfg)
        if cfg.pd.noise_snr_db is not None:
            receiver = calibrated_awgn(clean_pd, cfg.bpf.band, cfg.pd.noise_snr_db, receiver_seed)
            noisy_pd = noisy_pd.with_samples(noisy_pd.samples + receiver.samples)
        filtered = electrical_bpf(noisy_pd, cfg.bpf)
    noisy_input = electrical_bpf(drive, cfg.bpf)

    mse_before = metrics.mse(noisy_input, reference_direct)
    mse_after = metrics.mse(filtered, reference)
    logger.info(f"{label} @ {snr_db} dB: mse_before={mse_before:.4f}, mse_after={mse_after:.4f}")

    return RunArtifacts(
        noisy_input=noisy_input,
        reference=reference,
        filtered=filtered,
        mse_before=mse_before,
        mse_after=mse_after,
        snr_target=snr_db,
        metadata={
            "control": control_spec.model_dump(),
            "obpf_band": [obpf.band.f_low, obpf.band.f_high],
            "seed": cfg.seed,
            "noise_seed": noise_seed,
            "receiver_seed": receiver_seed,
            "sideband_sign": cfg.sideband_sign,
            "n_samples": cfg.n_samples,
        },
    )


def run_experiment(spec: WaveformSpec, snr_db: Optional[float], cfg: ChainConfig) -> RunArtifacts:
    """
    端到端执行一次 TV-MPF 实验。

    合成待滤波信号与控制信号，按目标带内信噪比叠加标定噪声，经完整链路得到
    filtered；无噪驱动经同一链路得到 reference；电带通后的含噪输入为 noisy_input。
    滤波前的 MSE 以 electrical_bpf(s) 为参考，滤波后的 MSE 以链路 reference 为参考。
    snr_db 为 None 时不注入任何噪声（含接收机噪声）。
    """
    logger.info(
        f"Running {spec.kind} experiment: snr={snr_db if snr_db is not None else 'none'} dB, "
        f"seed={cfg.seed}, sideband_sign={cfg.sideband_sign:+d}."
    )
    signal, _ = synthesize(spec, cfg.sample_rate, cfg.duration, seed=cfg.seed)
    control_spec = derive_control(spec, cfg.sbs.bfs, cfg.sideband_sign)
    artifacts = _run_chain(signal, control_spec, snr_db, cfg, spec.kind)
    return artifacts.model_copy(
        update={"metadata": {"waveform": spec.model_dump(), **artifacts.metadata}}
    )


def run_with_signal(
    signal: SampledSignal,
    control_source: WaveformSpec,
    snr_db: Optional[float],
    cfg: ChainConfig,
) -> RunArtifacts:
    """
    以外部导入的采样记录作为相位调制器驱动运行链路。
    控制信号仍由 control_source 推导；记录没有真值轨迹。

    Raises:
        ChainError: 记录长度或采样率与链路配置不一致。
    """
    logger.info(f"Running imported signal ({len(signal)} samples) with control from {control_source.kind}.")
    control_spec = derive_control(control_source, cfg.sbs.bfs, cfg.sideband_sign)
    artifacts = _run_chain(signal, control_spec, snr_db, cfg, "imported")
    return artifacts.model_copy(
        update={"metadata": {"waveform": "imported", **artifacts.metadata}}
    )


def behavioral_filter(signal: SampledSignal, track: FrequencyTrack, sbs: SbsParams) -> SampledSignal:
    """
    理想化的跟踪滤波器：通带始终对准信号瞬时频率。

    解析信号乘 exp(−j2π∫f dτ) 去啁啾，在基带施加单边复洛伦兹增益，
    再恢复啁啾并取实部。用作物理链路的交叉验证基准。

    Raises:
        WaveformError: 轨迹含多个分量。
    """
    if not track.is_single:
        raise WaveformError(
            "behavioral filter needs a single-component track",
            components=len(track.components),
        )
    if len(track) != len(signal):
        raise WaveformError("signal and track lengths differ", signal=len(signal), track=len(track))

    fs = signal.sample_rate
    phase = 2.0 * np.pi * cumulative_trapezoid(track.components[0], dx=1.0 / fs, initial=0.0)
    dechirped = hilbert(signal.samples) * np.exp(-1j * phase)
    freqs = sp_fft.fftfreq(len(signal), d=1.0 / fs)
    # pump_offset = bfs 使增益线落在基带零频
    filtered = sp_fft.ifft(sp_fft.fft(dechirped) * sbs_transfer(freqs, sbs, pump_offset=sbs.bfs))
    return signal.with_samples(np.real(filtered * np.exp(1j * phase)))


def _tone_power_db(signal: SampledSignal, freq: float) -> float:
    """记录在 freq 处的单频功率 (dB)，按 DTFT 投影计算。"""
    t = np.arange(len(signal)) / signal.sample_rate
    amplitude = 2.0 * np.abs(np.dot(signal.samples, np.exp(-2j * np.pi * np.mod(freq * t, 1.0)))) / len(signal)
    return 20.0 * math.log10(max(amplitude, 1e-300))


def _probe_response(carrier: OpticalEnvelope, probe: float, cfg: ChainConfig) -> Tuple[float, float]:
    drive = synthesize_tone(probe, 1.0, cfg.sample_rate, cfg.duration)
    output = detect(carrier, drive, cfg)
    return probe, _tone_power_db(output, probe) - _tone_power_db(drive, probe)


def measure_response(
    f_ctrl: float,
    cfg: ChainConfig,
    probe_freqs: Sequence[float],
    n_jobs: int = 1,
) -> List[Tuple[float, float]]:
    """
    模拟矢网步进扫频测量：控制信号固定为单频 f_ctrl，对每个探测频点单独运行链路，
    返回 PD 输出与输入在探测频率处的功率比 (Hz, dB)。与实验装置一致，不经电带通。

    Raises:
        ChainError: 探测频率超出奈奎斯特范围。
    """
    bad = [p for p in probe_freqs if not 0 < p < cfg.sample_rate / 2.0]
    if bad:
        raise ChainError("probe frequencies outside Nyquist", probes=bad[:5], sample_rate=cfg.sample_rate)
    control = synthesize_tone(f_ctrl, 1.0, cfg.sample_rate, cfg.duration)
    obpf = resolve_obpf(cfg, (f_ctrl, f_ctrl))
    carrier = optical_carrier(control, cfg, obpf)
    logger.info(f"Measuring response for control {f_ctrl / 1e9:.3f} GHz over {len(probe_freqs)} probes.")
    results = Parallel(n_jobs=n_jobs)(
        delayed(_probe_response)(carrier, float(p), cfg) for p in probe_freqs
    )
    return sorted(results)


def summarize_response(curve: Sequence[Tuple[float, float]]) -> ResponseSummary:
    """
    频响曲线的峰值频率（抛物线插值）与 −3 dB 带宽（线性插值两侧交点）。
    曲线两侧未降到 −3 dB 时带宽为 nan。
    """
    freqs = np.array([f for f, _ in curve], dtype=np.float64)
    levels = np.array([d for _, d in curve], dtype=np.float64)
    i = int(np.argmax(levels))
    peak_freq, peak_db = freqs[i], levels[i]
    if 0 < i < freqs.size - 1:
        y0, y1, y2 = levels[i - 1], levels[i], levels[i + 1]
        denom = y0 - 2.0 * y1 + y2
        if denom < 0:
            p = 0.5 * (y0 - y2) / denom
            step = 0.5 * (freqs[i + 1] - freqs[i - 1])
            peak_freq = freqs[i] + p * step
            peak_db = y1 - 0.25 * (y0 - y2) * p

    level = peak_db - HALF_POWER_DB

    def crossing(indices) -> Optional[float]:
        prev = i
        for j in indices:
            if levels[j] < level:
                frac = (levels[prev] - level) / (levels[prev] - levels[j])
                return freqs[prev] + frac * (freqs[j] - freqs[prev])
            prev = j
        return None

    left = crossing(range(i - 1, -1, -1))
    right = crossing(range(i + 1, freqs.size))
    bw = right - left if left is not None and right is not None else math.nan
    return ResponseSummary(peak_freq=float(peak_freq), bw3db=float(bw), peak_db=float(peak_db))


def default_probe_grid(center: float, span: float = 80e6, step: float = 1e6) -> np.ndarray:
    """以 center 为中心、步长 step 的探测频点。"""
    half = int(round(0.5 * span / step))
    return center + step * np.arange(-half, half + 1)
