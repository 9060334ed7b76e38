# processing/sweep_runner.py

import logging
from typing import Any, Dict, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from core.models import ChainConfig, WaveformSpec
from processing.pipeline import run_experiment

logger = logging.getLogger("TVMPF-Sim.Sweep")

SWEEP_COLUMNS = ["snr_db", "mse_before", "mse_after", "improvement_db", "n_seeds"]


def _sweep_point(spec: WaveformSpec, snr_db: float, cfg: ChainConfig) -> Dict[str, Any]:
    artifacts = run_experiment(spec, snr_db, cfg)
    return {
        "snr_db": snr_db,
        "seed": cfg.seed,
        "mse_before": artifacts.mse_before,
        "mse_after": artifacts.mse_after,
    }


class SweepRunner:
    """
    在 (SNR, 种子) 网格上执行 run_experiment 并按 SNR 平均。
    各作业相互独立，可用 joblib 并行；聚合与调度顺序无关，输出按 SNR 排序。
    """

    def __init__(self, cfg: ChainConfig, n_jobs: int = 1, show_progress: bool = False):
        """
        初始化扫描执行器。

        Args:
            cfg (ChainConfig): 链路配置，cfg.seed 为第一个种子。
            n_jobs (int): joblib 并行作业数，-1 表示全部核。
            show_progress (bool): 是否显示 tqdm 进度条。
        """
        self.cfg = cfg
        self.n_jobs = n_jobs
        self.show_progress = show_progress
        logger.debug(f"SweepRunner initialized (n_jobs={n_jobs}).")

    def seeds(self, seeds_per_point: int) -> list:
        return [self.cfg.seed + k for k in range(seeds_per_point)]

    def run(self, spec: WaveformSpec, snr_list: Sequence[float], seeds_per_point: int = 5) -> pd.DataFrame:
        """
        执行扫描。

        Args:
            spec (WaveformSpec): 待滤波信号规格。
            snr_list (Sequence[float]): 带内信噪比列表 (dB)。
            seeds_per_point (int): 每个 SNR 点的噪声种子数。

        Returns:
            pd.DataFrame: 列为 snr_db, mse_before, mse_after, improvement_db, n_seeds，按 snr_db 升序。

        Raises:
            ValueError: SNR 列表为空或种子数小于 1。
        """
        if len(snr_list) == 0:
            raise ValueError("sweep needs a non-empty SNR list")
        if seeds_per_point < 1:
            raise ValueError(f"seeds_per_point must be >= 1, got {seeds_per_point}")

        jobs = [
            (float(snr), self.cfg.model_copy(update={"seed": seed}))
            for snr in snr_list
            for seed in self.seeds(seeds_per_point)
        ]
        logger.info(
            f"Sweeping {spec.kind}: {len(snr_list)} SNR point(s) x {seeds_per_point} seed(s) "
            f"= {len(jobs)} run(s)."
        )
        stream = Parallel(n_jobs=self.n_jobs, return_as="generator")(
            delayed(_sweep_point)(spec, snr, cfg) for snr, cfg in jobs
        )
        rows = list(tqdm(stream, total=len(jobs), desc=f"sweep {spec.kind}", disable=not self.show_progress))

        per_run = pd.DataFrame(rows)
        table = (
            per_run.groupby("snr_db", sort=True)
            .agg(mse_before=("mse_before", "mean"), mse_after=("mse_after", "mean"), n_seeds=("seed", "count"))
            .reset_index()
        )
        table["improvement_db"] = 10.0 * np.log10(table["mse_before"] / table["mse_after"])
        return table[SWEEP_COLUMNS]


def run_sweep(
    spec: WaveformSpec,
    snr_list: Sequence[float],
    cfg: ChainConfig,
    seeds_per_point: int = 5,
    n_jobs: int = 1,
) -> pd.DataFrame:
    """SweepRunner 的函数式入口。"""
    return SweepRunner(cfg, n_jobs=n_jobs).run(spec, snr_list, seeds_per_point)


def find_crossover(table: pd.DataFrame) -> Optional[float]:
    """第一个 mse_after >= mse_before 的 SNR；不存在时返回 None。"""
    worse = table[table["mse_after"] >= table["mse_before"]]
    if worse.empty:
        return None
    return float(worse["snr_db"].iloc[0])
