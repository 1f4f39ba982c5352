from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

from .data_io import PlaneWaveStack
from .errors import ContractError
from .event_log import EventLogger, new_run_id
from .metrics import EvalConfig, MetricsReport, RoiSpec, evaluate_stack, mean_std
from .model import save_weights
from .trainer import VIEW_COUNTS, TrainConfig, train, write_loss_csv

SUMMARY_FIELDS = (
    "views",
    "ssim_mean",
    "ssim_std",
    "psnr_mean",
    "psnr_std",
    "o_ssim_mean",
    "o_ssim_std",
    "final_loss",
    "wall_time_s",
)


@dataclass(slots=True)
class SweepConfig:
    counts: tuple[int, ...] = VIEW_COUNTS
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    out_dir: str = "sweep"
    log_dir: str = "runs"
    figure: bool = True
    verbose: bool = True


@dataclass(slots=True)
class SweepRow:
    views: int
    ssim_mean: float
    ssim_std: float
    psnr_mean: float
    psnr_std: float
    o_ssim_mean: float
    o_ssim_std: float
    final_loss: float
    wall_time_s: float

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in SUMMARY_FIELDS}


class SweepRunner:
    def __init__(self, cfg: SweepConfig) -> None:
        if not cfg.counts:
            raise ContractError("sweep needs at least one view count")
        if any(c < 1 for c in cfg.counts):
            raise ContractError(f"view counts must be >= 1, got {list(cfg.counts)}")
        self.cfg = cfg
        self.sweep_id = new_run_id("sweep")
        self.event_logger = EventLogger.create(cfg.log_dir, self.sweep_id)

    def run(self, stack: PlaneWaveStack, roi: RoiSpec) -> list[SweepRow]:
        out_root = Path(self.cfg.out_dir)
        out_root.mkdir(parents=True, exist_ok=True)
        self.event_logger.write("sweep_started", {"sweep_id": self.sweep_id, "counts": list(self.cfg.counts)})
        if self.cfg.verbose:
            print(f"Starting sweep id={self.sweep_id} counts={','.join(str(c) for c in self.cfg.counts)}")

        rows: list[SweepRow] = []
        for count in self.cfg.counts:
            count_dir = out_root / f"views_{count:03d}"
            self.event_logger.write("sweep_count_started", {"sweep_id": self.sweep_id, "views": count})
            if self.cfg.verbose:
                print(f"\n=== views={count} ===")
            train_cfg = replace(self.cfg.train, views=count)
            result = train(stack, train_cfg, out_dir=count_dir, events=self.event_logger, verbose=self.cfg.verbose)
            save_weights(result.params, count_dir / "weights.pwin")
            write_loss_csv(count_dir / "loss.csv", result.report.losses)

            eval_cfg = replace(self.cfg.eval, train_indices=tuple(result.report.view_indices))
            report = evaluate_stack(result.params, stack, roi, "all", eval_cfg)
            report.metadata["views"] = count
            report.write_csv(count_dir / "metrics.csv")
            report.write_json(count_dir / "metrics.json")

            row = self._row(count, report, result.report.losses[-1], result.report.wall_time_s)
            rows.append(row)
            self.event_logger.write("sweep_count_result", {"sweep_id": self.sweep_id, **row.to_dict()})
            if self.cfg.verbose:
                print(f"views={count} ssim={row.ssim_mean:.4f}+-{row.ssim_std:.4f} psnr={row.psnr_mean:.2f}+-{row.psnr_std:.2f}")

        summary = write_summary_csv(out_root / "summary.csv", rows)
        if self.cfg.figure:
            plot_summary(out_root / "sweep_summary.png", rows)
        self.event_logger.write("sweep_ended", {"sweep_id": self.sweep_id, "summary": str(summary)})
        if self.cfg.verbose:
            print(f"\nSweep summary: {summary}")
            print(f"Sweep log: {self.event_logger.events_path}")
        return rows

    @staticmethod
    def _row(count: int, report: MetricsReport, final_loss: float, wall: float) -> SweepRow:
        ssim_m, ssim_s = mean_std(report.values("all", "o_prime", "ssim"))
        psnr_m, psnr_s = mean_std(report.values("all", "o_prime", "psnr"))
        o_m, o_s = mean_std(report.values("all", "o", "ssim"))
        return SweepRow(count, ssim_m, ssim_s, psnr_m, psnr_s, o_m, o_s, float(final_loss), float(wall))


def write_summary_csv(path: str | Path, rows: list[SweepRow]) -> Path:
    target = Path(path)
    with target.open("w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(SUMMARY_FIELDS))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.to_dict().items()})
    return target


def plot_summary(path: str | Path, rows: list[SweepRow]) -> Path:
    from matplotlib.figure import Figure

    views = [r.views for r in rows]
    fig = Figure(figsize=(8, 3.2))
    ax_ssim, ax_psnr = fig.subplots(1, 2)
    ax_ssim.errorbar(views, [r.ssim_mean for r in rows], yerr=[r.ssim_std for r in rows], marker="o", capsize=3)
    ax_ssim.set_xlabel("training views")
    ax_ssim.set_ylabel("SSIM (o', GT)")
    ax_psnr.errorbar(views, [r.psnr_mean for r in rows], yerr=[r.psnr_std for r in rows], marker="o", capsize=3)
    ax_psnr.set_xlabel("training views")
    ax_psnr.set_ylabel("PSNR [dB]")
    for ax in (ax_ssim, ax_psnr):
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    target = Path(path)
    fig.savefig(target, dpi=120)
    return target
