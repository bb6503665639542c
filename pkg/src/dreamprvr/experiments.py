"""Ablation and sweep drivers plus a small plotting helper for their CSV output."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RunConfig
from .data import Dataset
from .retrieval import RecallReport
from .train import Trainer, evaluate_params, median_epoch_ms

_SIM_ONLY = {"ablation.no_loss_pvs": True, "ablation.no_loss_dre": True, "ablation.no_loss_tssl": True}

VARIANTS: dict[str, dict] = {
    "full": {},
    "w/o registers": {"ablation.no_registers": True},
    "w/ AP": {"ablation.adaptive_pool": True},
    "w/o DRE": {"ablation.no_dre": True},
    "w/o PVS": {"ablation.no_pvs": True},
    "L_sim only": _SIM_ONLY,
    "w/o L_pvs": {"ablation.no_loss_pvs": True},
    "w/o L_dre": {"ablation.no_loss_dre": True},
    "w/o L_tssl": {"ablation.no_loss_tssl": True},
}

ALIASES = {
    "no-registers": "w/o registers", "ap": "w/ AP", "no-dre": "w/o DRE", "no-pvs": "w/o PVS",
    "sim-only": "L_sim only", "no-loss-pvs": "w/o L_pvs", "no-loss-dre": "w/o L_dre", "no-loss-tssl": "w/o L_tssl",
}

AXES = {"registers": "model.n_registers", "timesteps": "diffusion.T"}


class UnknownVariant(ValueError):
    pass


def resolve_variant(name: str) -> str:
    key = name.strip()
    if key in VARIANTS:
        return key
    slug = key.lower().replace("_", "-").replace(" ", "-")
    if slug in ALIASES:
        return ALIASES[slug]
    valid = ", ".join(list(VARIANTS) + sorted(ALIASES))
    raise UnknownVariant(f"unknown ablation variant {name!r}; valid names: {valid}")


def variant_config(cfg: RunConfig, name: str) -> RunConfig:
    return cfg.with_overrides(VARIANTS[resolve_variant(name)])


def train_and_evaluate(cfg: RunConfig, dataset: Dataset) -> tuple[RecallReport, Trainer]:
    trainer = Trainer(cfg, dataset)
    trainer.fit()
    return evaluate_params(trainer.params, cfg, dataset), trainer


# -- ablation -------------------------------------------------------------------

@dataclass
class AblationRow:
    variant: str
    seed: int
    report: RecallReport


@dataclass
class AblationTable:
    rows: list[AblationRow]

    @property
    def k_list(self) -> tuple[int, ...]:
        return self.rows[0].report.k_list

    def variants(self) -> list[str]:
        return list(dict.fromkeys(r.variant for r in self.rows))

    def median_sum_r(self, variant: str) -> float:
        return float(np.median([r.report.sum_r for r in self.rows if r.variant == variant]))

    def median_row(self, variant: str) -> dict[str, float]:
        rows = [r.report for r in self.rows if r.variant == variant]
        out = {f"R@{k}": float(np.median([r.r_at[k] for r in rows])) for k in self.k_list}
        out["SumR"] = float(np.median([r.sum_r for r in rows]))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variant", "seed", *(f"R@{k}" for k in self.k_list), "SumR"])
        for r in self.rows:
            w.writerow([r.variant, r.seed, *(f"{r.report.r_at[k]:.4f}" for k in self.k_list), f"{r.report.sum_r:.4f}"])
        return buf.getvalue()

    def to_text(self) -> str:
        """One line per variant with medians over seeds, laid out like an ablation table."""
        cols = [f"R@{k}" for k in self.k_list] + ["SumR"]
        width = max(len(v) for v in self.variants()) + 2
        lines = [f"{'variant':<{width}}" + "".join(f"{c:>8}" for c in cols)]
        for v in self.variants():
            row = self.median_row(v)
            lines.append(f"{v:<{width}}" + "".join(f"{row[c]:8.1f}" for c in cols))
        return "\n".join(lines)


def ablate(cfg: RunConfig, dataset: Dataset, variants: Sequence[str], seeds: Sequence[int] | None = None,
           log=None) -> AblationTable:
    """Train and evaluate each variant on the same data under the same seeds."""
    names = [resolve_variant(v) for v in variants]
    seeds = [cfg.train.seed] if seeds is None else list(seeds)
    rows = []
    for name in names:
        for seed in seeds:
            vcfg = variant_config(cfg, name).with_overrides({"train.seed": seed})
            report, _ = train_and_evaluate(vcfg, dataset)
            rows.append(AblationRow(name, seed, report))
            if log:
                log(f"{name} seed={seed} SumR={report.sum_r:.2f}")
    return AblationTable(rows)


# -- sweep ------------------------------------------------------------------------

SWEEP_COLUMNS = ("value", "R@1", "R@5", "R@10", "SumR", "train_ms_per_epoch")


@dataclass
class SweepRow:
    value: int
    report: RecallReport
    train_ms_per_epoch: float

    def as_dict(self) -> dict:
        r = self.report.r_at
        return {"value": self.value, "R@1": r.get(1), "R@5": r.get(5), "R@10": r.get(10),
                "SumR": self.report.sum_r, "train_ms_per_epoch": self.train_ms_per_epoch}


def sweep(cfg: RunConfig, dataset: Dataset, axis: str, values: Sequence[int], repeats: int = 1,
          log=None) -> list[SweepRow]:
    """One training + evaluation run per value; timing is the median over ``repeats`` runs.

    Runs of a value are identical apart from wall time, so the recall numbers
    come from the first one.
    """
    if axis not in AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {sorted(AXES)}")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    rows = []
    for value in values:
        if int(value) != value or value < 1:
            raise ValueError(f"sweep values must be positive integers, got {value!r}")
        vcfg = cfg.with_overrides({AXES[axis]: int(value)})
        report, times = None, []
        for _ in range(repeats):
            rep, trainer = train_and_evaluate(vcfg, dataset)
            report = report or rep
            times.append(median_epoch_ms(trainer.epoch_ms))
        rows.append(SweepRow(int(value), report, float(np.median(times))))
        if log:
            log(f"{axis}={value} SumR={report.sum_r:.2f} ms/epoch={rows[-1].train_ms_per_epoch:.1f}")
    return rows


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(SWEEP_COLUMNS), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else ("" if v is None else v)) for k, v in row.as_dict().items()})
    return buf.getvalue()


# -- plotting ---------------------------------------------------------------------

def read_numeric_csv(path: str | os.PathLike) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ValueError(f"{path}: empty CSV")
        rows = [[float(x) if x != "" else np.nan for x in row] for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    if any(len(r) != len(header) for r in rows):
        raise ValueError(f"{path}: ragged rows")
    return header, np.array(rows)


def plot(csv_path: str | os.PathLike, out: str | os.PathLike) -> Path:
    """Line plot of every column against the first.

    ``.png``/``.svg``/``.pdf`` outputs are rendered with matplotlib; any other
    suffix gets whitespace-separated gnuplot data with a commented header.
    """
    header, data = read_numeric_csv(csv_path)
    out = Path(out)
    if out.suffix.lower() in (".png", ".svg", ".pdf"):
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(5, 3.5))
        for j, name in enumerate(header[1:], start=1):
            ax.plot(data[:, 0], data[:, j], marker="o", label=name)
        ax.set_xlabel(header[0])
        ax.legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(out)
        plt.close(fig)
    else:
        lines = ["# " + " ".join(header)]
        lines += [" ".join(f"{x:.10g}" for x in row) for row in data]
        out.write_text("\n".join(lines) + "\n")
    return out
