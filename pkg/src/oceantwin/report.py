"""Scenario report output: JSON, text, delimited series, and figures.

A scenario run writes everything a reviewer needs into one directory:

    report.json    machine-readable result (byte-stable across reruns)
    report.txt     human summary
    log.jsonl      mission message log
    trace.jsonl    channel trace
    o2_series.csv  delimited oxygen series per platform
    figures/*.png  rendered O2 and channel-activity figures
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


@dataclass
class Assertion:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ScenarioReport:
    scenario: str
    seed: int
    duration: float
    mode: str = "virtual"
    assertions: list[Assertion] = field(default_factory=list)
    counts: dict[str, int] = field(default_factory=dict)
    latency: dict[str, float] = field(default_factory=dict)
    per_platform: dict[str, Any] = field(default_factory=dict)
    extras: dict[str, Any] = field(default_factory=dict)
    files: dict[str, str] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def check(self, name: str, passed: bool, detail: str = "") -> bool:
        self.assertions.append(Assertion(name, bool(passed), detail))
        return bool(passed)

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "duration": self.duration,
            "mode": self.mode,
            "passed": self.passed,
            "assertions": [
                {"name": a.name, "passed": a.passed, "detail": a.detail}
                for a in self.assertions
            ],
            "counts": self.counts,
            "latency": self.latency,
            "per_platform": self.per_platform,
            "extras": self.extras,
            "files": self.files,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), sort_keys=True, indent=2) + "\n"

    def to_text(self) -> str:
        lines = [
            f"Scenario ({self.scenario})  seed={self.seed}  "
            f"duration={self.duration:g}s  mode={self.mode}",
            f"{'PASS' if self.passed else 'FAIL'} "
            f"({sum(a.passed for a in self.assertions)}/{len(self.assertions)} assertions)",
        ]
        for a in self.assertions:
            mark = "pass" if a.passed else "FAIL"
            suffix = f"  ({a.detail})" if a.detail else ""
            lines.append(f"  [{mark}] {a.name}{suffix}")
        if self.counts:
            pairs = ", ".join(f"{k}={v}" for k, v in self.counts.items())
            lines.append(f"frames: {pairs}")
        if self.latency:
            pairs = ", ".join(f"{k}={v:.6g}" for k, v in self.latency.items())
            lines.append(f"latency: {pairs}")
        if self.files:
            lines.append("files: " + ", ".join(sorted(self.files.values())))
        return "\n".join(lines) + "\n"


def write_trace_jsonl(trace: list[dict[str, Any]], path: Path) -> None:
    with open(path, "w") as fh:
        for record in trace:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def write_o2_csv(rows: list[dict[str, Any]], path: Path) -> None:
    fields = ["platform", "t", "timestamp_ms", "oxygen", "saturation", "temperature", "implausible"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in fields})


def render_figures(out_dir: Path, o2_rows: list[dict[str, Any]], trace: list[dict[str, Any]]) -> list[str]:
    """Render the O2 overview and channel-activity figures; returns file names."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig_dir = out_dir / "figures"
    fig_dir.mkdir(exist_ok=True)
    written = []

    platforms = sorted({row["platform"] for row in o2_rows})
    if platforms:
        fig, axes = plt.subplots(
            len(platforms), 1, figsize=(9, 1.8 * len(platforms)), sharex=True, squeeze=False
        )
        for ax, platform in zip(axes[:, 0], platforms):
            rows = [r for r in o2_rows if r["platform"] == platform]
            ts = [r["timestamp_ms"] / 1000.0 for r in rows]
            o2 = [r["oxygen"] for r in rows]
            ax.plot(ts, o2, ".", markersize=2.5, color="tab:blue")
            bad_t = [t for t, r in zip(ts, rows) if r["implausible"]]
            bad_o2 = [v for v, r in zip(o2, rows) if r["implausible"]]
            if bad_t:
                ax.plot(bad_t, bad_o2, "x", markersize=4, color="tab:red", label="implausible")
                ax.legend(loc="upper right", fontsize=7)
            ax.set_ylabel(f"{platform}\nO2 [µM]", fontsize=8)
            ax.tick_params(labelsize=7)
        axes[-1, 0].set_xlabel("virtual time [s]")
        fig.suptitle("Oxygen series at the Digital Twins")
        fig.tight_layout()
        fig.savefig(fig_dir / "o2_series.png", dpi=120)
        plt.close(fig)
        written.append("figures/o2_series.png")

    senders = sorted({rec["src"] for rec in trace})
    if senders:
        lane = {name: i for i, name in enumerate(senders)}
        fig, ax = plt.subplots(figsize=(9, 0.5 * len(senders) + 1.5))
        for rec in trace:
            y = lane[rec["src"]]
            if rec["event"] == "deliver":
                ax.plot(rec["t"], y, ".", color="tab:green", markersize=3)
            elif rec["event"] == "drop":
                ax.plot(rec["t"], y, "x", color="tab:red", markersize=4)
        ax.set_yticks(list(lane.values()), list(lane.keys()), fontsize=8)
        ax.set_xlabel("virtual time [s]")
        ax.set_title("Channel activity by sender (dot = delivered, x = dropped)")
        fig.tight_layout()
        fig.savefig(fig_dir / "channel_activity.png", dpi=120)
        plt.close(fig)
        written.append("figures/channel_activity.png")

    return written


def write_outputs(
    report: ScenarioReport,
    out_dir: str | Path,
    log,
    trace: list[dict[str, Any]],
    o2_rows: list[dict[str, Any]],
    figures: bool = True,
) -> ScenarioReport:
    """Write every report artifact into ``out_dir`` and record file names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log.write_jsonl(out / "log.jsonl")
    write_trace_jsonl(trace, out / "trace.jsonl")
    write_o2_csv(o2_rows, out / "o2_series.csv")
    report.files = {
        "log": "log.jsonl",
        "trace": "trace.jsonl",
        "o2_csv": "o2_series.csv",
        "report_json": "report.json",
        "report_text": "report.txt",
    }
    if figures:
        for name in render_figures(out, o2_rows, trace):
            report.files[Path(name).stem] = name
    (out / "report.json").write_text(report.to_json())
    (out / "report.txt").write_text(report.to_text())
    return report
