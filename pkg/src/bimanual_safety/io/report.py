"""Aggregate tables and plot-data CSVs, recomputed from raw trajectory logs."""
from __future__ import annotations

import csv
import io
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from ..sim.metrics import KINDS
from .logs import episode_files, read_records

BASELINE = "baseline"
GUIDED = "guided"


@dataclass
class EpisodeLog:
    scenario: str
    variant: str
    seed: int
    episode: int
    success: bool
    events: Counter  # recounted from step records
    steps: list[dict] = field(default_factory=list)

    @property
    def unsafe(self) -> bool:
        return sum(self.events.values()) > 0


class EmptyReportError(FileNotFoundError):
    pass


def read_logs(root) -> list[EpisodeLog]:
    """Parse every episode log under ``root``.

    Event counts come from the per-step records; the trailing summary record is
    used only for the goal outcome, which is not a per-step quantity.
    """
    logs = []
    for path in episode_files(root):
        steps, summary = [], None
        for rec in read_records(path):
            if rec.get("type") == "step":
                steps.append(rec)
            elif rec.get("type") == "episode":
                summary = rec
        if summary is None:
            raise ValueError(f"{path}: log has no episode summary record")
        events = Counter(e["kind"] for s in steps for e in s["events"])
        success = bool(summary["goal_met"]) and not events and summary.get("failure") is None
        logs.append(EpisodeLog(summary["scenario"], summary["variant"], int(summary["seed"]),
                               int(summary["episode"]), success, events, steps))
    if not logs:
        raise EmptyReportError(f"no episode logs found under {root}")
    return logs


def _rates(group: list[EpisodeLog]) -> dict:
    n = len(group)
    succ = sum(g.success for g in group)
    unsafe = sum(g.unsafe for g in group)
    return {"episodes": n, "SR": succ / n, "DR": unsafe / n, "safe_failure": (n - succ - unsafe) / n}


def summary_rows(logs: list[EpisodeLog]) -> list[dict]:
    groups = defaultdict(list)
    for log in logs:
        groups[(log.scenario, log.variant)].append(log)
    return [{"scenario": s, "variant": v, **_rates(g)} for (s, v), g in sorted(groups.items())]


def _pairs(logs, variant, reference):
    idx = {(l.scenario, l.seed, l.episode): l for l in logs if l.variant == reference}
    out = defaultdict(list)
    for l in logs:
        if l.variant == variant and (l.scenario, l.seed, l.episode) in idx:
            out[l.scenario].append((idx[(l.scenario, l.seed, l.episode)], l))
    return out


def delta_rows(logs: list[EpisodeLog], reference: str = BASELINE) -> list[dict]:
    """Per scenario and variant: SR/DR change relative to ``reference`` on matched seeds."""
    rows = []
    variants = sorted({l.variant for l in logs} - {reference})
    for variant in variants:
        for scenario, pairs in sorted(_pairs(logs, variant, reference).items()):
            ref, var = _rates([a for a, _ in pairs]), _rates([b for _, b in pairs])
            rows.append({
                "scenario": scenario, "variant": variant, "reference": reference, "pairs": len(pairs),
                "SR_ref": ref["SR"], "SR": var["SR"], "delta_SR": var["SR"] - ref["SR"],
                "DR_ref": ref["DR"], "DR": var["DR"], "delta_DR": var["DR"] - ref["DR"],
                "strictly_safer": sum(a.unsafe and not b.unsafe for a, b in pairs) / len(pairs),
            })
    return rows


def ablation_rows(logs: list[EpisodeLog]) -> list[dict]:
    """DR attributed to each cost: DR with the cost removed minus full-guidance DR."""
    rows = []
    for i in range(1, 6):
        for row in delta_rows([l for l in logs if l.variant in (GUIDED, f"no_C{i}")], GUIDED):
            rows.append({"cost": f"C{i}", "scenario": row["scenario"], "pairs": row["pairs"],
                         "DR_full": row["DR_ref"], "DR_without": row["DR"], "DR_attribution": row["delta_DR"],
                         "delta_SR": row["delta_SR"]})
    return rows


def histogram_rows(logs: list[EpisodeLog]) -> list[dict]:
    counts = defaultdict(Counter)
    for log in logs:
        counts[(log.scenario, log.variant)].update(log.events)
    return [{"scenario": s, "variant": v, "kind": k, "count": c[k]}
            for (s, v), c in sorted(counts.items()) for k in KINDS]


def cost_vs_step_rows(logs: list[EpisodeLog]) -> list[dict]:
    """Guidance cost per denoising step, one row per (episode, chunk, step)."""
    rows = []
    for log in logs:
        for s in log.steps:
            for d in s.get("denoise", []):
                rows.append({"scenario": log.scenario, "variant": log.variant, "seed": log.seed,
                             "episode": log.episode, "t": s["t"], "k": d["k"], "value": d["value"],
                             "rho": d["rho"], "grad_norm": d["grad_norm"]})
    return rows


def tip_distance_rows(logs: list[EpisodeLog]) -> list[dict]:
    return [{"scenario": l.scenario, "variant": l.variant, "seed": l.seed, "episode": l.episode,
             "t": s["t"], "tip_distance": s["tip_distance"]} for l in logs for s in l.steps]


def _csv(rows: list[dict], header: list[str] | None = None) -> str:
    buf = io.StringIO()
    fields = header or (list(rows[0]) if rows else [])
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def format_table(rows: list[dict], columns: list[str]) -> str:
    def cell(v):
        return f"{v:.3f}" if isinstance(v, float) else str(v)
    body = [[cell(r[c]) for c in columns] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) if body else len(c) for i, c in enumerate(columns)]
    line = lambda vals: "  ".join(v.ljust(w) for v, w in zip(vals, widths)).rstrip()  # noqa: E731
    return "\n".join([line(columns), line(["-" * w for w in widths])] + [line(b) for b in body])


SUMMARY_COLUMNS = ["scenario", "variant", "episodes", "SR", "DR", "safe_failure"]
DELTA_COLUMNS = ["scenario", "variant", "reference", "pairs", "SR", "delta_SR", "DR", "delta_DR", "strictly_safer"]
ABLATION_COLUMNS = ["cost", "scenario", "pairs", "DR_full", "DR_without", "DR_attribution"]


def build_report(root, out_dir=None) -> str:
    """Write ``summary.csv`` and friends into ``out_dir`` (default: ``root``); returns the text rendering."""
    logs = read_logs(root)
    out = Path(out_dir or root)
    out.mkdir(parents=True, exist_ok=True)
    summary = summary_rows(logs)
    deltas = delta_rows(logs)
    ablation = ablation_rows(logs)
    files = {
        "summary.csv": _csv(summary, SUMMARY_COLUMNS),
        "deltas.csv": _csv(deltas, ["scenario", "variant", "reference", "pairs", "SR_ref", "SR", "delta_SR",
                                    "DR_ref", "DR", "delta_DR", "strictly_safer"]),
        "ablation.csv": _csv(ablation, ["cost", "scenario", "pairs", "DR_full", "DR_without", "DR_attribution",
                                        "delta_SR"]),
        "events_histogram.csv": _csv(histogram_rows(logs), ["scenario", "variant", "kind", "count"]),
        "cost_vs_step.csv": _csv(cost_vs_step_rows(logs), ["scenario", "variant", "seed", "episode", "t", "k",
                                                           "value", "rho", "grad_norm"]),
        "tip_distance.csv": _csv(tip_distance_rows(logs), ["scenario", "variant", "seed", "episode", "t",
                                                           "tip_distance"]),
    }
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8")
    (out / "report.json").write_text(json.dumps({"summary": summary, "deltas": deltas, "ablation": ablation},
                                                indent=2, sort_keys=True) + "\n", encoding="utf-8")
    parts = [format_table(summary, SUMMARY_COLUMNS)]
    if deltas:
        parts.append(format_table(deltas, DELTA_COLUMNS))
    if ablation:
        parts.append(format_table(ablation, ABLATION_COLUMNS))
    return "\n\n".join(parts) + "\n"
