"""Success/danger rates over episode reports."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from ..errors import ContractError
from ..scheduler.patterns import SHORT_NAMES
from .runner import EpisodeReport

KINDS = tuple(SHORT_NAMES.values())


@dataclass(frozen=True)
class Metrics:
    episodes: int
    sr: float  # goal met with zero events
    dr: float  # at least one event
    safe_failure: float  # no events but goal missed (or aborted)
    per_kind: dict[str, float]  # fraction of episodes with at least one event of the kind
    event_counts: dict[str, int]

    def to_dict(self) -> dict:
        return {"episodes": self.episodes, "SR": self.sr, "DR": self.dr, "safe_failure": self.safe_failure,
                "per_kind": dict(self.per_kind), "event_counts": dict(self.event_counts)}


def metrics(reports: Sequence[EpisodeReport]) -> Metrics:
    if not reports:
        raise ContractError("metrics need at least one report")
    n = len(reports)
    success = sum(r.success for r in reports)
    unsafe = sum(bool(r.events) for r in reports)
    kinds = Counter()
    counts = Counter()
    for r in reports:
        seen = {e.kind.short for e in r.events}
        kinds.update(seen)
        counts.update(e.kind.short for e in r.events)
    return Metrics(
        episodes=n,
        sr=success / n,
        dr=unsafe / n,
        safe_failure=(n - success - unsafe) / n,
        per_kind={k: kinds[k] / n for k in KINDS},
        event_counts={k: counts[k] for k in KINDS},
    )


@dataclass(frozen=True)
class PairedComparison:
    pairs: int
    strictly_safer: float  # baseline unsafe, guided safe
    fewer_events: float  # guided event count strictly below baseline
    no_worse: float  # guided event count <= baseline
    delta_sr: float
    delta_dr: float


def paired(baseline: Sequence[EpisodeReport], guided: Sequence[EpisodeReport]) -> PairedComparison:
    """Compare runs matched on ``(seed, episode)``."""
    key = lambda r: (r.scenario, r.seed, r.episode)  # noqa: E731
    base = {key(r): r for r in baseline}
    pairs = [(base[key(g)], g) for g in guided if key(g) in base]
    if not pairs:
        raise ContractError("no matching (seed, episode) pairs")
    n = len(pairs)
    mb, mg = metrics([b for b, _ in pairs]), metrics([g for _, g in pairs])
    return PairedComparison(
        pairs=n,
        strictly_safer=sum(b.unsafe and not g.unsafe for b, g in pairs) / n,
        fewer_events=sum(len(g.events) < len(b.events) for b, g in pairs) / n,
        no_worse=sum(len(g.events) <= len(b.events) for b, g in pairs) / n,
        delta_sr=mg.sr - mb.sr,
        delta_dr=mg.dr - mb.dr,
    )
