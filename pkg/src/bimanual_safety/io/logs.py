"""Per-episode JSONL logs."""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterator

from ..sim.runner import EpisodeReport


def episode_path(variant_dir, episode: int) -> Path:
    return Path(variant_dir) / f"episode_{episode:04d}.jsonl"


def encode(record: dict) -> str:
    # sorted keys and fixed separators keep logs byte-identical across reruns
    return json.dumps(record, sort_keys=True, separators=(",", ":"), allow_nan=False)


class JsonlWriter:
    """Buffered writer for one episode; the file appears atomically on close."""

    def __init__(self, path):
        self.path = Path(path)
        self._lines: list[str] = []

    def __call__(self, record: dict) -> None:
        self._lines.append(encode(record))

    def close(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".jsonl.tmp")
        tmp.write_text("".join(line + "\n" for line in self._lines), encoding="utf-8")
        os.replace(tmp, self.path)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_records(path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{n}: malformed log line ({exc.msg})") from None


def episode_files(root) -> list[Path]:
    return sorted(Path(root).rglob("episode_*.jsonl"))


def load_reports(root) -> list[EpisodeReport]:
    """Episode summaries (the final record of each log) under ``root``."""
    reports = []
    for path in episode_files(root):
        last = None
        for rec in read_records(path):
            if rec.get("type") == "episode":
                last = rec
        if last is not None:
            reports.append(EpisodeReport.from_dict(last))
    return reports
