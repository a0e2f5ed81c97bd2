"""Structured run artifacts: CSV trajectory logs and the JSON run summary.

Numbers are serialized with 17 significant digits so a written CSV re-parses
bit-exactly; hybrid events appear as duplicate-timestamp row pairs flagged
pre/post in the event column.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

SCHEMA_VERSION = 1


def fmt(x) -> str:
    """17-significant-digit decimal form; round-trips IEEE doubles exactly."""
    return f"{float(x):.17g}"


def write_csv(path, columns: list[str], rows: list[list], events=None) -> str:
    """Write a trajectory CSV.

    rows: list of numeric lists matching ``columns`` (without the final
    'event' column).  events: list of (row_values_pre, row_values_post)
    appended at their time positions by the caller via sentinel flags; here
    the caller passes rows already ordered and a parallel list of flags.
    """
    with open(path, "w") as fh:
        fh.write(",".join(columns + ["event"]) + "\n")
        flags = events if events is not None else [""] * len(rows)
        for row, flag in zip(rows, flags):
            fh.write(",".join(fmt(v) for v in row) + f",{flag}\n")
    return str(path)


def read_csv(path):
    """Parse a trajectory CSV back into (columns, array, event flags)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[-1] != "event":
            raise ValueError(f"{path} does not follow the trajectory schema")
        columns = header[:-1]
        data, flags = [], []
        for line in fh:
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(header):
                raise ValueError(f"malformed row in {path}: {line!r}")
            data.append([float(v) for v in parts[:-1]])
            flags.append(parts[-1])
    values = np.array(data) if data else np.zeros((0, len(columns)))
    return columns, values, flags


def trajectory_rows(traj, columns_from_arc, event_state_row=None):
    """Flatten a HybridTrajectory into CSV rows plus event-flagged pairs.

    columns_from_arc(arc, i) -> list of values for sample i of the arc.
    event_state_row(arc, state, t) -> row values for a reset state (pre uses
    arc.pre_event at the event time, post uses arc.post_event).
    """
    rows, flags = [], []
    for arc in traj.arcs:
        n = arc.t.size
        for i in range(n):
            # the last sample of an eventful arc is written as the "pre" row
            if arc.event_time is not None and i == n - 1:
                break
            rows.append(columns_from_arc(arc, i))
            flags.append("")
        if arc.event_time is not None and event_state_row is not None:
            rows.append(event_state_row(arc, arc.pre_event, arc.event_time))
            flags.append("pre")
            rows.append(event_state_row(arc, arc.post_event, arc.event_time))
            flags.append("post")
    return rows, flags


@dataclass
class RunSummary:
    scenario: str
    seed: int
    metrics: dict
    artifacts: dict = field(default_factory=dict)   # name -> relative path
    wall_time_s: Optional[float] = None

    def to_dict(self) -> dict:
        payload = {
            "schema_version": SCHEMA_VERSION,
            "scenario": self.scenario,
            "seed": self.seed,
            "metrics": self.metrics,
            "artifacts": self.artifacts,
        }
        if self.wall_time_s is not None:
            payload["wall_time_s"] = self.wall_time_s
        return payload

    def write(self, directory) -> str:
        path = os.path.join(directory, "summary.json")
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def load_summary(path) -> dict:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"corrupted summary JSON at {path}: {exc}") from exc
    if payload.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"summary schema version {payload.get('schema_version')!r} at {path} "
            f"does not match {SCHEMA_VERSION}"
        )
    return payload
