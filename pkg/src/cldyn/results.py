"""Self-describing JSON records of continual-learning runs, plus CSV extracts."""
from __future__ import annotations

import csv
import hashlib
import json
import subprocess
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .metrics import LearningCurve, auc, mean_stderr

RESULTS_FORMAT = "cldyn-results"
RESULTS_VERSION = 1
# fields that legitimately differ between identical runs
VOLATILE_FIELDS = ("wall_clock", "timestamp")
# config entries that do not influence the numbers
VOLATILE_CONFIG = ("out", "parallel")


def build_id():
    """Package version, plus the git commit when run from a checkout."""
    from . import __version__

    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).parent)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def aggregate_curves(curves):
    """Per-point mean/stderr and AUC mean/stderr over repetitions."""
    if not curves:
        raise ValueError("no curves to aggregate")
    lengths = {len(c.tasks_seen) for c in curves}
    if len(lengths) != 1:
        raise ValueError(f"curves have different lengths: {sorted(lengths)}")
    out = {"tasks_seen": list(curves[0].tasks_seen)}
    for metric in ("nmse", "nll"):
        values = np.array([getattr(c, metric) for c in curves])
        stats = [mean_stderr(values[:, j]) for j in range(values.shape[1])]
        out[metric] = {"mean": [m for m, _ in stats], "stderr": [s for _, s in stats]}
    aucs = np.array([auc(c) for c in curves])
    for j, metric in enumerate(("nmse", "nll")):
        m, s = mean_stderr(aucs[:, j])
        out[f"auc_{metric}"] = {"mean": m, "stderr": s, "per_rep": aucs[:, j].tolist()}
    return out


@dataclass
class ResultsRecord:
    config: dict
    curves: list
    wall_clock: float = 0.0
    timestamp: str = ""
    build: str = ""
    aggregate: dict = field(default_factory=dict)

    def __post_init__(self):
        self.curves = [c if isinstance(c, LearningCurve) else LearningCurve.from_dict(c)
                       for c in self.curves]
        if not self.aggregate:
            self.aggregate = aggregate_curves(self.curves)
        if not self.timestamp:
            self.timestamp = datetime.now(timezone.utc).isoformat(timespec="seconds")

    @property
    def variant(self):
        return self.config.get("variant", self.curves[0].variant)

    def to_dict(self):
        return {"format": RESULTS_FORMAT, "version": RESULTS_VERSION, "build": self.build,
                "timestamp": self.timestamp, "wall_clock": self.wall_clock,
                "config": self.config, "curves": [c.to_dict() for c in self.curves],
                "aggregate": self.aggregate}

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != RESULTS_FORMAT:
            raise ValueError("not a results record")
        if d.get("version") != RESULTS_VERSION:
            raise ValueError(f"unsupported results version {d.get('version')}")
        return cls(d["config"], d["curves"], d.get("wall_clock", 0.0), d.get("timestamp", ""),
                   d.get("build", ""), d.get("aggregate", {}))

    def content_hash(self):
        """SHA-256 over everything except wall-clock, timestamp and output location."""
        d = {k: v for k, v in self.to_dict().items() if k not in VOLATILE_FIELDS}
        d["config"] = {k: v for k, v in d["config"].items() if k not in VOLATILE_CONFIG}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        return path

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def write_curves_csv(self, path):
        """Long-format per-repetition curves: ``seed, tasks_seen, nmse, nll``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variant", "seed", "tasks_seen", "nmse", "nll"])
            for c in self.curves:
                for t, a, b in zip(c.tasks_seen, c.nmse, c.nll):
                    w.writerow([c.variant, c.seed, t, repr(a), repr(b)])
