"""Append-only training record, persisted as JSON lines."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

# fields excluded when two logs are compared for reproducibility
NONDETERMINISTIC_FIELDS = ("wall_time",)


@dataclass
class RunLog:
    records: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, env_step, success, losses=None, wall_time=0.0, **extra):
        env_step = int(env_step)
        if self.records and env_step <= self.records[-1]["env_step"]:
            raise ValueError("env_step must be strictly increasing")
        success = {str(k): float(v) for k, v in success.items()}
        if any(not 0.0 <= v <= 1.0 for v in success.values()):
            raise ValueError("success rates must lie in [0, 1]")
        rec = {"env_step": env_step, "success": success,
               "avg_success": (sum(success.values()) / len(success)) if success else 0.0,
               "losses": dict(losses or {}), "wall_time": float(wall_time)}
        rec.update(extra)
        self.records.append(rec)
        return rec

    def __len__(self):
        return len(self.records)

    @property
    def steps(self):
        return [r["env_step"] for r in self.records]

    def success_curve(self, task=None):
        """``(env_step, success)`` pairs for one task, or the task average."""
        if task is None:
            return [(r["env_step"], r["avg_success"]) for r in self.records]
        return [(r["env_step"], r["success"][str(task)]) for r in self.records]

    def comparable(self):
        return [{k: v for k, v in r.items() if k not in NONDETERMINISTIC_FIELDS} for r in self.records]

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            fh.write(json.dumps({"meta": self.meta}, sort_keys=True) + "\n")
            for r in self.records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, path):
        log = cls()
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                if "meta" in obj and "env_step" not in obj:
                    log.meta = obj["meta"]
                else:
                    log.records.append(obj)
        return log
