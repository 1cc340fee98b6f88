"""Run manifests: everything needed to audit or exactly re-run a training run.

Timings are real measurements and therefore never reproducible; they live in
their own field which the equality helper ignores.
"""

import json
from dataclasses import dataclass, field

from robust_gum import __version__
from robust_gum.errors import DataFormatError


@dataclass
class RunReport:
    config: dict
    history: list = field(default_factory=list)
    em_traces: list = field(default_factory=list)
    final_params: dict = None
    metrics: dict = field(default_factory=dict)
    outlier_summary: dict = None
    stop_reason: str = None
    outer_iterations: int = 0
    timings: dict = field(default_factory=dict)
    version: str = __version__

    def to_dict(self):
        return {
            "version": self.version,
            "config": self.config,
            "history": self.history,
            "em_traces": self.em_traces,
            "final_params": self.final_params,
            "metrics": self.metrics,
            "outlier_summary": self.outlier_summary,
            "stop_reason": self.stop_reason,
            "outer_iterations": self.outer_iterations,
            "timings": self.timings,
        }

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict) or "config" not in d:
            raise DataFormatError("run report must be a mapping with a config")
        known = {"version", "config", "history", "em_traces", "final_params",
                 "metrics", "outlier_summary", "stop_reason",
                 "outer_iterations", "timings"}
        unknown = set(d) - known
        if unknown:
            raise DataFormatError(f"unknown report field(s) {sorted(unknown)}")
        return cls(config=d["config"],
                   history=d.get("history", []),
                   em_traces=d.get("em_traces", []),
                   final_params=d.get("final_params"),
                   metrics=d.get("metrics", {}),
                   outlier_summary=d.get("outlier_summary"),
                   stop_reason=d.get("stop_reason"),
                   outer_iterations=d.get("outer_iterations", 0),
                   timings=d.get("timings", {}),
                   version=d.get("version", __version__))


def save_report(report, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_report(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DataFormatError(f"cannot read report: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"malformed report {path}: {exc}") from exc
    return RunReport.from_dict(raw)


def reports_equal(a, b):
    """Field-by-field equality with wall-clock timings excluded."""
    da, db = a.to_dict(), b.to_dict()
    da.pop("timings"), db.pop("timings")
    return da == db
