"""Closed-form operation-count reports."""

from dataclasses import dataclass, field


@dataclass(frozen=True)
class FlopReport:
    per_iter_full: int
    reduction_factor: float
    total: int
    flags: tuple = field(default=())

    def to_json(self):
        return {
            "per_iter_full": self.per_iter_full,
            "reduction_factor": self.reduction_factor,
            "total": self.total,
            "flags": list(self.flags),
        }
