"""Training traces: the per-step record of a single training run.

A trace is fully determined by the training configuration and data, so its
serialized form is used as the determinism witness in tests: two runs with
identical inputs must produce byte-identical trace files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass


@dataclass(frozen=True)
class TraceRecord:
    """One training step. ``projected_grad`` is only set by zeroth-order runs,
    ``dev_accuracy`` only at evaluation steps."""

    step: int
    loss: float
    projected_grad: float | None = None
    dev_accuracy: float | None = None

    def to_dict(self) -> dict:
        out: dict = {"step": self.step, "loss": self.loss}
        if self.projected_grad is not None:
            out["projected_grad"] = self.projected_grad
        if self.dev_accuracy is not None:
            out["dev_accuracy"] = self.dev_accuracy
        return out


@dataclass(frozen=True)
class TrainingTrace:
    records: tuple[TraceRecord, ...]

    def __len__(self) -> int:
        return len(self.records)

    def final_loss(self) -> float | None:
        return self.records[-1].loss if self.records else None

    def dev_accuracies(self) -> list[tuple[int, float]]:
        return [(r.step, r.dev_accuracy) for r in self.records if r.dev_accuracy is not None]

    def to_jsonl(self) -> str:
        """Canonical line-delimited form; floats round-trip exactly."""
        lines = [json.dumps(r.to_dict(), sort_keys=True) for r in self.records]
        return "".join(line + "\n" for line in lines)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> "TrainingTrace":
        records = []
        for line in text.splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            records.append(
                TraceRecord(
                    step=obj["step"],
                    loss=obj["loss"],
                    projected_grad=obj.get("projected_grad"),
                    dev_accuracy=obj.get("dev_accuracy"),
                )
            )
        return cls(records=tuple(records))

    @classmethod
    def load(cls, path) -> "TrainingTrace":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_jsonl(fh.read())
