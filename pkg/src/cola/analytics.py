"""Corpus-level statistics over search results.

Layer indices are zero-based everywhere here except in the CSV matrices, whose
first column is the 1-based layer number for human readers.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from cola.paths import LayerPath, measure
from cola.search import SearchResult

PERCENTILES = (5, 10, 20, 100)


class TransitionCategory(str, enum.Enum):
    ORIGINAL_OPTIMAL = "original_optimal"
    C_TO_C = "c_to_c"
    W_TO_C = "w_to_c"
    W_TO_W = "w_to_w"


@dataclass(frozen=True)
class PathRecord:
    instance_id: str
    original_correct: bool
    reported_path: LayerPath
    reported_correct: bool
    depth: int
    non_recurrent_depth: int
    mode: str
    num_layers: int

    @classmethod
    def from_result(cls, result: SearchResult) -> PathRecord:
        path = result.reported.path
        depth, distinct = measure(path)
        return cls(result.instance_id, result.original_outcome.correct, path,
                   result.reported.outcome.correct, depth, distinct, result.mode,
                   result.num_layers)

    @property
    def is_identity(self) -> bool:
        return self.reported_path.layers == tuple(range(self.num_layers))


@dataclass(frozen=True)
class EngagementProfile:
    selection_frequency: tuple[float, ...]
    skip_rate: tuple[float, ...]
    mean_recurrence: tuple[float, ...]
    usage_entropy: float | None  # None marks empty usage
    max_concentration: float | None
    usage_share: tuple[float, ...]

    def to_json(self) -> dict:
        return {
            "selection_frequency": list(self.selection_frequency),
            "skip_rate": list(self.skip_rate),
            "mean_recurrence": list(self.mean_recurrence),
            "usage_share": list(self.usage_share),
            "usage_entropy": self.usage_entropy if self.usage_entropy is not None else "empty-usage",
            "max_concentration": (self.max_concentration if self.max_concentration is not None
                                  else "empty-usage"),
            "segments": segment_means(self.selection_frequency),
        }


def classify_transition(record: PathRecord,
                        shorter_correct_found: bool | None = None) -> TransitionCategory:
    if shorter_correct_found is None:
        shorter_correct_found = record.reported_correct and not record.is_identity
    if record.original_correct:
        return (TransitionCategory.C_TO_C if shorter_correct_found
                else TransitionCategory.ORIGINAL_OPTIMAL)
    if record.reported_correct:
        return TransitionCategory.W_TO_C
    return TransitionCategory.W_TO_W


def transition_counts(records: Iterable[PathRecord]) -> dict[str, int]:
    counts = Counter(classify_transition(r) for r in records)
    return {c.value: counts.get(c, 0) for c in TransitionCategory}


def engagement(records: Sequence[PathRecord], num_layers: int) -> EngagementProfile:
    if not records:
        raise ValueError("engagement needs at least one record")
    n_rec = len(records)
    present = [0] * num_layers
    extra = [0] * num_layers
    occurrences = [0] * num_layers
    for rec in records:
        counts = Counter(rec.reported_path.layers)
        for i, k in counts.items():
            if not 0 <= i < num_layers:
                raise ValueError(f"record {rec.instance_id} uses layer {i} >= {num_layers}")
            present[i] += 1
            extra[i] += k - 1
            occurrences[i] += k
    selection = tuple(p / n_rec for p in present)
    skip = tuple(1.0 - s for s in selection)
    recurrence = tuple(e / n_rec for e in extra)
    total = sum(occurrences)
    if total == 0:
        return EngagementProfile(selection, skip, recurrence, None, None,
                                 tuple(0.0 for _ in occurrences))
    shares = tuple(o / total for o in occurrences)
    entropy = -math.fsum(p * math.log(p) for p in shares if p > 0)
    return EngagementProfile(selection, skip, recurrence, entropy, max(shares), shares)


def segment_bounds(num_layers: int) -> tuple[range, range, range]:
    """Early / middle / late thirds of the layer range, boundaries rounded down."""
    a, b = num_layers // 3, (2 * num_layers) // 3
    return range(0, a), range(a, b), range(b, num_layers)


def segment_means(values: Sequence[float]) -> dict[str, float | None]:
    out: dict[str, float | None] = {}
    for name, seg in zip(("early", "middle", "late"), segment_bounds(len(values))):
        out[name] = math.fsum(values[i] for i in seg) / len(seg) if len(seg) else None
    return out


def depth_by_transition(records: Iterable[PathRecord]) -> dict[str, dict[str, float]]:
    """Mean depth and non-recurrent depth for C->C and W->C records; empty groups are omitted."""
    groups: dict[TransitionCategory, list[PathRecord]] = defaultdict(list)
    for r in records:
        groups[classify_transition(r)].append(r)
    out = {}
    for cat in (TransitionCategory.C_TO_C, TransitionCategory.W_TO_C):
        members = groups.get(cat)
        if members:
            out[cat.value] = {
                "count": len(members),
                "depth": math.fsum(r.depth for r in members) / len(members),
                "non_recurrent_depth": math.fsum(r.non_recurrent_depth for r in members) / len(members),
            }
    return out


def percentile_depths(records: Iterable[PathRecord],
                      qs: Sequence[int] = PERCENTILES) -> dict[str, dict[str, float]] | None:
    correct = sorted((r for r in records if r.reported_correct),
                     key=lambda r: (r.depth, r.non_recurrent_depth, r.instance_id))
    if not correct:
        return None
    m = len(correct)
    table = {}
    for q in qs:
        take = correct[: math.ceil(q * m / 100)]
        table[str(q)] = {
            "count": len(take),
            "depth": math.fsum(r.depth for r in take) / len(take),
            "non_recurrent_depth": math.fsum(r.non_recurrent_depth for r in take) / len(take),
        }
    return table


def tradeoff_points(groups: Mapping[str, Sequence[PathRecord]]) -> dict[str, dict[str, float]]:
    out = {}
    for mode, recs in sorted(groups.items()):
        if not recs:
            raise ValueError(f"mode {mode!r} has no records")
        out[mode] = {
            "mean_depth": math.fsum(r.depth for r in recs) / len(recs),
            "accuracy": sum(r.reported_correct for r in recs) / len(recs),
            "count": len(recs),
        }
    return out


def corpus_report(records: Sequence[PathRecord], num_layers: int) -> dict:
    """Every statistic for one mode's records."""
    return {
        "count": len(records),
        "accuracy": sum(r.reported_correct for r in records) / len(records) if records else None,
        "original_accuracy": (sum(r.original_correct for r in records) / len(records)
                              if records else None),
        "transition_counts": transition_counts(records),
        "depth_by_transition": depth_by_transition(records),
        "percentile_depths": percentile_depths(records),
        "engagement": engagement(records, num_layers).to_json() if records else None,
    }


def engagement_csv(columns: Mapping[str, Sequence[float]]) -> str:
    """Rows are layers (1-based), one column per dataset/mode."""
    names = list(columns)
    n = max((len(v) for v in columns.values()), default=0)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["layer", *names])
    for i in range(n):
        writer.writerow([i + 1, *(repr(float(columns[c][i])) for c in names)])
    return buf.getvalue()
