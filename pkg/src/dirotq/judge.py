"""Score aggregation and pairwise comparison for judged image sets.

Scores arrive as per-run records carrying a semantic-consistency value
and a perceptual-quality value, both on a 1..10 scale.  The overall
score is their geometric mean, so a failure on one axis cannot be
masked by strength on the other.  Multi-run records are averaged per
(image, method, judge) group before comparison; two aggregation orders
exist and the order is an explicit argument with overall-of-means as
the default.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

SCORE_MIN = 1.0
SCORE_MAX = 10.0
DEFAULT_TIE_EPS = 0.01

AGGREGATION_ORDERS = ("overall_of_means", "mean_of_overalls")
PAIRWISE_METRICS = ("sc", "pq", "overall")

# incoming judge-response JSON uses long key names; map them onto record fields
_FIELD_ALIASES = {"sc": ("sc", "semantic_consistency"),
                  "pq": ("pq", "perceptual_quality")}


def _check_score(name: str, value: float) -> float:
    v = float(value)
    if not math.isfinite(v) or not SCORE_MIN <= v <= SCORE_MAX:
        raise ValueError(f"{name} must lie in [{SCORE_MIN:g}, {SCORE_MAX:g}], got {value!r}")
    return v


def overall_score(sc: float, pq: float) -> float:
    """Geometric mean of the two judged axes; stays within [1, 10]."""
    return math.sqrt(_check_score("sc", sc) * _check_score("pq", pq))


@dataclass(frozen=True)
class ScoreRecord:
    """One judge pass over one image."""

    image_id: str
    prompt_category: str
    method_label: str
    judge_label: str
    sc: float
    pq: float
    run_index: int = 0

    def __post_init__(self):
        _check_score("sc", self.sc)
        _check_score("pq", self.pq)
        if not self.image_id:
            raise ValueError("image_id must be non-empty")
        if self.run_index < 0:
            raise ValueError("run_index must be >= 0")

    @property
    def overall(self) -> float:
        return overall_score(self.sc, self.pq)


@dataclass(frozen=True)
class AggregatedScore:
    """Per-image scores after averaging across runs."""

    image_id: str
    prompt_category: str
    method_label: str
    judge_label: str
    sc: float
    pq: float
    overall: float
    run_count: int


def aggregate_runs(records, order: str = "overall_of_means") -> list[AggregatedScore]:
    """Average repeated judge runs per (image, method, judge) group.

    Under "overall_of_means" the sc and pq means are combined with
    overall_score; under "mean_of_overalls" each run's overall is
    computed first and then averaged.  The two differ whenever runs
    disagree about which axis is weak.
    """
    if order not in AGGREGATION_ORDERS:
        raise ConfigError(f"unknown aggregation order {order!r}; expected one of {AGGREGATION_ORDERS}")
    if not records:
        warnings.warn("aggregate_runs received no records; nothing to aggregate", stacklevel=2)
        return []

    groups: dict[tuple[str, str, str], list[ScoreRecord]] = {}
    for rec in records:
        groups.setdefault((rec.image_id, rec.method_label, rec.judge_label), []).append(rec)

    out = []
    for (image_id, method_label, judge_label), recs in sorted(groups.items()):
        mean_sc = sum(r.sc for r in recs) / len(recs)
        mean_pq = sum(r.pq for r in recs) / len(recs)
        if order == "overall_of_means":
            overall = overall_score(mean_sc, mean_pq)
        else:
            overall = sum(r.overall for r in recs) / len(recs)
        out.append(AggregatedScore(image_id=image_id,
                                   prompt_category=recs[0].prompt_category,
                                   method_label=method_label,
                                   judge_label=judge_label,
                                   sc=mean_sc, pq=mean_pq, overall=overall,
                                   run_count=len(recs)))
    return out


@dataclass(frozen=True)
class Rates:
    win_rate: float
    tie_rate: float
    loss_rate: float
    n: int

    def to_json_dict(self) -> dict:
        return {"win_rate": self.win_rate, "tie_rate": self.tie_rate,
                "loss_rate": self.loss_rate, "n": self.n}


@dataclass(frozen=True)
class PairwiseResult:
    win_rate: float
    tie_rate: float
    loss_rate: float
    n: int
    metric: str
    tie_eps: float
    per_category: dict[str, Rates] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {"win_rate": self.win_rate, "tie_rate": self.tie_rate,
                "loss_rate": self.loss_rate, "n": self.n,
                "metric": self.metric, "tie_eps": self.tie_eps,
                "per_category": {c: r.to_json_dict() for c, r in sorted(self.per_category.items())}}


def _indexed(scores, side: str) -> dict[str, AggregatedScore]:
    by_id: dict[str, AggregatedScore] = {}
    for s in scores:
        if s.image_id in by_id:
            raise ConfigError(f"duplicate image_id {s.image_id!r} on side {side}; "
                              "aggregate runs (or split methods) before comparing")
        by_id[s.image_id] = s
    return by_id


def pairwise(a_scores, b_scores, metric: str = "overall",
             tie_eps: float = DEFAULT_TIE_EPS) -> PairwiseResult:
    """Tabulate win/tie/loss rates of side a over side b, image by image.

    A difference strictly inside tie_eps counts as a tie; a difference
    of exactly tie_eps does not.
    """
    if metric not in PAIRWISE_METRICS:
        raise ConfigError(f"unknown metric {metric!r}; expected one of {PAIRWISE_METRICS}")
    if not tie_eps > 0:
        raise ConfigError(f"tie_eps must be positive, got {tie_eps!r}")

    a_by_id = _indexed(a_scores, "a")
    b_by_id = _indexed(b_scores, "b")
    if a_by_id.keys() != b_by_id.keys():
        only_a = sorted(a_by_id.keys() - b_by_id.keys())
        only_b = sorted(b_by_id.keys() - a_by_id.keys())
        raise ConfigError("image sets differ between the two sides; "
                          f"only in a: {only_a}, only in b: {only_b}")
    if not a_by_id:
        raise ConfigError("no images to compare")

    counts: dict[str, list[int]] = {}  # category -> [win, tie, loss]
    total = [0, 0, 0]
    for image_id in a_by_id:
        a = a_by_id[image_id]
        diff = getattr(a, metric) - getattr(b_by_id[image_id], metric)
        slot = 1 if abs(diff) < tie_eps else (0 if diff > 0 else 2)
        total[slot] += 1
        counts.setdefault(a.prompt_category, [0, 0, 0])[slot] += 1

    n = len(a_by_id)
    per_category = {
        cat: Rates(win_rate=c[0] / sum(c), tie_rate=c[1] / sum(c),
                   loss_rate=c[2] / sum(c), n=sum(c))
        for cat, c in counts.items()
    }
    return PairwiseResult(win_rate=total[0] / n, tie_rate=total[1] / n,
                          loss_rate=total[2] / n, n=n, metric=metric,
                          tie_eps=tie_eps, per_category=per_category)


def _record_from_json(obj: dict, line_no: int) -> ScoreRecord:
    if not isinstance(obj, dict):
        raise ValueError(f"line {line_no}: expected a JSON object, got {type(obj).__name__}")
    values = {}
    for target, aliases in _FIELD_ALIASES.items():
        for alias in aliases:
            if alias in obj:
                values[target] = obj[alias]
                break
        else:
            raise ValueError(f"line {line_no}: missing {' or '.join(map(repr, aliases))}")
    if "image_id" not in obj:
        raise ValueError(f"line {line_no}: missing 'image_id'")
    try:
        # any "overall" field in the file is ignored; it is recomputed from sc and pq
        return ScoreRecord(image_id=str(obj["image_id"]),
                           prompt_category=str(obj.get("prompt_category", "uncategorized")),
                           method_label=str(obj.get("method_label", "")),
                           judge_label=str(obj.get("judge_label", "")),
                           sc=values["sc"], pq=values["pq"],
                           run_index=int(obj.get("run_index", 0)))
    except (TypeError, ValueError) as exc:
        raise ValueError(f"line {line_no}: {exc}") from exc


def load_score_file(path) -> list[ScoreRecord]:
    """Read one ScoreRecord per JSON line; errors carry the 1-based line number."""
    records = []
    with open(Path(path), "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {line_no}: malformed JSON ({exc.msg})") from exc
            records.append(_record_from_json(obj, line_no))
    return records


def compare_score_files(a_path, b_path, metric: str = "overall",
                        tie_eps: float = DEFAULT_TIE_EPS,
                        order: str = "overall_of_means") -> PairwiseResult:
    """Load, aggregate, and compare two score files end to end."""
    a = aggregate_runs(load_score_file(a_path), order=order)
    b = aggregate_runs(load_score_file(b_path), order=order)
    return pairwise(a, b, metric=metric, tie_eps=tie_eps)
