"""Answer matching and accuracy reports grouped by 3D distance, orientation and spatial relation."""

from __future__ import annotations

import enum
import json
import math
import re
import string
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import DuplicatePrediction, UnknownQuestion
from .qagen import BENCHMARK_TYPES, PROBING_TYPES, QARecord

GROUPS = {
    "3D Dist.": ("closer_to_camera", "closer_to_object"),
    "3D Orient.": ("facing_camera", "facing_object"),
    "3D Spatial Rel.": ("same_direction", "higher", "on_which_side"),
}
TYPE_ORDER = BENCHMARK_TYPES + PROBING_TYPES

# applied longest phrase first
SYNONYMS = {
    "in front of": "front",
    "in front": "front",
    "ahead of": "front",
    "ahead": "front",
    "behind": "back",
    "rear": "back",
    "backside": "back",
    "underside": "bottom",
}
_SYNONYMS = sorted(((tuple(k.split()), v) for k, v in SYNONYMS.items()), key=lambda kv: -len(kv[0]))
_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")
_NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)")


def normalize_answer(text: str) -> list[str]:
    """Lowercase, drop punctuation, collapse whitespace, map synonyms."""
    tokens = _PUNCT.sub(" ", text.lower()).split()
    out = []
    i = 0
    while i < len(tokens):
        for phrase, repl in _SYNONYMS:
            if tuple(tokens[i : i + len(phrase)]) == phrase:
                out.append(repl)
                i += len(phrase)
                break
        else:
            out.append(tokens[i])
            i += 1
    return out


class Outcome(str, enum.Enum):
    CORRECT = "correct"
    INCORRECT = "incorrect"
    UNPARSED = "unparsed"


@dataclass(frozen=True)
class MatchOutcome:
    outcome: Outcome
    matched: str | None = None


def _find(tokens: Sequence[str], phrase: Sequence[str]) -> list[tuple[int, int]]:
    n = len(phrase)
    return [(i, i + n) for i in range(len(tokens) - n + 1) if n and tuple(tokens[i : i + n]) == tuple(phrase)]


def hit_classes(tokens: Sequence[str], choices: Mapping[str, Sequence[str]]) -> set[str]:
    """Answer classes whose keywords occur in ``tokens``.

    A hit lying strictly inside a longer hit of another class is dropped, so
    "traffic light" does not also count as "light", nor "not the same" as "same".
    """
    spans = []
    for cls, words in choices.items():
        for w in words:
            spans.extend((s, e, cls) for s, e in _find(tokens, normalize_answer(w)))
    kept = set()
    for s, e, cls in spans:
        inside = any(s2 <= s and e <= e2 and (e2 - s2) > (e - s) and c2 != cls for s2, e2, c2 in spans)
        if not inside:
            kept.add(cls)
    return kept


def _match_numeric(response: str, numeric: Mapping, rel_tol: float, angle_tol_deg: float) -> MatchOutcome:
    values = {float(m) for m in _NUMBER.findall(response.replace(",", " "))}
    if len(values) != 1:
        return MatchOutcome(Outcome.UNPARSED)
    (v,) = values
    truth = float(numeric["value"])
    if numeric["unit"] == "degrees":
        diff = abs(math.remainder(v - truth, 360.0)) if numeric.get("circular") else abs(v - truth)
        ok = diff <= angle_tol_deg
    else:
        ok = abs(v - truth) <= rel_tol * abs(truth)
    return MatchOutcome(Outcome.CORRECT if ok else Outcome.INCORRECT, str(v) if ok else None)


def match_answer(
    response: str, key: QARecord | Mapping, rel_tol: float = 0.10, angle_tol_deg: float = 15.0
) -> MatchOutcome:
    """Strict single-class matching.

    Correct when the response hits exactly the canonical class, Incorrect
    when it hits exactly one other class, Unparsed otherwise. Numeric keys
    compare the single number in the response within tolerance.
    """
    if isinstance(key, Mapping):
        key = QARecord.from_dict(key)
    if key.numeric is not None:
        return _match_numeric(response, key.numeric, rel_tol, angle_tol_deg)
    hits = hit_classes(normalize_answer(response), key.choices or {key.answer: list(key.accepted)})
    if len(hits) != 1:
        return MatchOutcome(Outcome.UNPARSED)
    (cls,) = hits
    if cls == key.answer:
        return MatchOutcome(Outcome.CORRECT, cls)
    return MatchOutcome(Outcome.INCORRECT)


@dataclass
class TypeCounts:
    correct: int = 0
    incorrect: int = 0
    unparsed: int = 0

    @property
    def total(self) -> int:
        return self.correct + self.incorrect + self.unparsed

    def add(self, outcome: Outcome) -> None:
        setattr(self, outcome.value, getattr(self, outcome.value) + 1)


def _type_key(t: str) -> tuple:
    return (TYPE_ORDER.index(t) if t in TYPE_ORDER else len(TYPE_ORDER), t)


def _pct(correct: int, total: int) -> float | None:
    return 100.0 * correct / total if total else None


@dataclass
class ScoreReport:
    per_type: dict[str, TypeCounts] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(c.total for c in self.per_type.values())

    @property
    def correct(self) -> int:
        return sum(c.correct for c in self.per_type.values())

    @property
    def unparsed(self) -> int:
        return sum(c.unparsed for c in self.per_type.values())

    def type_accuracy(self, qtype: str) -> float | None:
        c = self.per_type.get(qtype)
        return _pct(c.correct, c.total) if c else None

    def group_counts(self, group: str) -> tuple[int, int]:
        cs = [self.per_type[t] for t in GROUPS[group] if t in self.per_type]
        return sum(c.correct for c in cs), sum(c.total for c in cs)

    def group_accuracy(self, group: str) -> float | None:
        return _pct(*self.group_counts(group))

    @property
    def average(self) -> float:
        """Count-weighted: all correct over all questions."""
        return _pct(self.correct, self.total) or 0.0

    def to_dict(self) -> dict:
        return {
            "average": self.average,
            "correct": self.correct,
            "total": self.total,
            "unparsed": self.unparsed,
            "groups": {
                g: {"accuracy": self.group_accuracy(g), "correct": self.group_counts(g)[0], "total": self.group_counts(g)[1]}
                for g in GROUPS
            },
            "per_type": {
                t: {
                    "accuracy": self.type_accuracy(t),
                    "correct": c.correct,
                    "incorrect": c.incorrect,
                    "unparsed": c.unparsed,
                    "total": c.total,
                }
                for t, c in self.per_type.items()
            },
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScoreReport":
        per_type = d["per_type"]
        return cls({t: TypeCounts(per_type[t]["correct"], per_type[t]["incorrect"], per_type[t]["unparsed"]) for t in sorted(per_type, key=_type_key)})


def score(
    predictions: Iterable[Mapping],
    keys: Mapping[str, QARecord] | Iterable[QARecord],
    rel_tol: float = 0.10,
    angle_tol_deg: float = 15.0,
) -> ScoreReport:
    """Score ``{qa_id, response}`` predictions against answer keys.

    Keys without a prediction count as Unparsed. A repeated qa_id raises
    DuplicatePrediction; a qa_id absent from the keys raises UnknownQuestion.
    """
    if not isinstance(keys, Mapping):
        keys = {k.qa_id: k for k in keys}
    responses: dict[str, str] = {}
    for p in predictions:
        qid = p["qa_id"]
        if qid in responses:
            raise DuplicatePrediction(f"qa_id {qid!r} predicted more than once")
        if qid not in keys:
            raise UnknownQuestion(f"prediction for unknown qa_id {qid!r}")
        responses[qid] = p.get("response") or ""
    per_type: dict[str, TypeCounts] = {}
    for qid in sorted(keys):
        key = keys[qid]
        counts = per_type.setdefault(key.question_type, TypeCounts())
        if qid not in responses:
            counts.add(Outcome.UNPARSED)
        else:
            counts.add(match_answer(responses[qid], key, rel_tol, angle_tol_deg).outcome)
    return ScoreReport({t: per_type[t] for t in sorted(per_type, key=_type_key)})


def count_weighted_average(groups: Iterable[tuple[float, int]]) -> float:
    """Overall accuracy from (accuracy %, question count) pairs."""
    groups = list(groups)
    total = sum(n for _, n in groups)
    return sum(acc * n for acc, n in groups) / total


def _fmt(v: float | None) -> str:
    return "-" if v is None else f"{v:.1f}"


def render_report(r: ScoreReport, label: str = "predictions") -> tuple[str, str]:
    """Fixed-layout text table and machine-readable JSON record."""
    header = ["", "Avg.", "3D Dist.", "3D Orient.", "3D Spatial Rel."]
    row = [label, _fmt(r.average)] + [_fmt(r.group_accuracy(g)) for g in GROUPS]
    widths = [max(len(h), len(v)) for h, v in zip(header, row)]
    lines = [
        "  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(header, widths))),
        "  ".join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(row, widths))),
        "",
    ]
    tw = max([len(t) for t in r.per_type] + [len("question type")])
    lines.append(f"{'question type':<{tw}}  {'acc.':>6}  {'correct':>7}  {'wrong':>6}  {'unparsed':>8}  {'total':>6}")
    for t, c in r.per_type.items():
        lines.append(
            f"{t:<{tw}}  {_fmt(r.type_accuracy(t)):>6}  {c.correct:>7}  {c.incorrect:>6}  {c.unparsed:>8}  {c.total:>6}"
        )
    lines.append(f"{'all':<{tw}}  {_fmt(r.average):>6}  {r.correct:>7}  {r.total - r.correct - r.unparsed:>6}  {r.unparsed:>8}  {r.total:>6}")
    text = "\n".join(lines) + "\n"
    record = json.dumps(r.to_dict(), sort_keys=True, indent=2) + "\n"
    return text, record
