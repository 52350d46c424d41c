"""Question-answer synthesis: probing pairs, conversations and a balanced benchmark.

All randomness comes from :class:`~spatialrel.rng.SplitMix64` streams whose
seeds are derived from the run seed plus a stable key (question id, scene
id, answer class), so output never depends on processing order.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache, partial
from importlib import resources
from typing import Any, Callable, Iterable, Mapping, Sequence

from . import __version__
from .errors import ConfigError, UnresolvableReferent
from .ingest import SceneAnnotation, unique_referents
from .relations import BENCHMARK_KINDS, MarginConfig, RelationFact, recompute_fact, relation_facts
from .rng import SplitMix64, derive_seed

MODES = ("benchmark", "probing", "conversation")
BENCHMARK_TYPES = BENCHMARK_KINDS
PROBING_TYPES = ("depth", "distance", "azimuth", "elevation")
DEFAULT_TARGETS = {"benchmark": 240, "probing": 1000, "conversation": 1}
PRODUCT_PREFIX = {"benchmark": "3DI-Bench", "probing": "3DI-Pb", "conversation": "3DI-Ft"}


# -- templates --------------------------------------------------------------


@dataclass(frozen=True)
class Template:
    qtype: str
    code: str
    fact_kind: str
    answer_rule: str
    paraphrases: tuple[tuple[str, str], ...]
    statements: Mapping[str, Sequence[str]]


@dataclass(frozen=True)
class TemplateSet:
    version: str
    types: Mapping[str, Template]
    answer_classes: Mapping[str, Mapping[str, Sequence[str]]]

    def for_kind(self, kind: str) -> list[Template]:
        return [t for t in self.types.values() if t.fact_kind == kind]


def parse_templates(data: Mapping) -> TemplateSet:
    types = {}
    for qtype, spec in data["types"].items():
        types[qtype] = Template(
            qtype,
            spec["code"],
            spec["fact"],
            spec["answer"],
            tuple((p["id"], p["text"]) for p in spec["paraphrases"]),
            {k: tuple(v) for k, v in spec["statements"].items()},
        )
    return TemplateSet(str(data["version"]), types, data["answer_classes"])


@lru_cache(maxsize=None)
def default_templates() -> TemplateSet:
    text = resources.files("spatialrel").joinpath("templates.json").read_text(encoding="utf-8")
    return parse_templates(json.loads(text))


# -- records ----------------------------------------------------------------


@dataclass
class QARecord:
    qa_id: str
    scene_id: str
    image: str
    question_type: str
    question: str
    answer: str
    accepted: tuple[str, ...]
    answer_class: str
    provenance: dict
    template_id: str
    seed: int
    choices: dict[str, list[str]] | None = None
    numeric: dict | None = None

    def to_dict(self) -> dict:
        d = {
            "qa_id": self.qa_id,
            "scene_id": self.scene_id,
            "image": self.image,
            "question_type": self.question_type,
            "question": self.question,
            "answer": self.answer,
            "accepted": list(self.accepted),
            "answer_class": self.answer_class,
            "provenance": self.provenance,
            "template_id": self.template_id,
            "seed": self.seed,
        }
        if self.choices is not None:
            d["choices"] = self.choices
        if self.numeric is not None:
            d["numeric"] = self.numeric
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "QARecord":
        return cls(
            d["qa_id"],
            d["scene_id"],
            d.get("image", ""),
            d["question_type"],
            d["question"],
            d["answer"],
            tuple(d["accepted"]),
            d["answer_class"],
            d["provenance"],
            d["template_id"],
            d["seed"],
            d.get("choices"),
            d.get("numeric"),
        )


def dumps_record(d: Mapping) -> str:
    return json.dumps(d, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


# -- answer rendering -------------------------------------------------------


def format_meters(value: float) -> str:
    return f"{value:.1f} meters"


def bin_degrees(deg: float, width: int = 10) -> int:
    """Nearest multiple of ``width`` degrees, halves rounded up."""
    return int(math.floor(deg / width + 0.5)) * width


def azimuth_bin(rad: float) -> int:
    return bin_degrees(math.degrees(rad)) % 360


def elevation_bin(rad: float) -> int:
    return bin_degrees(math.degrees(rad))


def _option_roles(kind: str, participants: Sequence[str]) -> tuple[str | None, str, str]:
    if kind in ("closer_to_object", "facing_object"):
        return participants[0], participants[1], participants[2]
    return None, participants[0], participants[1]


def _resolve_names(scene: SceneAnnotation, ids: Iterable[str]) -> dict[str, str]:
    refs = unique_referents(scene)
    names = {}
    for i in ids:
        try:
            cat = scene.object(i).category
        except KeyError:
            raise UnresolvableReferent(f"{scene.scene_id}: no object {i!r}") from None
        if refs.get(cat) != i:
            raise UnresolvableReferent(f"{scene.scene_id}: category {cat!r} of {i!r} is not unique in the scene")
        names[i] = cat
    return names


def derive_answer(qtype: str, rule: str, fact: RelationFact, options: Sequence[str], names: Mapping[str, str]):
    """(answer text, answer class, numeric payload) for a fact."""
    if rule == "option":
        _, a, b = _option_roles(fact.kind, fact.participants)
        winner = {"first": a, "second": b}[fact.outcome]
        return names[winner], "option1" if winner == options[0] else "option2", None
    if rule in ("side6", "quadrant", "yesno"):
        return fact.outcome, fact.outcome, None
    if rule == "meters":
        value = float(f"{fact.outcome:.1f}")
        return format_meters(fact.outcome), "value", {"value": value, "unit": "meters"}
    if rule == "azimuth_degrees":
        deg = azimuth_bin(fact.outcome["azimuth"])
        return f"{deg} degrees", "value", {"value": deg, "unit": "degrees", "circular": True}
    if rule == "elevation_degrees":
        deg = elevation_bin(fact.outcome["elevation"])
        return f"{deg} degrees", "value", {"value": deg, "unit": "degrees", "circular": False}
    raise ValueError(f"unknown answer rule {rule!r}")


def _fill(text: str, binding: Mapping[str, str]) -> str:
    for key, value in binding.items():
        text = text.replace("{" + key + "}", value)
    return text


def qa_id_for(code: str, scene_id: str, participants: Sequence[str]) -> str:
    return f"{code}:{scene_id}:{'+'.join(participants)}"


def render_question(
    fact: RelationFact,
    t: Template,
    rng: SplitMix64,
    scene: SceneAnnotation,
    margins: MarginConfig = MarginConfig(),
    seed: int = 0,
    templates: TemplateSet | None = None,
) -> QARecord:
    """Fill one template from one fact.

    Draw order from ``rng``: option order (two-option and two-object
    questions only), then paraphrase index.
    """
    templates = templates or default_templates()
    if fact.kind != t.fact_kind:
        raise ValueError(f"template {t.qtype} renders {t.fact_kind} facts, got {fact.kind}")
    names = _resolve_names(scene, fact.participants)
    ps = fact.participants
    binding: dict[str, str] = {}
    options: list[str] = []
    if t.answer_rule == "option":
        ref, a, b = _option_roles(fact.kind, ps)
        options = [b, a] if rng.below(2) else [a, b]
        if ref is not None:
            binding["REF"] = names[ref]
    elif t.answer_rule == "quadrant":
        binding["REF"] = names[ps[0]]
        options = [ps[1]]
    elif len(ps) == 2:
        options = [ps[1], ps[0]] if rng.below(2) else list(ps)
    else:
        options = list(ps)
    binding["A"] = names[options[0]]
    if len(options) > 1:
        binding["B"] = names[options[1]]

    template_id, text = t.paraphrases[rng.below(len(t.paraphrases))]
    answer, answer_class, numeric = derive_answer(t.qtype, t.answer_rule, fact, options, names)

    choices = None
    if t.answer_rule == "option":
        choices = {names[i]: [names[i].lower()] for i in options}
        accepted = (answer.lower(),)
    elif numeric is None:
        choices = {k: list(v) for k, v in templates.answer_classes[t.answer_rule].items()}
        accepted = tuple(choices[answer])
    else:
        num = answer.split()[0]
        unit = "m" if numeric["unit"] == "meters" else "deg"
        accepted = (answer, f"{num} {unit}", num)

    return QARecord(
        qa_id=qa_id_for(t.code, scene.scene_id, ps),
        scene_id=scene.scene_id,
        image=scene.image,
        question_type=t.qtype,
        question=_fill(text, binding),
        answer=answer,
        accepted=accepted,
        answer_class=answer_class,
        provenance={
            "predicate": fact.kind,
            "participants": list(ps),
            "options": options,
            "outcome": fact.outcome,
            "evidence": fact.evidence,
            "margins": margins.to_record(),
        },
        template_id=template_id,
        seed=seed,
        choices=choices,
        numeric=numeric,
    )


def render_statement(rec: QARecord, t: Template, rng: SplitMix64, scene: SceneAnnotation) -> str:
    """Full-sentence answer used in conversation turns."""
    names = _resolve_names(scene, rec.provenance["participants"])
    options = rec.provenance["options"]
    binding = {"ANSWER": rec.answer, "A": names[options[0]]}
    if len(options) > 1:
        binding["B"] = names[options[1]]
    if t.answer_rule == "quadrant" or rec.provenance["predicate"] in ("closer_to_object", "facing_object"):
        binding["REF"] = names[rec.provenance["participants"][0]]
    pool = t.statements.get(rec.answer_class) or t.statements["*"]
    return _fill(pool[rng.below(len(pool))], binding)


def audit_record(rec: QARecord | Mapping, scene: SceneAnnotation, templates: TemplateSet | None = None) -> str | None:
    """Recompute a record's answer from the scene; returns a mismatch message or None."""
    templates = templates or default_templates()
    if not isinstance(rec, QARecord):
        rec = QARecord.from_dict(rec)
    prov = rec.provenance
    t = templates.types[rec.question_type]
    fact = recompute_fact(scene, prov["predicate"], prov["participants"], MarginConfig.from_record(prov["margins"]))
    if fact.outcome == "ambiguous":
        return f"{rec.qa_id}: recomputed outcome is ambiguous"
    names = _resolve_names(scene, prov["participants"])
    answer, answer_class, _ = derive_answer(rec.question_type, t.answer_rule, fact, prov["options"], names)
    if answer != rec.answer or answer_class != rec.answer_class:
        return f"{rec.qa_id}: recorded {rec.answer!r}/{rec.answer_class}, recomputed {answer!r}/{answer_class}"
    return None


# -- configuration ----------------------------------------------------------


@dataclass(frozen=True)
class GenerationConfig:
    mode: str = "benchmark"
    targets: Mapping[str, int] = field(default_factory=dict)
    default_target: int | None = None
    tolerance: float = 0.1
    margins: MarginConfig = MarginConfig()
    seed: int = 0
    turns: tuple[int, int] = (3, 8)
    source_tag: str = "SYN"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not isinstance(self.targets, Mapping):
            raise ConfigError("targets must map question types to counts")
        unknown = set(self.targets) - set(BENCHMARK_TYPES) - set(PROBING_TYPES)
        if unknown:
            raise ConfigError(f"unknown question types in targets: {sorted(unknown)}")
        object.__setattr__(self, "targets", dict(self.targets))
        if not (isinstance(self.turns, (list, tuple)) and len(self.turns) == 2 and all(isinstance(n, int) for n in self.turns)):
            raise ConfigError(f"turns must be a [min, max] pair of integers, got {self.turns!r}")
        object.__setattr__(self, "turns", tuple(self.turns))
        if isinstance(self.tolerance, bool) or not isinstance(self.tolerance, (int, float)):
            raise ConfigError(f"tolerance must be a number, got {self.tolerance!r}")
        if not isinstance(self.source_tag, str):
            raise ConfigError("source_tag must be a string")
        for qtype, n in self.targets.items():
            if not (isinstance(n, int) and n > 0):
                raise ConfigError(f"target for {qtype} must be a positive integer, got {n!r}")
        if self.default_target is not None and not (isinstance(self.default_target, int) and self.default_target > 0):
            raise ConfigError("default_target must be a positive integer")
        if not 0.0 <= self.tolerance <= 1.0:
            raise ConfigError(f"tolerance must lie in [0, 1], got {self.tolerance}")
        if not (isinstance(self.seed, int) and 0 <= self.seed < 2**64):
            raise ConfigError("seed must be an integer in [0, 2**64)")
        lo, hi = self.turns
        if not 1 <= lo <= hi:
            raise ConfigError(f"turns range must satisfy 1 <= min <= max, got {self.turns}")

    def target_for(self, qtype: str) -> int:
        return self.targets.get(qtype, self.default_target or DEFAULT_TARGETS[self.mode])

    def to_dict(self) -> dict:
        types = BENCHMARK_TYPES if self.mode == "benchmark" else PROBING_TYPES if self.mode == "probing" else ()
        return {
            "mode": self.mode,
            "targets": {t: self.target_for(t) for t in types},
            "tolerance": self.tolerance,
            "margins": self.margins.to_config(),
            "margins_rad": self.margins.to_record(),
            "seed": self.seed,
            "turns": list(self.turns),
            "source_tag": self.source_tag,
        }


def product_name(mode: str, count: int, source_tag: str = "") -> str:
    if count >= 1_000_000:
        size = f"{round(count / 1_000_000)}M"
    elif count >= 1000:
        size = f"{round(count / 1000)}K"
    else:
        size = str(count)
    if mode == "probing":
        return f"{PRODUCT_PREFIX[mode]}-{source_tag}{size}"
    return f"{PRODUCT_PREFIX[mode]}{size}"


# -- balancing --------------------------------------------------------------


def class_universe(qtype: str, templates: TemplateSet | None = None) -> tuple[str, ...]:
    templates = templates or default_templates()
    rule = templates.types[qtype].answer_rule
    if rule == "option":
        return ("option1", "option2")
    if rule in templates.answer_classes:
        return tuple(templates.answer_classes[rule])
    return ("value",)


def class_quotas(available: Mapping[str, int], target: int) -> dict[str, int]:
    """Per-class sample sizes by water-filling.

    Classes with fewer items than the running uniform share are taken whole;
    the rest of the target is split evenly over the remaining classes, the
    leftover units going to the alphabetically first ones.
    """
    quotas = {}
    remaining = target
    rest = sorted(available, key=lambda c: (available[c], c))
    while rest and available[rest[0]] * len(rest) < remaining:
        c = rest.pop(0)
        quotas[c] = available[c]
        remaining -= available[c]
    if rest:
        share, extra = divmod(remaining, len(rest))
        for i, c in enumerate(sorted(rest)):
            quotas[c] = share + (1 if i < extra else 0)
    return quotas


def balance(
    pool: Sequence[QARecord],
    targets: Mapping[str, int],
    tolerance: float,
    seed: int,
    classes: Mapping[str, Sequence[str]] | None = None,
) -> tuple[list[QARecord], dict[str, dict]]:
    """Stratified sampling without replacement per (question type, answer class).

    Returns the selection sorted by qa_id (its type code prefix keeps types
    grouped in order) and a per-type report.
    Classes that cannot meet their share are taken whole and flagged.
    """
    by_type: dict[str, dict[str, list[QARecord]]] = {}
    for rec in pool:
        by_type.setdefault(rec.question_type, {}).setdefault(rec.answer_class, []).append(rec)
    selected, report = [], {}
    for qtype in sorted(set(targets) | set(by_type)):
        target = targets.get(qtype)
        if target is None:
            continue
        groups = by_type.get(qtype, {})
        universe = tuple(classes[qtype]) if classes and qtype in classes else tuple(sorted(groups))
        universe = tuple(sorted(set(universe) | set(groups)))
        available = {c: len(groups.get(c, ())) for c in universe}
        quotas = class_quotas(available, target) if universe else {}
        u = target / len(universe) if universe else 0.0
        floor_share = math.floor((1 - tolerance) * u)
        for c in universe:
            items = sorted(groups.get(c, ()), key=lambda r: r.qa_id)
            SplitMix64(derive_seed(seed, "balance", qtype, c)).shuffle(items)
            selected.extend(items[: quotas[c]])
        total = sum(quotas.values())
        report[qtype] = {
            "target": target,
            "selected": total,
            "pool": available,
            "classes": quotas,
            "undershoot_classes": sorted(c for c in universe if quotas[c] < floor_share),
            "undershoot": total < target,
        }
    selected.sort(key=lambda r: r.qa_id)
    return selected, report


# -- generation -------------------------------------------------------------


def _map_scenes(fn: Callable, scenes: Sequence[SceneAnnotation], workers: int) -> list:
    if workers > 1 and len(scenes) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, scenes, chunksize=max(1, len(scenes) // (4 * workers))))
    return [fn(s) for s in scenes]


def scene_candidates(scene: SceneAnnotation, cfg: GenerationConfig, qtypes: Sequence[str]) -> tuple[list[QARecord], Counter]:
    """Every renderable question of ``qtypes`` in one scene."""
    templates = default_templates()
    kinds = []
    for q in qtypes:
        k = templates.types[q].fact_kind
        if k not in kinds:
            kinds.append(k)
    skipped: Counter = Counter()
    out = []
    for fact in relation_facts(scene, cfg.margins, kinds, skipped):
        for t in templates.for_kind(fact.kind):
            if t.qtype not in qtypes:
                continue
            qid = qa_id_for(t.code, scene.scene_id, fact.participants)
            rng = SplitMix64(derive_seed(cfg.seed, "render", qid))
            out.append(render_question(fact, t, rng, scene, cfg.margins, cfg.seed, templates))
    return out, skipped


def _manifest(cfg: GenerationConfig, n_scenes: int, n_records: int, **extra) -> dict:
    m = {
        "tool": "spatialrel",
        "tool_version": __version__,
        "template_version": default_templates().version,
        "mode": cfg.mode,
        "product": product_name(cfg.mode, n_records, cfg.source_tag),
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "scenes": n_scenes,
        "records": n_records,
    }
    m.update(extra)
    return m


def _generate_balanced(
    scenes: Sequence[SceneAnnotation], cfg: GenerationConfig, qtypes: Sequence[str], workers: int
) -> tuple[list[QARecord], dict]:
    scenes = sorted(scenes, key=lambda s: s.scene_id)
    results = _map_scenes(partial(scene_candidates, cfg=cfg, qtypes=qtypes), scenes, workers)
    pool, skipped = [], Counter()
    for recs, sk in results:
        pool.extend(recs)
        skipped.update(sk)
    targets = {q: cfg.target_for(q) for q in qtypes}
    classes = {q: class_universe(q) for q in qtypes}
    selected, report = balance(pool, targets, cfg.tolerance, derive_seed(cfg.seed, cfg.mode), classes)
    warnings = []
    for q in qtypes:
        r = report[q]
        need = math.ceil((1 - cfg.tolerance) * r["target"])
        if r["selected"] < need:
            warnings.append(f"InsufficientFacts: {q} reached {r['selected']} of target {r['target']} (minimum {need})")
        elif r["undershoot_classes"]:
            warnings.append(f"Undershoot: {q} classes {', '.join(r['undershoot_classes'])} below their share")
    manifest = _manifest(
        cfg,
        len(scenes),
        len(selected),
        question_types=list(qtypes),
        counts={q: report[q]["classes"] for q in qtypes},
        balance=report,
        skipped_tuples=dict(sorted(skipped.items())),
        warnings=warnings,
    )
    return selected, manifest


def gen_benchmark(scenes: Sequence[SceneAnnotation], cfg: GenerationConfig, workers: int = 1):
    """Balanced benchmark over the seven question types; returns (records, manifest)."""
    return _generate_balanced(scenes, cfg, BENCHMARK_TYPES, workers)


def gen_probing(scenes: Sequence[SceneAnnotation], cfg: GenerationConfig, workers: int = 1):
    """Single-fact depth / distance / azimuth / elevation questions; returns (records, manifest)."""
    return _generate_balanced(scenes, cfg, PROBING_TYPES, workers)


def scene_conversation(scene: SceneAnnotation, cfg: GenerationConfig) -> tuple[dict | None, Counter]:
    templates = default_templates()
    skipped: Counter = Counter()
    facts = relation_facts(scene, cfg.margins, BENCHMARK_KINDS, skipped)
    lo, hi = cfg.turns
    if len(facts) < lo:
        return None, skipped
    rng = SplitMix64(derive_seed(cfg.seed, "conversation", scene.scene_id))
    k = rng.randint(lo, min(hi, len(facts)))
    order = list(range(len(facts)))
    rng.shuffle(order)
    turns = []
    for n, idx in enumerate(order[:k]):
        fact = facts[idx]
        t = templates.for_kind(fact.kind)[0]
        rec = render_question(fact, t, rng, scene, cfg.margins, cfg.seed, templates)
        d = rec.to_dict()
        d["turn"] = n
        d["response"] = render_statement(rec, t, rng, scene)
        turns.append(d)
    conv = {
        "conv_id": f"C:{scene.scene_id}",
        "scene_id": scene.scene_id,
        "image": scene.image,
        "seed": cfg.seed,
        "turns": turns,
    }
    return conv, skipped


def gen_conversations(scenes: Sequence[SceneAnnotation], cfg: GenerationConfig, workers: int = 1):
    """One multi-turn conversation per scene with enough distinct facts; returns (records, manifest)."""
    scenes = sorted(scenes, key=lambda s: s.scene_id)
    results = _map_scenes(partial(scene_conversation, cfg=cfg), scenes, workers)
    convs, skipped, short = [], Counter(), 0
    for conv, sk in results:
        skipped.update(sk)
        if conv is None:
            short += 1
        else:
            convs.append(conv)
    convs.sort(key=lambda c: c["conv_id"])
    turn_counts = Counter()
    for c in convs:
        turn_counts.update(t["question_type"] for t in c["turns"])
    manifest = _manifest(
        cfg,
        len(scenes),
        len(convs),
        turns=sum(len(c["turns"]) for c in convs),
        counts=dict(sorted(turn_counts.items())),
        skipped_scenes=short,
        skipped_tuples=dict(sorted(skipped.items())),
        warnings=[f"SkippedScenes: {short} scenes have fewer than {cfg.turns[0]} distinct facts"] if short else [],
    )
    return convs, manifest


def write_jsonl(rows: Iterable[Mapping], fh) -> None:
    for row in rows:
        fh.write(dumps_record(row))
        fh.write("\n")


def dumps_manifest(manifest: Mapping) -> str:
    return json.dumps(manifest, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
