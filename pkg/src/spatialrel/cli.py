"""Command-line front end.

Exit status: 0 success, 1 data-level failure, 2 usage, config or I/O failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from dataclasses import replace
from typing import Iterator, Sequence, TextIO

from . import __version__
from .config import ToolConfig, load_config
from .errors import ConfigError, DuplicatePrediction, SchemaError, UnknownQuestion
from .evaluation import render_report, score
from .ingest import SceneAnnotation, corpus_stats, iter_records, parse_scene, serialize_scene, validate
from .qagen import GenerationConfig, QARecord, dumps_manifest, gen_benchmark, gen_conversations, gen_probing, write_jsonl
from .synth import synthetic_scenes

log = logging.getLogger("spatialrel")

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2


class DataError(Exception):
    """Malformed input content; maps to exit status 1."""


@contextlib.contextmanager
def _open_in(path: str) -> Iterator[TextIO]:
    if path == "-":
        yield sys.stdin
    else:
        with open(path, encoding="utf-8") as fh:
            yield fh


@contextlib.contextmanager
def _open_out(path: str) -> Iterator[TextIO]:
    if path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            yield fh


def read_scenes(path: str, front_axes=None) -> list[SceneAnnotation]:
    scenes = []
    with _open_in(path) as fh:
        for lineno, line in iter_records(fh):
            try:
                scenes.append(parse_scene(line, front_axes))
            except SchemaError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return scenes


def read_jsonl(path: str) -> list[dict]:
    rows = []
    with _open_in(path) as fh:
        for lineno, line in iter_records(fh):
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            if not isinstance(row, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            rows.append(row)
    return rows


# -- subcommands ------------------------------------------------------------


def cmd_validate(args, cfg: ToolConfig) -> int:
    status = EXIT_OK
    with _open_in(args.scenes) as fh:
        for lineno, line in iter_records(fh):
            try:
                scene = parse_scene(line, cfg.front_axes)
            except SchemaError as exc:
                status = EXIT_DATA
                report = {"line": lineno, "ok": False, "violations": [{"code": exc.code, "path": exc.path, "message": str(exc)}]}
            else:
                report = validate(scene).to_dict()
                report["line"] = lineno
                if not report["ok"]:
                    status = EXIT_DATA
            if args.json:
                print(json.dumps(report, sort_keys=True))
            elif report["ok"]:
                if not args.quiet:
                    print(f"ok    {report['scene_id']}")
            else:
                name = report.get("scene_id", f"line {lineno}")
                print(f"FAIL  {name}")
                for v in report["violations"]:
                    print(f"      {v['code']}: {v['path']}: {v['message']}")
    return status


def cmd_stats(args, cfg: ToolConfig) -> int:
    stats = corpus_stats(read_scenes(args.scenes, cfg.front_axes))
    if args.json:
        print(json.dumps(stats.to_dict(), sort_keys=True, indent=2))
    else:
        print(stats.render())
    return EXIT_OK


def _generation_config(mode: str, args, cfg: ToolConfig) -> GenerationConfig:
    gen = dict(cfg.generation)
    if args.seed is not None:
        gen["seed"] = args.seed
    if args.target is not None:
        gen["default_target"] = args.target
    if args.tolerance is not None:
        gen["tolerance"] = args.tolerance
    if getattr(args, "turns", None):
        gen["turns"] = tuple(args.turns)
    if args.source_tag is not None:
        gen["source_tag"] = args.source_tag
    return GenerationConfig(mode=mode, margins=cfg.margins, **gen)


GENERATORS = {"benchmark": gen_benchmark, "probing": gen_probing, "conversation": gen_conversations}


def cmd_generate(args, cfg: ToolConfig) -> int:
    gcfg = _generation_config(args.mode, args, cfg)
    scenes = read_scenes(args.scenes, cfg.front_axes)
    valid, rejected = [], []
    for s in scenes:
        (valid if validate(s).ok else rejected).append(s)
    rows, manifest = GENERATORS[args.mode](valid, gcfg, workers=args.workers)
    if rejected:
        manifest["rejected_scenes"] = sorted(s.scene_id for s in rejected)
        manifest["warnings"] = manifest["warnings"] + [f"InvalidScene: {len(rejected)} scenes failed validation"]
    with _open_out(args.out) as fh:
        write_jsonl((r.to_dict() if isinstance(r, QARecord) else r for r in rows), fh)
    manifest_path = args.manifest or (None if args.out == "-" else args.out + ".manifest.json")
    if manifest_path:
        with _open_out(manifest_path) as fh:
            fh.write(dumps_manifest(manifest))
    for w in manifest["warnings"]:
        log.warning("%s", w)
    return EXIT_OK


def cmd_score(args, cfg: ToolConfig) -> int:
    keys = {}
    for row in read_jsonl(args.keys):
        rec = QARecord.from_dict(row)
        keys[rec.qa_id] = rec
    predictions = read_jsonl(args.predictions)
    try:
        report = score(predictions, keys, cfg.rel_tol, cfg.angle_tol_deg)
    except (DuplicatePrediction, UnknownQuestion) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    text, record = render_report(report, args.label)
    sys.stdout.write(text)
    out = args.out or (None if args.predictions == "-" else args.predictions + ".score.json")
    if out:
        with _open_out(out) as fh:
            fh.write(record)
    return EXIT_OK


def cmd_synth(args, cfg: ToolConfig) -> int:
    with _open_out(args.out) as fh:
        for s in synthetic_scenes(args.n, args.seed, args.prefix):
            fh.write(serialize_scene(s) + "\n")
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def _add_generation_args(p: argparse.ArgumentParser, conversation: bool = False) -> None:
    p.add_argument("scenes", help="scene annotations (JSON lines, '-' for stdin)")
    p.add_argument("-o", "--out", required=True, help="output JSON lines ('-' for stdout)")
    p.add_argument("--manifest", help="manifest path (default: OUT.manifest.json)")
    p.add_argument("--seed", type=int)
    p.add_argument("--target", type=int, help="per-type target count")
    p.add_argument("--tolerance", type=float, help="balance tolerance fraction")
    p.add_argument("--source-tag", help="source label used in the product name")
    p.add_argument("--turns", type=int, nargs=2, metavar=("MIN", "MAX"), help="turns per conversation")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spatialrel", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="YAML/JSON config file; flags override it")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate scene annotations")
    p.add_argument("scenes")
    p.add_argument("--json", action="store_true", help="one JSON report per scene")
    p.add_argument("-q", "--quiet", action="store_true", help="only print failing scenes")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stats", help="corpus statistics")
    p.add_argument("scenes")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_stats)

    for name, mode in (("gen-benchmark", "benchmark"), ("gen-probing", "probing"), ("gen-conversations", "conversation")):
        p = sub.add_parser(name, help=f"generate the {mode} dataset")
        _add_generation_args(p)
        p.set_defaults(func=cmd_generate, mode=mode)

    p = sub.add_parser("generate", help="generate a dataset in the given mode")
    p.add_argument("--mode", required=True, choices=sorted(GENERATORS))
    _add_generation_args(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("score", help="score predictions against answer keys")
    p.add_argument("keys", help="QA key file from gen-benchmark or gen-probing")
    p.add_argument("predictions", help="JSON lines {qa_id, response}")
    p.add_argument("--out", help="machine-readable report (default: PREDICTIONS.score.json)")
    p.add_argument("--label", default="predictions", help="row label in the table")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("synth", help="write seeded synthetic scenes")
    p.add_argument("-n", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prefix", default="syn")
    p.add_argument("-o", "--out", default="-")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
