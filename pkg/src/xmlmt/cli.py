"""Command line entry point: ``xmlmt {extract,stats,evaluate,decode}``.

Exit codes: 0 success, 2 input contract violation, 3 data error under
``--strict``, 4 scorer plugin error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import xml.etree.ElementTree as ET
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .decoding import (
    BeamConfig,
    TranslationMemory,
    UnknownTokenError,
    Vocabulary,
    VocabularyError,
    beam_search,
    load_scorer,
    restore_attributes,
)
from .extraction import (
    URL_PATTERN,
    SegmentPair,
    corpus_stats,
    extract_document_pair,
    filter_and_dedupe,
    find_file_pairs,
    split_dataset,
)
from .metrics import (
    NAMED_ENTITY_PATTERN,
    NUMBER_PATTERN,
    evaluate,
    ne_num_items,
    structure_matches,
)
from .xml_model import (
    SegmentParseError,
    TagPolicy,
    parse_segment,
    parse_segment_with_attributes,
    validate_xml,
)

logger = logging.getLogger("xmlmt")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_STRICT = 3
EXIT_PLUGIN = 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    """Resolved flags of one invocation."""

    command: str
    inputs: list[Path] = field(default_factory=list)
    output: Optional[Path] = None
    seed: int = 0
    beam: BeamConfig = field(default_factory=BeamConfig)
    policy_path: Optional[Path] = None
    non_alphabetic_target: bool = False
    jobs: int = 1

    def validate(self):
        for path in [*self.inputs, *([self.policy_path] if self.policy_path else [])]:
            if not path.exists():
                raise CliError(f"{path}: no such file or directory", EXIT_INPUT)
        if self.jobs < 1:
            raise CliError("--jobs must be >= 1", EXIT_INPUT)

    def policy(self) -> TagPolicy:
        if self.policy_path is None:
            return TagPolicy()
        try:
            return TagPolicy.from_file(self.policy_path)
        except ValueError as exc:
            raise CliError(f"{self.policy_path}: {exc}", EXIT_INPUT) from exc


def _dump(obj) -> str:
    return json.dumps(obj, ensure_ascii=False)


def _write_jsonl(path: Path, records):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(_dump(rec) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise CliError(f"{path}:{lineno}: {exc}", EXIT_INPUT) from exc
    return records


def _emit(path: Optional[Path], obj):
    text = json.dumps(obj, ensure_ascii=False, indent=2) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# extract

def _extract_file(task):
    name, src_path, tgt_path, policy, url_pattern = task
    try:
        src = ET.parse(src_path).getroot()
        tgt = ET.parse(tgt_path).getroot()
    except ET.ParseError as exc:
        return name, None, str(exc)
    return name, extract_document_pair(src, tgt, policy, name, url_pattern), None


def run_extract(args) -> int:
    cfg = RunConfig("extract", [Path(args.corpus)], Path(args.out), args.seed, policy_path=_opt_path(args.policy), jobs=args.jobs)
    cfg.validate()
    policy = cfg.policy()
    layout = find_file_pairs(args.corpus, args.src_lang, args.tgt_lang)
    if not layout.paired:
        raise CliError(
            f"no page-aligned files under {args.corpus}/{{{args.src_lang},{args.tgt_lang}}} "
            f"({len(layout.unpaired)} unpaired)",
            EXIT_INPUT,
        )
    url_pattern = None if args.no_url_normalization else args.url_pattern
    tasks = [(name, s, t, policy, url_pattern) for name, s, t in layout.paired]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            results = list(pool.map(_extract_file, tasks, chunksize=8))
    else:
        results = [_extract_file(t) for t in tasks]

    pairs, malformed = [], []
    for name, file_pairs, error in results:
        if error is not None:
            if args.strict:
                raise CliError(f"{name}: malformed XML: {error}", EXIT_STRICT)
            logger.warning("%s: malformed XML, skipped: %s", name, error)
            malformed.append(name)
            continue
        pairs.extend(file_pairs)
    extracted = len(pairs)
    pairs = filter_and_dedupe(pairs)
    split = split_dataset(list(enumerate(pairs)), args.seed, args.dev_size, args.test_size)

    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    for part in ("train", "dev", "test"):
        items = getattr(split, part)
        _write_jsonl(out / f"{part}.jsonl", (p.to_record(str(i)) for i, p in items))
    stats = corpus_stats(pairs).to_dict()
    stats.update(
        files_paired=len(layout.paired),
        files_unpaired=[p.as_posix() for p in layout.unpaired],
        files_malformed=malformed,
        pairs_extracted=extracted,
        pairs_kept=len(pairs),
        split_sizes={part: len(getattr(split, part)) for part in ("train", "dev", "test")},
        seed=args.seed,
    )
    _emit(out / "stats.json", stats)
    return EXIT_OK


# stats

def run_stats(args) -> int:
    cfg = RunConfig("stats", [Path(args.input)], _opt_path(args.out))
    cfg.validate()
    pairs = []
    for rec in _read_jsonl(Path(args.input)):
        try:
            pairs.append(SegmentPair.from_record(rec))
        except (KeyError, SegmentParseError) as exc:
            raise CliError(f"{args.input}: record {rec.get('id')!r}: {exc}", EXIT_INPUT) from exc
    _emit(cfg.output, corpus_stats(pairs).to_dict())
    return EXIT_OK


# evaluate

def _field(rec: dict, names, path) -> str:
    for name in names:
        if name in rec:
            return rec[name]
    raise CliError(f"{path}: record {rec.get('id')!r} has none of {list(names)}", EXIT_INPUT)


def _parse_lenient(text: str, where: str):
    try:
        return parse_segment(text, lenient=True)
    except SegmentParseError as exc:
        raise CliError(f"{where}: {exc}", EXIT_INPUT) from exc


MODE_KEYS = {
    "all": None,
    "bleu": ["bleu_no_xml"],
    "ne_num": ["ne_num_precision", "ne_num_recall"],
    "xml": ["xml_accuracy", "xml_match", "xml_bleu"],
}


def run_evaluate(args) -> int:
    cfg = RunConfig(
        "evaluate", [Path(args.hyp), Path(args.ref)], _opt_path(args.out), non_alphabetic_target=args.non_alphabetic_target
    )
    cfg.validate()
    hyp_recs, ref_recs = _read_jsonl(Path(args.hyp)), _read_jsonl(Path(args.ref))
    if not hyp_recs or not ref_recs:
        raise CliError("hypothesis and reference files must be non-empty", EXIT_INPUT)
    hyp_by_id = {str(r.get("id")): r for r in hyp_recs}
    ref_by_id = {str(r.get("id")): r for r in ref_recs}
    only_hyp = sorted(hyp_by_id.keys() - ref_by_id.keys())
    only_ref = sorted(ref_by_id.keys() - hyp_by_id.keys())
    if only_hyp or only_ref or len(hyp_by_id) != len(hyp_recs) or len(ref_by_id) != len(ref_recs):
        raise CliError(
            f"id mismatch: only in hypotheses {only_hyp[:20]}, only in references {only_ref[:20]}"
            + (" (duplicate ids present)" if len(hyp_by_id) != len(hyp_recs) or len(ref_by_id) != len(ref_recs) else ""),
            EXIT_INPUT,
        )
    ids = [str(r.get("id")) for r in ref_recs]
    hyps = [_parse_lenient(_field(hyp_by_id[i], ("hyp", "tgt", "text"), args.hyp), f"{args.hyp}:{i}") for i in ids]
    refs = [_parse_lenient(_field(ref_by_id[i], ("tgt", "ref", "text"), args.ref), f"{args.ref}:{i}") for i in ids]

    report = evaluate(hyps, refs, non_alphabetic=cfg.non_alphabetic_target, ordered=not args.unordered).to_dict()
    keys = MODE_KEYS[args.mode]
    if keys is not None:
        report = {k: report[k] for k in [*keys, "size"]}
    report["non_alphabetic_target"] = cfg.non_alphabetic_target
    report["ordered_structure_match"] = not args.unordered
    if args.explain:
        report["explain"] = {
            "numbers": NUMBER_PATTERN,
            "named_entities": NAMED_ENTITY_PATTERN,
            "named_entities_active": cfg.non_alphabetic_target,
        }
    if args.verbose:
        report["pairs"] = [
            {
                "id": i,
                "valid": validate_xml(h),
                "match": structure_matches(h, r, not args.unordered),
                "hyp_items": sorted(ne_num_items(h, cfg.non_alphabetic_target).elements()),
                "ref_items": sorted(ne_num_items(r, cfg.non_alphabetic_target).elements()),
            }
            for i, h, r in zip(ids, hyps, refs)
        ]
    _emit(cfg.output, report)
    return EXIT_OK


# decode

_WORKER = {}


def _init_worker(scorer, memory, beam):
    _WORKER.update(scorer=scorer, memory=memory, beam=beam)


def _decode_record(rec):
    seg, attrs = rec["_parsed"]
    result = beam_search(_WORKER["scorer"], seg, _WORKER["memory"], _WORKER["beam"])
    return {
        "id": rec["id"],
        "hyp": restore_attributes(result, attrs),
        "truncated": result.truncated,
        "copy_trace": result.copy_trace,
    }


def run_decode(args) -> int:
    try:
        beam = BeamConfig(args.beam, args.max_length, args.alpha, args.constrained)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    inputs = [Path(args.input)] + ([Path(args.memory)] if args.memory else [])
    cfg = RunConfig("decode", inputs, _opt_path(args.out), args.seed, beam, _opt_path(args.policy), jobs=args.jobs)
    cfg.validate()
    policy = cfg.policy()
    records = _read_jsonl(Path(args.input))
    for rec in records:
        if "id" not in rec or "src" not in rec:
            raise CliError(f"{args.input}: every record needs 'id' and 'src'", EXIT_INPUT)
        try:
            rec["_parsed"] = parse_segment_with_attributes(rec["src"])
        except SegmentParseError as exc:
            raise CliError(f"{args.input}: record {rec['id']!r}: {exc}", EXIT_INPUT) from exc
    memory = TranslationMemory.from_jsonl(args.memory) if args.memory else None

    seqs = [rec["_parsed"][0].surfaces for rec in records]
    if memory is not None:
        seqs += [p.source.surfaces for p in memory.pairs] + [p.target.surfaces for p in memory.pairs]
    vocab = Vocabulary.build(seqs, tags=policy.tags)
    try:
        scorer = load_scorer(args.scorer, vocab, seed=args.seed)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CliError(f"cannot load scorer {args.scorer!r}: {exc}", EXIT_PLUGIN) from exc

    try:
        if cfg.jobs > 1:
            with ProcessPoolExecutor(cfg.jobs, initializer=_init_worker, initargs=(scorer, memory, beam)) as pool:
                out = list(pool.map(_decode_record, records, chunksize=4))
        else:
            _init_worker(scorer, memory, beam)
            out = [_decode_record(rec) for rec in records]
    except (VocabularyError, UnknownTokenError) as exc:
        raise CliError(f"scorer vocabulary does not cover the input: {exc}", EXIT_INPUT) from exc
    if cfg.output is None:
        for rec in out:
            sys.stdout.write(_dump(rec) + "\n")
    else:
        _write_jsonl(cfg.output, out)
    return EXIT_OK


def _opt_path(value) -> Optional[Path]:
    return Path(value) if value else None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xmlmt", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file whose keys provide flag defaults")
    parser.add_argument("-v", "--log-level", default="WARNING", help="logging level (default: WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract a parallel corpus from <corpus>/<lang>/<name>.xml")
    p.add_argument("corpus")
    p.add_argument("--src-lang", required=True)
    p.add_argument("--tgt-lang", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy", help="tag policy INI file")
    p.add_argument("--strict", action="store_true", help="fail (exit 3) on malformed XML files")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--dev-size", type=int, default=2000)
    p.add_argument("--test-size", type=int, default=2000)
    p.add_argument("--url-pattern", default=URL_PATTERN)
    p.add_argument("--no-url-normalization", action="store_true")
    p.set_defaults(func=run_extract)

    p = sub.add_parser("stats", help="corpus statistics of a JSON-lines corpus")
    p.add_argument("input")
    p.add_argument("--out")
    p.set_defaults(func=run_stats)

    p = sub.add_parser("evaluate", help="score hypotheses against references")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out")
    p.add_argument("--mode", choices=sorted(MODE_KEYS), default="all")
    p.add_argument("--non-alphabetic-target", action="store_true", help="also extract named entities")
    p.add_argument("--unordered", action="store_true", help="ignore sibling order in structure matching")
    p.add_argument("--verbose", action="store_true", help="per-pair diagnostics")
    p.add_argument("--explain", action="store_true", help="include the extraction patterns")
    p.set_defaults(func=run_evaluate)

    p = sub.add_parser("decode", help="constrained beam search over a JSON-lines file of {id, src}")
    p.add_argument("--input", required=True)
    p.add_argument("--out")
    p.add_argument("--scorer", required=True, help="uniform | random[:SCALE] | scripted:PATH | bigram:PATH")
    p.add_argument("--memory", help="JSON-lines translation memory with src/tgt fields")
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--max-length", type=int, default=200)
    p.add_argument("--alpha", type=float, default=0.0, help="per-step length penalty")
    p.add_argument("--constrained", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--policy", help="tag policy INI file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=run_decode)
    return parser


def _load_config(argv) -> dict:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return {}
    try:
        with open(known.config, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {known.config}: {exc}", EXIT_INPUT) from exc
    if not isinstance(data, dict):
        raise CliError(f"{known.config}: expected a JSON object", EXIT_INPUT)
    return {k.replace("-", "_"): v for k, v in data.items()}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        defaults = _load_config(argv)
        if defaults:
            for action in parser._subparsers._group_actions:
                for subparser in action.choices.values():
                    subparser.set_defaults(**defaults)
                    for opt in subparser._actions:
                        if opt.dest in defaults:
                            opt.required = False
        args = parser.parse_args(argv)
        logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except CliError as exc:
        print(f"xmlmt: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
