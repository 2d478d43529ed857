"""
kernforge command line

Wires the data engine together: validate and filter a corpus, normalize it,
train and apply the BPE vocabulary, compute decode masks, simulate
constrained decoding and score predictions.

Reports go to stdout as JSON lines, diagnostics to stderr. Exit status is 0
on success, 1 when any item was rejected or failed, 2 on usage errors.
"""

import argparse
import json
import logging
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

from pydantic import BaseModel

from .bpe import EOS_ID, BpeVocab, EmptyCorpus, UnknownId, train
from .config import Config
from .constraints import ConstraintEngine, IllegalAdvance, state_after
from .filters import filter_file, structural_check
from .harness import (
    ADVERSARIAL_RULES,
    LOOP_FACTOR,
    MODES,
    LogitSource,
    repeated_window,
    run_decode,
)
from .kern import KernError, decode_kern_bytes, parse_document, serialize_document
from .metrics import EmptyReference, score_texts
from .normalizer import normalize_document
from .schemas import (
    AggregateLine,
    DecodeLine,
    EncodeLine,
    FilterLine,
    MaskLine,
    NormalizeLine,
    ScoreLine,
    SimulateLine,
    TrainLine,
    percent,
)

logger = logging.getLogger(__name__)

KERN_SUFFIXES = (".krn", ".kern")


class UsageError(Exception):
    pass


def emit(line: BaseModel) -> None:
    sys.stdout.write(line.model_dump_json() + "\n")


def iter_inputs(paths: list[str]) -> list[tuple[Path, Path]]:
    """(file, path relative to its input root) pairs in sorted order"""
    found: list[tuple[Path, Path]] = []
    for raw in paths:
        root = Path(raw)
        if root.is_dir():
            files = sorted(p for p in root.rglob("*") if p.suffix in KERN_SUFFIXES and p.is_file())
            found += [(p, p.relative_to(root)) for p in files]
        elif root.is_file():
            found.append((root, Path(root.name)))
        else:
            raise UsageError(f"no such file or directory: {raw}")
    return found


def parallel_map(fn, items: list, workers: int) -> list:
    """Map in input order, across processes when more than one worker is asked for"""
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def load_vocab(args, config: Config) -> BpeVocab:
    path = getattr(args, "vocab", None) or config.vocab_path
    if not path:
        raise UsageError("a vocabulary is required (--vocab or KERNFORGE_VOCAB)")
    try:
        return BpeVocab.load(path)
    except (OSError, ValueError, KeyError) as e:
        raise UsageError(f"cannot load vocabulary {path}: {e}") from e


def _filter_job(job: tuple[str, bool]) -> FilterLine:
    path, structural_only = job
    data = Path(path).read_bytes()
    report = structural_check(data, path) if structural_only else filter_file(data, path)
    return FilterLine.from_report(report)


def cmd_validate(args, config: Config) -> int:
    inputs = iter_inputs(args.paths)
    jobs = [(str(path), args.structural) for path, _ in inputs]
    lines = parallel_map(_filter_job, jobs, args.workers or config.workers)
    for line in lines:
        emit(line)
    rejected = sum(1 for line in lines if line.verdict == "reject")
    if args.summary:
        print(f"{len(lines) - rejected} accepted, {rejected} rejected", file=sys.stderr)
    return 1 if rejected else 0


def cmd_filter(args, config: Config) -> int:
    inputs = iter_inputs(args.paths)
    jobs = [(str(path), False) for path, _ in inputs]
    lines = parallel_map(_filter_job, jobs, args.workers or config.workers)
    rules: dict[str, int] = {}
    for (path, relative), line in zip(inputs, lines):
        emit(line)
        if line.verdict == "accept" and args.out:
            target = Path(args.out) / relative
            target.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(path, target)
        for reason in line.reasons:
            rules[reason.rule] = rules.get(reason.rule, 0) + 1
    rejected = sum(1 for line in lines if line.verdict == "reject")
    logger.info(f"Filtered {len(lines)} files: {len(lines) - rejected} accepted")
    if args.summary:
        print(f"{len(lines) - rejected} accepted, {rejected} rejected", file=sys.stderr)
        for rule, count in sorted(rules.items()):
            print(f"  {rule}: {count}", file=sys.stderr)
    return 1 if rejected else 0


def _normalize_job(job: tuple[str, str | None]) -> NormalizeLine:
    path, target = job
    try:
        text = decode_kern_bytes(Path(path).read_bytes())
        doc, trace = normalize_document(parse_document(text, path))
    except KernError as e:
        return NormalizeLine(path=path, status="error", error=str(e))
    if target:
        Path(target).parent.mkdir(parents=True, exist_ok=True)
        Path(target).write_text(serialize_document(doc), encoding="utf-8")
    return NormalizeLine.from_trace(path, trace)


def cmd_normalize(args, config: Config) -> int:
    inputs = iter_inputs(args.inputs)
    jobs = [
        (str(path), str(Path(args.out) / relative) if args.out else None)
        for path, relative in inputs
    ]
    lines = parallel_map(_normalize_job, jobs, args.workers or config.workers)
    for line in lines:
        emit(line)
    failed = sum(1 for line in lines if line.status != "ok")
    edited = sum(1 for line in lines if line.edits)
    if args.summary:
        print(f"{len(lines)} files, {edited} edited, {failed} failed", file=sys.stderr)
    return 1 if failed else 0


def cmd_bpe_train(args, config: Config) -> int:
    inputs = iter_inputs(args.inputs)
    corpus = (path.read_bytes() for path, _ in inputs)
    try:
        vocab = train(corpus, args.vocab_size or config.vocab_size, args.min_frequency)
    except EmptyCorpus as e:
        logger.error(str(e))
        return 1
    vocab.save(args.out)
    emit(TrainLine(vocab=args.out, files=len(inputs), tokens=len(vocab), merges=len(vocab.merges)))
    return 0


def cmd_bpe_encode(args, config: Config) -> int:
    vocab = load_vocab(args, config)
    for path, _ in iter_inputs(args.paths):
        emit(EncodeLine(path=str(path), ids=vocab.encode(path.read_bytes())))
    return 0


def _read_lines(paths: list[str]):
    for path in paths:
        handle = sys.stdin if path == "-" else open(path, encoding="utf-8")
        try:
            for raw in handle:
                if raw.strip():
                    yield raw
        finally:
            if handle is not sys.stdin:
                handle.close()


def cmd_bpe_decode(args, config: Config) -> int:
    vocab = load_vocab(args, config)
    failed = 0
    for raw in _read_lines(args.inputs):
        try:
            payload = json.loads(raw)
            emit(DecodeLine(path=payload.get("path"), text=vocab.decode(payload["ids"])))
        except (ValueError, KeyError, UnknownId) as e:
            logger.error(f"Cannot decode line: {e}")
            failed += 1
    return 1 if failed else 0


def cmd_mask(args, config: Config) -> int:
    if args.prefix_file:
        prefix = Path(args.prefix_file).read_bytes()
    else:
        prefix = (args.prefix or "").encode("utf-8")

    if args.server:
        from .client import KernforgeClient

        with KernforgeClient(args.server) as client:
            try:
                emit(client.mask(prefix.decode("utf-8")))
            except ValueError as e:
                logger.error(str(e))
                return 1
        return 0

    engine = ConstraintEngine(load_vocab(args, config))
    try:
        state = state_after(prefix)
    except IllegalAdvance as e:
        logger.error(f"Prefix is not in the decoder language: {e}")
        return 1
    allowed = engine.mask(state)
    emit(
        MaskLine(
            prefix_bytes=len(prefix),
            allowed=engine.allowed_ids(state),
            eos_allowed=bool(allowed[EOS_ID]),
            terminated=state.terminated,
        )
    )
    return 0


_WORKER_VOCABS: dict[str, BpeVocab] = {}


def _simulate_job(job: tuple) -> tuple[SimulateLine, int]:
    vocab_path, mode, rule, seed, constrained, max_length, replay_ids = job
    vocab = _WORKER_VOCABS.get(vocab_path)
    if vocab is None:
        vocab = _WORKER_VOCABS[vocab_path] = BpeVocab.load(vocab_path)
    if mode == "replay":
        source = LogitSource.replay(replay_ids)
    elif mode == "adversarial":
        source = LogitSource.adversarial(rule, seed)
    else:
        source = LogitSource.uniform(seed)
    run = run_decode(source, vocab, constrained, max_length)
    line = SimulateLine(
        seed=seed,
        mode=mode,
        rule=rule if mode == "adversarial" else None,
        constrained=constrained,
        tokens=len(run.tokens),
        terminated_by=run.terminated_by,
        valid=run.valid,
    )
    return line, repeated_window(run.tokens)


def cmd_simulate(args, config: Config) -> int:
    vocab = load_vocab(args, config)
    vocab_path = args.vocab or config.vocab_path
    _WORKER_VOCABS[vocab_path] = vocab
    if args.mode == "adversarial" and args.rule not in ADVERSARIAL_RULES:
        raise UsageError(f"--rule must be one of {', '.join(ADVERSARIAL_RULES)}")
    replay_ids: tuple[int, ...] = ()
    if args.mode == "replay":
        if not args.replay:
            raise UsageError("--mode replay needs --replay FILE")
        replay_ids = tuple(vocab.encode(Path(args.replay).read_bytes()))

    max_length = args.max_length or config.max_length
    jobs = [
        (vocab_path, args.mode, args.rule, seed, args.constrained, max_length, replay_ids)
        for seed in range(args.seed, args.seed + args.seeds)
    ]
    results = parallel_map(_simulate_job, jobs, args.workers or config.workers)
    for line, _ in results:
        emit(line)

    lines = [line for line, _ in results]
    failures = sum(
        1 for line in lines if line.constrained and line.terminated_by == "eos" and not line.valid
    )
    logger.info(f"Simulated {len(lines)} runs, {failures} invalid constrained outputs")
    if args.summary and lines:
        target = len(replay_ids) or args.target_length
        runaway = sum(1 for line in lines if line.tokens > LOOP_FACTOR * target)
        eos = sum(1 for line in lines if line.terminated_by == "eos")
        valid = sum(1 for line in lines if line.valid)
        print(
            f"{len(lines)} runs, {eos} ended at eos, {valid} valid, "
            f"{runaway} longer than {LOOP_FACTOR}x target, "
            f"largest repeated window {max(w for _, w in results)}",
            file=sys.stderr,
        )
    return 1 if failures else 0


def _score_pairs(ref: str, pred: str) -> list[tuple[str, Path, Path | None]]:
    ref_path, pred_path = Path(ref), Path(pred)
    if ref_path.is_file() and pred_path.is_file():
        return [(f"{ref_path.name}:{pred_path.name}", ref_path, pred_path)]
    if ref_path.is_dir() and pred_path.is_dir():
        pairs = []
        for path, relative in iter_inputs([ref]):
            candidate = pred_path / relative
            pairs.append((str(relative), path, candidate if candidate.is_file() else None))
        return pairs
    raise UsageError("--ref and --pred must both be files or both be directories")


def cmd_score(args, config: Config) -> int:
    failed = 0
    scored: list[ScoreLine] = []
    cers: list[Fraction] = []
    neds: list[Fraction] = []
    for pair, ref_path, pred_path in _score_pairs(args.ref, args.pred):
        if pred_path is None:
            logger.warning(f"{pair}: no prediction, scoring it as empty")
        try:
            reference = decode_kern_bytes(ref_path.read_bytes())
            prediction = ""
            if pred_path:
                prediction = pred_path.read_bytes().decode("utf-8", errors="replace")
            report = score_texts(reference, prediction, pair)
        except (KernError, EmptyReference) as e:
            logger.error(f"{pair}: cannot score: {e}")
            failed += 1
            continue
        line = ScoreLine.from_report(pair, report)
        emit(line)
        scored.append(line)
        neds.append(report.omr_ned)
        if report.cer is not None:
            cers.append(report.cer)

    if args.aggregate and scored:
        emit(
            AggregateLine(
                pairs=len(scored),
                mean_cer=percent(sum(cers, Fraction(0)) / len(cers)) if cers else None,
                mean_omr_ned=percent(sum(neds, Fraction(0)) / len(neds)),
            )
        )
    return 1 if failed else 0


def cmd_serve(args, config: Config) -> int:
    from .server import run_standalone

    run_standalone(
        host=args.host or config.host,
        port=args.port or config.port,
        vocab_path=args.vocab or config.vocab_path,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kernforge", description="Deterministic **kern data engine for OMR training targets"
    )
    parser.add_argument("--log-level", default=None, help="Logging level (default INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, handler, help_text: str, workers: bool = False, summary: bool = False):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(handler=handler)
        if workers:
            p.add_argument("--workers", type=int, default=None, help="Worker processes")
        if summary:
            p.add_argument("--summary", action="store_true", help="Human summary on stderr")
        return p

    p = add("validate", cmd_validate, "Check files against the corpus rules", True, True)
    p.add_argument("paths", nargs="+")
    p.add_argument("--structural", action="store_true", help="Structural rules only")

    p = add("filter", cmd_filter, "Filter a corpus, optionally copying accepted files", True, True)
    p.add_argument("paths", nargs="+")
    p.add_argument("--out", default=None, help="Directory receiving accepted files")

    p = add("normalize", cmd_normalize, "Rewrite files into normal form", True, True)
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", default=None, help="Output directory (report only when omitted)")

    p = add("bpe-train", cmd_bpe_train, "Train a split-space BPE vocabulary")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True, help="Vocabulary JSON file to write")
    p.add_argument("--vocab-size", type=int, default=None)
    p.add_argument("--min-frequency", type=int, default=2)

    p = add("bpe-encode", cmd_bpe_encode, "Encode files into token ids")
    p.add_argument("paths", nargs="+")
    p.add_argument("--vocab", default=None)

    p = add("bpe-decode", cmd_bpe_decode, "Decode JSONL id lines back into text")
    p.add_argument("inputs", nargs="*", default=["-"])
    p.add_argument("--vocab", default=None)

    p = add("mask", cmd_mask, "Allowed token ids after a prefix")
    p.add_argument("--vocab", default=None)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--prefix", default="", help="Prefix text")
    group.add_argument("--prefix-file", default=None, help="File holding the exact prefix bytes")
    p.add_argument("--server", default=None, help="Ask a running kernforge server instead")

    p = add("simulate", cmd_simulate, "Simulate greedy decoding", True, True)
    p.add_argument("--vocab", default=None)
    p.add_argument("--mode", choices=MODES, default="uniform")
    p.add_argument("--rule", default=None, help=f"One of {', '.join(ADVERSARIAL_RULES)}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1, help="Number of consecutive seeds")
    p.add_argument("--constrained", action="store_true")
    p.add_argument("--max-length", type=int, default=None)
    p.add_argument("--replay", default=None, help="Kern file to replay")
    p.add_argument("--target-length", type=int, default=512)

    p = add("score", cmd_score, "CER and OMR-NED of predictions")
    p.add_argument("--ref", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--aggregate", action="store_true", help="Append the corpus mean")

    p = add("serve", cmd_serve, "Run the HTTP and websocket service")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--vocab", default=None)

    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        config = Config.from_env()
    except ValueError as e:
        print(f"kernforge: {e}", file=sys.stderr)
        return 2

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    logging.basicConfig(
        level=(args.log_level or config.log_level).upper(),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args, config)
    except UsageError as e:
        print(f"kernforge: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
