"""Batch command-line interface.

Subcommands: retrieve, tag, build-rlm, correct, build-astar, evaluate,
stats.  Every command is a pure function of its inputs, config, and seeds:
rerunning writes byte-identical outputs, each with a sidecar manifest.

Exit codes: 0 success, 1 unexpected failure, 2 configuration problem,
3 dataset/schema problem, 4 romanization problem, 5 backend problem.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import __version__
from .backend import Backend, Mode, SamplingParams
from .config import (
    PipelineConfig,
    default_config,
    load_config,
)
from .correction import (
    CorrectionRequest,
    CorrectionResult,
    ModelResponse,
    PromptTemplates,
    apply_corrections,
    correct_span,
    render_prompt,
    run_stats,
)
from .dataio import (
    DatasetRecord,
    dump_json_line,
    load_dataset,
    sha256_bytes,
    write_jsonl_atomic,
    write_manifest,
    write_text_atomic,
)
from .errors import (
    BackendError,
    BothEmptyError,
    ConfigError,
    DatasetError,
    EntcorrError,
    GranularityMismatchError,
    UnknownCharacterError,
)
from .metrics import measure, merge_reports, ner_match_counts
from .ner import EntitySpan, TaggedUtterance, align_tags_to_hypothesis, \
    dictionary_tagger, extract_spans, build_rlm_example, tags_from_spans
from .repository import EntityType, retrieve_top_k
from .selftrain import (
    ProblemRecord,
    build_preference_pairs,
    classify_problems,
)


class Runtime:
    """Loaded config plus lazily constructed pipeline components."""

    def __init__(self, config: PipelineConfig):
        self.config = config

    @cached_property
    def config_hash(self) -> str:
        # hash of the effective settings (not the file), so flag overrides
        # are visible in manifests; base_dir is machine-local and excluded
        payload = dataclasses.asdict(self.config)
        payload.pop("base_dir", None)
        return sha256_bytes(
            json.dumps(payload, ensure_ascii=False, sort_keys=True).encode("utf-8"))

    @cached_property
    def dictionary(self):
        return self.config.load_dictionary()

    @cached_property
    def repository(self):
        return self.config.load_repository(self.dictionary)

    @cached_property
    def templates(self) -> PromptTemplates:
        return PromptTemplates.from_file(self.config.templates_path())

    @cached_property
    def grammar(self):
        return self.config.grammar.to_grammar()

    @cached_property
    def backend(self) -> Backend:
        return self.config.make_backend()

    @cached_property
    def sampling(self) -> SamplingParams:
        return SamplingParams(
            temperature=self.config.correction.temperature,
            max_tokens=self.config.correction.max_tokens,
        )


def _build_runtime(args: argparse.Namespace) -> Runtime:
    if args.config:
        config, _raw = load_config(args.config)
    else:
        config = default_config()
    updates = {}
    if args.jobs is not None:
        updates["jobs"] = args.jobs
    if args.seed is not None:
        updates["seed"] = args.seed
    if getattr(args, "dataset", None):
        updates["paths"] = dataclasses.replace(
            config.paths, dataset=str(Path(args.dataset).resolve()))
    if updates:
        config = dataclasses.replace(config, **updates)
    return Runtime(config)


def _parallel_map(fn: Callable, items: Sequence, jobs: int) -> list:
    """Apply fn keeping input order; thread pool only when it helps."""
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _emit(args: argparse.Namespace, runtime: Runtime, lines: Iterable[dict],
          inputs: dict[str, Path], output: str | None) -> None:
    """Write JSONL to the output path (with manifest) or print to stdout."""
    rendered = "".join(dump_json_line(obj) + "\n" for obj in lines)
    if output:
        write_text_atomic(output, rendered)
        write_manifest(output, __version__, runtime.config_hash, inputs,
                       seed=runtime.config.seed)
    else:
        sys.stdout.write(rendered)


def _print_summary(args: argparse.Namespace, summary: dict) -> None:
    if args.format == "json":
        print(json.dumps(summary, ensure_ascii=False, indent=2))
    else:
        for key, value in summary.items():
            print(f"{key}: {value}")


# ---------------------------------------------------------------- retrieve

def cmd_retrieve(args: argparse.Namespace) -> int:
    runtime = _build_runtime(args)
    config = runtime.config
    if args.query is not None and args.queries:
        raise ConfigError("pass a query argument or --queries, not both")
    if args.query is not None:
        queries = [args.query]
        inputs: dict[str, Path] = {}
    elif args.queries:
        qpath = Path(args.queries)
        if not qpath.exists():
            raise ConfigError(f"queries file does not exist: {qpath}")
        queries = [q.strip() for q in qpath.read_text(encoding="utf-8").splitlines()
                   if q.strip()]
        inputs = {"queries": qpath}
    else:
        raise ConfigError("nothing to retrieve: pass a query or --queries FILE")

    k = args.k if args.k is not None else config.retrieval.k
    type_filter = None
    filter_name = args.type or config.retrieval.type_filter
    if filter_name:
        type_filter = EntityType.parse(filter_name)

    results = []
    for query in queries:
        ranked = retrieve_top_k(query, runtime.repository, k, type_filter)
        results.append({
            "query": query,
            "candidates": [
                {
                    "rank": rank,
                    "surface": item.entity.surface,
                    "type": item.entity.type_label.value,
                    "probability": round(item.probability, 6),
                    "similarity": round(item.similarity, 6),
                }
                for rank, item in enumerate(ranked.items, start=1)
            ],
        })

    inputs.update({
        "pinyin_dict": config.pinyin_dict_path(),
        "entities": config.entities_path(),
    })
    if args.output:
        write_text_atomic(args.output, json.dumps(
            {"results": results}, ensure_ascii=False, indent=2) + "\n")
        write_manifest(args.output, __version__, runtime.config_hash, inputs,
                       seed=config.seed)
    elif args.format == "json":
        print(json.dumps({"results": results}, ensure_ascii=False, indent=2))
    else:
        for block in results:
            print(f"query: {block['query']}")
            for cand in block["candidates"]:
                print(f"  {cand['rank']}. {cand['surface']}  {cand['type']}  "
                      f"prob={cand['probability']:.4f}  sim={cand['similarity']:.4f}")
    return 0


# --------------------------------------------------------------------- tag

def cmd_tag(args: argparse.Namespace) -> int:
    runtime = _build_runtime(args)
    config = runtime.config
    records = load_dataset(config.dataset_path())

    def tag_one(record: DatasetRecord) -> dict:
        if args.text_field == "reference":
            text = record.reference
        else:
            text = record.best_hypothesis() or record.reference
        tags = dictionary_tagger(
            text, runtime.repository,
            threshold=config.tagger.threshold, max_len=config.tagger.max_len)
        spans = extract_spans(tags, text)
        return {
            "id": record.id,
            "text": text,
            "tags": tags,
            "spans": [
                {"start": s.start, "end": s.end, "label": s.label, "text": s.text}
                for s in spans
            ],
        }

    lines = _parallel_map(tag_one, records, config.jobs)
    inputs = {
        "pinyin_dict": config.pinyin_dict_path(),
        "entities": config.entities_path(),
        "dataset": config.dataset_path(),
    }
    _emit(args, runtime, lines, inputs, args.output)

    summary = {
        "records": len(records),
        "spans": sum(len(line["spans"]) for line in lines),
    }
    if args.text_field == "reference":
        tp = n_pred = n_gold = 0
        for record, line in zip(records, lines):
            predicted = [EntitySpan(s["start"], s["end"], s["label"])
                         for s in line["spans"]]
            t, np_, ng = ner_match_counts(predicted, record.entities)
            tp, n_pred, n_gold = tp + t, n_pred + np_, n_gold + ng
        recall = tp / n_gold if n_gold else 0.0
        precision = tp / n_pred if n_pred else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall else 0.0)
        summary.update({
            "ner_recall": round(recall, 6),
            "ner_precision": round(precision, 6),
            "ner_f1": round(f1, 6),
        })
    _print_summary(args, summary)
    return 0


# --------------------------------------------------------------- build-rlm

def cmd_build_rlm(args: argparse.Namespace) -> int:
    runtime = _build_runtime(args)
    config = runtime.config
    records = load_dataset(config.dataset_path())

    lines: list[dict] = []
    emitted = 0
    for record in records:
        tagged_ref = record.tagged_reference()
        variants: list[TaggedUtterance] = [tagged_ref]
        for hyp in record.hypothesis_variants():
            projected = align_tags_to_hypothesis(tagged_ref, hyp)
            variants.append(TaggedUtterance(hyp, tuple(projected)))
        for tagged in variants:
            example = build_rlm_example(
                tagged, mask_fraction=config.rlm.mask_fraction,
                rng_seed=config.seed + emitted)
            lines.append(example.to_json_dict())
            emitted += 1

    inputs = {"dataset": config.dataset_path()}
    _emit(args, runtime, lines, inputs, args.output)
    _print_summary(args, {"records": len(records), "examples": emitted})
    return 0


# ----------------------------------------------------------------- correct

def _correct_record(
    record: DatasetRecord, runtime: Runtime,
) -> tuple[dict, list[CorrectionResult]]:
    config = runtime.config
    hyp = record.best_hypothesis()
    if hyp is None:
        return {"id": record.id, "hypothesis": None, "corrected": None,
                "results": []}, []
    tags = dictionary_tagger(
        hyp, runtime.repository,
        threshold=config.tagger.threshold, max_len=config.tagger.max_len)
    spans = extract_spans(tags, hyp)
    results: list[CorrectionResult] = []
    log_entries: list[dict] = []
    for i, span in enumerate(spans):
        candidates = retrieve_top_k(span.text, runtime.repository,
                                    config.retrieval.k)
        request = CorrectionRequest(
            hypothesis=hyp,
            span=span,
            candidates=candidates,
            mode_directive=config.correction.mode_directive(),
        )
        result = correct_span(
            request, runtime.backend, runtime.templates, runtime.grammar,
            runtime.sampling, request_id=f"{record.id}#{i}")
        results.append(result)
        entry = result.to_json_dict()
        entry["span_text"] = span.text
        entry["candidates"] = list(candidates.surfaces())
        entry["prompt"] = render_prompt(request, runtime.templates,
                                        runtime.grammar)
        log_entries.append(entry)
    corrected = apply_corrections(hyp, [(r.span, r.chosen) for r in results])
    return {
        "id": record.id,
        "hypothesis": hyp,
        "corrected": corrected,
        "results": log_entries,
    }, results


def cmd_correct(args: argparse.Namespace) -> int:
    runtime = _build_runtime(args)
    config = runtime.config
    records = load_dataset(config.dataset_path())

    outcomes = _parallel_map(
        lambda record: _correct_record(record, runtime), records, config.jobs)
    lines = [line for line, _ in outcomes]
    all_results = [r for _, results in outcomes for r in results]

    inputs = {
        "pinyin_dict": config.pinyin_dict_path(),
        "entities": config.entities_path(),
        "templates": config.templates_path(),
        "dataset": config.dataset_path(),
    }
    if config.backend.kind == "scripted":
        inputs["backend_fixture"] = config.backend_fixture_path()
    _emit(args, runtime, lines, inputs, args.output)

    summary = {
        "records": len(records),
        "spans_corrected": len(all_results),
        "changed": sum(1 for line in lines
                       if line["corrected"] is not None
                       and line["corrected"] != line["hypothesis"]),
    }
    if all_results:
        stats = run_stats(all_results)
        summary.update({
            "mean_token_count": stats.mean_token_count,
            "nothink_ratio": stats.nothink_ratio,
        })
    _print_summary(args, summary)
    return 0


# ------------------------------------------------------------- build-astar

def _problems_from_record(
    record: DatasetRecord, runtime: Runtime,
) -> tuple[list[ProblemRecord], int]:
    """Tagged hypothesis spans paired with the gold surface they cover."""
    config = runtime.config
    hyp = record.best_hypothesis()
    if hyp is None or not record.entities:
        return [], 0
    # project gold spans onto the hypothesis, labelling each by index so a
    # detected span can be traced back to the entity it overlaps
    indexed = [dataclasses.replace(s, label=str(i), text=None)
               for i, s in enumerate(record.entities)]
    ref_tags = tags_from_spans(len(record.reference), indexed)
    projected = extract_spans(align_tags_to_hypothesis(
        TaggedUtterance(record.reference, tuple(ref_tags)), hyp))
    tags = dictionary_tagger(
        hyp, runtime.repository,
        threshold=config.tagger.threshold, max_len=config.tagger.max_len)
    detected = extract_spans(tags, hyp)
    problems: list[ProblemRecord] = []
    unmatched = 0
    for j, span in enumerate(detected):
        covering = [p for p in projected
                    if p.start < span.end and span.start < p.end]
        if not covering:
            unmatched += 1
            continue
        gold = record.entities[int(covering[0].label)]
        candidates = retrieve_top_k(span.text, runtime.repository,
                                    config.retrieval.k)
        problems.append(ProblemRecord(
            id=f"{record.id}#{j}",
            hypothesis=hyp,
            ground_truth=gold.text,
            candidates=candidates,
            span=span,
        ))
    return problems, unmatched


def cmd_build_astar(args: argparse.Namespace) -> int:
    runtime = _build_runtime(args)
    config = runtime.config
    records = load_dataset(config.dataset_path())

    problems: list[ProblemRecord] = []
    unmatched = 0
    for record in records:
        found, missed = _problems_from_record(record, runtime)
        problems.extend(found)
        unmatched += missed

    classification = classify_problems(
        problems, runtime.backend, runtime.templates, runtime.grammar,
        runtime.sampling, hint_attempts=config.selftrain.hint_attempts,
        jobs=config.jobs)
    balance = config.selftrain.balance if args.balance is None else args.balance
    pairs = build_preference_pairs(
        classification.classified, balance=balance, rng_seed=config.seed,
        backend=runtime.backend, templates=runtime.templates,
        grammar=runtime.grammar, sampling=runtime.sampling)

    inputs = {
        "pinyin_dict": config.pinyin_dict_path(),
        "entities": config.entities_path(),
        "templates": config.templates_path(),
        "dataset": config.dataset_path(),
    }
    if config.backend.kind == "scripted":
        inputs["backend_fixture"] = config.backend_fixture_path()
    _emit(args, runtime, [p.to_json_dict() for p in pairs], inputs, args.output)

    discard_path = args.discard_output
    if discard_path is None and args.output:
        discard_path = str(Path(args.output).with_suffix(".discards.jsonl"))
    if discard_path:
        write_jsonl_atomic(discard_path,
                           (d.to_json_dict() for d in classification.discarded))
        write_manifest(discard_path, __version__, runtime.config_hash, inputs,
                       seed=config.seed)

    _print_summary(args, {
        "problems": len(problems),
        "unmatched_spans": unmatched,
        "simple": len(classification.simple),
        "challenging": len(classification.challenging),
        "formidable": len(classification.formidable),
        "discarded": len(classification.discarded),
        "backend_failures": len(classification.failures),
        "pairs": len(pairs),
    })
    return 0


# ---------------------------------------------------------------- evaluate

def cmd_evaluate(args: argparse.Namespace) -> int:
    runtime = _build_runtime(args)
    config = runtime.config
    records = load_dataset(config.dataset_path())

    corrected_map: dict[str, str] = {}
    inputs = {"dataset": config.dataset_path()}
    if args.corrected:
        cpath = Path(args.corrected)
        if not cpath.exists():
            raise ConfigError(f"corrected file does not exist: {cpath}")
        inputs["corrected"] = cpath
        for lineno, raw in enumerate(
                cpath.read_text(encoding="utf-8").splitlines(), start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"invalid JSON: {exc.msg}", path=cpath,
                                   line=lineno) from exc
            if not isinstance(obj, dict) or "id" not in obj:
                raise DatasetError("corrected lines need an 'id'", path=cpath,
                                   line=lineno)
            text = obj.get("corrected")
            if isinstance(text, str):
                corrected_map[obj["id"]] = text

    reports = []
    for record in records:
        hyp = corrected_map.get(record.id)
        if hyp is None:
            hyp = record.best_hypothesis()
        if hyp is None:
            hyp = record.reference
        reports.append(measure(record.reference, hyp, record.entities))
    overall = merge_reports(reports)

    if args.output:
        write_text_atomic(args.output, json.dumps(
            overall.to_json_dict(), ensure_ascii=False, indent=2,
            sort_keys=True) + "\n")
        write_manifest(args.output, __version__, runtime.config_hash, inputs,
                       seed=config.seed)
    if args.format == "json":
        print(json.dumps(overall.to_json_dict(), ensure_ascii=False, indent=2))
    else:
        print(f"utterances: {len(reports)}")
        print(f"cer: {overall.cer:.6f}  "
              f"({overall.total.errors} edits / {overall.total.ref_chars} chars)")
        print(f"ne_cer: {overall.ne_cer:.6f}  "
              f"({overall.entity.errors} edits / {overall.entity.ref_chars} chars)")
        print(f"nne_cer: {overall.nne_cer:.6f}  "
              f"({overall.non_entity.errors} edits / "
              f"{overall.non_entity.ref_chars} chars)")
        print(f"ne_recall: {overall.ne_recall:.6f}  "
              f"({overall.entities_recalled}/{overall.entities_total})")
        if overall.entity_region_empty or overall.no_spans:
            print("flags: "
                  + ", ".join(name for name, on in [
                      ("entity_region_empty", overall.entity_region_empty),
                      ("no_spans", overall.no_spans)] if on))
    return 0


# ------------------------------------------------------------------- stats

def _responses_from_log(path: Path) -> list[ModelResponse]:
    responses = []
    for lineno, raw in enumerate(
            path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"invalid JSON: {exc.msg}", path=path,
                               line=lineno) from exc
        if isinstance(obj, dict) and "results" in obj:
            payloads = [r.get("response", r) for r in obj["results"]]
        elif isinstance(obj, dict) and "response" in obj:
            payloads = [obj["response"]]
        elif isinstance(obj, dict) and "mode" in obj:
            payloads = [obj]
        else:
            raise DatasetError("line carries no response records", path=path,
                               line=lineno)
        for payload in payloads:
            try:
                mode = Mode(payload["mode"])
                token_count = int(payload["token_count"])
            except (KeyError, ValueError, TypeError) as exc:
                raise DatasetError(f"bad response record: {exc}", path=path,
                                   line=lineno) from exc
            responses.append(ModelResponse(
                mode=mode,
                reasoning=payload.get("reasoning",
                                      "" if mode is Mode.THINK else None),
                answer=payload.get("answer", ""),
                raw=payload.get("raw", ""),
                token_count=token_count,
                token_count_from_backend=bool(
                    payload.get("token_count_from_backend", True)),
            ))
    return responses


def cmd_stats(args: argparse.Namespace) -> int:
    runtime = _build_runtime(args)
    path = Path(args.input)
    if not path.exists():
        raise ConfigError(f"input log does not exist: {path}")
    responses = _responses_from_log(path)
    stats = run_stats(responses)
    payload = stats.to_json_dict()
    if args.output:
        write_text_atomic(args.output, json.dumps(
            payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n")
        write_manifest(args.output, __version__, runtime.config_hash,
                       {"log": path}, seed=runtime.config.seed)
    if args.format == "json":
        print(json.dumps(payload, ensure_ascii=False, indent=2))
    else:
        print(f"responses: {stats.total} "
              f"(think {stats.think_count}, nothink {stats.nothink_count})")
        print(f"mean_token_count: {stats.mean_token_count}")
        print(f"nothink_ratio: {stats.nothink_ratio}")
        print(f"char_count_fallbacks: {stats.char_count_fallbacks}")
    return 0


# -------------------------------------------------------------------- main

def _make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config YAML "
                        "(builtin:desk_config.yaml for the bundled demo)")
    common.add_argument("--jobs", type=int, help="parallel workers")
    common.add_argument("--seed", type=int, help="base random seed")
    common.add_argument("--format", choices=("text", "json"), default="text",
                        help="stdout format")

    parser = argparse.ArgumentParser(
        prog="entcorr",
        description="Phonetic entity correction pipeline for ASR transcripts.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("retrieve", parents=[common],
                       help="rank repository entities against a query span")
    p.add_argument("query", nargs="?", help="span text to look up")
    p.add_argument("--queries", help="file with one query per line")
    p.add_argument("--k", type=int, help="candidates per query")
    p.add_argument("--type", help="restrict to one entity type (PER/LOC/ORG)")
    p.add_argument("--output", help="write JSON results here instead of stdout")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("tag", parents=[common],
                       help="tag dataset text with the dictionary tagger")
    p.add_argument("--dataset", help="dataset JSONL (overrides config)")
    p.add_argument("--output", help="tagged JSONL output path")
    p.add_argument("--text-field", choices=("hypothesis", "reference"),
                   default="hypothesis", help="which text to tag")
    p.set_defaults(func=cmd_tag)

    p = sub.add_parser("build-rlm", parents=[common],
                       help="emit masked recognizer training examples")
    p.add_argument("--dataset", help="dataset JSONL (overrides config)")
    p.add_argument("--output", help="examples JSONL output path")
    p.set_defaults(func=cmd_build_rlm)

    p = sub.add_parser("correct", parents=[common],
                       help="correct entity spans in dataset hypotheses")
    p.add_argument("--dataset", help="dataset JSONL (overrides config)")
    p.add_argument("--output", help="correction log JSONL output path")
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("build-astar", parents=[common],
                       help="build preference pairs by difficulty probing")
    p.add_argument("--dataset", help="dataset JSONL (overrides config)")
    p.add_argument("--output", help="preference pairs JSONL output path")
    p.add_argument("--discard-output",
                   help="discard report path (default: alongside --output)")
    p.add_argument("--balance", action=argparse.BooleanOptionalAction,
                   default=None,
                   help="force the 50/50 orientation mix on or off")
    p.set_defaults(func=cmd_build_astar)

    p = sub.add_parser("evaluate", parents=[common],
                       help="score hypotheses (or corrections) against references")
    p.add_argument("--dataset", help="dataset JSONL (overrides config)")
    p.add_argument("--corrected", help="correction log JSONL to score")
    p.add_argument("--output", help="write the JSON report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", parents=[common],
                       help="summarize response modes and token counts")
    p.add_argument("--input", required=True, help="correction log JSONL")
    p.add_argument("--output", help="write the JSON summary here")
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = _make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DatasetError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return 3
    except (UnknownCharacterError, GranularityMismatchError, BothEmptyError) as exc:
        print(f"romanization error: {exc}", file=sys.stderr)
        return 4
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 5
    except EntcorrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
