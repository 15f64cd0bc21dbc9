"""Dataset JSONL loading, atomic output writing, and run manifests.

Output files are written to a temp path in the destination directory and
renamed into place, so a crashed run never leaves a truncated file.  Each
written artifact gets a sidecar manifest (config hash, input/output hashes,
seed, tool version) with no timestamps, keeping reruns byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import DatasetError
from .ner import EntitySpan, TaggedUtterance, tags_from_spans

_ENTITY_TYPES = ("PER", "LOC", "ORG")


@dataclass(frozen=True)
class DatasetRecord:
    """One utterance: reference transcript, optional recognizer output,
    and gold entity offsets into the reference."""

    id: str
    reference: str
    hypothesis: str | None
    nbest: tuple[str, ...] | None
    entities: tuple[EntitySpan, ...]

    def best_hypothesis(self) -> str | None:
        if self.hypothesis is not None:
            return self.hypothesis
        if self.nbest:
            return self.nbest[0]
        return None

    def hypothesis_variants(self) -> tuple[str, ...]:
        """Every distinct recognizer output, primary first."""
        seen: list[str] = []
        for text in ([self.hypothesis] if self.hypothesis is not None else []) + list(
                self.nbest or ()):
            if text not in seen:
                seen.append(text)
        return tuple(seen)

    def tagged_reference(self) -> TaggedUtterance:
        tags = tags_from_spans(len(self.reference), self.entities)
        return TaggedUtterance(self.reference, tuple(tags))


def _norm(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def _parse_record(obj: dict, path: Path, line: int) -> DatasetRecord:
    def fail(msg: str) -> DatasetError:
        return DatasetError(msg, path=path, line=line)

    if not isinstance(obj, dict):
        raise fail("each line must be a JSON object")
    rec_id = obj.get("id")
    if not isinstance(rec_id, str) or not rec_id:
        raise fail("'id' must be a non-empty string")
    reference = obj.get("reference")
    if not isinstance(reference, str) or not reference:
        raise fail(f"record {rec_id}: 'reference' must be a non-empty string")
    reference = _norm(reference)

    hypothesis = obj.get("hypothesis")
    if hypothesis is not None:
        if not isinstance(hypothesis, str):
            raise fail(f"record {rec_id}: 'hypothesis' must be a string or null")
        hypothesis = _norm(hypothesis)

    nbest = obj.get("nbest")
    if nbest is not None:
        if (not isinstance(nbest, list)
                or not all(isinstance(h, str) for h in nbest)):
            raise fail(f"record {rec_id}: 'nbest' must be a list of strings or null")
        nbest = tuple(_norm(h) for h in nbest)

    raw_entities = obj.get("entities", [])
    if not isinstance(raw_entities, list):
        raise fail(f"record {rec_id}: 'entities' must be a list")
    spans: list[EntitySpan] = []
    for ent in raw_entities:
        if not isinstance(ent, dict):
            raise fail(f"record {rec_id}: each entity must be an object")
        start, end, type_label = ent.get("start"), ent.get("end"), ent.get("type")
        if not isinstance(start, int) or not isinstance(end, int):
            raise fail(f"record {rec_id}: entity offsets must be integers")
        if type_label is not None and type_label not in _ENTITY_TYPES:
            raise fail(f"record {rec_id}: entity type must be one of "
                       f"{', '.join(_ENTITY_TYPES)}")
        if not 0 <= start < end <= len(reference):
            raise fail(f"record {rec_id}: entity [{start}, {end}) is outside "
                       f"the {len(reference)}-character reference")
        spans.append(EntitySpan(start, end, type_label, reference[start:end]))
    spans.sort(key=lambda s: s.start)
    for a, b in zip(spans, spans[1:]):
        if b.start < a.end:
            raise fail(f"record {rec_id}: entities [{a.start},{a.end}) and "
                       f"[{b.start},{b.end}) overlap")

    return DatasetRecord(rec_id, reference, hypothesis, nbest, tuple(spans))


def load_dataset(path: str | Path) -> list[DatasetRecord]:
    """Read and validate a JSONL dataset; failures carry the line number."""
    path = Path(path)
    records: list[DatasetRecord] = []
    seen_ids: set[str] = set()
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DatasetError(f"cannot read dataset: {exc}", path=path) from exc
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"invalid JSON: {exc.msg}", path=path,
                               line=lineno) from exc
        record = _parse_record(obj, path, lineno)
        if record.id in seen_ids:
            raise DatasetError(f"duplicate record id {record.id!r}", path=path,
                               line=lineno)
        seen_ids.add(record.id)
        records.append(record)
    if not records:
        raise DatasetError("dataset contains no records", path=path)
    return records


def write_text_atomic(path: str | Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def dump_json_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def write_jsonl_atomic(path: str | Path, objects: Iterable[dict]) -> None:
    write_text_atomic(path, "".join(dump_json_line(o) + "\n" for o in objects))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def manifest_path(output: str | Path) -> Path:
    output = Path(output)
    return output.with_name(output.name + ".manifest.json")


def write_manifest(
    output: str | Path,
    tool_version: str,
    config_hash: str,
    inputs: dict[str, str | Path],
    seed: int | None = None,
) -> Path:
    """Sidecar manifest for one output file.

    Deliberately carries no timestamps or host details: a rerun with the
    same inputs must produce the same manifest bytes.
    """
    output = Path(output)
    manifest = {
        "tool": "entcorr",
        "version": tool_version,
        "config_sha256": config_hash,
        "inputs": {
            name: {"path": str(p), "sha256": sha256_file(p)}
            for name, p in sorted(inputs.items())
        },
        "output": {"path": str(output), "sha256": sha256_file(output)},
    }
    if seed is not None:
        manifest["seed"] = seed
    target = manifest_path(output)
    write_text_atomic(target, json.dumps(manifest, ensure_ascii=False, indent=2,
                                         sort_keys=True) + "\n")
    return target
