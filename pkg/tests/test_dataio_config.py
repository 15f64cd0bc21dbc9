"""Dataset parsing, atomic writes, manifests, and configuration loading."""

from __future__ import annotations

import json
from pathlib import Path

import pytest
from conftest import bundled

from entcorr.backend import HttpBackend, ScriptedBackend
from entcorr.config import (
    AUTH_TOKEN_ENV,
    PipelineConfig,
    config_from_dict,
    default_config,
    load_config,
    resolve_path,
)
from entcorr.correction import ModeDirective
from entcorr.dataio import (
    DatasetRecord,
    dump_json_line,
    load_dataset,
    manifest_path,
    sha256_bytes,
    sha256_file,
    write_jsonl_atomic,
    write_manifest,
    write_text_atomic,
)
from entcorr.errors import ConfigError, DatasetError
from entcorr.ner import EntitySpan
from entcorr.phonetics import Granularity


def write_lines(path: Path, *lines: str) -> Path:
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def record_line(**overrides) -> str:
    obj = {
        "id": "utt-1",
        "reference": "我们今天去峨眉山看风景",
        "hypothesis": "我们今天去鹅没闪看风景",
        "entities": [{"start": 5, "end": 8, "type": "LOC"}],
    }
    obj.update(overrides)
    return json.dumps(obj, ensure_ascii=False)


class TestLoadDataset:
    def test_happy_path(self, tmp_path):
        path = write_lines(tmp_path / "d.jsonl", record_line())
        (record,) = load_dataset(path)
        assert record.id == "utt-1"
        assert record.reference == "我们今天去峨眉山看风景"
        assert record.entities == (EntitySpan(5, 8, "LOC", "峨眉山"),)

    def test_span_text_comes_from_reference(self, tmp_path):
        path = write_lines(tmp_path / "d.jsonl", record_line())
        (record,) = load_dataset(path)
        assert record.entities[0].text == "峨眉山"

    def test_blank_lines_skipped(self, tmp_path):
        path = write_lines(tmp_path / "d.jsonl", record_line(), "", "   ")
        assert len(load_dataset(path)) == 1

    def test_nfc_normalization(self, tmp_path):
        decomposed = "café"
        path = write_lines(
            tmp_path / "d.jsonl",
            json.dumps({"id": "a", "reference": decomposed,
                        "hypothesis": decomposed, "nbest": [decomposed],
                        "entities": []}))
        (record,) = load_dataset(path)
        assert record.reference == "café"
        assert record.hypothesis == "café"
        assert record.nbest == ("café",)

    def test_bundled_corpus_loads(self):
        records = load_dataset(bundled("desk_corpus.jsonl"))
        assert len(records) == 20
        assert all(len(r.entities) == 1 for r in records)

    @pytest.mark.parametrize("line,lineno,needle", [
        ("{not json", 1, "invalid JSON"),
        ('"just a string"', 1, "JSON object"),
        ('{"reference": "x"}', 1, "'id'"),
        ('{"id": "a", "reference": ""}', 1, "reference"),
        ('{"id": "a", "reference": "xy", "hypothesis": 3}', 1, "hypothesis"),
        ('{"id": "a", "reference": "xy", "nbest": "no"}', 1, "nbest"),
        ('{"id": "a", "reference": "xy", "entities": "no"}', 1, "entities"),
        ('{"id": "a", "reference": "xy", "entities": [{"start": "0", "end": 1}]}',
         1, "integers"),
        ('{"id": "a", "reference": "xy", '
         '"entities": [{"start": 0, "end": 1, "type": "GPE"}]}', 1, "type"),
        ('{"id": "a", "reference": "xy", "entities": [{"start": 0, "end": 3}]}',
         1, "outside"),
        ('{"id": "a", "reference": "xy", "entities": [{"start": 1, "end": 1}]}',
         1, "outside"),
        ('{"id": "a", "reference": "xyz", "entities": '
         '[{"start": 0, "end": 2}, {"start": 1, "end": 3}]}', 1, "overlap"),
    ])
    def test_bad_records(self, tmp_path, line, lineno, needle):
        path = write_lines(tmp_path / "d.jsonl", line)
        with pytest.raises(DatasetError, match=needle) as excinfo:
            load_dataset(path)
        assert excinfo.value.line == lineno

    def test_duplicate_id_reports_second_line(self, tmp_path):
        path = write_lines(tmp_path / "d.jsonl", record_line(), record_line())
        with pytest.raises(DatasetError, match="duplicate") as excinfo:
            load_dataset(path)
        assert excinfo.value.line == 2

    def test_empty_dataset_rejected(self, tmp_path):
        path = write_lines(tmp_path / "d.jsonl", "", "")
        with pytest.raises(DatasetError, match="no records"):
            load_dataset(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetError, match="cannot read"):
            load_dataset(tmp_path / "absent.jsonl")


class TestDatasetRecord:
    def make(self, hypothesis, nbest):
        return DatasetRecord("a", "参考", hypothesis, nbest, ())

    def test_best_hypothesis_prefers_primary(self):
        assert self.make("主", ("次",)).best_hypothesis() == "主"
        assert self.make(None, ("次", "再次")).best_hypothesis() == "次"
        assert self.make(None, None).best_hypothesis() is None
        assert self.make(None, ()).best_hypothesis() is None

    def test_variants_dedup_primary_first(self):
        record = self.make("甲", ("乙", "甲", "丙", "乙"))
        assert record.hypothesis_variants() == ("甲", "乙", "丙")
        assert self.make(None, None).hypothesis_variants() == ()

    def test_tagged_reference(self):
        record = DatasetRecord(
            "a", "去峨眉山玩", "x", None,
            (EntitySpan(1, 4, "LOC", "峨眉山"),))
        tagged = record.tagged_reference()
        assert tagged.tags == ("O", "B-LOC", "I-LOC", "I-LOC", "O")


class TestAtomicWrites:
    def test_write_creates_parents_and_no_temp_residue(self, tmp_path):
        target = tmp_path / "deep" / "nested" / "out.txt"
        write_text_atomic(target, "内容")
        assert target.read_text(encoding="utf-8") == "内容"
        assert [p.name for p in target.parent.iterdir()] == ["out.txt"]

    def test_overwrite_replaces(self, tmp_path):
        target = tmp_path / "out.txt"
        write_text_atomic(target, "one")
        write_text_atomic(target, "two")
        assert target.read_text(encoding="utf-8") == "two"

    def test_jsonl_is_compact_unescaped(self, tmp_path):
        target = tmp_path / "out.jsonl"
        write_jsonl_atomic(target, [{"a": 1, "文": "字"}, {"b": [1, 2]}])
        raw = target.read_text(encoding="utf-8")
        assert raw == '{"a":1,"文":"字"}\n{"b":[1,2]}\n'

    def test_dump_json_line(self):
        assert dump_json_line({"k": "值"}) == '{"k":"值"}'

    def test_sha_helpers_agree(self, tmp_path):
        target = tmp_path / "x.bin"
        target.write_bytes(b"abc")
        assert sha256_file(target) == sha256_bytes(b"abc")
        assert sha256_bytes(b"abc").startswith("ba7816bf")


class TestManifest:
    def test_sidecar_naming(self):
        assert manifest_path("out/corrected.jsonl").name == (
            "corrected.jsonl.manifest.json")

    def test_contents_and_determinism(self, tmp_path):
        output = tmp_path / "out.jsonl"
        inp = tmp_path / "in.jsonl"
        write_text_atomic(output, "data\n")
        write_text_atomic(inp, "input\n")
        first = write_manifest(output, "0.1.0", "cfg-hash",
                               {"dataset": inp}, seed=7)
        manifest = json.loads(first.read_text(encoding="utf-8"))
        assert manifest["tool"] == "entcorr"
        assert manifest["version"] == "0.1.0"
        assert manifest["config_sha256"] == "cfg-hash"
        assert manifest["seed"] == 7
        assert manifest["inputs"]["dataset"]["sha256"] == sha256_file(inp)
        assert manifest["output"]["sha256"] == sha256_file(output)
        assert not any("time" in k or "date" in k for k in manifest)
        bytes_one = first.read_bytes()
        write_manifest(output, "0.1.0", "cfg-hash", {"dataset": inp}, seed=7)
        assert first.read_bytes() == bytes_one

    def test_seed_omitted_when_none(self, tmp_path):
        output = tmp_path / "out.txt"
        write_text_atomic(output, "x")
        path = write_manifest(output, "0.1.0", "h", {})
        assert "seed" not in json.loads(path.read_text(encoding="utf-8"))

    def test_inputs_sorted_by_name(self, tmp_path):
        output = tmp_path / "out.txt"
        write_text_atomic(output, "x")
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        write_text_atomic(a, "a")
        write_text_atomic(b, "b")
        path = write_manifest(output, "0.1.0", "h", {"zeta": b, "alpha": a})
        raw = path.read_text(encoding="utf-8")
        assert raw.index('"alpha"') < raw.index('"zeta"')


class TestResolvePath:
    def test_builtin(self, tmp_path):
        path = resolve_path("builtin:templates.txt", tmp_path)
        assert path.name == "templates.txt"
        assert path.exists()

    def test_relative_resolved_against_base(self, tmp_path):
        target = tmp_path / "f.txt"
        target.write_text("x", encoding="utf-8")
        assert resolve_path("f.txt", tmp_path) == target

    def test_absolute_passes_through(self, tmp_path):
        target = tmp_path / "f.txt"
        target.write_text("x", encoding="utf-8")
        assert resolve_path(str(target), Path("/elsewhere")) == target

    def test_missing_raises(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            resolve_path("ghost.txt", tmp_path)


class TestPipelineConfig:
    def test_default_config_is_usable(self):
        config = default_config()
        assert config.backend.kind == "scripted"
        assert config.pinyin_dict_path().exists()
        assert config.entities_path().exists()
        assert config.templates_path().exists()
        assert config.backend_fixture_path().exists()

    def test_dataset_required_for_dataset_path(self):
        with pytest.raises(ConfigError, match="dataset"):
            default_config().dataset_path()

    @pytest.mark.parametrize("section,key,value,needle", [
        ("retrieval", "k", 0, "retrieval.k"),
        ("rlm", "mask_fraction", 1.5, "mask_fraction"),
        ("tagger", "threshold", 0.0, "threshold"),
        ("selftrain", "hint_attempts", 0, "hint_attempts"),
        ("selftrain", "beta", 0.0, "beta"),
        ("backend", "kind", "psychic", "backend.kind"),
    ])
    def test_section_validation(self, section, key, value, needle):
        with pytest.raises(ConfigError, match=needle):
            config_from_dict({section: {key: value}}, Path.cwd())

    def test_scalar_validation(self):
        with pytest.raises(ConfigError, match="jobs"):
            config_from_dict({"jobs": 0}, Path.cwd())
        with pytest.raises(ConfigError, match="integer"):
            config_from_dict({"seed": "soon"}, Path.cwd())

    def test_http_requires_url(self):
        with pytest.raises(ConfigError, match="url"):
            config_from_dict({"backend": {"kind": "http"}}, Path.cwd())

    def test_scripted_requires_fixture(self):
        with pytest.raises(ConfigError, match="fixture"):
            config_from_dict(
                {"paths": {"backend_fixture": None}}, Path.cwd())

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="top-level"):
            config_from_dict({"retrieva": {}}, Path.cwd())
        with pytest.raises(ConfigError, match="unknown key"):
            config_from_dict({"retrieval": {"kk": 3}}, Path.cwd())

    def test_section_must_be_mapping(self):
        with pytest.raises(ConfigError, match="mapping"):
            config_from_dict({"retrieval": 3}, Path.cwd())
        with pytest.raises(ConfigError, match="mapping"):
            config_from_dict(["not", "a", "dict"], Path.cwd())

    def test_granularity_parsing(self):
        config = config_from_dict({"phonetics": {"granularity": "syllable"}},
                                  Path.cwd())
        assert config.phonetics.granularity_enum() is Granularity.SYLLABLE
        bad = config_from_dict({"phonetics": {"granularity": "letters"}},
                               Path.cwd())
        with pytest.raises(ConfigError):
            bad.phonetics.granularity_enum()

    def test_mode_directive_parsing(self):
        config = config_from_dict({"correction": {"mode": "think"}}, Path.cwd())
        assert config.correction.mode_directive() is ModeDirective.FORCE_THINK
        bad = config_from_dict({"correction": {"mode": "loud"}}, Path.cwd())
        with pytest.raises(ConfigError):
            bad.correction.mode_directive()

    def test_grammar_section(self):
        config = config_from_dict({"grammar": {"answer_open": "<<"}}, Path.cwd())
        assert config.grammar.to_grammar().answer_open == "<<"
        assert config.grammar.to_grammar().think_open == "<think>"

    def test_repository_and_dictionary_load(self):
        config = default_config()
        repo = config.load_repository()
        assert len(repo) == 20

    def test_make_scripted_backend(self):
        backend = default_config().make_backend()
        assert isinstance(backend, ScriptedBackend)

    def test_make_http_backend_reads_token_env(self, monkeypatch):
        config = config_from_dict(
            {"backend": {"kind": "http", "url": "http://svc.test/v1"}},
            Path.cwd())
        monkeypatch.setenv(AUTH_TOKEN_ENV, "tok")
        backend = config.make_backend()
        assert isinstance(backend, HttpBackend)
        assert backend.config.auth_token == "tok"
        backend.close()
        monkeypatch.delenv(AUTH_TOKEN_ENV)
        backend = config.make_backend()
        assert backend.config.auth_token is None
        backend.close()


class TestLoadConfig:
    def test_builtin_desk_config(self):
        config, raw = load_config("builtin:desk_config.yaml")
        assert config.paths.dataset == "builtin:desk_corpus.jsonl"
        assert config.dataset_path().exists()
        assert raw == bundled("desk_config.yaml").read_bytes()

    def test_relative_paths_resolve_against_config_dir(self, tmp_path):
        (tmp_path / "sub").mkdir()
        dict_file = tmp_path / "sub" / "py.tsv"
        dict_file.write_text("我\two3\n们\tmen5\n", encoding="utf-8")
        config_file = tmp_path / "sub" / "conf.yaml"
        config_file.write_text("paths:\n  pinyin_dict: py.tsv\n",
                               encoding="utf-8")
        config, _ = load_config(config_file)
        assert config.pinyin_dict_path() == dict_file

    def test_empty_file_gives_defaults(self, tmp_path):
        config_file = tmp_path / "conf.yaml"
        config_file.write_text("", encoding="utf-8")
        config, _ = load_config(config_file)
        assert config.retrieval.k == default_config().retrieval.k

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "ghost.yaml")

    def test_invalid_yaml(self, tmp_path):
        config_file = tmp_path / "conf.yaml"
        config_file.write_text("paths: [unclosed", encoding="utf-8")
        with pytest.raises(ConfigError, match="cannot parse"):
            load_config(config_file)
