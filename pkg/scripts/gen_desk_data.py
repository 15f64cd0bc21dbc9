"""Regenerate the bundled desk-scale demo data.

Builds the 20-utterance homophone corpus, the matching entity list, and the
scripted backend fixture, verifying everything as it goes: every character
must be in the bundled reading dictionary, every corrupted span must be an
exact toneless homophone of its gold entity, every corruption string must
be unique, and every gold entity must occur exactly once in its reference.

Run from the repository root:  python scripts/gen_desk_data.py
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from entcorr.phonetics import (  # noqa: E402
    Granularity,
    PinyinDictionary,
    romanize,
    similarity,
)

DATA_DIR = ROOT / "src" / "entcorr" / "data"

# (id, reference, gold entity surface, type, corrupted surface)
UTTERANCES = [
    ("utt-001", "我们今天去峨眉山看风景", "峨眉山", "LOC", "鹅没闪"),
    ("utt-002", "我想去北京旅游", "北京", "LOC", "背景"),
    ("utt-003", "他住在上海很多年", "上海", "LOC", "商海"),
    ("utt-004", "明天我们飞西安", "西安", "LOC", "西岸"),
    ("utt-005", "成都的火锅很有名", "成都", "LOC", "程度"),
    ("utt-006", "周末我们爬长城", "长城", "LOC", "长程"),
    ("utt-007", "黄山的云海很美", "黄山", "LOC", "荒山"),
    ("utt-008", "他们下周去泰山", "泰山", "LOC", "太善"),
    ("utt-009", "杭州的西湖很漂亮", "杭州", "LOC", "航舟"),
    ("utt-010", "苏州的园林很有名", "苏州", "LOC", "素粥"),
    ("utt-011", "广州的天气很热", "广州", "LOC", "光舟"),
    ("utt-012", "深圳的公司很多", "深圳", "LOC", "申镇"),
    ("utt-013", "他坐车去天津开会", "天津", "LOC", "添金"),
    ("utt-014", "李雷是我的同学", "李雷", "PER", "立类"),
    ("utt-015", "韩梅喜欢唱歌", "韩梅", "PER", "含美"),
    ("utt-016", "王芳在学校教书", "王芳", "PER", "往访"),
    ("utt-017", "张伟每天跑步", "张伟", "PER", "章围"),
    ("utt-018", "刘洋会说英语", "刘洋", "PER", "留养"),
    ("utt-019", "她考上了清华大学", "清华大学", "ORG", "青花大雪"),
    ("utt-020", "他毕业于复旦大学", "复旦大学", "ORG", "付蛋大雪"),
]

# records that also carry an n-best list (primary hypothesis first)
NBEST_EXTRA = {
    "utt-001": ["我们今天去峨没闪看风景"],
    "utt-004": ["明天我们飞西安"],
    "utt-013": ["他坐车去天津开会"],
}

# scripted probe behavior per record, so the bundled corpus exercises all
# three difficulty tiers: simple = nothink probe already answers correctly,
# challenging = only the think probe does, formidable = only a hinted think
# probe does.  10/6/4 keeps the preference mix balanced at 10 vs 10.
TIERS = {rec_id: ("simple" if n <= 10 else "challenging" if n <= 16
                  else "formidable")
         for n, rec_id in enumerate(
             (row[0] for row in UTTERANCES), start=1)}

# marker found only in hinted prompts (the hint template quotes the truth
# in corner brackets; candidate lists render surfaces without them)
HINT_MARKER = "正确答案是「{gold}」"


def think_reply(gold: str, corrupted: str) -> str:
    return (
        f"<think>片段「{corrupted}」的读音与候选「{gold}」完全一致，"
        f"其余候选读音差距明显，应选「{gold}」。</think>"
        f"<answer>{gold}</answer>"
    )


def hinted_think_reply(gold: str, corrupted: str) -> str:
    return (
        f"<think>根据提示重新核对：「{corrupted}」与「{gold}」逐字同音，"
        f"结论与提示一致。</think>"
        f"<answer>{gold}</answer>"
    )


def confused_think_reply(corrupted: str) -> str:
    return (
        f"<think>片段「{corrupted}」没有足够把握匹配任何候选，"
        f"保守起见保留原文。</think>"
        f"<answer>KEEP</answer>"
    )


def main() -> None:
    dictionary = PinyinDictionary.from_tsv(DATA_DIR / "pinyin_dict.tsv")

    def phon(text: str):
        return romanize(text, dictionary, granularity=Granularity.PHONEME)

    corruptions = [c for _, _, _, _, c in UTTERANCES]
    assert len(set(corruptions)) == len(corruptions), "corruptions must be unique"
    entities = [(e, t) for _, _, e, t, _ in UTTERANCES]
    assert len({e for e, _ in entities}) == len(entities), "entities must be unique"

    records = []
    for rec_id, ref, gold, type_label, corrupted in UTTERANCES:
        assert ref.count(gold) == 1, f"{rec_id}: entity must occur exactly once"
        assert len(gold) == len(corrupted), f"{rec_id}: same-length corruption only"
        start = ref.index(gold)
        hyp = ref[:start] + corrupted + ref[start + len(gold):]
        sim = similarity(phon(gold), phon(corrupted))
        assert sim == 1.0, f"{rec_id}: {corrupted} vs {gold} similarity {sim}"
        for other in corruptions:
            if other != corrupted:
                assert other not in hyp, f"{rec_id}: contains foreign corruption"
        record = {
            "id": rec_id,
            "reference": ref,
            "hypothesis": hyp,
            "nbest": None,
            "entities": [
                {"start": start, "end": start + len(gold), "type": type_label}],
        }
        if rec_id in NBEST_EXTRA:
            record["nbest"] = [hyp] + NBEST_EXTRA[rec_id]
            for variant in record["nbest"]:
                phon(variant)  # dictionary coverage check
        phon(ref), phon(hyp)  # dictionary coverage check
        records.append(record)

    rules = []
    for rec_id, _, gold, _, corrupted in UTTERANCES:
        tier = TIERS[rec_id]
        plain_answer = {"response": f"<answer>{gold}</answer>", "tokens": 12}
        wrong_answer = {"response": "<answer>KEEP</answer>", "tokens": 9}
        if tier == "formidable":
            # hinted rule first: the hinted prompt also contains the
            # corruption, and the first matching rule wins
            rules.append({"match": HINT_MARKER.format(gold=gold),
                          "mode": "think", "attempt": -1, "tokens": 72,
                          "response": hinted_think_reply(gold, corrupted)})
            rules.append({"match": corrupted, "mode": "think", "attempt": -1,
                          "response": confused_think_reply(corrupted),
                          "tokens": 58})
            rules.append({"match": corrupted, "mode": "nothink", "attempt": -1,
                          **wrong_answer})
        elif tier == "challenging":
            rules.append({"match": corrupted, "mode": "think", "attempt": -1,
                          "response": think_reply(gold, corrupted),
                          "tokens": 64})
            rules.append({"match": corrupted, "mode": "nothink", "attempt": -1,
                          **wrong_answer})
        else:
            rules.append({"match": corrupted, "mode": "think", "attempt": -1,
                          "response": think_reply(gold, corrupted),
                          "tokens": 64})
            rules.append({"match": corrupted, "mode": "nothink", "attempt": -1,
                          **plain_answer})
        rules.append({"match": corrupted, "mode": "any", "attempt": -1,
                      **plain_answer})
    backend = {
        "rules": rules,
        "default": {"response": "<answer>KEEP</answer>", "tokens": 5},
    }

    corpus_path = DATA_DIR / "desk_corpus.jsonl"
    corpus_path.write_text(
        "".join(json.dumps(r, ensure_ascii=False, separators=(",", ":")) + "\n"
                for r in records),
        encoding="utf-8")

    entities_path = DATA_DIR / "entities_demo.tsv"
    entities_path.write_text(
        "# Demo entity list for the bundled corpus.\n"
        + "".join(f"{surface}\t{type_label}\n" for surface, type_label in entities),
        encoding="utf-8")

    backend_path = DATA_DIR / "desk_backend.json"
    backend_path.write_text(
        json.dumps(backend, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8")

    # expected end-to-end behavior, derived from the construction rules
    # above (in-place same-length corruption, scripted rank-1 answers), not
    # from running the pipeline; the acceptance suite replays the pipeline
    # against this file
    trace = {
        "records": [
            {
                "id": rec_id,
                "hypothesis": rec["hypothesis"],
                "span": [rec["entities"][0]["start"],
                         rec["entities"][0]["end"]],
                "span_text": corrupted,
                "expected_choice": gold,
                "corrected": ref,
                "tier": TIERS[rec_id],
            }
            for (rec_id, ref, gold, _, corrupted), rec in zip(UTTERANCES, records)
        ],
        "metrics": {"cer": 0.0, "ne_cer": 0.0, "nne_cer": 0.0, "ne_recall": 1.0},
        "classification": {"simple": 10, "challenging": 6, "formidable": 4,
                           "pairs": 20},
    }
    trace_path = ROOT / "tests" / "data" / "desk_oracle_trace.json"
    trace_path.parent.mkdir(parents=True, exist_ok=True)
    trace_path.write_text(
        json.dumps(trace, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")

    print(f"wrote {corpus_path} ({len(records)} records)")
    print(f"wrote {entities_path} ({len(entities)} entities)")
    print(f"wrote {backend_path} ({len(rules)} rules)")
    print(f"wrote {trace_path} ({len(trace['records'])} trace rows)")


if __name__ == "__main__":
    main()
