#!/usr/bin/env python3
"""Recompute chair/pope/tce metrics from an owl workdir and compare them
bit-for-bit with the eval_*.json files written by `owl evaluate`.

Mentions are re-derived from the caption tokens and the eval corpus, so the
only thing trusted from the C++ side is the decoded token stream and the
POPE answers."""

import json
import pathlib
import sys


def load_jsonl(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def caption_stats(tokens, present, objects):
    mentioned = {t for t in tokens if t in objects}
    hallucinated = {o for o in mentioned if o not in present}
    return mentioned, hallucinated


def recount_chair(work, captions, present, objects):
    n = len(captions)
    with_h = mentioned = hallucinated = length = 0
    for row in captions:
        m, h = caption_stats(row["tokens"], present[row["scene_id"]], objects)
        mentioned += len(m)
        hallucinated += len(h)
        with_h += 1 if h else 0
        toks = row["tokens"]
        length += len(toks) - 1 if toks and toks[-1] == "<eos>" else len(toks)
    return {
        "chair_s": with_h / n,
        "chair_i": hallucinated / mentioned if mentioned else 0.0,
        "avg_len": length / n,
        "n_captions": n,
        "mentioned": mentioned,
        "hallucinated": hallucinated,
    }


def recount_pope_setting(rows, setting):
    tp = fp = tn = fn = flagged = 0
    for r in rows:
        assert r["setting"] == setting, "sample log mixes settings"
        yes = r["answer"] == "yes"
        flagged += 1 if r["flagged"] else 0
        if r["label"] == "yes":
            tp, fn = (tp + 1, fn) if yes else (tp, fn + 1)
        else:
            fp, tn = (fp + 1, tn) if yes else (fp, tn + 1)
    n = len(rows)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "setting": setting, "accuracy": (tp + tn) / n, "precision": precision,
        "recall": recall, "f1": f1, "yes_ratio": (tp + fp) / n,
        "tp": tp, "fp": fp, "tn": tn, "fn": fn, "flagged": flagged,
    }


def recount_tce(base, after, present, objects):
    def h(row):
        m, hal = caption_stats(row["tokens"], present[row["scene_id"]], objects)
        return len(hal) / len(m) if m else 0.0

    total = 0
    for b, a in zip(base, after):
        assert b["scene_id"] == a["scene_id"], "caption files not aligned"
        total += 1 if h(b) > h(a) else -1
    return {"tce": total / len(base), "pairs": len(base)}


def compare(name, expected, got, mismatches):
    for key, value in got.items():
        if key not in expected:
            mismatches.append(f"{name}: missing key {key}")
        elif isinstance(value, list):
            for i, (e, g) in enumerate(zip(expected[key], value)):
                compare(f"{name}.{key}[{i}]", e, g, mismatches)
        elif expected[key] != value or type(expected[key]) is not type(value) and not (
                isinstance(value, (int, float)) and isinstance(expected[key], (int, float))):
            mismatches.append(f"{name}.{key}: file {expected[key]!r} recount {value!r}")


def main():
    if len(sys.argv) != 2:
        print("usage: recount.py <workdir>", file=sys.stderr)
        return 1
    work = pathlib.Path(sys.argv[1])
    objects = set(json.loads((work / "grammar.json").read_text())["objects"])
    present = {r["scene_id"]: set(r["present"]) for r in load_jsonl(work / "eval.jsonl")}
    mismatches = []
    checked = 0
    for path in sorted(work.glob("eval/*/*.json")):
        doc = json.loads(path.read_text())
        suite, folder = doc["suite"], path.parent
        if suite == "chair":
            got = recount_chair(work, load_jsonl(folder / doc["samples"]), present, objects)
        elif suite == "pope":
            got = recount_pope_setting(load_jsonl(folder / doc["samples"]), doc["setting"])
        elif suite == "tce":
            got = recount_tce(load_jsonl(folder / doc["baseline"]),
                              load_jsonl(folder / doc["intervened"]), present, objects)
        else:
            mismatches.append(f"{path.name}: unknown suite {suite}")
            continue
        compare(str(path.relative_to(work)), doc["metrics"], got, mismatches)
        checked += 1
    if checked == 0:
        print(f"no eval/*/*.json files under {work}", file=sys.stderr)
        return 1
    for m in mismatches:
        print(m)
    print(f"recount: {checked} files, {len(mismatches)} mismatches")
    return 0 if not mismatches else 1


if __name__ == "__main__":
    sys.exit(main())
