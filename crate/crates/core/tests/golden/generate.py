#!/usr/bin/env python3
"""Regenerates the packing golden files from pairs.jsonl.

Written independently of the Rust code: formats each pair under every
delimiter strategy, encodes with the byte-level base vocabulary (256 bytes
plus reserved tags), and packs next-fit into sequences of at most N tokens.
"""
import json
import os

HERE = os.path.dirname(os.path.abspath(__file__))

REGISTRY = [
    ("ar", "Arabic"), ("cs", "Czech"), ("da", "Danish"), ("de", "German"),
    ("en", "English"), ("es", "Spanish"), ("fi", "Finnish"), ("fr", "French"),
    ("hr", "Croatian"), ("hu", "Hungarian"), ("id", "Indonesian"), ("it", "Italian"),
    ("ja", "Japanese"), ("ko", "Korean"), ("ms", "Malay"), ("nb", "Norwegian Bokmal"),
    ("nl", "Dutch"), ("no", "Norwegian"), ("pl", "Polish"), ("pt", "Portuguese"),
    ("ro", "Romanian"), ("ru", "Russian"), ("sv", "Swedish"), ("th", "Thai"),
    ("tr", "Turkish"), ("uk", "Ukrainian"), ("vi", "Vietnamese"), ("zh", "Chinese"),
]
NAMES = dict(REGISTRY)
TAGS = ["<SEP>"] + ["<%s>" % c.upper() for c, _ in REGISTRY] + ["<%s>" % n for _, n in REGISTRY]
TAG_ID = {t: 256 + i for i, t in enumerate(TAGS)}
TEMPLATE = "Translate the following text from {src} to {trg}:{text}"
LENGTHS = [2048, 64]


def encode(text):
    ids = []
    i = 0
    plain = 0
    while True:
        lt = text.find("<", i)
        if lt < 0:
            break
        gt = text.find(">", lt)
        if gt < 0:
            break
        tag = text[lt:gt + 1]
        if tag in TAG_ID:
            ids.extend(text[plain:lt].encode("utf-8"))
            ids.append(TAG_ID[tag])
            plain = i = gt + 1
        else:
            i = lt + 1
    ids.extend(text[plain:].encode("utf-8"))
    return ids


def token_bytes(t):
    return bytes([t]) if t < 256 else TAGS[t - 256].encode("utf-8")


def segments(pair, strategy):
    s, t = pair["src_lang"], pair["tgt_lang"]
    a, b = pair["src_text"], pair["tgt_text"]
    if strategy == "lang-code":
        return [("Tag", "<%s>" % s.upper()), ("Text", a), ("Tag", "<%s>" % t.upper()), ("Text", b)]
    if strategy == "sep":
        return [("Text", a), ("Tag", "<SEP>"), ("Text", b)]
    if strategy == "language-name":
        return [("Tag", "<%s>" % NAMES[s]), ("Text", a), ("Tag", "<%s>" % NAMES[t]), ("Text", b)]
    prompt = TEMPLATE.format(src=NAMES[s], trg=NAMES[t], text=a)
    return [("Prompt", prompt), ("Text", "\n" + b)]


def pack(items, max_len):
    done = []
    cur = {"segs": [], "ids": []}

    def flush():
        nonlocal cur
        done.append(cur)
        cur = {"segs": [], "ids": []}

    for item in items:
        enc = [(role, content, encode(content)) for role, content in item]
        total = sum(len(e[2]) for e in enc)
        if len(cur["ids"]) + total <= max_len:
            for role, content, ids in enc:
                cur["segs"].append((role, content))
                cur["ids"].extend(ids)
            continue
        if cur["ids"]:
            flush()
        for role, content, ids in enc:
            fits = len(ids) <= max_len - len(cur["ids"])
            rest = ids
            while True:
                room = max_len - len(cur["ids"])
                head, rest = rest[:room], rest[room:]
                text = content if fits else b"".join(token_bytes(t) for t in head).decode("utf-8", "replace")
                cur["segs"].append((role, text))
                cur["ids"].extend(head)
                if not rest:
                    break
                flush()
            if len(cur["ids"]) == max_len:
                flush()
    if cur["ids"] or cur["segs"]:
        flush()
    return done


def main():
    with open(os.path.join(HERE, "pairs.jsonl"), encoding="utf-8") as f:
        pairs = [json.loads(line) for line in f if line.strip()]
    for max_len in LENGTHS:
        for strategy in ["sep", "natural-language", "language-name", "lang-code"]:
            seqs = pack([segments(p, strategy) for p in pairs], max_len)
            stem = os.path.join(HERE, "pack_%s_%d" % (strategy, max_len))
            with open(stem + ".jsonl", "w", encoding="utf-8", newline="\n") as f:
                for s in seqs:
                    rec = {
                        "segments": [{"role": r, "content": c} for r, c in s["segs"]],
                        "token_len": len(s["ids"]),
                        "strategy": strategy,
                    }
                    f.write(json.dumps(rec, ensure_ascii=False, separators=(",", ":")) + "\n")
            with open(stem + ".tokens", "w", encoding="utf-8", newline="\n") as f:
                for s in seqs:
                    f.write(" ".join(str(t) for t in s["ids"]) + "\n")


if __name__ == "__main__":
    main()
