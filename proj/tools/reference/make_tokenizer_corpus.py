#!/usr/bin/env python3
"""Builds the frozen tokenizer parity corpus (tests/data/tokenizer_corpus.jsonl).

Each line is {"text": ..., "ids": [...]} where ids come from the Hugging Face
GPT-2 slow tokenizer loaded from the same vocab.json / merges.txt pair that the
C++ tokenizer reads. Sentences are drawn deterministically from standard
library docstrings plus synthetic strings that stress pre-tokenization:
contractions, digit runs, punctuation runs, mixed whitespace, non-ASCII scripts
and emoji.
"""

import argparse
import json
import pydoc
import random
import re

from transformers import GPT2Tokenizer

DOC_MODULES = [
    "argparse", "collections", "csv", "datetime", "decimal", "email", "fractions",
    "functools", "heapq", "http", "inspect", "itertools", "json", "logging", "math",
    "os", "pathlib", "pickle", "random", "re", "shutil", "socket", "sqlite3",
    "statistics", "string", "subprocess", "tempfile", "textwrap", "threading",
    "typing", "unittest", "urllib", "uuid", "zipfile",
]

WORDS = (
    "the a model token layer head neuron attention residual stream graph value "
    "capital France Paris Berlin London river mountain quick brown fox jumps over "
    "lazy dog I you we they it's don't can't we'll they've she'd I'm you're "
    "Transformer GPT language prediction contribution threshold"
).split()

EXOTIC = [
    "naïve café", "Zürich", "Ελληνικά", "русский текст", "日本語のテキスト", "中文字符",
    "한국어", "עברית", "العربية", "हिन्दी", "🙂🚀", "👩‍💻", "ℕ ≠ ∅", "x²+y²=z²",
    "½ ¾ Ⅻ", " nbsp", "tab\there", "line\nbreak", "  double  spaces",
    "trailing space ", "   ", "　ideographic", "em—dash", "‘quotes’", "«guillemets»",
]


def docstring_sentences():
    out = []
    for name in DOC_MODULES:
        try:
            obj = pydoc.locate(name)
        except Exception:
            continue
        doc = getattr(obj, "__doc__", None) or ""
        for member in dir(obj):
            sub = getattr(obj, member, None)
            d = getattr(sub, "__doc__", None)
            if isinstance(d, str):
                doc += "\n" + d
        for piece in re.split(r"(?<=[.!?])\s+", doc):
            piece = " ".join(piece.split())
            if 8 <= len(piece) <= 200:
                out.append(piece)
    return sorted(set(out))


def synthetic(rng):
    kind = rng.randrange(6)
    if kind == 0:
        return " ".join(rng.choice(WORDS) for _ in range(rng.randint(1, 12))) + rng.choice([".", "!", "?", "", "..."])
    if kind == 1:
        return f"{rng.randint(0, 10**rng.randint(1, 9))} items cost ${rng.randint(1, 9999)}.{rng.randint(0, 99):02d} on {rng.randint(1900, 2100)}-{rng.randint(1, 12):02d}"
    if kind == 2:
        return rng.choice(EXOTIC) + " " + rng.choice(WORDS) + rng.choice(["", " ", "\n", "\t", "  "]) + rng.choice(EXOTIC)
    if kind == 3:
        return "".join(rng.choice("'\"!?.,;:()[]{}<>-_=+*/\\|@#$%^&~` ") for _ in range(rng.randint(1, 20)))
    if kind == 4:
        w = rng.choice(WORDS)
        return f"{w}'s {w}'t {w}'re {w}'ve {w}'m {w}'ll {w}'d {w.upper()}'S"
    return "".join(rng.choice([" ", "\t", "\n", "a", "1", "!", "é"]) for _ in range(rng.randint(1, 16)))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--vocab", required=True)
    ap.add_argument("--merges", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--count", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=20240410)
    args = ap.parse_args()

    rng = random.Random(args.seed)
    docs = docstring_sentences()
    rng.shuffle(docs)
    n_docs = min(len(docs), args.count * 3 // 5)
    texts = docs[:n_docs]
    while len(texts) < args.count:
        texts.append(synthetic(rng))

    tok = GPT2Tokenizer(args.vocab, args.merges)
    with open(args.out, "w", encoding="utf-8") as f:
        for t in texts:
            ids = tok.encode(t)
            assert tok.decode(ids) == t
            f.write(json.dumps({"text": t, "ids": ids}, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()
