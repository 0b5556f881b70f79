#!/usr/bin/env python3
"""Regenerate crates/core/data/lexicon.tsv from a WordNet 3.0 dict directory.

usage: build_lexicon.py WORDNET_DICT_DIR OUT.tsv [headword ...]

Emits `headword<TAB>relation<TAB>related_word` lines, sorted, for each
headword and for every word directly related to a headword (two levels).
"""
import os
import sys

RELATIONS = {
    "@": "hypernym", "@i": "hypernym",
    "~": "hyponym", "~i": "hyponym",
    "#m": "part_whole", "#s": "part_whole", "#p": "part_whole",
    "%m": "part_whole", "%s": "part_whole", "%p": "part_whole",
}

DEFAULT_HEADWORDS = [
    "bottle", "cable", "capsule", "carpet", "grid", "hazelnut", "leather",
    "nut", "pill", "screw", "tile", "toothbrush", "transistor", "wood", "zipper",
]


def norm(lemma):
    word = lemma.split("(")[0].replace("_", " ").lower()
    return word


def load(dict_dir):
    synsets = {}
    with open(os.path.join(dict_dir, "data.noun"), encoding="latin-1") as f:
        for line in f:
            if line.startswith("  "):
                continue
            fields = line.split("|")[0].split()
            offset = fields[0]
            w_cnt = int(fields[3], 16)
            words = [norm(fields[4 + 2 * i]) for i in range(w_cnt)]
            pos = 4 + 2 * w_cnt
            p_cnt = int(fields[pos])
            ptrs = []
            for i in range(p_cnt):
                sym, target, tpos = fields[pos + 1 + 4 * i: pos + 4 + 4 * i]
                if tpos == "n" and sym in RELATIONS:
                    ptrs.append((RELATIONS[sym], target))
            synsets[offset] = (words, ptrs)
    index = {}
    with open(os.path.join(dict_dir, "index.noun"), encoding="latin-1") as f:
        for line in f:
            if line.startswith("  "):
                continue
            fields = line.split()
            lemma = norm(fields[0])
            synset_cnt = int(fields[2])
            index[lemma] = fields[-synset_cnt:]
    return synsets, index


def relations_of(word, synsets, index):
    out = set()
    for offset in index.get(word, []):
        words, ptrs = synsets[offset]
        for w in words:
            if w != word:
                out.add(("synonym", w))
        for rel, target in ptrs:
            for w in synsets[target][0]:
                if w != word:
                    out.add((rel, w))
    return {(r, w) for r, w in out if "{" not in w and "}" not in w and "\t" not in w}


def main():
    dict_dir, out_path = sys.argv[1], sys.argv[2]
    heads = sys.argv[3:] or DEFAULT_HEADWORDS
    synsets, index = load(dict_dir)
    rows = set()
    for head in heads:
        first = relations_of(head, synsets, index)
        rows.update((head, r, w) for r, w in first)
        for _, w in first:
            rows.update((w, r, x) for r, x in relations_of(w, synsets, index))
    with open(out_path, "w", encoding="utf-8") as f:
        for row in sorted(rows):
            f.write("\t".join(row) + "\n")


if __name__ == "__main__":
    main()
