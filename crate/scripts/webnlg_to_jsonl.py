#!/usr/bin/env python3
"""Convert WebNLG XML releases into cyclekg pair records (JSON lines).

Each lexicalization of an entry becomes one record:

    {"graph": {"triples": [[head, relation, tail], ...],
               "entities": {id: [token, ...], ...}},
     "text": {"tokens": [...], "entities": [[id, start, end], ...]}}

Entity names lose underscores and quotes, relations are split at camelCase
boundaries, and everything is lowercased and split into word and punctuation
tokens. A lexicalization in which some entity cannot be found verbatim is
dropped and counted.

    python3 scripts/webnlg_to_jsonl.py webnlg/release_v2/xml/train -o data/train.pairs.jsonl
"""
import argparse
import json
import re
import sys
import xml.etree.ElementTree as ET
from pathlib import Path

TOKEN = re.compile(r"\w+(?:[-']\w+)*|[^\w\s]")
CAMEL = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")


def tokens(s):
    return TOKEN.findall(s.lower())


def entity(raw):
    name = raw.strip().strip('"').replace("_", " ")
    toks = tokens(name)
    return " ".join(toks), toks


def relation(raw):
    return " ".join(tokens(CAMEL.sub(" ", raw.strip().replace("_", " "))))


def find(seq, sub, taken):
    n = len(sub)
    for i in range(len(seq) - n + 1):
        if seq[i : i + n] == sub and not any(i < e and s < i + n for s, e in taken):
            return i
    return None


def convert_entry(entry, stats):
    tripleset = entry.find("modifiedtripleset")
    if tripleset is None:
        stats["no triples"] += 1
        return
    triples, ents = [], {}
    for mt in tripleset.findall("mtriple"):
        parts = [p for p in mt.text.split("|")]
        if len(parts) != 3:
            stats["malformed triple"] += 1
            return
        (h, ht), r, (t, tt) = entity(parts[0]), relation(parts[1]), entity(parts[2])
        if not ht or not tt or not r or h == t:
            stats["malformed triple"] += 1
            return
        ents.setdefault(h, ht)
        ents.setdefault(t, tt)
        if [h, r, t] not in triples:
            triples.append([h, r, t])
    for lex in entry.findall("lex"):
        text = lex.text if lex.text and lex.text.strip() else lex.findtext("text")
        if not text:
            continue
        toks = tokens(text)
        spans, taken = [], []
        # Longer names first so that a short name cannot claim part of a longer one.
        for eid, etoks in sorted(ents.items(), key=lambda kv: -len(kv[1])):
            start = find(toks, etoks, taken)
            if start is None:
                break
            taken.append((start, start + len(etoks)))
            spans.append([eid, start, start + len(etoks)])
        if len(spans) != len(ents):
            stats["unanchored lexicalization"] += 1
            continue
        spans.sort(key=lambda s: s[1])
        stats["records"] += 1
        yield {"graph": {"triples": triples, "entities": ents}, "text": {"tokens": toks, "entities": spans}}


def xml_files(paths):
    for p in map(Path, paths):
        if p.is_dir():
            yield from sorted(p.rglob("*.xml"))
        else:
            yield p


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("inputs", nargs="+", help="XML files or directories")
    ap.add_argument("-o", "--output", help="output file (default: stdout)")
    args = ap.parse_args()
    stats = {"records": 0, "unanchored lexicalization": 0, "malformed triple": 0, "no triples": 0}
    out = open(args.output, "w") if args.output else sys.stdout
    for path in xml_files(args.inputs):
        for entry in ET.parse(path).getroot().iter("entry"):
            for record in convert_entry(entry, stats):
                out.write(json.dumps(record, ensure_ascii=False) + "\n")
    if args.output:
        out.close()
    print(json.dumps(stats), file=sys.stderr)


if __name__ == "__main__":
    main()
