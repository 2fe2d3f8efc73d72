#!/usr/bin/env python3
"""Generate the cross-implementation metric fixtures.

Expected values come from independent implementations:
  * BLEU: sacrebleu corpus BLEU (no tokenization, no smoothing)
  * ROUGE-L: pycocoevalcap Rouge for single-reference items; a standalone
    best-reference LCS F-measure (beta 1.2) for multi-reference items
  * CIDEr-D: pycocoevalcap Cider

Run once; the output is committed and the Rust crate never calls Python.

    pip install sacrebleu pycocoevalcap
    python3 scripts/gen_metric_fixtures.py > crates/core/tests/fixtures/metric_fixtures.json
"""
import json
import random
import warnings

from sacrebleu.metrics import BLEU
from pycocoevalcap.cider.cider import Cider
from pycocoevalcap.rouge.rouge import Rouge

VERSION = "metric-fixtures-v1"
WORDS = "the a of in is was born city river band plays music year hop".split()


def sentence(rng, lo=3, hi=12):
    return [rng.choice(WORDS) for _ in range(rng.randint(lo, hi))]


def mutate(rng, toks):
    out = list(toks)
    for _ in range(rng.randint(0, 3)):
        op = rng.random()
        if op < 0.3 and len(out) > 1:
            del out[rng.randrange(len(out))]
        elif op < 0.6:
            out.insert(rng.randrange(len(out) + 1), rng.choice(WORDS))
        elif out:
            out[rng.randrange(len(out))] = rng.choice(WORDS)
    return out


def corpus(rng, max_refs, allow_empty=False):
    items = []
    for _ in range(rng.randint(3, 8)):
        refs = [sentence(rng) for _ in range(rng.randint(1, max_refs))]
        if allow_empty and rng.random() < 0.1:
            hyp = []
        elif rng.random() < 0.15:
            hyp = sentence(rng)
        else:
            hyp = mutate(rng, rng.choice(refs))
        items.append((hyp, refs))
    return items


def lcs(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[-1][-1]


def rouge_best_ref(hyp, refs, beta=1.2):
    best = 0.0
    for r in refs:
        if not hyp or not r:
            continue
        m = lcs(hyp, r)
        if m == 0:
            continue
        p, rc = m / len(hyp), m / len(r)
        best = max(best, (1 + beta**2) * p * rc / (rc + beta**2 * p))
    return best


def main():
    rng = random.Random(20201)
    out = {"version": VERSION, "bleu": [], "rouge_l": [], "cider": []}

    bleu = BLEU(tokenize="none", smooth_method="none", effective_order=False)
    for case in range(20):
        items = corpus(rng, 3)
        if case == 0:
            items = [(r[0], r) for _, r in items]
        hyps = [h for h, _ in items]
        refs = [r for _, r in items]
        # sacrebleu wants one stream per reference slot; pad short lists with None.
        width = max(len(r) for r in refs)
        streams = [[" ".join(r[k]) if k < len(r) else None for r in refs] for k in range(width)]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            value = bleu.corpus_score([" ".join(h) for h in hyps], streams).score
        out["bleu"].append({"hypotheses": hyps, "references": refs, "expected": value})

    coco_rouge = Rouge()
    for case in range(20):
        single = case < 10
        items = corpus(rng, 1 if single else 3)
        hyps = [h for h, _ in items]
        refs = [r for _, r in items]
        if single:
            # pycocoevalcap cannot score empty candidates; corpora here have none.
            scores = [coco_rouge.calc_score([" ".join(h)], [" ".join(r[0])]) for h, r in items]
        else:
            scores = [rouge_best_ref(h, r) for h, r in items]
        value = 100.0 * sum(scores) / len(scores)
        out["rouge_l"].append({"hypotheses": hyps, "references": refs, "expected": value})

    for case in range(20):
        items = corpus(rng, 3, allow_empty=True)
        if case == 0:
            items = [(r[0], r) for _, r in items]
        hyps = [h for h, _ in items]
        refs = [r for _, r in items]
        gts = {i: [" ".join(x) for x in r] for i, r in enumerate(refs)}
        res = {i: [" ".join(h)] for i, h in enumerate(hyps)}
        value, _ = Cider().compute_score(gts, res)
        out["cider"].append({"hypotheses": hyps, "references": refs, "expected": float(value)})

    print(json.dumps(out, indent=1))


if __name__ == "__main__":
    main()
