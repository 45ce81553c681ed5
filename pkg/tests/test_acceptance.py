"""Acceptance gate: one verdict line per criterion.

Every test here checks one release criterion end to end, prints exactly
one visible "[name] PASS/FAIL" line (bypassing capture), and then
asserts. The synthetic-corpus criteria share one module-scoped 2,000
record corpus emitted by the `fixtures` CLI subcommand and one five-row
budget grid executed twice for the determinism check.
"""

import csv
import json
import math
import time
from collections import Counter

import numpy as np
import pytest

from promptctx.assembler import PromptSequence, SpanLabel
from promptctx.cli import main
from promptctx.dataset import RELATIONS
from promptctx.decoding import _draw, nucleus
from promptctx.harness import (
    ExperimentConfig,
    read_generations_csv,
    run_grid,
)
from promptctx.knowledge import KnowledgeGraph, Triple, match_concepts
from promptctx.metrics import ScoredPair, _ngrams, bleu2, cider, meteor
from promptctx.model import ModelConfig, forward, gradient_check, init_model, loss
from promptctx.rng import SplitMix64
from promptctx.stemming import stem
from promptctx.context import SynonymLexicon
from promptctx.types import ProviderKind

from oracles import (
    bleu2_oracle,
    brute_force_matches,
    cider_oracle,
    clipped_counts,
    masked_nll_oracle,
    meteor_oracle,
    nucleus_set_oracle,
)

V, E, P, C, R, INF = (
    SpanLabel.VISUAL,
    SpanLabel.EVENT,
    SpanLabel.PLACE,
    SpanLabel.CONTEXT,
    SpanLabel.RELATION_PROMPT,
    SpanLabel.INFERENCE,
)


def verdict(capsys, name: str, ok: bool, detail: str = "") -> None:
    line = f"[{name}] {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f" ({detail})"
    with capsys.disabled():
        print(line, flush=True)


# ---------------------------------------------------------------- metrics


def random_pairs(count=50, max_tokens=8, vocab_size=12, seed=11):
    """Random candidate/reference token tuples over a tiny two-char vocabulary."""
    rng = SplitMix64(seed)
    vocab = ["ab", "cd", "ef", "gh", "ij", "kl", "mn", "op", "qr", "st", "uv", "wx"][:vocab_size]
    pairs = []
    for _ in range(count):
        cand = tuple(vocab[rng.next_below(len(vocab))] for _ in range(1 + rng.next_below(max_tokens)))
        refs = tuple(
            tuple(vocab[rng.next_below(len(vocab))] for _ in range(1 + rng.next_below(max_tokens)))
            for _ in range(1 + rng.next_below(3))
        )
        pairs.append(ScoredPair(cand, refs))
    return pairs


def test_metric_oracle_suite(capsys):
    """BLEU-2 / METEOR / CIDEr match brute-force oracles on 50 random pairs:
    n-gram counts exact, scores within 1e-9, in under 10 seconds."""
    start = time.monotonic()
    pairs = random_pairs()
    oracle_pairs = [(list(p.candidate), [list(r) for r in p.references]) for p in pairs]

    count_mismatches = 0
    for pair in pairs:
        for n in (1, 2):
            want_clipped, want_total = clipped_counts(
                list(pair.candidate), [list(r) for r in pair.references], n
            )
            cand_counts = _ngrams(pair.candidate, n)
            max_ref = Counter()
            for ref in pair.references:
                for gram, c in _ngrams(ref, n).items():
                    max_ref[gram] = max(max_ref[gram], c)
            got_clipped = sum(min(c, max_ref[g]) for g, c in cand_counts.items())
            got_total = sum(cand_counts.values())
            if (got_clipped, got_total) != (want_clipped, want_total):
                count_mismatches += 1

    lexicon = SynonymLexicon({"ab": ("cd",), "ef": ("gh",)})
    synonym_sets = {"ab": {"cd"}, "ef": {"gh"}}
    bleu_err = abs(bleu2(pairs, 0.01) - bleu2_oracle(oracle_pairs, smoothing_epsilon=0.01))
    meteor_err = abs(meteor(pairs, lexicon) - meteor_oracle(oracle_pairs, stem, synonym_sets))
    cider_err = abs(cider(pairs) - cider_oracle(oracle_pairs))
    elapsed = time.monotonic() - start

    ok = (
        count_mismatches == 0
        and bleu_err <= 1e-9
        and meteor_err <= 1e-9
        and cider_err <= 1e-9
        and elapsed < 10.0
    )
    detail = (
        f"count mismatches={count_mismatches}, err b={bleu_err:.1e} m={meteor_err:.1e} "
        f"c={cider_err:.1e}, {elapsed:.1f}s<10s"
    )
    verdict(capsys, "metric-oracle-suite", ok, detail)
    assert ok, detail


def test_metric_golden_values(capsys):
    """Three hand-derived values per metric reproduce within 1e-6."""
    goldens = []

    def check(name, got, want):
        goldens.append((name, got, want, abs(got - want)))

    # BLEU-2. Identity: all counts clip to themselves, brevity 1 -> 1.0.
    check("bleu identity", bleu2([ScoredPair.from_texts("the cat sat", ["the cat sat"])]), 1.0)
    # "the cat sat" vs "the cat sat down": unigrams 3/3, bigrams 2/2,
    # c=3, r=4 -> BP=exp(1-4/3); score = exp(-1/3) = 0.71653131...
    check(
        "bleu short candidate",
        bleu2([ScoredPair.from_texts("the cat sat", ["the cat sat down"])]),
        math.exp(-1.0 / 3.0),
    )
    # No shared unigrams and no smoothing -> 0.
    check("bleu disjoint", bleu2([ScoredPair.from_texts("alpha beta", ["gamma delta"])]), 0.0)

    # METEOR. No matches at any stage -> 0.
    check("meteor disjoint", meteor([ScoredPair.from_texts("alpha beta", ["gamma delta"])]), 0.0)
    # Identical 4-token texts: P=R=F=1, one chunk over four matches,
    # penalty 0.5*(1/4)^3 = 1/128 -> 127/128.
    check(
        "meteor identity",
        meteor([ScoredPair.from_texts("one two three four", ["one two three four"])]),
        127.0 / 128.0,
    )
    # "cats sleep" vs "cat sleeps": both matches come from the stem stage
    # (cats/cat -> cat, sleep/sleeps -> sleep), one chunk of two matches,
    # F=1, penalty 0.5*(2/2 chunks: 1/2)^3 = 1/16 -> 15/16.
    check(
        "meteor stems",
        meteor([ScoredPair.from_texts("cats sleep", ["cat sleeps"])]),
        15.0 / 16.0,
    )

    # CIDEr. Three pairs with disjoint vocabularies: every n-gram is unique
    # to its pair (df=1, idf=log 3 > 0) and candidate == reference, so the
    # cosine is 1 for n=1..4 -> 10.0.
    unique = [
        ScoredPair.from_texts("alpha beta gamma delta epsilon", ["alpha beta gamma delta epsilon"]),
        ScoredPair.from_texts("zeta eta theta iota kappa", ["zeta eta theta iota kappa"]),
        ScoredPair.from_texts("mu nu xi omicron pi", ["mu nu xi omicron pi"]),
    ]
    check("cider identity", cider(unique), 10.0)
    # No shared n-gram of any order -> 0.
    check(
        "cider disjoint",
        cider([
            ScoredPair.from_texts("alpha beta", ["gamma delta"]),
            ScoredPair.from_texts("other words", ["more tokens"]),
        ]),
        0.0,
    )
    # "the" in all three reference sets: idf = log(3/3) = 0, so candidates
    # made only of that shared unigram have zero-weight vectors -> 0.
    check(
        "cider shared-gram idf",
        cider([
            ScoredPair.from_texts("the", ["the cat ran"]),
            ScoredPair.from_texts("the", ["the dog sat"]),
            ScoredPair.from_texts("the", ["the bird flew"]),
        ]),
        0.0,
    )

    worst = max(err for _, _, _, err in goldens)
    ok = worst <= 1e-6
    bad = [f"{name}: {got:.8f} != {want:.8f}" for name, got, want, err in goldens if err > 1e-6]
    detail = f"9 goldens, max err {worst:.2e}" + (f"; {'; '.join(bad)}" if bad else "")
    verdict(capsys, "metric-golden-values", ok, detail)
    assert ok, detail


# ------------------------------------------------------------------- loss


def random_training_sequence(rng: SplitMix64, vocab_size: int):
    tokens = [2]
    spans = [V]

    def block(label, max_extra):
        for _ in range(1 + rng.next_below(max_extra)):
            tokens.append(7 + rng.next_below(vocab_size - 7))
            spans.append(label)

    block(E, 4)
    block(P, 3)
    has_context = rng.next_below(2) == 1
    if has_context:
        block(C, 4)
    relation = RELATIONS[rng.next_below(len(RELATIONS))]
    tokens.append(4 + RELATIONS.index(relation))
    spans.append(R)
    block(INF, 4)
    tokens.append(3)
    spans.append(INF)
    seq = PromptSequence(tokens=tuple(tokens), spans=tuple(spans), relation=relation)
    return seq, has_context


def test_sequence_loss_properties(capsys):
    """On 100 random sequences: the four loss terms sum to the total
    (1e-9), sequences without a context block have a zero context term,
    and every term matches a masked-NLL oracle (1e-9). Under 30 seconds."""
    start = time.monotonic()
    config = ModelConfig(vocab_size=16, layers=1, heads=2, embed_dim=8, max_len=24, visual_dim=4, seed=0)
    params = init_model(config)
    rng = SplitMix64(17)
    failures = []
    for i in range(100):
        seq, has_context = random_training_sequence(rng, config.vocab_size)
        breakdown = loss(params, seq)
        if abs(breakdown.total - (breakdown.event + breakdown.place + breakdown.context + breakdown.inference)) > 1e-9:
            failures.append(f"seq {i}: additivity")
        if not has_context and breakdown.context != 0.0:
            failures.append(f"seq {i}: context term {breakdown.context} without context block")
        want, count = masked_nll_oracle(forward(params, seq.tokens), seq)
        if breakdown.tokens != count:
            failures.append(f"seq {i}: scored {breakdown.tokens} != oracle {count}")
        for term in ("event", "place", "context", "inference"):
            if abs(getattr(breakdown, term) - want[term]) > 1e-9:
                failures.append(f"seq {i}: {term} off by {abs(getattr(breakdown, term) - want[term]):.2e}")
    elapsed = time.monotonic() - start
    ok = not failures and elapsed < 30.0
    detail = f"100 sequences, {elapsed:.1f}s<30s" + (f"; {failures[:3]}" if failures else "")
    verdict(capsys, "sequence-loss-properties", ok, detail)
    assert ok, detail


def test_gradient_check(capsys):
    """Analytic gradients agree with central differences (epsilon 1e-4)
    to < 1e-3 max relative error on a <= 10k parameter model, and a
    fault-injected gradient (doubled) fails the same threshold. Under 2
    minutes."""
    start = time.monotonic()
    config = ModelConfig(vocab_size=20, layers=1, heads=2, embed_dim=16, max_len=24, visual_dim=4, seed=0)
    params = init_model(config)
    n_params = params.n_params()
    seq = PromptSequence(
        tokens=(2, 9, 12, 9, 8, 7, 10, 15, 11, 4, 13, 9, 14, 3),
        spans=(V, E, E, E, P, P, C, C, C, R, INF, INF, INF, INF),
        relation="intent",
        visual=np.linspace(-0.5, 0.5, 4),
    )
    correct = gradient_check(params, seq, epsilon=1e-4, fraction=0.02, seed=0)
    injected = gradient_check(params, seq, epsilon=1e-4, fraction=0.02, seed=0, grad_scale=2.0)
    elapsed = time.monotonic() - start
    ok = n_params <= 10_000 and correct < 1e-3 and injected >= 1e-3 and elapsed < 120.0
    detail = (
        f"{n_params} params, max rel err {correct:.2e}<1e-3, "
        f"injected {injected:.2e}>=1e-3, {elapsed:.1f}s<120s"
    )
    verdict(capsys, "gradient-check", ok, detail)
    assert ok, detail


# --------------------------------------------------------------- decoding


def test_nucleus_sampling(capsys):
    """On 1,000 random distributions and p in {0.5, 0.9, 1.0}: the kept
    set equals an independently computed nucleus and every sampled id
    falls inside it; p = 1.0 keeps the whole vocabulary."""
    np_rng = np.random.Generator(np.random.PCG64(23))
    draw_rng = SplitMix64(29)
    failures = 0
    for i in range(1000):
        size = 2 + int(np_rng.integers(0, 11))
        raw = np_rng.random(size)
        if i % 5 == 0:
            # quantized distributions force ties between probabilities
            raw = np.maximum(1.0, np.floor(raw * 4.0))
        probs = raw / raw.sum()
        for top_p in (0.5, 0.9, 1.0):
            ids, renorm = nucleus(probs, top_p)
            want = nucleus_set_oracle(probs, top_p)
            if set(ids.tolist()) != want:
                failures += 1
                continue
            if top_p == 1.0 and ids.size != size:
                failures += 1
                continue
            for _ in range(3):
                if _draw(ids, renorm, draw_rng) not in want:
                    failures += 1
                    break
    ok = failures == 0
    detail = f"1000 distributions x 3 p-values, {failures} failures"
    verdict(capsys, "nucleus-sampling", ok, detail)
    assert ok, detail


# -------------------------------------------------------- knowledge match


def test_matcher_equivalence(capsys):
    """Longest-match concept scanner equals the brute-force all-substring
    matcher on 200 random texts and dictionaries."""
    rng = SplitMix64(2024)
    words = ["oak", "pine", "red", "fox", "den", "mossy", "stone", "mill", "brook", "elm", "fern", "owl"]
    separators = [" ", " ", ", ", ". ", "-"]
    failures = []
    for trial in range(200):
        subjects = []
        for _ in range(1 + rng.next_below(5)):
            length = 1 + rng.next_below(2)
            subjects.append(" ".join(words[rng.next_below(len(words))] for _ in range(length)))
        triples = [Triple(s, "HasProperty", "plain", 1.0) for s in dict.fromkeys(subjects)]
        graph = KnowledgeGraph(triples)
        parts = [words[rng.next_below(len(words))] for _ in range(3 + rng.next_below(10))]
        text = parts[0]
        for part in parts[1:]:
            text += separators[rng.next_below(len(separators))] + part
        exclusions = {s for s in subjects if rng.next_below(4) == 0}
        got = [(m.surface, m.start, m.end) for m in match_concepts(text, graph, exclusions)]
        want = brute_force_matches(text, [t.subject for t in triples], exclusions)
        if got != want:
            failures.append(f"trial {trial}: {got} != {want}")
    ok = not failures
    detail = f"200 trials" + (f"; first: {failures[0]}" if failures else "")
    verdict(capsys, "matcher-equivalence", ok, detail)
    assert ok, detail


# ---------------------------------------------- synthetic corpus and grid


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["fixtures", "--out", str(out)]) == 0
    key = json.loads((out / "fixture_key.json").read_text(encoding="utf-8"))
    assert key["n_records"] == 2000
    return {"dir": out, "key": key}


def grid_configs(corpus_dir, out_dir):
    common = dict(
        records=str(corpus_dir / "records.jsonl"),
        captions=str(corpus_dir / "captions.json"),
        out_dir=str(out_dir / "rows"),
    )
    chain = (ProviderKind.CAPTIONS,)
    configs = [ExperimentConfig(name="base-100", **common)]
    for fraction, name in ((0.22, "ctx-22"), (0.35, "ctx-35"), (0.40, "ctx-40")):
        configs.append(
            ExperimentConfig(
                name=name, train_chain=chain, infer_chain=chain,
                subsample_mode="fraction", subsample_value=fraction, **common,
            )
        )
    configs.append(ExperimentConfig(name="ctx-100", train_chain=chain, infer_chain=chain, **common))
    return configs


@pytest.fixture(scope="module")
def grid_runs(corpus, tmp_path_factory):
    root = tmp_path_factory.mktemp("grid")
    runs = []
    for run_name in ("run1", "run2"):
        out = root / run_name
        start = time.monotonic()
        result = run_grid(grid_configs(corpus["dir"], out), out)
        runs.append({"out": out, "result": result, "wall": time.monotonic() - start})
    return runs


def row_dir(run, name):
    return run["out"] / "rows" / name


def verb_accuracy(directory, key):
    """Fraction of generated samples whose first token is the verb the
    corpus key pins for that record and relation."""
    generations = read_generations_csv(directory / "generations.csv")
    hits = total = 0
    for (record_id, relation), texts in generations.items():
        expected = key["records"][record_id]["expected"][relation]
        for text in texts:
            first = text.split()[0] if text.split() else ""
            hits += first == expected
            total += 1
    return hits / total


def wall_seconds(directory):
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    return manifest["wall_seconds"]


def raw_scores(directory):
    scores = json.loads((directory / "scores.json").read_text(encoding="utf-8"))
    return {metric: scores[metric] for metric in ("bleu2", "meteor", "cider")}


def test_context_disambiguation(capsys, corpus, grid_runs):
    """The designed experiment: the target verb is a deterministic
    function of a caption word absent from event/place text. With the
    caption chain the model must reach >= 0.90 verb accuracy; without it,
    <= 0.60 (two equally likely verbs). Both rows under 5 minutes."""
    run = grid_runs[0]
    ctx_acc = verb_accuracy(row_dir(run, "ctx-100"), corpus["key"])
    base_acc = verb_accuracy(row_dir(run, "base-100"), corpus["key"])
    wall = wall_seconds(row_dir(run, "ctx-100")) + wall_seconds(row_dir(run, "base-100"))
    ok = ctx_acc >= 0.90 and base_acc <= 0.60 and wall < 300.0
    detail = f"context acc {ctx_acc:.3f}>=0.90, baseline acc {base_acc:.3f}<=0.60, {wall:.0f}s<300s"
    verdict(capsys, "context-disambiguation", ok, detail)
    assert ok, detail


def test_budget_sweep(capsys, grid_runs):
    """Budgets {22%, 35%, 40%, 100%} with fixed decoding produce a
    complete report: all five rows populated, and the 35%/40% context
    rows score within 10% relative of the full-data no-context baseline
    on every metric. Grid wall under 20 minutes."""
    run = grid_runs[0]
    with open(run["out"] / "report.csv", encoding="utf-8", newline="") as handle:
        rows = list(csv.reader(handle))
    problems = []
    if rows[0] != ["Method", "Inference Data", "Data Size", "BLEU-2", "METEOR", "CIDEr"]:
        problems.append(f"header {rows[0]}")
    if len(rows) != 6:
        problems.append(f"{len(rows) - 1} rows != 5")
    for row in rows[1:]:
        if len(row) != 6 or any(not cell for cell in row):
            problems.append(f"incomplete row {row}")
    sizes = [row[2] for row in rows[1:]]
    want_sizes = ["1,900 (100%)", "418 (~22%)", "665 (~35%)", "760 (~40%)", "1,900 (100%)"]
    if sizes != want_sizes:
        problems.append(f"data sizes {sizes}")

    base = raw_scores(row_dir(run, "base-100"))
    for name in ("ctx-35", "ctx-40"):
        scores = raw_scores(row_dir(run, name))
        for metric, value in scores.items():
            rel = abs(value - base[metric]) / base[metric]
            if rel > 0.10:
                problems.append(f"{name} {metric} {rel:.3f} beyond 10% of baseline")
    for metric in ("bleu2", "meteor", "cider"):
        if not (run["out"] / f"plot_{metric}.png").exists():
            problems.append(f"missing plot_{metric}.png")
    if run["result"].failures:
        problems.append(f"failed rows {sorted(run['result'].failures)}")
    if run["wall"] >= 1200.0:
        problems.append(f"grid wall {run['wall']:.0f}s")
    ok = not problems
    detail = f"5 rows, grid wall {run['wall']:.0f}s<1200s" + (f"; {problems[:3]}" if problems else "")
    verdict(capsys, "budget-sweep", ok, detail)
    assert ok, detail


def test_grid_determinism(capsys, grid_runs):
    """Two runs of the identical grid produce byte-identical report,
    plot-data, and figure files."""
    first, second = grid_runs
    diffs = []
    names = ["report.csv"]
    names += [f"plot_{metric}.csv" for metric in ("bleu2", "meteor", "cider")]
    names += [f"plot_{metric}.png" for metric in ("bleu2", "meteor", "cider")]
    for name in names:
        if (first["out"] / name).read_bytes() != (second["out"] / name).read_bytes():
            diffs.append(name)
    ok = not diffs
    detail = f"{len(names)} files byte-compared" + (f"; differ: {diffs}" if diffs else "")
    verdict(capsys, "grid-determinism", ok, detail)
    assert ok, detail
