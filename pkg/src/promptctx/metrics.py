"""Corpus-level BLEU-2, METEOR, and CIDEr over multi-reference generations.

All three metrics consume pre-tokenized pairs; tokenization is the shared
word-level normalization used everywhere else in the package.

Formula notes, spelled out because they pin the numbers:

* BLEU-2: modified n-gram precisions for n = 1, 2 pooled over the corpus
  (clipped counts summed across pairs before dividing), geometric mean,
  brevity penalty exp(1 - r/c) when the total candidate length c is below
  the total effective reference length r. The effective reference length
  of a pair is the reference length closest to the candidate length,
  ties resolved toward the shorter reference. No smoothing by default; a
  zero pooled numerator makes the score 0. With smoothing_epsilon > 0, a
  zero numerator is replaced by epsilon (numerator only).
* METEOR: classic three-stage unigram alignment (exact, then shared
  Porter stem, then synonym lexicon when provided), each stage matching
  greedily left to right against the leftmost free reference token.
  P and R are matches over candidate/reference lengths,
  F = P*R / (alpha*P + (1-alpha)*R) with alpha = 0.9, fragmentation
  penalty gamma*(chunks/matches)**beta with gamma = 0.5, beta = 3, and
  the pair score is the best over its references. Corpus score is the
  mean over pairs.
* CIDEr: for each n in 1..4, tf-idf vectors with
  idf(g) = log(N / max(1, df(g))) where N is the number of pairs and
  df(g) counts pairs whose reference set contains g. An n-gram every
  pair's references share therefore has idf exactly 0, and an n-gram no
  reference set contains gets idf log(N). Cosine similarity
  of candidate vs. each reference (0 when either vector is all zero),
  averaged over references, then 10 * mean over the four orders. Corpus
  score is the mean over pairs.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .assembler import Tokenizer, tokenize
from .context import SynonymLexicon
from .dataset import RELATIONS, EventRecord
from .stemming import stem

ALPHA, GAMMA, BETA = 0.9, 0.5, 3.0


@dataclass(frozen=True)
class ScoredPair:
    candidate: tuple[str, ...]
    references: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if not self.references:
            raise ValueError("references must be nonempty")

    @staticmethod
    def from_texts(candidate: str, references: list[str]) -> "ScoredPair":
        return ScoredPair(
            tuple(tokenize(candidate)), tuple(tuple(tokenize(r)) for r in references)
        )


def _ngrams(tokens: tuple[str, ...], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu2(pairs: list[ScoredPair], smoothing_epsilon: float = 0.0) -> float:
    if not pairs:
        raise ValueError("pairs must be nonempty")
    numer = [0, 0]
    denom = [0, 0]
    cand_total = 0
    ref_total = 0
    for pair in pairs:
        cand = pair.candidate
        cand_total += len(cand)
        lengths = sorted(len(r) for r in pair.references)
        ref_total += min(lengths, key=lambda L: (abs(L - len(cand)), L))
        for n in (1, 2):
            cand_counts = _ngrams(cand, n)
            if not cand_counts:
                continue
            max_ref = Counter()
            for ref in pair.references:
                for gram, count in _ngrams(ref, n).items():
                    if count > max_ref[gram]:
                        max_ref[gram] = count
            numer[n - 1] += sum(min(c, max_ref[g]) for g, c in cand_counts.items())
            denom[n - 1] += sum(cand_counts.values())
    if cand_total == 0:
        return 0.0
    log_sum = 0.0
    for n in (1, 2):
        num = float(numer[n - 1])
        if num == 0.0:
            if smoothing_epsilon > 0.0:
                num = smoothing_epsilon
            else:
                return 0.0
        if denom[n - 1] == 0:
            return 0.0
        log_sum += 0.5 * math.log(num / denom[n - 1])
    bp = 1.0 if cand_total > ref_total else math.exp(1.0 - ref_total / cand_total)
    return bp * math.exp(log_sum)


def _align(
    cand: tuple[str, ...], ref: tuple[str, ...], lexicon: SynonymLexicon | None
) -> list[tuple[int, int]]:
    """Unigram alignment as (candidate index, reference index) pairs.

    Stage order: exact match, shared stem, synonym (when a lexicon is
    given). Within each stage, candidate tokens are visited left to right
    and take the leftmost still-unmatched compatible reference token.
    """

    def synonyms(a: str, b: str) -> bool:
        if lexicon is None:
            return False
        return b in lexicon.entries.get(a, ()) or a in lexicon.entries.get(b, ())

    stages = [
        lambda a, b: a == b,
        lambda a, b: stem(a) == stem(b),
        synonyms,
    ]
    matched_cand = [False] * len(cand)
    matched_ref = [False] * len(ref)
    alignment: list[tuple[int, int]] = []
    for compatible in stages:
        for i, token in enumerate(cand):
            if matched_cand[i]:
                continue
            for j, ref_token in enumerate(ref):
                if matched_ref[j]:
                    continue
                if compatible(token, ref_token):
                    matched_cand[i] = True
                    matched_ref[j] = True
                    alignment.append((i, j))
                    break
    return sorted(alignment)


def _chunks(alignment: list[tuple[int, int]]) -> int:
    count = 0
    prev = None
    for i, j in alignment:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            count += 1
        prev = (i, j)
    return count


def meteor_pair(pair: ScoredPair, lexicon: SynonymLexicon | None = None) -> float:
    """Best single-reference METEOR score for one pair."""
    best = 0.0
    for ref in pair.references:
        if not pair.candidate or not ref:
            continue
        alignment = _align(pair.candidate, ref, lexicon)
        m = len(alignment)
        if m == 0:
            continue
        precision = m / len(pair.candidate)
        recall = m / len(ref)
        fmean = precision * recall / (ALPHA * precision + (1.0 - ALPHA) * recall)
        penalty = GAMMA * (_chunks(alignment) / m) ** BETA
        best = max(best, fmean * (1.0 - penalty))
    return best


def meteor(pairs: list[ScoredPair], lexicon: SynonymLexicon | None = None) -> float:
    if not pairs:
        raise ValueError("pairs must be nonempty")
    return sum(meteor_pair(pair, lexicon) for pair in pairs) / len(pairs)


@dataclass(frozen=True)
class CiderIdf:
    """Per-order idf tables from the union of all reference sets.

    idf(g) = log(N / max(1, df(g))); an n-gram no reference set contains
    has df = 0 and therefore idf = log(N), so stray candidate n-grams
    still inflate the candidate norm.
    """

    tables: tuple[dict[tuple[str, ...], float], ...]
    default: float

    def idf(self, n: int, gram: tuple[str, ...]) -> float:
        return self.tables[n - 1].get(gram, self.default)


def _cider_idf(pairs: list[ScoredPair]) -> CiderIdf:
    n_pairs = len(pairs)
    tables = []
    for n in range(1, 5):
        df: Counter = Counter()
        for pair in pairs:
            seen: set[tuple[str, ...]] = set()
            for ref in pair.references:
                seen.update(_ngrams(ref, n))
            for gram in seen:
                df[gram] += 1
        tables.append({g: math.log(n_pairs / max(1, c)) for g, c in df.items()})
    return CiderIdf(tuple(tables), math.log(n_pairs))


def _tfidf(tokens: tuple[str, ...], n: int, idf_tables: CiderIdf) -> dict:
    counts = _ngrams(tokens, n)
    total = sum(counts.values())
    if total == 0:
        return {}
    return {g: (c / total) * idf_tables.idf(n, g) for g, c in counts.items()}


def _cosine(a: dict, b: dict) -> float:
    dot = sum(w * b[g] for g, w in a.items() if g in b)
    norm_a = math.sqrt(sum(w * w for w in a.values()))
    norm_b = math.sqrt(sum(w * w for w in b.values()))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    return dot / (norm_a * norm_b)


def cider_pair(pair: ScoredPair, idf_tables: CiderIdf) -> float:
    total = 0.0
    for n in range(1, 5):
        cand_vec = _tfidf(pair.candidate, n, idf_tables)
        sims = [_cosine(cand_vec, _tfidf(ref, n, idf_tables)) for ref in pair.references]
        total += sum(sims) / len(sims)
    return 10.0 * total / 4.0


def cider(pairs: list[ScoredPair]) -> float:
    if not pairs:
        raise ValueError("pairs must be nonempty")
    idf_tables = _cider_idf(pairs)
    return sum(cider_pair(pair, idf_tables) for pair in pairs) / len(pairs)


@dataclass
class MetricReport:
    """Raw-scale corpus scores plus per-record, per-relation detail.

    bleu2 and meteor live in [0, 1], cider in [0, 10]. Tables multiply
    bleu2/meteor by 100 and cider by 10; table_* properties apply that.
    """

    bleu2: float
    meteor: float
    cider: float
    per_record: dict[str, dict[str, dict[str, float]]]
    pairs_scored: int
    pairs_skipped: int
    warnings: list[str] = field(default_factory=list)

    @property
    def table_bleu2(self) -> float:
        return self.bleu2 * 100.0

    @property
    def table_meteor(self) -> float:
        return self.meteor * 100.0

    @property
    def table_cider(self) -> float:
        return self.cider * 10.0


def evaluate(
    records: list[EventRecord],
    generations: dict[tuple[str, str], list[str]],
    tokenizer: Tokenizer | None = None,
    lexicon: SynonymLexicon | None = None,
    aggregate: str = "mean",
    smoothing_epsilon: float = 0.0,
) -> MetricReport:
    """Score generations against each record's annotated references.

    One pair is formed per generated sentence; a generation keyed to a
    relation with no references is skipped with a warning. aggregate
    picks how the five samples of a (record, relation) enter the corpus:
    "mean" scores every pair; "max" keeps only each group's best pair by
    per-pair score (computed per metric).
    """
    if aggregate not in ("mean", "max"):
        raise ValueError(f"unknown aggregate mode {aggregate!r}")
    by_id = {r.record_id: r for r in records}
    groups: list[tuple[str, str, list[ScoredPair]]] = []
    skipped = 0
    warnings: list[str] = []
    for (record_id, relation), texts in sorted(generations.items()):
        record = by_id.get(record_id)
        if record is None:
            raise KeyError(f"generation for unknown record {record_id!r}")
        if relation not in RELATIONS:
            raise ValueError(f"unknown relation {relation!r}")
        refs = record.inferences[relation]
        if not refs:
            skipped += len(texts)
            warnings.append(f"skipped {record_id}/{relation}: no references")
            continue
        pairs = [ScoredPair.from_texts(text, refs) for text in texts]
        groups.append((record_id, relation, pairs))
    all_pairs = [p for _, _, pairs in groups for p in pairs]
    if not all_pairs:
        raise ValueError("no scorable pairs")
    idf_tables = _cider_idf(all_pairs)

    def pair_scores(pair: ScoredPair) -> dict[str, float]:
        return {
            "bleu2": bleu2([pair], smoothing_epsilon),
            "meteor": meteor_pair(pair, lexicon),
            "cider": cider_pair(pair, idf_tables),
        }

    per_record: dict[str, dict[str, dict[str, float]]] = {}
    per_pair: list[dict[str, float]] = []
    corpus_pairs: list[ScoredPair] = []
    for record_id, relation, pairs in groups:
        scores = [pair_scores(p) for p in pairs]
        per_pair.extend(scores)
        detail = {
            metric: sum(s[metric] for s in scores) / len(scores)
            for metric in ("bleu2", "meteor", "cider")
        }
        per_record.setdefault(record_id, {})[relation] = detail
        if aggregate == "mean":
            corpus_pairs.extend(pairs)
        else:
            best = max(range(len(pairs)), key=lambda i: sum(scores[i].values()))
            corpus_pairs.append(pairs[best])

    corpus_bleu = bleu2(corpus_pairs, smoothing_epsilon)
    corpus_meteor = meteor(corpus_pairs, lexicon)
    corpus_cider = sum(cider_pair(p, idf_tables) for p in corpus_pairs) / len(corpus_pairs)
    return MetricReport(
        bleu2=corpus_bleu,
        meteor=corpus_meteor,
        cider=corpus_cider,
        per_record=per_record,
        pairs_scored=len(all_pairs),
        pairs_skipped=skipped,
        warnings=warnings,
    )
