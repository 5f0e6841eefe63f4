"""Gendered-translation accuracy, term coverage and corpus BLEU.

Term matching is greedy and in-order over the annotated pairs: each pair
first looks for its correct form, then its wrong form, as a contiguous token
sequence among not-yet-consumed hypothesis tokens; matched tokens are
consumed so repeated annotations need repeated occurrences. GTA is reported
over covered terms only and left absent for empty cells.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

from .corpus import Category, GenderTermPair, MustSheRecord, Split
from .textutil import tokenize


class TermOutcome(Enum):
    CORRECT_FORM = "correct"
    WRONG_FORM = "wrong"
    NOT_COVERED = "not_covered"


def _find_free(tokens: list[str], consumed: list[bool], needle: list[str]) -> int | None:
    """Leftmost start of ``needle`` as a contiguous, fully unconsumed run."""
    k = len(needle)
    if k == 0:
        return None
    for start in range(len(tokens) - k + 1):
        if all(not consumed[start + j] and tokens[start + j] == needle[j] for j in range(k)):
            return start
    return None


def term_outcomes(hypothesis: str, terms: Sequence[GenderTermPair]) -> list[TermOutcome]:
    tokens = tokenize(hypothesis, lowercase=True)
    consumed = [False] * len(tokens)
    outcomes = []
    for pair in terms:
        hit = None
        outcome = TermOutcome.NOT_COVERED
        for candidate, verdict in (
            (tokenize(pair.correct, lowercase=True), TermOutcome.CORRECT_FORM),
            (tokenize(pair.wrong, lowercase=True), TermOutcome.WRONG_FORM),
        ):
            hit = _find_free(tokens, consumed, candidate)
            if hit is not None:
                outcome = verdict
                for j in range(len(candidate)):
                    consumed[hit + j] = True
                break
        outcomes.append(outcome)
    return outcomes


def _has_partial_multiword(hypothesis_tokens: list[str], pair: GenderTermPair) -> bool:
    """An uncovered multi-word term where at least one component token shows up."""
    for form in (pair.correct, pair.wrong):
        toks = tokenize(form, lowercase=True)
        if len(toks) > 1 and any(t in hypothesis_tokens for t in toks):
            return True
    return False


@dataclass
class CellScore:
    n_sentences: int = 0
    total_terms: int = 0
    covered: int = 0
    correct: int = 0
    bleu: float = 0.0
    multiword_partial: int = 0

    @property
    def coverage(self) -> float:
        return self.covered / self.total_terms if self.total_terms else 0.0

    @property
    def gta(self) -> float | None:
        return self.correct / self.covered if self.covered else None

    def to_dict(self) -> dict:
        return {
            "n_sentences": self.n_sentences,
            "total_terms": self.total_terms,
            "covered": self.covered,
            "correct": self.correct,
            "coverage": self.coverage,
            "gta": self.gta,
            "bleu": self.bleu,
            "multiword_partial": self.multiword_partial,
        }


@dataclass
class ScoreReport:
    split: Split
    cells: dict[Category, CellScore] = field(default_factory=dict)
    overall_bleu: float = 0.0
    n_scored: int = 0

    def to_dict(self) -> dict:
        return {
            "split": self.split.value,
            "n_scored": self.n_scored,
            "overall_bleu": self.overall_bleu,
            "cells": {cat.value: cell.to_dict() for cat, cell in sorted(
                self.cells.items(), key=lambda kv: kv[0].value)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def format_table(self, label: str = "hypotheses") -> str:
        """Aligned columns Cat1-Masc / Cat1-Femi / Cat2, each with Acc. and BLEU."""
        cat2 = CellScore()
        for cat in (Category.C2M, Category.C2F):
            cell = self.cells.get(cat)
            if cell is None:
                continue
            cat2.n_sentences += cell.n_sentences
            cat2.total_terms += cell.total_terms
            cat2.covered += cell.covered
            cat2.correct += cell.correct
        cat2.bleu = self._cat2_bleu

        def acc(cell: CellScore | None) -> str:
            if cell is None or cell.gta is None:
                return "-"
            return f"{100.0 * cell.gta:.2f}"

        def blu(cell: CellScore | None) -> str:
            return "-" if cell is None or cell.n_sentences == 0 else f"{cell.bleu:.2f}"

        cells = [self.cells.get(Category.C1M), self.cells.get(Category.C1F), cat2]
        header1 = f"{'':<16}{'Cat1-Masc':<18}{'Cat1-Femi':<18}{'Cat2':<18}"
        header2 = f"{'Model':<16}" + "".join(f"{'Acc.':<9}{'BLEU':<9}" for _ in cells)
        row = f"{label:<16}" + "".join(f"{acc(c):<9}{blu(c):<9}" for c in cells)
        return "\n".join((header1, header2, row))

    # computed during score(); kept off to_dict on purpose (cells carry 2M/2F)
    _cat2_bleu: float = 0.0


def score(
    hypotheses: Mapping[str, str],
    refs: Sequence[MustSheRecord],
    split: Split,
    *,
    smooth: bool = False,
    lowercase: bool = False,
) -> ScoreReport:
    """Aggregate term outcomes and corpus BLEU per category cell."""
    in_split = [r for r in refs if r.split is split]
    missing = [r.id for r in in_split if r.id not in hypotheses]
    if missing:
        shown = ", ".join(missing[:5])
        raise ValueError(f"missing hypothesis for {len(missing)} record(s): {shown}")

    report = ScoreReport(split=split, n_scored=len(in_split))
    by_cat: dict[Category, list[tuple[str, str]]] = {}
    for rec in in_split:
        hyp = hypotheses[rec.id]
        cell = report.cells.setdefault(rec.category, CellScore())
        outcomes = term_outcomes(hyp, rec.terms)
        hyp_tokens = tokenize(hyp, lowercase=True)
        cell.n_sentences += 1
        cell.total_terms += len(rec.terms)
        for pair, outcome in zip(rec.terms, outcomes):
            if outcome is TermOutcome.NOT_COVERED:
                if _has_partial_multiword(hyp_tokens, pair):
                    cell.multiword_partial += 1
            else:
                cell.covered += 1
                if outcome is TermOutcome.CORRECT_FORM:
                    cell.correct += 1
        by_cat.setdefault(rec.category, []).append((hyp, rec.ref))

    for cat, pairs in by_cat.items():
        report.cells[cat].bleu = bleu([h for h, _ in pairs], [r for _, r in pairs],
                                      smooth=smooth, lowercase=lowercase)
    all_pairs = [p for pairs in by_cat.values() for p in pairs]
    if all_pairs:
        report.overall_bleu = bleu([h for h, _ in all_pairs], [r for _, r in all_pairs],
                                   smooth=smooth, lowercase=lowercase)
    cat2_pairs = [p for cat in (Category.C2M, Category.C2F) for p in by_cat.get(cat, [])]
    if cat2_pairs:
        report._cat2_bleu = bleu([h for h, _ in cat2_pairs], [r for _, r in cat2_pairs],
                                 smooth=smooth, lowercase=lowercase)
    return report


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(
    hypotheses: Sequence[str],
    references: Sequence[str],
    *,
    smooth: bool = False,
    lowercase: bool = False,
) -> float:
    """Corpus BLEU-4 against a single reference per sentence, on a 0-100 scale.

    Unsmoothed by default: any zero n-gram precision numerator gives 0.0.
    ``smooth`` applies add-one smoothing to orders above unigram.
    """
    if len(hypotheses) != len(references):
        raise ValueError(
            f"length mismatch: {len(hypotheses)} hypotheses vs {len(references)} references"
        )
    ref_tok = [tokenize(r, lowercase=lowercase) for r in references]
    if not any(ref_tok):
        raise ValueError("need at least one non-empty reference")
    hyp_tok = [tokenize(h, lowercase=lowercase) for h in hypotheses]

    numer = [0] * 5
    denom = [0] * 5
    hyp_len = sum(len(t) for t in hyp_tok)
    ref_len = sum(len(t) for t in ref_tok)
    for hyp, ref in zip(hyp_tok, ref_tok):
        for n in range(1, 5):
            hyp_counts = _ngrams(hyp, n)
            if not hyp_counts:
                continue
            ref_counts = _ngrams(ref, n)
            denom[n] += sum(hyp_counts.values())
            numer[n] += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())

    if hyp_len == 0:
        return 0.0
    log_prec = 0.0
    for n in range(1, 5):
        num, den = numer[n], denom[n]
        if smooth and n > 1:
            num, den = num + 1, den + 1
        if num == 0:
            return 0.0
        log_prec += math.log(num / den)
    brevity = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * brevity * math.exp(log_prec / 4.0)
