from __future__ import annotations

import math
from collections import Counter

import numpy as np
import pytest

from gstd.corpus import Category, Gender, GenderTermPair, MustSheRecord, Split
from gstd.metrics import TermOutcome, bleu, score, term_outcomes
from gstd.textutil import tokenize

C, W, N = TermOutcome.CORRECT_FORM, TermOutcome.WRONG_FORM, TermOutcome.NOT_COVERED


# term_outcomes --------------------------------------------------------------

def test_term_outcomes_direct_matches():
    terms = [GenderTermPair("profesora", "profesor")]
    assert term_outcomes("soy profesora", terms) == [C]
    assert term_outcomes("soy profesor", terms) == [W]
    assert term_outcomes("soy maestra", terms) == [N]


def test_term_outcomes_consumption():
    terms = [GenderTermPair("cansada", "cansado"), GenderTermPair("cansada", "cansado")]
    assert term_outcomes("cansada y cansada", terms) == [C, C]
    assert term_outcomes("cansada", terms) == [C, N]
    assert term_outcomes("cansada y cansado", terms) == [C, W]


def test_term_outcomes_case_and_punctuation_invariance():
    terms = [GenderTermPair("profesora", "profesor")]
    assert term_outcomes("Soy PROFESORA.", terms) == [C]
    assert term_outcomes("soy , profesora !", terms) == [C]


def test_term_outcomes_multiword_contiguous_only():
    terms = [GenderTermPair("muy cansada", "muy cansado")]
    assert term_outcomes("estoy muy cansada hoy", terms) == [C]
    assert term_outcomes("estoy muy feliz y cansada", terms) == [N]


# brute-force assignment oracle ----------------------------------------------

def brute_force_counts(hypothesis: str, terms) -> tuple[int, int]:
    """Exhaustive assignment of terms to disjoint token spans.

    Maximizes (covered, correct) lexicographically; the greedy matcher must
    report the same two counts.
    """
    tokens = tokenize(hypothesis, lowercase=True)

    def spans(form: str):
        needle = tokenize(form, lowercase=True)
        k = len(needle)
        return [tuple(range(s, s + k)) for s in range(len(tokens) - k + 1)
                if tokens[s:s + k] == needle]

    options = []
    for pair in terms:
        opts = [(1, 1, span) for span in spans(pair.correct)]
        opts += [(1, 0, span) for span in spans(pair.wrong)]
        opts.append((0, 0, ()))
        options.append(opts)

    best = (-1, -1)

    def walk(i: int, used: int, covered: int, correct: int):
        nonlocal best
        if i == len(options):
            if (covered, correct) > best:
                best = (covered, correct)
            return
        for cov, cor, span in options[i]:
            mask = 0
            for p in span:
                mask |= 1 << p
            if used & mask:
                continue
            walk(i + 1, used | mask, covered + cov, correct + cor)

    walk(0, 0, 0, 0)
    return best


def greedy_counts(hypothesis: str, terms) -> tuple[int, int]:
    outcomes = term_outcomes(hypothesis, terms)
    covered = sum(o is not N for o in outcomes)
    correct = sum(o is C for o in outcomes)
    return covered, correct


def random_fixture(rng: np.random.Generator):
    stems = ["cansad", "list", "segur", "ocupad", "content"]
    orientation = {s: rng.random() < 0.5 for s in stems}
    pairs = {}
    for s in stems:
        a, b = s + "a", s + "o"
        pairs[s] = GenderTermPair(a, b) if orientation[s] else GenderTermPair(b, a)
    n_terms = int(rng.integers(1, 6))
    terms = [pairs[stems[rng.integers(0, len(stems))]] for _ in range(n_terms)]
    vocab = [p.correct for p in pairs.values()] + [p.wrong for p in pairs.values()]
    vocab += ["y", "muy", "hoy", "estoy", "pero"]
    n_tokens = int(rng.integers(1, 16))
    hyp = " ".join(vocab[rng.integers(0, len(vocab))] for _ in range(n_tokens))
    return hyp, terms


def test_greedy_matches_brute_force_on_random_fixtures():
    rng = np.random.default_rng(2024)
    for _ in range(300):
        hyp, terms = random_fixture(rng)
        assert greedy_counts(hyp, terms) == brute_force_counts(hyp, terms)


# score ----------------------------------------------------------------------

def _record(i, ref, wrong_ref, terms, category=Category.C1F, split=Split.TEST):
    gender = Gender.FEMALE if category.value.endswith("F") else Gender.MALE
    return MustSheRecord(
        id=f"s{i:03d}", src=f"source {i}", ref=ref, wrong_ref=wrong_ref,
        speaker_gender=gender, category=category,
        terms=tuple(terms), split=split,
    )


def _self_scoring_records(n=4, category=Category.C1F):
    records = []
    for i in range(n):
        ref = f"hoy la persona {i} se siente cansada de verdad"
        wrong = ref.replace("cansada", "cansado")
        records.append(_record(i, ref, wrong, [GenderTermPair("cansada", "cansado")],
                               category=category))
    return records


def test_score_identity_hypotheses():
    records = _self_scoring_records()
    hyps = {r.id: r.ref for r in records}
    report = score(hyps, records, Split.TEST)
    cell = report.cells[Category.C1F]
    assert cell.gta == 1.0
    assert cell.coverage == 1.0
    assert cell.bleu == 100.0
    assert report.overall_bleu == 100.0


def test_score_wrong_ref_hypotheses():
    records = _self_scoring_records()
    hyps = {r.id: r.wrong_ref for r in records}
    report = score(hyps, records, Split.TEST)
    cell = report.cells[Category.C1F]
    assert cell.gta == 0.0
    assert cell.coverage == 1.0


def test_score_ten_sentence_hand_count():
    # 6 covered-correct, 2 covered-wrong, 2 uncovered -> GTA 6/8, coverage 8/10
    records = []
    hyps = {}
    for i in range(10):
        ref = f"la persona numero {i} llegó cansada esta tarde"
        records.append(_record(i, ref, ref.replace("cansada", "cansado"),
                               [GenderTermPair("cansada", "cansado")]))
        if i < 6:
            hyps[f"s{i:03d}"] = ref
        elif i < 8:
            hyps[f"s{i:03d}"] = ref.replace("cansada", "cansado")
        else:
            hyps[f"s{i:03d}"] = f"la persona numero {i} llegó tarde"
    report = score(hyps, records, Split.TEST)
    cell = report.cells[Category.C1F]
    assert cell.gta == pytest.approx(0.75)
    assert cell.coverage == pytest.approx(0.8)


def test_score_missing_hypothesis():
    records = _self_scoring_records(2)
    with pytest.raises(ValueError, match="missing hypothesis"):
        score({records[0].id: records[0].ref}, records, Split.TEST)


def test_score_respects_split():
    records = _self_scoring_records(3) + [
        _record(99, "otra frase cansada aquí mismo", "otra frase cansado aquí mismo",
                [GenderTermPair("cansada", "cansado")], split=Split.DEV)
    ]
    hyps = {r.id: r.ref for r in records if r.split is Split.TEST}
    report = score(hyps, records, Split.TEST)  # dev row needs no hypothesis
    assert report.n_scored == 3


def test_score_gta_absent_when_uncovered():
    records = _self_scoring_records(2)
    hyps = {r.id: "sin términos relevantes aquí" for r in records}
    report = score(hyps, records, Split.TEST)
    cell = report.cells[Category.C1F]
    assert cell.covered == 0
    assert cell.gta is None
    assert cell.coverage == 0.0


def test_score_swap_property():
    records = _self_scoring_records(5)
    hyps = {}
    for i, r in enumerate(records):
        hyps[r.id] = r.ref if i < 2 else r.wrong_ref  # full coverage, gta = 2/5
    report = score(hyps, records, Split.TEST)
    swapped = [
        MustSheRecord(
            id=r.id, src=r.src, ref=r.ref, wrong_ref=r.wrong_ref,
            speaker_gender=r.speaker_gender, category=r.category,
            terms=tuple(GenderTermPair(t.wrong, t.correct) for t in r.terms),
            split=r.split)
        for r in records
    ]
    flipped = score(hyps, swapped, Split.TEST)
    g = report.cells[Category.C1F].gta
    assert flipped.cells[Category.C1F].gta == pytest.approx(1.0 - g)


def test_score_monotonicity_wrong_to_correct():
    records = _self_scoring_records(4)
    hyps = {r.id: r.wrong_ref for r in records}
    base = score(hyps, records, Split.TEST).cells[Category.C1F]
    hyps[records[0].id] = records[0].ref  # one wrong realization fixed
    better = score(hyps, records, Split.TEST).cells[Category.C1F]
    assert better.gta >= base.gta


def test_score_table_layout():
    records = (_self_scoring_records(2, Category.C1M)
               + _self_scoring_records(2, Category.C1F)
               + _self_scoring_records(2, Category.C2F))
    # reuse ids would collide; remap
    records = [
        MustSheRecord(id=f"r{i}", src=r.src, ref=r.ref, wrong_ref=r.wrong_ref,
                      speaker_gender=r.speaker_gender, category=r.category,
                      terms=r.terms, split=r.split)
        for i, r in enumerate(records)
    ]
    hyps = {r.id: r.ref for r in records}
    table = score(hyps, records, Split.TEST).format_table("sys")
    assert "Cat1-Masc" in table and "Cat1-Femi" in table and "Cat2" in table
    assert "Acc." in table and "BLEU" in table
    assert "sys" in table


# BLEU -----------------------------------------------------------------------

def reference_bleu(hypotheses, references) -> float:
    """Independent corpus BLEU-4 for cross-checking (same tokenizer)."""
    stats = {n: [0, 0] for n in range(1, 5)}
    c = r = 0
    for hyp, ref in zip(hypotheses, references):
        h, g = tokenize(hyp), tokenize(ref)
        c += len(h)
        r += len(g)
        for n in range(1, 5):
            hyp_ngrams = [tuple(h[i:i + n]) for i in range(len(h) - n + 1)]
            ref_counts = Counter(tuple(g[i:i + n]) for i in range(len(g) - n + 1))
            clipped = Counter()
            for gram in hyp_ngrams:
                if clipped[gram] < ref_counts[gram]:
                    clipped[gram] += 1
                    stats[n][0] += 1
                stats[n][1] += 1
    if c == 0 or any(stats[n][0] == 0 for n in range(1, 5)):
        return 0.0
    gm = math.exp(sum(math.log(stats[n][0] / stats[n][1]) for n in range(1, 5)) / 4)
    bp = math.exp(min(0.0, 1.0 - r / c))
    return 100.0 * bp * gm


FIXTURE_HYPS = [
    "el gato está en la casa grande",
    "me gusta mucho el café por la mañana",
    "hoy hace frío y viento en la ciudad",
]
FIXTURE_REFS = [
    "el gato está en la cama grande",
    "me gusta mucho el té por la mañana",
    "hoy hace mucho frío y viento en la ciudad",
]
# frozen from reference_bleu on the fixture above
FIXTURE_BLEU = 61.716229

def test_bleu_identity_is_exactly_100():
    assert bleu(FIXTURE_REFS, FIXTURE_REFS) == 100.0


def test_bleu_frozen_fixture_matches_independent_implementation():
    ours = bleu(FIXTURE_HYPS, FIXTURE_REFS)
    oracle = reference_bleu(FIXTURE_HYPS, FIXTURE_REFS)
    assert abs(ours - oracle) < 0.1
    assert ours == pytest.approx(FIXTURE_BLEU, abs=1e-3)


def test_bleu_zero_four_gram_overlap():
    assert bleu(["a b c d e"], ["a b x d e"]) == 0.0


def test_bleu_length_mismatch():
    with pytest.raises(ValueError, match="length mismatch"):
        bleu(["a"], ["a", "b"])


def test_bleu_requires_nonempty_reference():
    with pytest.raises(ValueError, match="non-empty reference"):
        bleu([""], [""])


def test_bleu_case_sensitivity_and_flag():
    hyp = ["El Gato corre rápido hoy"]
    ref = ["el gato corre rápido hoy"]
    assert bleu(hyp, ref) < 100.0
    assert bleu(hyp, ref, lowercase=True) == 100.0


def test_bleu_smoothing_flag():
    hyp = ["a b c d"]
    ref = ["a b x d"]
    assert bleu(hyp, ref) == 0.0
    assert bleu(hyp, ref, smooth=True) > 0.0


def test_bleu_brevity_penalty():
    # shorter hypothesis than reference must be penalized
    full = bleu(["uno dos tres cuatro cinco"], ["uno dos tres cuatro cinco"])
    short = bleu(["uno dos tres cuatro"], ["uno dos tres cuatro cinco"])
    assert short < full


def test_bleu_permutation_invariance():
    a = bleu(FIXTURE_HYPS, FIXTURE_REFS)
    b = bleu(FIXTURE_HYPS[::-1], FIXTURE_REFS[::-1])
    assert a == pytest.approx(b, abs=1e-12)


def test_bleu_random_corpora_match_independent_implementation():
    rng = np.random.default_rng(7)
    vocab = ["uno", "dos", "tres", "cuatro", "cinco", "seis", "gato", "casa", ","]
    for _ in range(50):
        n = int(rng.integers(1, 5))
        hyps, refs = [], []
        for _ in range(n):
            hyps.append(" ".join(vocab[rng.integers(0, len(vocab))]
                                 for _ in range(rng.integers(4, 12))))
            refs.append(" ".join(vocab[rng.integers(0, len(vocab))]
                                 for _ in range(rng.integers(4, 12))))
        assert bleu(hyps, refs) == pytest.approx(reference_bleu(hyps, refs), abs=1e-9)
