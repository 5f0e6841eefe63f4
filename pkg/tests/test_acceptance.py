"""Acceptance suite: one test per release criterion, each printing a
pass/fail line. Run with ``pytest tests/test_acceptance.py -v -s``.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from gstd.cli import main
from gstd.corpus import (
    Gender,
    GenderForm,
    GenderTermPair,
    Lang,
    MustSheRecord,
    Category,
    Split,
    Utterance,
    load_mustshe,
)
from gstd.genderloss import (
    GenderHead,
    SweepConfig,
    combined_loss,
    gr_loss,
    head_forward,
    head_gradients,
    make_separable_dataset,
    sweep,
    train_toy_head,
    transducer_loss_standin,
)
from gstd.metrics import bleu, score, term_outcomes, TermOutcome
from gstd.reformulate import (
    FaultInjectingBackend,
    MockChatBackend,
    PromptStrategy,
    reformulate_batch,
    validate_reformulation,
)
from gstd.selection import (
    MixConfig,
    Mode,
    ModeLayout,
    TargetClass,
    build_targets,
    contains_first_person_pronoun,
    neutral_fraction,
)

from test_metrics import (
    FIXTURE_BLEU,
    FIXTURE_HYPS,
    FIXTURE_REFS,
    brute_force_counts,
    greedy_counts,
    random_fixture,
    reference_bleu,
)
from test_genderloss import (
    _random_lattice,
    _relu_kink_safe,
    brute_force_transducer,
    random_head,
)


@contextmanager
def criterion(number: int, label: str, budget_s: float | None = None):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[FAIL] criterion {number}: {label}")
        raise
    elapsed = time.perf_counter() - start
    if budget_s is not None and elapsed > budget_s:
        print(f"[FAIL] criterion {number}: {label} (took {elapsed:.2f}s > {budget_s}s)")
        raise AssertionError(f"criterion {number} exceeded runtime budget: "
                             f"{elapsed:.2f}s > {budget_s}s")
    print(f"[PASS] criterion {number}: {label} ({elapsed:.2f}s)")


# ---------------------------------------------------------------------------
# 1. metric oracle equivalence


def test_criterion_1_metric_oracle_equivalence():
    with criterion(1, "GTA/coverage hand counts + greedy vs brute force", 5.0):
        records, hyps = [], {}
        for i in range(10):
            ref = f"la persona numero {i} llegó cansada esta tarde"
            records.append(MustSheRecord(
                id=f"s{i:03d}", src=f"src {i}", ref=ref,
                wrong_ref=ref.replace("cansada", "cansado"),
                speaker_gender=Gender.FEMALE, category=Category.C1F,
                terms=(GenderTermPair("cansada", "cansado"),), split=Split.TEST))
            if i < 6:
                hyps[f"s{i:03d}"] = ref
            elif i < 8:
                hyps[f"s{i:03d}"] = ref.replace("cansada", "cansado")
            else:
                hyps[f"s{i:03d}"] = f"la persona numero {i} llegó tarde"
        cell = score(hyps, records, Split.TEST).cells[Category.C1F]
        assert cell.gta == 0.75
        assert cell.coverage == 0.8

        rng = np.random.default_rng(1234)
        for _ in range(1000):
            hyp, terms = random_fixture(rng)
            assert greedy_counts(hyp, terms) == brute_force_counts(hyp, terms)


# ---------------------------------------------------------------------------
# 2. BLEU cross-check


def test_criterion_2_bleu_cross_check():
    with criterion(2, "corpus BLEU vs independent implementation", 1.0):
        ours = bleu(FIXTURE_HYPS, FIXTURE_REFS)
        oracle = reference_bleu(FIXTURE_HYPS, FIXTURE_REFS)
        assert abs(ours - oracle) < 0.1
        assert ours == pytest.approx(FIXTURE_BLEU, abs=1e-3)
        assert bleu(FIXTURE_REFS, FIXTURE_REFS) == 100.0


# ---------------------------------------------------------------------------
# 3. gradient correctness


def test_criterion_3_gradient_correctness():
    with criterion(3, "analytic gradients vs central finite differences", 30.0):
        rng = np.random.default_rng(99)
        checked = 0
        while checked < 100:
            t = int(rng.integers(1, 9))
            d = int(rng.integers(1, 17))
            hid = int(rng.integers(1, 17))
            h = rng.standard_normal((t, d))
            head = random_head(rng, d, hid)
            if not _relu_kink_safe(h, head):
                continue
            gender = Gender.MALE if rng.random() < 0.5 else Gender.FEMALE
            alpha = float(rng.uniform(0.05, 1.0))
            l_trans = float(rng.uniform(0.0, 3.0))
            analytic = head_gradients(h, head, gender, alpha, l_trans)
            eps = 1e-5
            for name in ("w_g", "b_g", "w_out"):
                arr = getattr(head, name)
                ana = getattr(analytic, name)
                num = np.zeros_like(arr)
                it = np.nditer(arr, flags=["multi_index"])
                while not it.finished:
                    i = it.multi_index
                    orig = arr[i]
                    arr[i] = orig + eps
                    up = combined_loss(gr_loss(head_forward(h, head), gender),
                                       l_trans, alpha)
                    arr[i] = orig - eps
                    down = combined_loss(gr_loss(head_forward(h, head), gender),
                                         l_trans, alpha)
                    arr[i] = orig
                    num[i] = (up - down) / (2 * eps)
                    it.iternext()
                scale = np.maximum(np.abs(ana), np.abs(num))
                assert np.all(np.abs(ana - num) <= np.maximum(1e-4 * scale, 1e-7)), name
            checked += 1


# ---------------------------------------------------------------------------
# 4. transducer stand-in correctness


def test_criterion_4_transducer_standin():
    with criterion(4, "forward recursion vs brute-force path enumeration", 10.0):
        rng = np.random.default_rng(321)
        combos = [(t, u) for t in range(1, 5) for u in range(0, 4)]
        lattices = 0
        while lattices < 200:
            t_len, u_len = combos[lattices % len(combos)]
            lattice, labels = _random_lattice(rng, t_len, u_len)
            got = transducer_loss_standin(lattice, labels)
            want = brute_force_transducer(lattice, labels)
            assert abs(got - want) <= 1e-9
            lattices += 1


# ---------------------------------------------------------------------------
# 5. loss closed forms


def test_criterion_5_loss_closed_forms():
    with criterion(5, "uniform CE closed form and alpha boundaries"):
        for t in (1, 3, 8, 17):
            o = np.full((t, 2), 0.5)
            assert abs(gr_loss(o, Gender.MALE) - t * math.log(2)) <= 1e-10
        assert combined_loss(2.5, 0.75, 0.0) == 0.75
        assert combined_loss(2.5, 0.75, 1.0) == 2.5


# ---------------------------------------------------------------------------
# 6. fine-tuning data structural fidelity


def _fixture_for_targets():
    utts = [
        Utterance(id=f"c{i}", transcript=f"I am example {i}",
                  translation="texto base", lang=Lang.ES,
                  speaker_gender=Gender.MALE if i % 2 == 0 else Gender.FEMALE)
        for i in range(8)
    ]
    pool = [
        Utterance(id=f"n{i}", transcript=f"There is an example {i}",
                  translation="texto neutro", lang=Lang.ES,
                  speaker_gender=Gender.MALE if i % 2 == 0 else Gender.FEMALE)
        for i in range(20)
    ]
    reforms = {u.id: ("texto masculino", "texto femenino") for u in utts}
    return utts, pool, reforms


def test_criterion_6_layout_structural_fidelity():
    with criterion(6, "mode/form/gender combinations and theta mixing"):
        utts, pool, reforms = _fixture_for_targets()

        three = build_targets(utts, reforms, pool,
                              MixConfig(theta_neut=0.2, seed=2,
                                        mode_layout=ModeLayout.THREE_MODE))
        debiased = [r for r in three if r.data_class is TargetClass.DEBIASED]
        combos = {(r.speaker_gender, r.form, r.sos.mode) for r in debiased}
        assert combos == {
            (Gender.MALE, GenderForm.MASCULINE, Mode.AUTO),
            (Gender.FEMALE, GenderForm.FEMININE, Mode.AUTO),
            (Gender.MALE, GenderForm.MASCULINE, Mode.MASC),
            (Gender.FEMALE, GenderForm.MASCULINE, Mode.MASC),
            (Gender.MALE, GenderForm.FEMININE, Mode.FEMI),
            (Gender.FEMALE, GenderForm.FEMININE, Mode.FEMI),
        }
        assert abs(neutral_fraction(three) - 0.2) <= 1.0 / len(three)

        one = build_targets(utts, reforms, pool,
                            MixConfig(theta_neut=0.2, seed=2,
                                      mode_layout=ModeLayout.ONE_MODE))
        one_debiased = [r for r in one if r.data_class is TargetClass.DEBIASED]
        assert {(r.speaker_gender, r.form, r.sos.mode) for r in one_debiased} == {
            (Gender.MALE, GenderForm.MASCULINE, None),
            (Gender.FEMALE, GenderForm.FEMININE, None),
        }
        assert abs(neutral_fraction(one) - 0.2) <= 1.0 / len(one)

        verdicts = tuple(contains_first_person_pronoun(s) for s in
                         ("I am a teacher", "She is a doctor", "There is a doctor"))
        assert verdicts == (True, False, False)


# ---------------------------------------------------------------------------
# 7. pipeline determinism


def _digest_dir(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*")) if p.is_file()
    }


def test_criterion_7_pipeline_determinism(tmp_path):
    with criterion(7, "select/build-targets/sweep byte-identical reruns"):
        corpus_path = tmp_path / "corpus.jsonl"
        rows = []
        for i in range(16):
            capable = i < 10
            rows.append({
                "id": f"u{i:03d}", "audio_ref": None,
                "transcript": f"I know case {i}" if capable else f"There is a case {i}",
                "translation": "estoy seguro de esto" if capable else "hay un caso aquí",
                "lang": "es",
                "speaker_gender": "male" if i % 2 == 0 else "female",
                "duration_s": 1.0,
            })
        corpus_path.write_text("".join(json.dumps(r) + "\n" for r in rows),
                               encoding="utf-8")

        def run(tag: str) -> Path:
            out = tmp_path / tag
            assert main(["select", "--corpus", str(corpus_path), "--seed", "11",
                         "--out-dir", str(out), "--sample-size", "6"]) == 0
            assert main(["reformulate", "--seed", "11", "--out-dir", str(out),
                         "--backend", "mock"]) == 0
            assert main(["build-targets", "--seed", "11", "--out-dir", str(out),
                         "--mode-layout", "both", "--theta-neut", "0.2"]) == 0
            assert main(["sweep", "--thetas", "0.2", "--alphas", "0,0.1",
                         "--seeds", "1,2", "--sweep-steps", "40",
                         "--sweep-utterances", "30", "--out-dir", str(out)]) == 0
            return out

        assert _digest_dir(run("a")) == _digest_dir(run("b"))


# ---------------------------------------------------------------------------
# 8. reformulation safety


def test_criterion_8_reformulation_safety():
    with criterion(8, "fault-injected referent edits quarantined, clean edits pass"):
        injected_ids = {f"f{i:03d}" for i in range(25)}
        utts = []
        for i in range(25):
            utts.append(Utterance(
                id=f"f{i:03d}", transcript=f"I agree with her {i}",
                translation=f"ella es jueza y yo estoy seguro del caso {i}",
                lang=Lang.ES, speaker_gender=Gender.MALE))
        for i in range(25):
            utts.append(Utterance(
                id=f"c{i:03d}", transcript=f"I am certain {i}",
                translation=f"estoy seguro del caso {i}",
                lang=Lang.ES, speaker_gender=Gender.MALE))

        backend = FaultInjectingBackend(MockChatBackend(lang=Lang.ES),
                                        {"jueza": "juez"})
        outcome = reformulate_batch(utts, Lang.ES, PromptStrategy.zero_shot(),
                                    backend, batch_size=8)
        assert not outcome.failures
        assert len(outcome.results) == 50

        lexicon = dict(__import__("gstd.resources", fromlist=["GENDER_PAIRS"])
                       .GENDER_PAIRS[Lang.ES])
        by_id = {u.id: u for u in utts}
        quarantined, passed = set(), set()
        for res in outcome.results:
            original = by_id[res.utterance_id].translation
            ok = (validate_reformulation(original, res.masculine, lexicon).passed
                  and validate_reformulation(original, res.feminine, lexicon).passed)
            (passed if ok else quarantined).add(res.utterance_id)
        assert quarantined == injected_ids
        assert passed == {u.id for u in utts} - injected_ids


# ---------------------------------------------------------------------------
# 9. toy GR-loss trend


def test_criterion_9_gr_loss_trend():
    with criterion(9, "separable training accuracy and theta=0.8 trend", 120.0):
        dataset = make_separable_dataset(200, 6, 8, seed=3)
        _, trace = train_toy_head(dataset, MixConfig(alpha=0.1, seed=3),
                                  steps=500, lr=0.1, seed=3)
        assert trace.final_accuracy >= 0.95

        report = sweep([0.8], [0.0, 0.1], [1, 2, 3, 4, 5], SweepConfig())
        with_gr = {r.seed: r.proxy_gta for r in report.rows if r.alpha == 0.1}
        without = {r.seed: r.proxy_gta for r in report.rows if r.alpha == 0.0}
        wins = sum(with_gr[s] > without[s] for s in with_gr)
        assert wins >= 4


# ---------------------------------------------------------------------------
# 10. evaluation-set ingestion


def test_criterion_10_mustshe_ingestion(tmp_path):
    with criterion(10, "dev/test split and wrong-reference floor scoring"):
        header = "ID\tSRC\tREF\tWRONG-REF\tGENDER\tCATEGORY\tGENDERTERMS\tSET"
        rows = []
        specs = [
            ("1F", "female", "soy profesora de historia", "profesora>profesor"),
            ("1M", "male", "estoy cansado hoy también", "cansado>cansada"),
            ("2F", "female", "ella es doctora de verdad", "doctora>doctor"),
            ("2M", "male", "él es maestro del pueblo", "maestro>maestra"),
        ]
        for i in range(12):
            cat, gender, ref, terms = specs[i % 4]
            correct, wrong = terms.split(">")
            wrong_ref = ref.replace(correct, wrong)
            split = "dev" if i % 3 == 0 else "test-common"
            rows.append(f"m{i:02d}\tsrc {i}\t{ref}\t{wrong_ref}\t{gender}\t{cat}\t{terms}\t{split}")
        path = tmp_path / "mustshe.tsv"
        path.write_text("\n".join([header] + rows) + "\n", encoding="utf-8")

        records = load_mustshe(path)
        assert len(records) == 12
        dev = [r for r in records if r.split is Split.DEV]
        test = [r for r in records if r.split is Split.TEST]
        assert len(dev) == 4 and len(test) == 8
        assert {r.id for r in dev} | {r.id for r in test} == {r.id for r in records}

        hyps = {r.id: r.wrong_ref for r in test}
        report = score(hyps, records, Split.TEST)
        assert report.cells  # populated
        for cell in report.cells.values():
            assert cell.covered == cell.total_terms > 0
            assert cell.coverage == 1.0
            assert cell.gta == 0.0
