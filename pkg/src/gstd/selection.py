"""Data selection and fine-tuning target construction.

Pipeline stages covered here:

* first-person-pronoun filtering (only such utterances tend to yield
  speaker-gendered translations) and gender-balanced sampling;
* assembly of debiased / neutral fine-tuning targets under a one-mode or
  three-mode SOS-token layout, with the neutral share of the emitted stream
  pinned to ``theta_neut`` by seeded subsampling of whichever side is
  over-represented.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Gender, GenderForm, Lang, Utterance

DEFAULT_PRONOUNS = frozenset({"i", "me", "my", "mine", "myself"})

_LOWER_WORD_RE = re.compile(r"[a-z]+")
_SOS_RE = re.compile(r"^<(ES|IT)(?:_(AUTO|MASC|FEMI))?>$")


class Mode(str, Enum):
    AUTO = "AUTO"
    MASC = "MASC"
    FEMI = "FEMI"


class ModeLayout(str, Enum):
    ONE_MODE = "one"
    THREE_MODE = "three"


class NeutralModeAssignment(str, Enum):
    ROUND_ROBIN = "round_robin"
    MASC_ONLY = "masc_only"


class TargetClass(str, Enum):
    DEBIASED = "debiased"
    NEUTRAL = "neutral"


class TextSource(str, Enum):
    ORIGINAL = "original"
    REFORMULATED = "reformulated"


@dataclass(frozen=True)
class SosToken:
    """Start-of-sentence token: ``<ES>`` bare, ``<ES_AUTO>`` etc. with a mode."""

    lang: Lang
    mode: Mode | None = None

    def render(self) -> str:
        base = self.lang.value.upper()
        return f"<{base}>" if self.mode is None else f"<{base}_{self.mode.value}>"

    @classmethod
    def parse(cls, text: str) -> "SosToken":
        m = _SOS_RE.match(text)
        if not m:
            raise ValueError(f"malformed SOS token '{text}'")
        return cls(Lang(m.group(1).lower()), Mode(m.group(2)) if m.group(2) else None)


@dataclass(frozen=True)
class TargetRecord:
    """One finalized fine-tuning example (SOS token kept out of the text)."""

    utterance_id: str
    sos: SosToken
    target_text: str
    speaker_gender: Gender
    form: GenderForm
    data_class: TargetClass
    source: TextSource

    def __post_init__(self):
        if self.data_class is TargetClass.DEBIASED and self.form is GenderForm.NEUTRAL:
            raise ValueError("debiased record cannot carry the neutral form")
        if self.data_class is TargetClass.NEUTRAL and self.form is not GenderForm.NEUTRAL:
            raise ValueError("neutral record must carry the neutral form")
        if self.target_text.startswith(self.sos.render()):
            raise ValueError("target_text must not embed the SOS token")

    def to_dict(self) -> dict:
        return {
            "id": self.utterance_id,
            "sos": self.sos.render(),
            "target_text": self.target_text,
            "speaker_gender": self.speaker_gender.value,
            "form": self.form.value,
            "data_class": self.data_class.value,
            "source": self.source.value,
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "TargetRecord":
        return cls(
            utterance_id=str(obj["id"]),
            sos=SosToken.parse(str(obj["sos"])),
            target_text=str(obj["target_text"]),
            speaker_gender=Gender(obj["speaker_gender"]),
            form=GenderForm(obj["form"]),
            data_class=TargetClass(obj["data_class"]),
            source=TextSource(obj["source"]),
        )

    def training_line(self) -> str:
        return f"{self.sos.render()}\t{self.target_text}"


@dataclass(frozen=True)
class MixConfig:
    theta_neut: float = 0.2
    alpha: float = 0.1
    seed: int = 0
    mode_layout: ModeLayout = ModeLayout.ONE_MODE
    neutral_mode_assignment: NeutralModeAssignment = NeutralModeAssignment.ROUND_ROBIN

    def __post_init__(self):
        if not 0.0 <= self.theta_neut <= 1.0:
            raise ValueError(f"theta_neut must be in [0,1], got {self.theta_neut}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0,1], got {self.alpha}")


@dataclass(frozen=True)
class SelectionStats:
    total: int
    selected: int
    male: int
    female: int

    @property
    def fraction(self) -> float:
        return self.selected / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "selected": self.selected,
            "fraction": self.fraction,
            "male": self.male,
            "female": self.female,
        }


def contains_first_person_pronoun(
    transcript: str, pronouns: frozenset[str] | set[str] = DEFAULT_PRONOUNS
) -> bool:
    """True iff any case-folded, punctuation-delimited token is in the set."""
    return any(tok in pronouns for tok in _LOWER_WORD_RE.findall(transcript.lower()))


def select_subset(
    corpus: Sequence[Utterance],
    pronouns: frozenset[str] | set[str] = DEFAULT_PRONOUNS,
) -> tuple[list[Utterance], SelectionStats]:
    """Keep utterances that pass the pronoun filter and have a known gender."""
    selected = [
        u for u in corpus
        if u.speaker_gender is not Gender.UNKNOWN
        and contains_first_person_pronoun(u.transcript, pronouns)
    ]
    stats = SelectionStats(
        total=len(corpus),
        selected=len(selected),
        male=sum(1 for u in selected if u.speaker_gender is Gender.MALE),
        female=sum(1 for u in selected if u.speaker_gender is Gender.FEMALE),
    )
    return selected, stats


def neutral_subset(
    corpus: Sequence[Utterance],
    pronouns: frozenset[str] | set[str] = DEFAULT_PRONOUNS,
) -> list[Utterance]:
    """The complement pool: no first-person pronoun, known speaker gender."""
    return [
        u for u in corpus
        if u.speaker_gender is not Gender.UNKNOWN
        and not contains_first_person_pronoun(u.transcript, pronouns)
    ]


def sample_balanced(pool: Sequence[Utterance], n: int, seed: int) -> list[Utterance]:
    """Draw n/2 male + n/2 female without replacement, seeded."""
    if n % 2:
        raise ValueError(f"sample size must be even, got {n}")
    half = n // 2
    rng = np.random.default_rng(seed)
    out: list[Utterance] = []
    for gender in (Gender.MALE, Gender.FEMALE):
        stratum = [u for u in pool if u.speaker_gender is gender]
        if len(stratum) < half:
            raise ValueError(
                f"{gender.value} stratum too small: need {half}, have {len(stratum)}"
            )
        order = rng.permutation(len(stratum))[:half]
        out.extend(stratum[i] for i in order)
    return out


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _subsample(items: list, k: int, rng: np.random.Generator) -> list:
    """k items drawn without replacement, original order preserved."""
    if k >= len(items):
        return list(items)
    idx = sorted(rng.choice(len(items), size=k, replace=False).tolist())
    return [items[i] for i in idx]


def _mix_counts(
    n_selected: int, n_neutral: int, records_per_utt: int, theta: float
) -> tuple[int, int]:
    """Pick (kept selected utterances, kept neutral records).

    Whenever the pools allow it, the neutral share of the emitted stream ends
    up within one record of ``theta``; with a starved neutral pool the
    closest achievable mix is used.
    """
    d_full = n_selected * records_per_utt
    if theta == 0.0 or n_neutral == 0:
        return n_selected, 0
    if theta == 1.0:
        return 0, n_neutral

    want_neutral = _round_half_up(d_full * theta / (1.0 - theta))
    if want_neutral <= n_neutral:
        return n_selected, want_neutral

    # Neutral pool is the limiting side: shrink the debiased side (whole
    # utterances, so three-mode triples stay intact) and re-trim the neutral
    # count to the closest fraction. Candidate utterance counts around the
    # continuous optimum are compared by achieved deviation.
    ideal_utts = n_neutral * (1.0 - theta) / (theta * records_per_utt)
    candidates = {0, int(math.floor(ideal_utts)), int(math.floor(ideal_utts)) + 1}
    best: tuple[float, int, int, int] | None = None
    for utts in sorted(candidates):
        if utts > n_selected:
            continue
        d = utts * records_per_utt
        if utts == 0:
            neutral = n_neutral
        else:
            neutral = min(n_neutral, _round_half_up(d * theta / (1.0 - theta)))
        total = d + neutral
        if total == 0:
            continue
        deviation = abs(neutral / total - theta)
        key = (deviation, -total)
        if best is None or key < best[:2]:
            best = (deviation, -total, utts, neutral)
    assert best is not None
    return best[2], best[3]


def _debiased_records(u: Utterance, masc: str, femi: str, layout: ModeLayout):
    matched = masc if u.speaker_gender is Gender.MALE else femi
    matched_form = (
        GenderForm.MASCULINE if u.speaker_gender is Gender.MALE else GenderForm.FEMININE
    )
    if layout is ModeLayout.ONE_MODE:
        yield TargetRecord(u.id, SosToken(u.lang), matched, u.speaker_gender,
                           matched_form, TargetClass.DEBIASED, TextSource.REFORMULATED)
        return
    yield TargetRecord(u.id, SosToken(u.lang, Mode.AUTO), matched, u.speaker_gender,
                       matched_form, TargetClass.DEBIASED, TextSource.REFORMULATED)
    yield TargetRecord(u.id, SosToken(u.lang, Mode.MASC), masc, u.speaker_gender,
                       GenderForm.MASCULINE, TargetClass.DEBIASED, TextSource.REFORMULATED)
    yield TargetRecord(u.id, SosToken(u.lang, Mode.FEMI), femi, u.speaker_gender,
                       GenderForm.FEMININE, TargetClass.DEBIASED, TextSource.REFORMULATED)


def build_targets(
    selected: Sequence[Utterance],
    reformulations: Mapping[str, tuple[str, str]],
    neutral: Sequence[Utterance],
    cfg: MixConfig,
) -> list[TargetRecord]:
    """Emit the fine-tuning target stream for the configured mode layout.

    ``reformulations`` maps utterance id to (masculine, feminine) texts and
    must cover every selected utterance. Debiased records come first (in
    input order), the neutral block after; both sides are seeded-subsampled
    as needed so neutral records make up ``cfg.theta_neut`` of the stream.
    """
    for u in selected:
        if u.speaker_gender is Gender.UNKNOWN:
            raise ValueError(f"utterance '{u.id}' has unknown speaker gender")
        if u.id not in reformulations:
            raise ValueError(f"missing reformulation for utterance '{u.id}'")
    if cfg.theta_neut == 1.0 and not neutral:
        raise ValueError("theta_neut=1 requires a non-empty neutral pool")

    per_utt = 3 if cfg.mode_layout is ModeLayout.THREE_MODE else 1
    rng = np.random.default_rng(cfg.seed)
    keep_utts, keep_neutral = _mix_counts(len(selected), len(neutral), per_utt,
                                          cfg.theta_neut)
    kept_selected = _subsample(list(selected), keep_utts, rng)
    kept_neutral = _subsample(list(neutral), keep_neutral, rng)

    records: list[TargetRecord] = []
    for u in kept_selected:
        masc, femi = reformulations[u.id]
        records.extend(_debiased_records(u, masc, femi, cfg.mode_layout))

    neutral_modes = (Mode.AUTO, Mode.MASC, Mode.FEMI)
    for i, u in enumerate(kept_neutral):
        if cfg.mode_layout is ModeLayout.ONE_MODE:
            mode = None
        elif cfg.neutral_mode_assignment is NeutralModeAssignment.MASC_ONLY:
            mode = Mode.MASC
        else:
            mode = neutral_modes[i % 3]
        records.append(TargetRecord(u.id, SosToken(u.lang, mode), u.translation,
                                    u.speaker_gender, GenderForm.NEUTRAL,
                                    TargetClass.NEUTRAL, TextSource.ORIGINAL))
    return records


def neutral_fraction(records: Iterable[TargetRecord]) -> float:
    records = list(records)
    if not records:
        return 0.0
    n = sum(1 for r in records if r.data_class is TargetClass.NEUTRAL)
    return n / len(records)
