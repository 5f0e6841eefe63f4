"""Gender-representation loss, its gradients, and a desk-scale training harness.

The loss attaches a small classifier head to per-frame encoder features:
``o_t = softmax(W_out relu(W_g h_t + b_g))``, with the frame-summed cross
entropy against the utterance's speaker gender acting as the representation
loss. The combined objective mixes it with a translation loss via ``alpha``;
the translation side is realized by a forward-recursion transducer loss over
a toy alignment lattice, so the full objective and its gradients can be
exercised end to end without a real encoder.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels, selection
from .corpus import Gender, Lang, Utterance
from .kernels import PROB_FLOOR  # noqa: F401  (re-exported: loss clamping floor)
from .selection import MixConfig, ModeLayout, TargetClass

GENDER_CLASS = {Gender.MALE: 0, Gender.FEMALE: 1}


@dataclass(frozen=True)
class FrameMatrix:
    """A (T, D) block of per-frame features standing in for encoder output."""

    values: np.ndarray
    utterance_id: str

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"frame matrix must be (T>=1, D>=1), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("frame matrix contains non-finite values")
        object.__setattr__(self, "values", values)


@dataclass
class GenderHead:
    """Learnable parameters of the frame-level gender classifier."""

    w_g: np.ndarray
    b_g: np.ndarray
    w_out: np.ndarray

    def __post_init__(self):
        self.w_g = np.ascontiguousarray(self.w_g, dtype=np.float64)
        self.b_g = np.ascontiguousarray(self.b_g, dtype=np.float64)
        self.w_out = np.ascontiguousarray(self.w_out, dtype=np.float64)
        hid, _ = self.w_g.shape
        if self.b_g.shape != (hid,):
            raise ValueError(f"b_g shape {self.b_g.shape} does not match hidden size {hid}")
        if self.w_out.shape != (2, hid):
            raise ValueError(f"w_out shape {self.w_out.shape} must be (2, {hid})")
        for name, arr in (("w_g", self.w_g), ("b_g", self.b_g), ("w_out", self.w_out)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")

    @classmethod
    def initial(cls, feature_dim: int, hidden_dim: int, seed: int, scale: float = 0.5):
        """Random hidden layer, zero output layer (untrained output = chance)."""
        rng = np.random.default_rng(seed)
        return cls(
            w_g=scale * rng.standard_normal((hidden_dim, feature_dim)),
            b_g=np.zeros(hidden_dim),
            w_out=np.zeros((2, hidden_dim)),
        )

    def copy(self) -> "GenderHead":
        return GenderHead(self.w_g.copy(), self.b_g.copy(), self.w_out.copy())

    def save(self, path: str | Path) -> None:
        payload = {
            "feature_dim": int(self.w_g.shape[1]),
            "hidden_dim": int(self.w_g.shape[0]),
            "w_g": self.w_g.ravel().tolist(),
            "b_g": self.b_g.tolist(),
            "w_out": self.w_out.ravel().tolist(),
        }
        Path(path).write_text(json.dumps(payload) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "GenderHead":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        d, h = payload["feature_dim"], payload["hidden_dim"]
        return cls(
            w_g=np.array(payload["w_g"], dtype=np.float64).reshape(h, d),
            b_g=np.array(payload["b_g"], dtype=np.float64),
            w_out=np.array(payload["w_out"], dtype=np.float64).reshape(2, h),
        )


def _frames_of(frames: FrameMatrix | np.ndarray) -> np.ndarray:
    if isinstance(frames, FrameMatrix):
        return frames.values
    return np.ascontiguousarray(frames, dtype=np.float64)


def head_forward(frames: FrameMatrix | np.ndarray, head: GenderHead) -> np.ndarray:
    """Per-frame gender probabilities, shape (T, 2); rows sum to 1."""
    h = _frames_of(frames)
    if h.shape[1] != head.w_g.shape[1]:
        raise ValueError(
            f"feature dim mismatch: frames have {h.shape[1]}, head expects {head.w_g.shape[1]}"
        )
    return kernels.head_forward(h, head.w_g, head.b_g, head.w_out)


def _class_of(gender: Gender) -> int:
    if gender not in GENDER_CLASS:
        raise ValueError(f"gender '{gender.value}' has no class index (need male/female)")
    return GENDER_CLASS[gender]


def gr_loss(probs: np.ndarray, gender: Gender, *, normalize: bool = False) -> float:
    """Frame-summed cross entropy against the speaker gender.

    ``normalize`` divides by the frame count; default is the plain sum.
    """
    cls = _class_of(gender)
    probs = np.ascontiguousarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] != 2:
        raise ValueError(f"probability matrix must be (T, 2), got {probs.shape}")
    loss = float(kernels.gr_loss(probs, cls))
    return loss / probs.shape[0] if normalize else loss


def combined_loss(l_gr: float, l_trans: float, alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0,1], got {alpha}")
    return alpha * l_gr + (1.0 - alpha) * l_trans


@dataclass
class HeadGradients:
    w_g: np.ndarray
    b_g: np.ndarray
    w_out: np.ndarray


def head_gradients(
    frames: FrameMatrix | np.ndarray,
    head: GenderHead,
    gender: Gender,
    alpha: float,
    l_trans: float = 0.0,
) -> HeadGradients:
    """Analytic gradients of the combined loss w.r.t. the head parameters.

    The translation loss carries no head dependence, so its value ``l_trans``
    does not enter the gradients; everything scales by ``alpha``.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0,1], got {alpha}")
    cls = _class_of(gender)
    h = _frames_of(frames)
    if h.shape[1] != head.w_g.shape[1]:
        raise ValueError(
            f"feature dim mismatch: frames have {h.shape[1]}, head expects {head.w_g.shape[1]}"
        )
    d_w_g, d_b_g, d_w_out = kernels.head_backward(h, head.w_g, head.b_g, head.w_out, cls)
    return HeadGradients(alpha * d_w_g, alpha * d_b_g, alpha * d_w_out)


def transducer_loss_standin(log_probs: np.ndarray, labels: Sequence[int]) -> float:
    """Forward-recursion alignment loss over a (T+1, U+1, V+1) lattice.

    Symbol 0 is blank; ``labels`` are symbol ids in 1..V. The frame axis is
    1-indexed (row 0 unused) and every alignment ends with the blank at
    position [T, U].
    """
    lp = np.ascontiguousarray(log_probs, dtype=np.float64)
    lab = np.ascontiguousarray(labels, dtype=np.int64)
    if lp.ndim != 3:
        raise ValueError(f"lattice must be 3-dimensional, got shape {lp.shape}")
    t_len, u_len, vocab = lp.shape[0] - 1, lp.shape[1] - 1, lp.shape[2] - 1
    if t_len < 1:
        raise ValueError("lattice needs at least one frame (T >= 1)")
    if lab.ndim != 1 or lab.shape[0] != u_len:
        raise ValueError(f"label sequence length {lab.shape} does not match lattice U={u_len}")
    if u_len and (lab.min() < 1 or lab.max() > vocab):
        raise ValueError(f"labels must be symbol ids in 1..{vocab}")
    if not np.all(np.isfinite(lp)):
        raise ValueError("lattice contains non-finite log-probabilities")
    return float(kernels.transducer_forward(lp, lab))


@dataclass
class TrainTrace:
    """Per-step losses plus the end-of-training dataset accuracy."""

    l_gr: list[float] = field(default_factory=list)
    l_trans: list[float] = field(default_factory=list)
    l_comb: list[float] = field(default_factory=list)
    step_accuracy: list[float] = field(default_factory=list)
    final_accuracy: float = 0.0


def frame_accuracy(dataset: Sequence[tuple[FrameMatrix, Gender]], head: GenderHead) -> float:
    """Fraction of frames whose argmax prediction matches the speaker gender."""
    hit = 0
    total = 0
    for frames, gender in dataset:
        cls = _class_of(gender)
        o = head_forward(frames, head)
        hit += int((np.argmax(o, axis=1) == cls).sum())
        total += o.shape[0]
    return hit / total if total else 0.0


def utterance_accuracy(dataset: Sequence[tuple[FrameMatrix, Gender]], head: GenderHead) -> float:
    """Majority vote over frame predictions, scored per utterance."""
    hit = 0
    for frames, gender in dataset:
        cls = _class_of(gender)
        o = head_forward(frames, head)
        votes = np.bincount(np.argmax(o, axis=1), minlength=2)
        hit += int(np.argmax(votes) == cls)
    return hit / len(dataset) if dataset else 0.0


def _toy_lattice(rng: np.random.Generator, t_len: int = 3, u_len: int = 2, vocab: int = 3):
    raw = rng.standard_normal((t_len + 1, u_len + 1, vocab + 1))
    raw -= raw.max(axis=2, keepdims=True)
    lse = np.log(np.exp(raw).sum(axis=2, keepdims=True))
    labels = rng.integers(1, vocab + 1, size=u_len)
    return raw - lse, labels


def train_toy_head(
    dataset: Sequence[tuple[FrameMatrix, Gender]],
    cfg: MixConfig,
    steps: int,
    lr: float,
    seed: int,
    hidden_dim: int = 8,
) -> tuple[GenderHead, TrainTrace]:
    """SGD on the combined loss, one utterance per step (cyclic order).

    The translation loss comes from a fixed toy lattice drawn per utterance;
    it has no head dependence, so with ``cfg.alpha == 0`` the head never
    moves. Deterministic given ``seed``.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    genders = {g for _, g in dataset}
    if genders != {Gender.MALE, Gender.FEMALE}:
        raise ValueError("dataset must contain both male and female utterances")

    rng = np.random.default_rng(seed)
    feature_dim = dataset[0][0].values.shape[1]
    head = GenderHead.initial(feature_dim, hidden_dim, seed)
    l_trans_fixed = []
    for _ in dataset:
        lattice, labels = _toy_lattice(rng)
        l_trans_fixed.append(transducer_loss_standin(lattice, labels))

    trace = TrainTrace()
    for step in range(steps):
        idx = step % len(dataset)
        frames, gender = dataset[idx]
        cls = _class_of(gender)
        o = head_forward(frames, head)
        l_gr = gr_loss(o, gender)
        l_trans = l_trans_fixed[idx]
        trace.l_gr.append(l_gr)
        trace.l_trans.append(l_trans)
        trace.l_comb.append(combined_loss(l_gr, l_trans, cfg.alpha))
        trace.step_accuracy.append(float((np.argmax(o, axis=1) == cls).mean()))
        grads = head_gradients(frames, head, gender, cfg.alpha, l_trans)
        head.w_g -= lr * grads.w_g
        head.b_g -= lr * grads.b_g
        head.w_out -= lr * grads.w_out
    trace.final_accuracy = frame_accuracy(dataset, head)
    return head, trace


def make_separable_dataset(
    n_utterances: int,
    frames_per_utt: int,
    feature_dim: int,
    seed: int,
    mean_shift: float = 1.0,
    sigma: float = 0.3,
) -> list[tuple[FrameMatrix, Gender]]:
    """Alternating-gender utterances with class means at +/- mean_shift."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_utterances):
        gender = Gender.MALE if i % 2 == 0 else Gender.FEMALE
        sign = 1.0 if gender is Gender.MALE else -1.0
        values = sign * mean_shift + sigma * rng.standard_normal((frames_per_utt, feature_dim))
        out.append((FrameMatrix(values, f"toy{i:04d}"), gender))
    return out


# ---------------------------------------------------------------------------
# theta x alpha sweep harness


@dataclass(frozen=True)
class SweepConfig:
    n_utterances: int = 200
    frames_per_utt: int = 6
    feature_dim: int = 8
    hidden_dim: int = 8
    steps: int = 500
    lr: float = 0.1
    eval_utterances: int = 100
    mean_shift: float = 1.0
    sigma: float = 0.3
    workers: int = 1


@dataclass(frozen=True)
class SweepRow:
    theta_neut: float
    alpha: float
    seed: int
    final_accuracy: float
    proxy_gta: float
    l_gr_final: float
    l_trans_final: float


@dataclass
class SweepReport:
    rows: list[SweepRow]

    CSV_HEADER = ("theta_neut", "alpha", "seed", "final_accuracy", "proxy_gta",
                  "l_gr_final", "l_trans_final")

    def summary(self) -> dict[tuple[float, float], dict[str, float]]:
        cells: dict[tuple[float, float], list[float]] = {}
        for row in self.rows:
            cells.setdefault((row.theta_neut, row.alpha), []).append(row.proxy_gta)
        return {
            key: {
                "mean_proxy_gta": float(np.mean(vals)),
                "std_proxy_gta": float(np.std(vals)),
                "runs": len(vals),
            }
            for key, vals in sorted(cells.items())
        }

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.CSV_HEADER)
            for row in self.rows:
                writer.writerow([
                    format(row.theta_neut, ".6g"),
                    format(row.alpha, ".6g"),
                    row.seed,
                    format(row.final_accuracy, ".10g"),
                    format(row.proxy_gta, ".10g"),
                    format(row.l_gr_final, ".10g"),
                    format(row.l_trans_final, ".10g"),
                ])


def _toy_corpus(n_utterances: int) -> list[Utterance]:
    """Half pronoun-bearing, half neutral; genders alternate within each half."""
    utts = []
    for i in range(n_utterances):
        capable = i < n_utterances // 2
        transcript = (
            f"I think this is example {i}" if capable else f"There is an example {i}"
        )
        utts.append(Utterance(
            id=f"u{i:05d}",
            transcript=transcript,
            translation=f"ejemplo {i}",
            lang=Lang.ES,
            speaker_gender=Gender.MALE if i % 2 == 0 else Gender.FEMALE,
        ))
    return utts


def build_mixed_dataset(
    theta_neut: float, seed: int, cfg: SweepConfig
) -> list[tuple[FrameMatrix, Gender]]:
    """A theta-mixed feature dataset built through the selection pipeline.

    Debiased records get gender-informative frames (class means at
    +/- mean_shift); neutral records get zero-mean frames, so the gender
    signal available to the head thins out as theta grows.
    """
    corpus = _toy_corpus(cfg.n_utterances)
    chosen, _ = selection.select_subset(corpus)
    pool = selection.neutral_subset(corpus)
    reforms = {u.id: (u.translation, u.translation) for u in chosen}
    mix = MixConfig(theta_neut=theta_neut, seed=seed, mode_layout=ModeLayout.ONE_MODE)
    records = selection.build_targets(chosen, reforms, pool, mix)

    rng = np.random.default_rng([seed, 777])
    dataset = []
    for rec in records:
        sign = 1.0 if rec.speaker_gender is Gender.MALE else -1.0
        mean = sign * cfg.mean_shift if rec.data_class is TargetClass.DEBIASED else 0.0
        values = mean + cfg.sigma * rng.standard_normal((cfg.frames_per_utt, cfg.feature_dim))
        dataset.append((FrameMatrix(values, rec.utterance_id), rec.speaker_gender))
    return dataset


def _run_cell(theta: float, alpha: float, seed: int, cfg: SweepConfig) -> SweepRow:
    dataset = build_mixed_dataset(theta, seed, cfg)
    mix = MixConfig(theta_neut=theta, alpha=alpha, seed=seed)
    head, trace = train_toy_head(dataset, mix, cfg.steps, cfg.lr, seed,
                                 hidden_dim=cfg.hidden_dim)
    eval_rng_seed = [seed, 9719]
    eval_set = _informative_eval_set(cfg, eval_rng_seed)
    return SweepRow(
        theta_neut=theta,
        alpha=alpha,
        seed=seed,
        final_accuracy=trace.final_accuracy,
        proxy_gta=utterance_accuracy(eval_set, head),
        l_gr_final=trace.l_gr[-1] if trace.l_gr else 0.0,
        l_trans_final=trace.l_trans[-1] if trace.l_trans else 0.0,
    )


def _informative_eval_set(cfg: SweepConfig, seed) -> list[tuple[FrameMatrix, Gender]]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(cfg.eval_utterances):
        gender = Gender.MALE if i % 2 == 0 else Gender.FEMALE
        sign = 1.0 if gender is Gender.MALE else -1.0
        values = sign * cfg.mean_shift + cfg.sigma * rng.standard_normal(
            (cfg.frames_per_utt, cfg.feature_dim))
        out.append((FrameMatrix(values, f"eval{i:04d}"), gender))
    return out


def sweep(
    theta_values: Sequence[float],
    alpha_values: Sequence[float],
    seeds: Sequence[int],
    cfg: SweepConfig | None = None,
) -> SweepReport:
    """Train one head per (theta, alpha, seed) cell and collect proxy scores."""
    if not theta_values or not alpha_values or not seeds:
        raise ValueError("sweep grids must be non-empty")
    cfg = cfg or SweepConfig()
    cells = [(t, a, s) for t in theta_values for a in alpha_values for s in seeds]
    if cfg.workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(lambda c: _run_cell(*c, cfg), cells))
    else:
        rows = [_run_cell(t, a, s, cfg) for t, a, s in cells]
    rows.sort(key=lambda r: (r.theta_neut, r.alpha, r.seed))
    return SweepReport(rows)
