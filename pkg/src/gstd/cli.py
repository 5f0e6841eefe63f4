"""Command-line pipeline: select, reformulate, build-targets, score, sweep.

Every command takes an optional JSON config file plus flags (flags win),
validates the full configuration before touching the filesystem, and writes
its artifacts under the output directory together with a manifest of content
hashes. Outputs are byte-deterministic for a fixed config and seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from . import __version__, corpus, genderloss, metrics, reformulate, selection
from .corpus import Gender, Lang, Split
from .selection import MixConfig, ModeLayout, NeutralModeAssignment


class ConfigError(Exception):
    pass


@dataclass
class PipelineConfig:
    corpus: str | None = None
    schema: str = "jsonl-v1"
    mustshe: str | None = None
    lang: str = "es"
    pronouns: list[str] | None = None
    sample_size: int | None = None
    strategy: str = "few-shot-cot"
    shots: int = 10
    backend: str = "mock"
    request_mode: str = "both"
    batch_size: int = 8
    retries: int = 2
    max_workers: int = 1
    requests_per_minute: float | None = None
    fault_tokens: dict[str, str] | None = None
    theta_neut: float = 0.2
    alpha: float = 0.1
    seed: int | None = None
    mode_layout: str = "three"
    neutral_mode_assignment: str = "round_robin"
    emit_training_text: bool = False
    out_dir: str = "out"
    format: str = "table"
    # sweep grid + harness knobs
    thetas: list[float] | None = None
    alphas: list[float] | None = None
    seeds: list[int] | None = None
    sweep_utterances: int = 200
    sweep_steps: int = 500
    sweep_lr: float = 0.1
    sweep_eval_utterances: int = 100
    # inter-command file names (relative to out_dir unless absolute)
    selected_file: str = "selected.jsonl"
    neutral_file: str = "neutral.jsonl"
    reformulations_file: str = "reformulations.jsonl"

    def resolve(self, name: str) -> Path:
        p = Path(getattr(self, name))
        return p if p.is_absolute() else Path(self.out_dir) / p

    @property
    def lang_enum(self) -> Lang:
        return Lang(self.lang.lower())

    @property
    def pronoun_set(self) -> frozenset[str]:
        if self.pronouns is None:
            return selection.DEFAULT_PRONOUNS
        return frozenset(p.strip().lower() for p in self.pronouns if p.strip())

    def mix_config(self) -> MixConfig:
        if self.seed is None:
            raise ConfigError("--seed is required for this command")
        return MixConfig(
            theta_neut=self.theta_neut,
            alpha=self.alpha,
            seed=self.seed,
            mode_layout=_parse_layout(self.mode_layout),
            neutral_mode_assignment=NeutralModeAssignment(self.neutral_mode_assignment),
        )


def _parse_layout(name: str) -> ModeLayout:
    key = name.strip().lower()
    if key in ("one", "1", "one_mode", "1-mode"):
        return ModeLayout.ONE_MODE
    if key in ("three", "3", "three_mode", "3-mode"):
        return ModeLayout.THREE_MODE
    raise ConfigError(f"unknown mode layout '{name}' (expected one/three/both)")


def load_pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        known = {f.name for f in fields(PipelineConfig)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, value in data.items():
            setattr(cfg, key, value)
    for f in fields(PipelineConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(cfg, f.name, value)
    return cfg


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def _update_manifest(out_dir: Path, artifacts: list[Path]) -> None:
    manifest_path = out_dir / "manifest.json"
    entries: dict[str, str] = {}
    if manifest_path.exists():
        entries = json.loads(manifest_path.read_text(encoding="utf-8")).get("artifacts", {})
    for artifact in artifacts:
        rel = os.path.relpath(artifact, out_dir)
        entries[rel] = _sha256_file(artifact)
    payload = {"artifacts": dict(sorted(entries.items()))}
    manifest_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require(cfg: PipelineConfig, *names: str) -> None:
    for name in names:
        if getattr(cfg, name) in (None, ""):
            raise ConfigError(f"missing required setting '{name}'")


def _require_file(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


# ---------------------------------------------------------------------------
# commands


def cmd_select(cfg: PipelineConfig) -> int:
    _require(cfg, "corpus")
    if cfg.seed is None:
        raise ConfigError("--seed is required for select")
    if cfg.sample_size is not None and cfg.sample_size % 2:
        raise ConfigError(f"sample size must be even, got {cfg.sample_size}")
    corpus_path = _require_file(cfg.corpus, "corpus file")

    loaded = corpus.load_corpus(corpus_path, cfg.schema)
    chosen, stats = selection.select_subset(loaded.records, cfg.pronoun_set)
    pool = selection.neutral_subset(loaded.records, cfg.pronoun_set)
    sampled = chosen
    if cfg.sample_size is not None:
        sampled = selection.sample_balanced(chosen, cfg.sample_size, cfg.seed)

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    selected_path = cfg.resolve("selected_file")
    neutral_path = cfg.resolve("neutral_file")
    stats_path = out_dir / "selection_stats.json"
    corpus.write_corpus(sampled, selected_path)
    corpus.write_corpus(pool, neutral_path)
    _write_json(stats_path, {
        **stats.to_dict(),
        "sampled": len(sampled),
        "neutral_pool": len(pool),
        "rejected_rows": [[r.row, r.reason] for r in loaded.rejects],
        "seed": cfg.seed,
    })
    _update_manifest(out_dir, [selected_path, neutral_path, stats_path])
    print(f"selected {stats.selected}/{stats.total} utterances "
          f"(fraction {stats.fraction:.3f}, male {stats.male}, female {stats.female}); "
          f"sampled {len(sampled)}; neutral pool {len(pool)}")
    return 0


def _make_backend(cfg: PipelineConfig):
    if cfg.backend == "mock":
        backend = reformulate.MockChatBackend(lang=cfg.lang_enum)
    elif cfg.backend == "http":
        if not os.environ.get(reformulate.ENV_ENDPOINT):
            raise ConfigError(
                f"backend=http requires the {reformulate.ENV_ENDPOINT} environment variable"
            )
        backend = reformulate.HttpChatBackend()
    else:
        raise ConfigError(f"unknown backend '{cfg.backend}' (expected mock or http)")
    if cfg.fault_tokens:
        backend = reformulate.FaultInjectingBackend(backend, cfg.fault_tokens)
    return backend


def cmd_reformulate(cfg: PipelineConfig) -> int:
    strategy = reformulate.PromptStrategy.parse(cfg.strategy, cfg.shots)
    backend = _make_backend(cfg)
    selected_path = _require_file(cfg.resolve("selected_file"), "selected corpus")
    utterances = corpus.load_utterances(selected_path)

    limiter = None
    if cfg.requests_per_minute:
        limiter = reformulate.RateLimiter(cfg.requests_per_minute)
    outcome = reformulate.reformulate_batch(
        utterances, cfg.lang_enum, strategy, backend,
        batch_size=cfg.batch_size, retries=cfg.retries,
        request_mode=cfg.request_mode, max_workers=cfg.max_workers,
        rate_limiter=limiter,
    )

    lexicon = dict(reformulate.GENDER_PAIRS[cfg.lang_enum])
    by_id = {u.id: u for u in utterances}
    accepted, quarantined, audit = [], [], []
    for result in outcome.results:
        utt = by_id[result.utterance_id]
        verdicts = [
            reformulate.validate_reformulation(utt.translation, result.masculine, lexicon),
            reformulate.validate_reformulation(utt.translation, result.feminine, lexicon),
        ]
        flags = [flag for v in verdicts for flag in v.flagged]
        entry = {
            "id": result.utterance_id,
            "masculine": result.masculine,
            "feminine": result.feminine,
            "backend": result.backend,
            "raw_response_ref": result.raw_response_ref,
            "prompt_version": reformulate.PROMPT_VERSION,
        }
        audit.append({
            "utterance_id": result.utterance_id,
            "prompt_hash": outcome.prompt_hashes[result.utterance_id],
            "response_hash": result.raw_response_ref,
            "verdict": "pass" if not flags else
                       "flag:" + ",".join(f"{a or '~'}>{b or '~'}" for a, b in flags),
        })
        if flags:
            quarantined.append({**entry, "flags": [list(f) for f in flags]})
        else:
            accepted.append(entry)

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reform_path = cfg.resolve("reformulations_file")
    quarantine_path = out_dir / "quarantine.jsonl"
    audit_path = out_dir / "audit.jsonl"
    summary_path = out_dir / "reformulate_summary.json"
    _write_jsonl(reform_path, accepted)
    _write_jsonl(quarantine_path, quarantined)
    _write_jsonl(audit_path, audit)
    _write_json(summary_path, {
        "accepted": len(accepted),
        "quarantined": len(quarantined),
        "failed_chunks": [
            {"utterance_ids": list(f.utterance_ids), "reason": f.reason}
            for f in outcome.failures
        ],
        "backend": backend.name,
        "prompt_version": reformulate.PROMPT_VERSION,
    })
    _update_manifest(out_dir, [reform_path, quarantine_path, audit_path, summary_path])
    print(f"accepted {len(accepted)}, quarantined {len(quarantined)}, "
          f"failed chunks {len(outcome.failures)}")
    return 1 if outcome.failures else 0


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    text = "".join(json.dumps(row, ensure_ascii=False) + "\n" for row in rows)
    path.write_text(text, encoding="utf-8")


def cmd_build_targets(cfg: PipelineConfig) -> int:
    if cfg.seed is None:
        raise ConfigError("--seed is required for build-targets")
    layouts = ([_parse_layout(cfg.mode_layout)] if cfg.mode_layout != "both"
               else [ModeLayout.ONE_MODE, ModeLayout.THREE_MODE])
    selected_path = _require_file(cfg.resolve("selected_file"), "selected corpus")
    neutral_path = _require_file(cfg.resolve("neutral_file"), "neutral corpus")
    reform_path = _require_file(cfg.resolve("reformulations_file"), "reformulations file")

    chosen = corpus.load_utterances(selected_path)
    pool = corpus.load_utterances(neutral_path)
    reforms: dict[str, tuple[str, str]] = {}
    with open(reform_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                reforms[obj["id"]] = (obj["masculine"], obj["feminine"])

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = []
    stats = {}
    for layout in layouts:
        mix = MixConfig(
            theta_neut=cfg.theta_neut, alpha=cfg.alpha, seed=cfg.seed,
            mode_layout=layout,
            neutral_mode_assignment=NeutralModeAssignment(cfg.neutral_mode_assignment),
        )
        records = selection.build_targets(chosen, reforms, pool, mix)
        name = "one_mode" if layout is ModeLayout.ONE_MODE else "three_mode"
        path = out_dir / f"targets_{name}.jsonl"
        corpus.write_corpus(records, path)
        artifacts.append(path)
        if cfg.emit_training_text:
            text_path = out_dir / f"targets_{name}.txt"
            text_path.write_text(
                "".join(r.training_line() + "\n" for r in records), encoding="utf-8")
            artifacts.append(text_path)
        stats[name] = {
            "records": len(records),
            "neutral_fraction": selection.neutral_fraction(records),
            "debiased": sum(1 for r in records
                            if r.data_class is selection.TargetClass.DEBIASED),
        }
    stats_path = out_dir / "targets_stats.json"
    _write_json(stats_path, {"theta_neut": cfg.theta_neut, "seed": cfg.seed, **stats})
    artifacts.append(stats_path)
    _update_manifest(out_dir, artifacts)
    for name, s in stats.items():
        print(f"{name}: {s['records']} records, neutral fraction "
              f"{s['neutral_fraction']:.4f}")
    return 0


def _load_hypotheses(path: Path) -> dict[str, str]:
    hyps: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ConfigError(f"{path} row {lineno}: expected 'id<TAB>text'")
            ident, text = line.split("\t", 1)
            hyps[ident.strip()] = text
    return hyps


def cmd_score(cfg: PipelineConfig, hyp: str, split: str) -> int:
    _require(cfg, "mustshe")
    mustshe_path = _require_file(cfg.mustshe, "evaluation TSV")
    hyp_path = _require_file(hyp, "hypothesis file")
    split_enum = Split(split.lower())

    refs = corpus.load_mustshe(mustshe_path)
    hyps = _load_hypotheses(hyp_path)
    report = metrics.score(hyps, refs, split_enum)
    if cfg.format == "json":
        print(report.to_json())
    else:
        print(report.format_table(label=hyp_path.stem))
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    score_path = out_dir / "score.json"
    score_path.write_text(report.to_json() + "\n", encoding="utf-8")
    _update_manifest(out_dir, [score_path])
    return 0


def cmd_sweep(cfg: PipelineConfig) -> int:
    thetas = cfg.thetas if cfg.thetas is not None else [0.2]
    alphas = cfg.alphas if cfg.alphas is not None else [0.0, 0.1]
    seeds = cfg.seeds if cfg.seeds is not None else (
        [cfg.seed] if cfg.seed is not None else None)
    if not thetas or not alphas or not seeds:
        raise ConfigError("sweep needs non-empty thetas, alphas and seeds "
                          "(or a --seed)")
    harness = genderloss.SweepConfig(
        n_utterances=cfg.sweep_utterances,
        steps=cfg.sweep_steps,
        lr=cfg.sweep_lr,
        eval_utterances=cfg.sweep_eval_utterances,
        workers=cfg.max_workers,
    )
    report = genderloss.sweep(thetas, alphas, seeds, harness)

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "sweep.csv"
    report.to_csv(csv_path)
    summary = {
        f"theta={theta:g},alpha={alpha:g}": stats
        for (theta, alpha), stats in report.summary().items()
    }
    summary_path = out_dir / "sweep_summary.json"
    _write_json(summary_path, summary)
    _update_manifest(out_dir, [csv_path, summary_path])
    for key, stats in summary.items():
        print(f"{key}: proxy GTA {stats['mean_proxy_gta']:.3f} "
              f"+/- {stats['std_proxy_gta']:.3f} over {stats['runs']} runs")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override it")
    parser.add_argument("--out-dir", dest="out_dir", help="output directory")
    parser.add_argument("--seed", type=int, help="RNG seed")
    parser.add_argument("--format", choices=["json", "table"], help="report format")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gstd",
        description="Gender-debiasing pipeline for speech-translation training data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("select", help="pronoun-filter a corpus and sample it")
    _add_common(p)
    p.add_argument("--corpus", help="input corpus file")
    p.add_argument("--schema", choices=list(corpus.CORPUS_SCHEMAS))
    p.add_argument("--sample-size", dest="sample_size", type=int,
                   help="gender-balanced sample size (even)")
    p.add_argument("--pronouns", type=lambda s: [w for w in s.split(",") if w],
                   help="comma-separated pronoun set override")

    p = sub.add_parser("reformulate", help="rewrite translations in both gender forms")
    _add_common(p)
    p.add_argument("--backend", choices=["mock", "http"])
    p.add_argument("--lang", choices=[l.value for l in Lang])
    p.add_argument("--strategy", help="zero-shot | few-shot | few-shot-cot")
    p.add_argument("--shots", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--retries", type=int)
    p.add_argument("--request-mode", dest="request_mode", choices=["both", "per_form"])
    p.add_argument("--max-workers", dest="max_workers", type=int)
    p.add_argument("--selected-file", dest="selected_file")

    p = sub.add_parser("build-targets", help="emit fine-tuning target records")
    _add_common(p)
    p.add_argument("--mode-layout", dest="mode_layout",
                   help="one | three | both")
    p.add_argument("--theta-neut", dest="theta_neut", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--neutral-mode-assignment", dest="neutral_mode_assignment",
                   choices=[a.value for a in NeutralModeAssignment])
    p.add_argument("--emit-training-text", dest="emit_training_text",
                   action="store_const", const=True)
    p.add_argument("--selected-file", dest="selected_file")
    p.add_argument("--neutral-file", dest="neutral_file")
    p.add_argument("--reformulations-file", dest="reformulations_file")

    p = sub.add_parser("score", help="score hypotheses against an evaluation TSV")
    _add_common(p)
    p.add_argument("--hyp", required=True, help="TSV of id<TAB>hypothesis")
    p.add_argument("--mustshe", help="evaluation TSV")
    p.add_argument("--split", choices=[s.value for s in Split], default="test")

    p = sub.add_parser("sweep", help="theta x alpha training sweep on toy data")
    _add_common(p)
    p.add_argument("--thetas", type=_float_list)
    p.add_argument("--alphas", type=_float_list)
    p.add_argument("--seeds", type=_int_list)
    p.add_argument("--sweep-utterances", dest="sweep_utterances", type=int)
    p.add_argument("--sweep-steps", dest="sweep_steps", type=int)
    p.add_argument("--sweep-lr", dest="sweep_lr", type=float)
    p.add_argument("--max-workers", dest="max_workers", type=int)

    sub.add_parser("version", help="print the package version")
    return parser


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "version":
        print(f"gstd {__version__}")
        return 0
    try:
        cfg = load_pipeline_config(args)
        if args.command == "select":
            return cmd_select(cfg)
        if args.command == "reformulate":
            return cmd_reformulate(cfg)
        if args.command == "build-targets":
            return cmd_build_targets(cfg)
        if args.command == "score":
            return cmd_score(cfg, args.hyp, args.split)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        parser.error(f"unknown command {args.command}")
    except (ConfigError, corpus.CorpusError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except reformulate.ReformulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
