"""Command-line entry point wiring every stage of the pipeline."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .corpus import (
    GreedyLexiconSegmenter,
    build_corpus_dir,
    read_corpus_dir,
    read_documents,
    stats_tsv,
)
from .distill import DistillConfig, distill
from .errors import PunctuatorError
from .evaluation import (
    ABLATION_TOGGLES,
    ablate,
    evaluate_checkpoint,
    report_tsv,
)
from .finetune import FinetuneConfig, finetune, punctuate_text
from .marks import MarkSet
from .model import Encoder, load_checkpoint, parameter_count, preset_config
from .pipeline import ExperimentConfig, run_pipeline
from .pretrain import PretrainConfig, derive_seed, pretrain
from .synthetic import GrammarConfig, make_synthetic_corpus

logger = logging.getLogger("punctuator")


def _parse_ratios(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("ratios need three comma-separated numbers")
    return parts[0], parts[1], parts[2]


def _parse_seeds(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p)


def _load_json(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _stage_config(cls, data: dict, seed: int | None, aliases: dict[str, str] | None = None):
    """Build a stage config dataclass from loose JSON keys."""
    aliases = aliases or {}
    fields = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
    kwargs = {}
    for key, value in data.items():
        name = aliases.get(key, key)
        if name in fields:
            kwargs[name] = value
    cfg = cls(**kwargs)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


STAGE_ALIASES = {"lambda": "lam", "temperature": "temperature"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="punctuator",
        description="Punctuation restoration: corpus building, pre-training, "
        "distillation, slot-tagging fine-tuning, and evaluation.",
    )
    parser.add_argument("--seed", type=int, default=None, help="override stage seeds")
    parser.add_argument("--config", default=None, help="JSON config file for the subcommand")
    parser.add_argument("--log-level", default="INFO", help="logging level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synthetic", help="generate the synthetic punctuated corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--sentences", type=int, default=3400)

    p = sub.add_parser("build-corpus", help="strip, chunk, split, and serialize a corpus")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--marks", default="comma,period,colon")
    p.add_argument("--ratios", type=_parse_ratios, default=(0.8, 0.1, 0.1))
    p.add_argument("--max-tokens", type=int, default=85)
    p.add_argument("--policy", choices=["first", "strict"], default="first")

    p = sub.add_parser("stats", help="print the per-split label count table")
    p.add_argument("--data", required=True)

    p = sub.add_parser("pretrain", help="mark-prediction pre-training")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preset", default="teacher-desk")
    p.add_argument("--max-len", type=int, default=128)

    p = sub.add_parser("distill", help="distill a student from a teacher checkpoint")
    p.add_argument("--teacher", required=True)
    p.add_argument("--student-preset", default="student-desk")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("finetune", help="slot-tagging fine-tuning")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=3e-5)
    p.add_argument("--batch-size", type=int, default=32)

    p = sub.add_parser("evaluate", help="score a fine-tuned checkpoint on the test split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="TSV report path")
    p.add_argument("--split", default="test")
    p.add_argument("--include-o", action="store_true")
    p.add_argument("--reference-preset", default=None,
                   help="preset whose size the ratio column is relative to")

    p = sub.add_parser("punctuate", help="insert predicted marks into plain text")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="in_file", required=True)
    p.add_argument("--out", dest="out_file", default=None)
    p.add_argument("--lexicon", default=None)

    p = sub.add_parser("ablate", help="baseline / no-CE / no-SCL / no-KD grid")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--toggles", default=",".join(ABLATION_TOGGLES))
    p.add_argument("--seeds", type=_parse_seeds, default=(0, 1, 2))
    p.add_argument("--teacher-preset", default="teacher-desk")
    p.add_argument("--student-preset", default="student-desk")
    p.add_argument("--max-len", type=int, default=128)

    p = sub.add_parser("run-pipeline", help="full recipe: corpus to comparison table")
    p.add_argument("--out", default=None, help="output directory (overrides config)")

    return parser


def _cmd_make_synthetic(args, config_data, seed):
    grammar = GrammarConfig(**config_data.get("grammar", {}))
    result = make_synthetic_corpus(
        grammar, args.sentences, seed if seed is not None else 0, args.out
    )
    print(f"wrote {result.documents} documents ({result.sentences} sentences) "
          f"to {result.corpus_file}")
    print(f"label counts: {result.label_counts}")


def _cmd_build_corpus(args, config_data, seed):
    marks = MarkSet.from_names(args.marks)
    lexicon_file = Path(args.in_dir) / "lexicon.txt"
    lexicon = (
        [w for w in lexicon_file.read_text(encoding="utf-8").splitlines() if w]
        if lexicon_file.exists()
        else []
    )
    built = build_corpus_dir(
        read_documents(args.in_dir),
        args.out,
        marks,
        ratios=args.ratios,
        seed=seed if seed is not None else 0,
        max_tokens=args.max_tokens,
        policy=args.policy,
        lexicon=lexicon,
    )
    sizes = {name: len(seqs) for name, seqs in built.split.items()}
    print(f"built corpus at {built.path}: {sizes}, vocab {len(built.vocab)}")


def _cmd_stats(args, config_data, seed):
    corpus = read_corpus_dir(args.data)
    print(stats_tsv(corpus.split, corpus.marks), end="")


def _cmd_pretrain(args, config_data, seed):
    cfg = _stage_config(PretrainConfig, config_data, seed, STAGE_ALIASES)
    corpus = read_corpus_dir(args.data)
    preset = config_data.get("preset", args.preset)
    model_cfg = preset_config(
        preset, vocab_size=len(corpus.vocab), max_len=args.max_len,
        num_marks=len(corpus.marks),
    )
    encoder = Encoder(model_cfg, seed=derive_seed(cfg.seed, "init"))
    result = pretrain(corpus.split.train, encoder, cfg, corpus.marks, corpus.vocab,
                      out_dir=args.out)
    print(f"pre-trained {preset} for {cfg.steps} steps; "
          f"final loss {result.final_loss:.4f}; checkpoint at {args.out}")


def _cmd_distill(args, config_data, seed):
    cfg = _stage_config(DistillConfig, config_data, seed, STAGE_ALIASES)
    corpus = read_corpus_dir(args.data)
    teacher, _ = load_checkpoint(args.teacher)
    student_cfg = preset_config(
        config_data.get("student_preset", args.student_preset),
        vocab_size=teacher.config.vocab_size,
        max_len=teacher.config.max_len,
        num_marks=teacher.config.num_marks,
    )
    _, result = distill(teacher, student_cfg, corpus.split.train, cfg, corpus.marks,
                        corpus.vocab, out_dir=args.out)
    print(f"distilled student for {cfg.steps} steps; "
          f"final loss {result.final_loss:.4f}; checkpoint at {args.out}")


def _cmd_finetune(args, config_data, seed):
    cfg = _stage_config(FinetuneConfig, config_data, seed, STAGE_ALIASES)
    cfg = replace(cfg, epochs=args.epochs, lr=args.lr, batch_size=args.batch_size)
    corpus = read_corpus_dir(args.data)
    encoder, manifest = load_checkpoint(args.ckpt)
    segmenter = GreedyLexiconSegmenter(corpus.lexicon) if corpus.lexicon else None
    result = finetune(
        encoder, corpus.split.train, corpus.split.dev, cfg, corpus.marks,
        corpus.vocab, segmenter, args.out, pretrain_mark_names=manifest["marks"],
    )
    print(f"fine-tuned {args.epochs} epochs; best epoch {result.best_epoch} "
          f"dev F1 {result.best_dev_f1:.2f}; best checkpoint at {result.best_dir}")


def _cmd_evaluate(args, config_data, seed):
    corpus = read_corpus_dir(args.data)
    reference = None
    if args.reference_preset:
        reference = parameter_count(
            preset_config(args.reference_preset, vocab_size=len(corpus.vocab),
                          max_len=load_checkpoint(args.ckpt)[0].config.max_len,
                          num_marks=len(corpus.marks))
        )
    report = evaluate_checkpoint(
        args.ckpt, args.data, split=args.split, include_o=args.include_o,
        reference_params=reference,
    )
    tsv = report_tsv({Path(args.ckpt).name: report}, corpus.marks)
    if args.out:
        Path(args.out).write_text(tsv, encoding="utf-8")
        print(f"wrote {args.out}")
    print(tsv, end="")


def _cmd_punctuate(args, config_data, seed):
    encoder, manifest = load_checkpoint(args.ckpt)
    marks = MarkSet.from_names([n for n in manifest["marks"] if n != "O"])
    vocab = manifest["vocab"]
    lexicon: list[str] = manifest.get("extra", {}).get("lexicon", [])
    if args.lexicon:
        lexicon = [w for w in Path(args.lexicon).read_text(encoding="utf-8").splitlines() if w]
    segmenter = GreedyLexiconSegmenter(lexicon) if lexicon else None
    lines_out = []
    for line in Path(args.in_file).read_text(encoding="utf-8").splitlines():
        if line.strip():
            lines_out.append(punctuate_text(encoder, marks, vocab, segmenter, line))
    text = "\n".join(lines_out) + "\n"
    if args.out_file:
        Path(args.out_file).write_text(text, encoding="utf-8")
        print(f"wrote {args.out_file}")
    else:
        print(text, end="")


def _cmd_ablate(args, config_data, seed):
    corpus = read_corpus_dir(args.data)
    teacher_cfg = preset_config(args.teacher_preset, vocab_size=len(corpus.vocab),
                                max_len=args.max_len, num_marks=len(corpus.marks))
    student_cfg = preset_config(args.student_preset, vocab_size=len(corpus.vocab),
                                max_len=args.max_len, num_marks=len(corpus.marks))
    pretrain_cfg = _stage_config(PretrainConfig, config_data.get("pretrain", {}), None,
                                 STAGE_ALIASES)
    distill_cfg = _stage_config(DistillConfig, config_data.get("distill", {}), None,
                                STAGE_ALIASES)
    finetune_cfg = _stage_config(FinetuneConfig, config_data.get("finetune", {}), None)
    toggles = [t for t in args.toggles.split(",") if t]
    grid = ablate(args.data, args.out, teacher_cfg, student_cfg,
                  pretrain_cfg, distill_cfg, finetune_cfg,
                  toggles=toggles, seeds=args.seeds)
    print("variant\tP\tR\tF1")
    for row in grid:
        print(f"{row.variant}\t{row.precision:.2f}\t{row.recall:.2f}\t{row.f1:.2f}")


def _cmd_run_pipeline(args, config_data, seed):
    if config_data:
        if args.out:
            config_data = {**config_data, "out_dir": args.out}
        config = ExperimentConfig.from_dict(config_data)
    else:
        if not args.out:
            raise PunctuatorError("run-pipeline needs --out or a --config file")
        config = ExperimentConfig(out_dir=args.out)
    if seed is not None:
        config = replace(config, seeds=(seed,))
    result = run_pipeline(config)
    print(f"pipeline complete at {result.out_dir}")
    print(f"ran: {result.ran_stages or 'nothing (all stages up to date)'}")
    for name, info in result.summary["models"].items():
        mean = info["mean_overall"]
        print(f"  {name}: params={info['params']} "
              f"size={info['size_ratio_pct']:.1f}% overall F1={mean['f1']:.2f}")


_COMMANDS = {
    "make-synthetic": _cmd_make_synthetic,
    "build-corpus": _cmd_build_corpus,
    "stats": _cmd_stats,
    "pretrain": _cmd_pretrain,
    "distill": _cmd_distill,
    "finetune": _cmd_finetune,
    "evaluate": _cmd_evaluate,
    "punctuate": _cmd_punctuate,
    "ablate": _cmd_ablate,
    "run-pipeline": _cmd_run_pipeline,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.INFO),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        config_data = _load_json(args.config)
        _COMMANDS[args.command](args, config_data, args.seed)
    except Exception as exc:  # fail fast, tagged with the stage name
        print(f"punctuator {args.command}: error: {exc}", file=sys.stderr)
        if args.log_level.upper() == "DEBUG":
            raise
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
