"""Per-class precision/recall/F1, model-size ratios, and the ablation grid."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import GreedyLexiconSegmenter, read_corpus_dir
from .errors import LengthMismatchError
from .marks import O_LABEL, MarkSet
from .model import Encoder, ModelConfig, count_parameters, load_checkpoint, parameter_count

logger = logging.getLogger(__name__)

# Published full-scale ablation grid (overall P/R/F1 %) used only to report
# whether desk-scale deltas point the same way; never asserted.
FULL_SCALE_REFERENCE = {
    "baseline": (89.01, 84.56, 86.72),
    "no-CE": (88.09, 80.79, 84.15),
    "no-SCL": (88.09, 83.19, 85.56),
    "no-KD": (87.91, 89.05, 88.44),
}


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    tp: int
    predicted: int
    support: int


@dataclass
class MetricsReport:
    per_class: dict[str, ClassMetrics]
    overall_precision: float
    overall_recall: float
    overall_f1: float
    include_o: bool = False
    params: int | None = None
    size_ratio_pct: float | None = None
    tokens_per_second: float | None = None

    def to_dict(self) -> dict:
        return {
            "per_class": {
                name: vars(metrics) for name, metrics in self.per_class.items()
            },
            "overall": {
                "precision": self.overall_precision,
                "recall": self.overall_recall,
                "f1": self.overall_f1,
            },
            "include_o": self.include_o,
            "params": self.params,
            "size_ratio_pct": self.size_ratio_pct,
            "tokens_per_second": self.tokens_per_second,
        }


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def prf1(
    pred: Sequence[Sequence[str]],
    gold: Sequence[Sequence[str]],
    marks: MarkSet,
    include_o: bool = False,
) -> MetricsReport:
    """Position-wise per-class metrics; overall is the macro mean over classes.

    By default the overall average runs over the mark classes only, with O
    excluded; ``include_o`` widens it to every class.
    """
    if len(pred) != len(gold):
        raise LengthMismatchError(f"{len(pred)} predicted vs {len(gold)} gold sequences")
    tp: dict[str, int] = {name: 0 for name in marks.names}
    pred_count: dict[str, int] = {name: 0 for name in marks.names}
    gold_count: dict[str, int] = {name: 0 for name in marks.names}
    correct = 0
    for p_seq, g_seq in zip(pred, gold):
        if len(p_seq) != len(g_seq):
            raise LengthMismatchError(
                f"sequence lengths differ: {len(p_seq)} vs {len(g_seq)}"
            )
        for p, g in zip(p_seq, g_seq):
            pred_count[p] += 1
            gold_count[g] += 1
            if p == g:
                tp[p] += 1
                correct += 1
    assert correct == sum(tp.values()), "per-class true positives must total the matches"

    per_class: dict[str, ClassMetrics] = {}
    for name in marks.names:
        precision = 100.0 * tp[name] / pred_count[name] if pred_count[name] else 0.0
        recall = 100.0 * tp[name] / gold_count[name] if gold_count[name] else 0.0
        per_class[name] = ClassMetrics(
            precision, recall, _f1(precision, recall),
            tp[name], pred_count[name], gold_count[name],
        )
    averaged = list(marks.names) if include_o else [n for n in marks.names if n != O_LABEL]
    k = len(averaged)
    return MetricsReport(
        per_class,
        sum(per_class[n].precision for n in averaged) / k,
        sum(per_class[n].recall for n in averaged) / k,
        sum(per_class[n].f1 for n in averaged) / k,
        include_o=include_o,
    )


def _params_of(model: Encoder | ModelConfig | int) -> int:
    if isinstance(model, Encoder):
        return count_parameters(model)
    if isinstance(model, ModelConfig):
        return parameter_count(model)
    return int(model)


def size_ratio(model_a: Encoder | ModelConfig | int, model_b: Encoder | ModelConfig | int) -> float:
    """Parameter count of a as a percentage of b."""
    return 100.0 * _params_of(model_a) / _params_of(model_b)


def report_tsv(rows: dict[str, MetricsReport], marks: MarkSet) -> str:
    """One row per model: per-class P, R, F1 columns then the overall triple."""
    header = ["model", "params", "size_ratio_pct"]
    for name in marks.mark_names:
        title = name.capitalize()
        header += [f"{title}_P", f"{title}_R", f"{title}_F1"]
    header += ["Overall_P", "Overall_R", "Overall_F1"]
    lines = ["\t".join(header)]
    for model, report in rows.items():
        cells = [
            model,
            "" if report.params is None else str(report.params),
            "" if report.size_ratio_pct is None else f"{report.size_ratio_pct:.2f}",
        ]
        for name in marks.mark_names:
            m = report.per_class[name]
            cells += [f"{m.precision:.2f}", f"{m.recall:.2f}", f"{m.f1:.2f}"]
        cells += [
            f"{report.overall_precision:.2f}",
            f"{report.overall_recall:.2f}",
            f"{report.overall_f1:.2f}",
        ]
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def evaluate_checkpoint(
    ckpt_dir: Path | str,
    data_dir: Path | str,
    split: str = "test",
    include_o: bool = False,
    batch_size: int = 64,
    reference_params: int | None = None,
) -> MetricsReport:
    """Score a fine-tuned checkpoint on one split of a built corpus."""
    import time

    from .finetune import build_slot_dataset, predict_labels

    encoder, manifest = load_checkpoint(ckpt_dir)
    corpus = read_corpus_dir(data_dir)
    marks = MarkSet.from_names([n for n in manifest["marks"] if n != O_LABEL])
    vocab = manifest["vocab"] or corpus.vocab
    lexicon = manifest.get("extra", {}).get("lexicon") or corpus.lexicon
    segmenter = GreedyLexiconSegmenter(lexicon) if lexicon else None
    sequences = dict(corpus.split.items())[split]
    examples = build_slot_dataset(
        sequences, segmenter, vocab, marks, encoder.config.max_len, encoder.config.mask_id
    )
    start = time.perf_counter()
    preds = predict_labels(encoder, examples, marks, batch_size)
    elapsed = time.perf_counter() - start
    gold = [ex.piece.labels for ex in examples]
    report = prf1(preds, gold, marks, include_o=include_o)
    report.params = count_parameters(encoder)
    if reference_params:
        report.size_ratio_pct = size_ratio(report.params, reference_params)
    total_tokens = sum(len(ex.piece) for ex in examples)
    report.tokens_per_second = total_tokens / elapsed if elapsed > 0 else None
    return report


# --- ablation grid ------------------------------------------------------------

ABLATION_TOGGLES = ("no-CE", "no-SCL", "no-KD")


@dataclass
class AblationRow:
    variant: str
    precision: float
    recall: float
    f1: float
    per_seed: list[dict] = field(default_factory=list)


def ablate(
    data_dir: Path | str,
    out_dir: Path | str,
    teacher_config: ModelConfig,
    student_config: ModelConfig,
    pretrain_config,
    distill_config,
    finetune_config,
    toggles: Sequence[str] = ABLATION_TOGGLES,
    seeds: Sequence[int] = (0, 1, 2),
) -> list[AblationRow]:
    """Run baseline plus one variant per toggle; report per-variant seed means.

    Toggles modify the student run: ``no-CE`` sets lambda to 1, ``no-SCL``
    sets lambda to 0, and ``no-KD`` trains the student standalone.  The
    teacher is pre-trained once per seed and shared by all variants.
    """
    from dataclasses import replace

    from .distill import DistillConfig, distill
    from .finetune import finetune
    from .model import Encoder
    from .pretrain import derive_seed, pretrain

    for toggle in toggles:
        if toggle not in ABLATION_TOGGLES:
            raise ValueError(f"unknown toggle {toggle!r}; choose from {ABLATION_TOGGLES}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = read_corpus_dir(data_dir)
    marks = corpus.marks
    vocab = corpus.vocab
    segmenter = GreedyLexiconSegmenter(corpus.lexicon) if corpus.lexicon else None
    variants = ["baseline", *toggles]
    rows = {v: AblationRow(v, 0.0, 0.0, 0.0) for v in variants}

    for seed in seeds:
        teacher_dir = out_dir / f"seed_{seed}" / "teacher"
        teacher = Encoder(teacher_config, seed=derive_seed(seed, "teacher-init"))
        pretrain(
            corpus.split.train,
            teacher,
            replace(pretrain_config, seed=derive_seed(seed, "teacher-pretrain")),
            marks,
            vocab,
            out_dir=teacher_dir / "pretrain",
        )
        for variant in variants:
            vdir = out_dir / f"seed_{seed}" / variant
            dcfg = replace(distill_config, seed=derive_seed(seed, "student", variant))
            if variant == "no-CE":
                dcfg = replace(dcfg, lam=1.0)
            elif variant == "no-SCL":
                dcfg = replace(dcfg, lam=0.0)
            if variant == "no-KD":
                student = Encoder(student_config, seed=derive_seed(seed, "student-init", variant))
                pcfg = replace(
                    pretrain_config,
                    seed=dcfg.seed,
                    lam=dcfg.lam,
                    steps=dcfg.steps,
                    lr=dcfg.lr,
                    batch_size=dcfg.batch_size,
                )
                pretrain(corpus.split.train, student, pcfg, marks, vocab,
                         out_dir=vdir / "train")
            else:
                student, _ = distill(
                    teacher, student_config, corpus.split.train, dcfg, marks, vocab,
                    out_dir=vdir / "train",
                )
            fcfg = replace(finetune_config, seed=derive_seed(seed, "finetune", variant))
            finetune(
                student, corpus.split.train, corpus.split.dev, fcfg, marks, vocab,
                segmenter, vdir / "finetune",
            )
            report = evaluate_checkpoint(
                vdir / "finetune" / "best", data_dir,
                reference_params=parameter_count(teacher_config),
            )
            rows[variant].per_seed.append(
                {
                    "seed": seed,
                    "precision": report.overall_precision,
                    "recall": report.overall_recall,
                    "f1": report.overall_f1,
                }
            )
            logger.info("ablate seed=%d %s overall F1 %.2f", seed, variant, report.overall_f1)

    for row in rows.values():
        n = len(row.per_seed)
        row.precision = sum(e["precision"] for e in row.per_seed) / n
        row.recall = sum(e["recall"] for e in row.per_seed) / n
        row.f1 = sum(e["f1"] for e in row.per_seed) / n

    grid = list(rows.values())
    _write_ablation_report(out_dir, grid)
    return grid


def _write_ablation_report(out_dir: Path, grid: list[AblationRow]) -> None:
    lines = ["variant\tP\tR\tF1"]
    for row in grid:
        lines.append(f"{row.variant}\t{row.precision:.2f}\t{row.recall:.2f}\t{row.f1:.2f}")
    (out_dir / "ablation.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    baseline = next(r for r in grid if r.variant == "baseline")
    directions = {}
    for row in grid:
        if row.variant == "baseline":
            continue
        delta = row.f1 - baseline.f1
        ref_delta = FULL_SCALE_REFERENCE[row.variant][2] - FULL_SCALE_REFERENCE["baseline"][2]
        directions[row.variant] = {
            "delta_f1": delta,
            "reference_delta_f1": ref_delta,
            "same_direction": bool(delta * ref_delta > 0),
        }
        logger.info(
            "ablation %s: delta F1 %+0.2f (reference %+0.2f, %s direction)",
            row.variant, delta, ref_delta,
            "same" if delta * ref_delta > 0 else "opposite",
        )
    payload = {
        "grid": [
            {"variant": r.variant, "precision": r.precision, "recall": r.recall,
             "f1": r.f1, "per_seed": r.per_seed}
            for r in grid
        ],
        "direction_report": directions,
    }
    (out_dir / "ablation.json").write_text(json.dumps(payload, indent=2), encoding="utf-8")
