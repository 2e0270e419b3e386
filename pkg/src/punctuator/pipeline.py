"""End-to-end experiment orchestration with per-stage resume markers.

A pipeline run builds the corpus, pre-trains the teacher, distills each
student, fine-tunes every model, evaluates on the test split, and writes a
comparison table.  Completed stages leave marker files; re-running with the
same configuration skips them, and deleting a marker re-runs that stage and
everything downstream of it.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import corpus as corpus_mod
from .distill import DistillConfig, distill
from .errors import ConfigMismatchError
from .evaluation import MetricsReport, evaluate_checkpoint, report_tsv, size_ratio
from .finetune import FinetuneConfig, finetune
from .marks import MarkSet
from .model import Encoder, load_checkpoint, parameter_count, preset_config
from .pretrain import PretrainConfig, derive_seed, pretrain
from .synthetic import GrammarConfig, make_synthetic_corpus

logger = logging.getLogger(__name__)

TEACHER_NAME = "teacher"


@dataclass(frozen=True)
class ExperimentConfig:
    out_dir: str
    seeds: tuple[int, ...] = (0, 1, 2)
    marks: tuple[str, ...] = ("comma", "period", "colon")
    corpus_sentences: int = 3400
    corpus_seed: int = 12345
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    input_corpus: str | None = None   # raw text dir; default is the synthetic grammar
    teacher_preset: str = "teacher-desk"
    student_presets: tuple[str, ...] = ("student-desk",)
    max_len: int = 128
    chunk_budget: int = 0             # 0 = 2/3 of max_len (leaves room for slots)
    pretrain: PretrainConfig = field(default_factory=lambda: PretrainConfig(batch_size=8))
    distill: DistillConfig = field(default_factory=lambda: DistillConfig(batch_size=8, steps=1500))
    finetune: FinetuneConfig = field(
        default_factory=lambda: FinetuneConfig(batch_size=16, lr=3e-4)
    )
    include_o: bool = False

    def effective_chunk_budget(self) -> int:
        return self.chunk_budget or (2 * self.max_len) // 3

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        for key, sub in (("pretrain", PretrainConfig), ("distill", DistillConfig),
                         ("finetune", FinetuneConfig)):
            if key in data and isinstance(data[key], dict):
                sub_data = dict(data[key])
                if "layer_map" in sub_data and sub_data["layer_map"] is not None:
                    sub_data["layer_map"] = tuple(tuple(p) for p in sub_data["layer_map"])
                data[key] = sub(**sub_data)
        for key in ("seeds", "marks", "student_presets", "split_ratios"):
            if key in data and isinstance(data[key], list):
                data[key] = tuple(data[key])
        return cls(**data)

    @classmethod
    def from_json(cls, path: Path | str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class PipelineResult:
    out_dir: Path
    summary: dict
    ran_stages: list[str]
    skipped_stages: list[str]


class _Markers:
    def __init__(self, root: Path):
        self.dir = root / "done"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.ran: set[str] = set()

    def path(self, stage: str) -> Path:
        return self.dir / f"{stage}.done"

    def needs(self, stage: str, deps: list[str]) -> bool:
        return not self.path(stage).exists() or any(d in self.ran for d in deps)

    def mark(self, stage: str) -> None:
        self.path(stage).write_text(time.strftime("%Y-%m-%dT%H:%M:%S"), encoding="utf-8")
        self.ran.add(stage)


def _check_config_identity(root: Path, config: ExperimentConfig) -> None:
    stored = root / "experiment.json"
    current = config.to_dict()
    if stored.exists():
        previous = json.loads(stored.read_text(encoding="utf-8"))
        if previous != json.loads(json.dumps(current)):
            raise ConfigMismatchError(
                f"{stored} differs from the requested configuration; "
                "use a fresh output directory"
            )
    else:
        root.mkdir(parents=True, exist_ok=True)
        stored.write_text(json.dumps(current, indent=2), encoding="utf-8")


def _model_dirs(root: Path, seed: int, name: str) -> Path:
    return root / "seeds" / f"seed_{seed}" / name


def run_pipeline(config: ExperimentConfig) -> PipelineResult:
    """Execute (or resume) the full recipe described by ``config``."""
    root = Path(config.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    _check_config_identity(root, config)
    markers = _Markers(root)
    marks = MarkSet.from_names(list(config.marks))
    data_dir = root / "corpus" / "data"
    stage_times_file = root / "stage_times.json"
    stage_times: dict[str, float] = (
        json.loads(stage_times_file.read_text()) if stage_times_file.exists() else {}
    )
    ran: list[str] = []
    skipped: list[str] = []

    def run_stage(stage: str, deps: list[str], fn) -> None:
        if not markers.needs(stage, deps):
            skipped.append(stage)
            logger.info("stage %s: up to date, skipping", stage)
            return
        logger.info("stage %s: running", stage)
        start = time.perf_counter()
        try:
            fn()
        except Exception as exc:
            raise RuntimeError(f"stage {stage} failed: {exc}") from exc
        stage_times[stage] = time.perf_counter() - start
        stage_times_file.write_text(json.dumps(stage_times, indent=2), encoding="utf-8")
        markers.mark(stage)
        ran.append(stage)

    # --- corpus ---------------------------------------------------------
    def stage_corpus() -> None:
        raw_dir = root / "corpus" / "raw"
        if config.input_corpus:
            docs = list(corpus_mod.read_documents(config.input_corpus))
            lexicon_file = Path(config.input_corpus) / "lexicon.txt"
            lexicon = (
                [w for w in lexicon_file.read_text(encoding="utf-8").splitlines() if w]
                if lexicon_file.exists()
                else []
            )
        else:
            synth = make_synthetic_corpus(
                GrammarConfig(), config.corpus_sentences, config.corpus_seed, raw_dir
            )
            docs = [
                line
                for line in synth.corpus_file.read_text(encoding="utf-8").splitlines()
                if line
            ]
            lexicon = synth.lexicon
        corpus_mod.build_corpus_dir(
            docs,
            data_dir,
            marks,
            ratios=config.split_ratios,
            seed=config.corpus_seed,
            max_tokens=config.effective_chunk_budget(),
            lexicon=lexicon,
        )

    run_stage("corpus", [], stage_corpus)

    corpus = corpus_mod.read_corpus_dir(data_dir)
    vocab = corpus.vocab
    segmenter = (
        corpus_mod.GreedyLexiconSegmenter(corpus.lexicon) if corpus.lexicon else None
    )
    teacher_config = preset_config(
        config.teacher_preset, vocab_size=len(vocab), max_len=config.max_len,
        num_marks=len(marks),
    )

    model_names = [TEACHER_NAME] + list(config.student_presets)
    for seed in config.seeds:
        seed_tag = f"s{seed}"

        def stage_pretrain(seed=seed) -> None:
            encoder = Encoder(teacher_config, seed=derive_seed(seed, "teacher-init"))
            cfg = dataclasses.replace(config.pretrain, seed=derive_seed(seed, "teacher-pretrain"))
            pretrain(
                corpus.split.train, encoder, cfg, marks, vocab,
                out_dir=_model_dirs(root, seed, TEACHER_NAME) / "pretrain",
            )

        def stage_distill(seed=seed) -> None:
            teacher, _ = load_checkpoint(_model_dirs(root, seed, TEACHER_NAME) / "pretrain")
            for preset in config.student_presets:
                student_config = preset_config(
                    preset, vocab_size=len(vocab), max_len=config.max_len,
                    num_marks=len(marks),
                )
                cfg = dataclasses.replace(config.distill, seed=derive_seed(seed, "distill", preset))
                distill(
                    teacher, student_config, corpus.split.train, cfg, marks, vocab,
                    out_dir=_model_dirs(root, seed, preset) / "distill",
                )

        def stage_finetune(seed=seed) -> None:
            for name in model_names:
                src = "pretrain" if name == TEACHER_NAME else "distill"
                encoder, manifest = load_checkpoint(_model_dirs(root, seed, name) / src)
                cfg = dataclasses.replace(config.finetune, seed=derive_seed(seed, "finetune", name))
                finetune(
                    encoder, corpus.split.train, corpus.split.dev, cfg, marks, vocab,
                    segmenter, _model_dirs(root, seed, name) / "finetune",
                    pretrain_mark_names=manifest["marks"],
                )

        def stage_evaluate(seed=seed) -> None:
            for name in model_names:
                report = evaluate_checkpoint(
                    _model_dirs(root, seed, name) / "finetune" / "best",
                    data_dir,
                    include_o=config.include_o,
                    reference_params=parameter_count(teacher_config),
                )
                out = _model_dirs(root, seed, name) / "eval.json"
                out.write_text(
                    json.dumps(report.to_dict(), indent=2), encoding="utf-8"
                )

        run_stage(f"{seed_tag}.pretrain", ["corpus"], stage_pretrain)
        run_stage(f"{seed_tag}.distill", [f"{seed_tag}.pretrain"], stage_distill)
        run_stage(f"{seed_tag}.finetune", [f"{seed_tag}.distill"], stage_finetune)
        run_stage(f"{seed_tag}.evaluate", [f"{seed_tag}.finetune"], stage_evaluate)

    # --- report ---------------------------------------------------------
    def stage_report() -> None:
        reports_dir = root / "reports"
        reports_dir.mkdir(exist_ok=True)
        summary: dict = {"models": {}, "stage_seconds": stage_times}
        mean_reports: dict[str, MetricsReport] = {}
        for name in model_names:
            preset = config.teacher_preset if name == TEACHER_NAME else name
            model_cfg = preset_config(
                preset, vocab_size=len(vocab), max_len=config.max_len, num_marks=len(marks)
            )
            per_seed = {}
            for seed in config.seeds:
                data = json.loads(
                    (_model_dirs(root, seed, name) / "eval.json").read_text(encoding="utf-8")
                )
                per_seed[str(seed)] = data
            mean_overall = {
                key: sum(d["overall"][key] for d in per_seed.values()) / len(per_seed)
                for key in ("precision", "recall", "f1")
            }
            summary["models"][name] = {
                "params": parameter_count(model_cfg),
                "size_ratio_pct": size_ratio(model_cfg, teacher_config),
                "per_seed": per_seed,
                "mean_overall": mean_overall,
            }
            mean_reports[name] = _mean_report(list(per_seed.values()), marks)
            mean_reports[name].params = parameter_count(model_cfg)
            mean_reports[name].size_ratio_pct = size_ratio(model_cfg, teacher_config)
        (reports_dir / "summary.json").write_text(
            json.dumps(summary, indent=2), encoding="utf-8"
        )
        (reports_dir / "comparison.tsv").write_text(
            report_tsv(mean_reports, marks), encoding="utf-8"
        )

    run_stage("report", [f"s{seed}.evaluate" for seed in config.seeds], stage_report)

    summary = json.loads((root / "reports" / "summary.json").read_text(encoding="utf-8"))
    return PipelineResult(root, summary, ran, skipped)


def _mean_report(per_seed: list[dict], marks: MarkSet) -> MetricsReport:
    from .evaluation import ClassMetrics

    per_class = {}
    n = len(per_seed)
    for name in marks.names:
        per_class[name] = ClassMetrics(
            precision=sum(d["per_class"][name]["precision"] for d in per_seed) / n,
            recall=sum(d["per_class"][name]["recall"] for d in per_seed) / n,
            f1=sum(d["per_class"][name]["f1"] for d in per_seed) / n,
            tp=sum(d["per_class"][name]["tp"] for d in per_seed),
            predicted=sum(d["per_class"][name]["predicted"] for d in per_seed),
            support=sum(d["per_class"][name]["support"] for d in per_seed),
        )
    return MetricsReport(
        per_class,
        sum(d["overall"]["precision"] for d in per_seed) / n,
        sum(d["overall"]["recall"] for d in per_seed) / n,
        sum(d["overall"]["f1"] for d in per_seed) / n,
    )
