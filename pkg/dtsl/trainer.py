"""Dual teacher-student training loop"""
import os
import numpy as np
from enum import Enum, auto
from typing import Dict, List, Optional, Tuple

from config import *
from dtsl import tensor as T
from dtsl.data.synthetic import DatasetSplit, SyntheticSample, generate, split, stack_batch
from dtsl.models.checkpoint import load_checkpoint, save_checkpoint
from dtsl.models.network import ModelParams, create_network, predict_probs
from dtsl.settings import (CorpusConfig, TrainConfig, config_pairs, load_config_file,
                           write_key_values)
from dtsl.systems.consensus import (argmax_labels, clg_strategy, js_divergence, make_masks,
                                    strategy_mask)
from dtsl.systems.debugger import TrainingDebugger
from dtsl.systems.ema import ema_update, make_teacher
from dtsl.systems.losses import LossBreakdown, l_pace, l_semi, l_sup, l_url
from dtsl.systems.metrics import MetricReport, evaluate_labels
from dtsl.systems.optimizer import AdamOptimizer, lr_schedule
from dtsl.ui.report import write_csv, write_metrics
from dtsl.ui.snapshots import agreement_palette, mask_to_gray, save_png, tile, write_pgm


class Phase(Enum):
    SETUP = auto()
    TRAINING = auto()
    EVALUATING = auto()
    DONE = auto()
    DIVERGED = auto()


class TrainingDiverged(RuntimeError):
    """A loss term went non-finite; the divergence fields were dumped first"""

    def __init__(self, iteration: int, breakdown: LossBreakdown, dump_path: Optional[str] = None):
        self.iteration = iteration
        self.breakdown = breakdown
        self.dump_path = dump_path
        where = f" (fields dumped to {dump_path})" if dump_path else ""
        super().__init__(f"non-finite loss at iteration {iteration}{where}")


def model_seed(seed: int, group: int) -> int:
    return int(np.random.SeedSequence([seed, 101 + group]).generate_state(1)[0])


class TeacherStudentGroup:
    """One student and its EMA teacher, sharing an architecture"""

    def __init__(self, index: int, kind, cfg: TrainConfig):
        self.index = index
        self.network = create_network(kind, cfg.num_classes, cfg.base_channels)
        self.student = self.network.init_params(model_seed(cfg.seed, index))
        self.teacher = make_teacher(self.student)
        self.optimizer = AdamOptimizer(self.student.parameters(), lr=cfg.eta0)

    @property
    def student_name(self) -> str:
        return f"student{self.index}"

    @property
    def teacher_name(self) -> str:
        return f"teacher{self.index}"

    def student_logits(self, images) -> T.Tensor:
        return self.network.forward(self.student, images)

    def teacher_probs(self, images) -> np.ndarray:
        return predict_probs(self.teacher, images)

    def update_teacher(self, omega: float):
        ema_update(self.teacher, self.student, omega)


class TrainerState:
    """Both groups, the iteration counter and the batch streams"""

    def __init__(self, cfg: TrainConfig):
        kinds = [cfg.arch0, cfg.arch1][:cfg.mode.groups]
        self.groups = [TeacherStudentGroup(i, kind, cfg) for i, kind in enumerate(kinds)]
        self.iteration = 0

        # Separate streams keep labeled batches identical across modes
        self.rng_labeled = np.random.default_rng([cfg.seed, 11])
        self.rng_unlabeled = np.random.default_rng([cfg.seed, 17])

    def models(self) -> Dict[str, ModelParams]:
        models = {}
        for group in self.groups:
            models[group.student_name] = group.student
            models[group.teacher_name] = group.teacher
        return models

    def optimizer_owns_teacher(self) -> bool:
        return any(g.optimizer.owns(t) for g in self.groups for _, t in g.teacher)


def draw_batch(rng: np.random.Generator, pool: List[SyntheticSample], size: int) -> Tuple[np.ndarray, np.ndarray]:
    idx = rng.choice(len(pool), size=size, replace=len(pool) < size)
    return stack_batch([pool[i] for i in idx])


def _pace_terms(state: TrainerState, cfg: TrainConfig, images: np.ndarray, logits: List[T.Tensor],
                losses: List[T.Tensor], breakdown: LossBreakdown, labeled: bool,
                fields: Dict[str, np.ndarray]) -> List[float]:
    """Adds the pace regulator of each student to losses; returns mask fractions"""
    pace = cfg.mode.pace
    single = len(state.groups) == 1
    student_probs = [T.softmax(z, axis=1) for z in logits]

    outputs = {}
    for group, probs in zip(state.groups, student_probs):
        outputs[group.student_name] = probs.data
        outputs[group.teacher_name] = group.teacher_probs(images)

    batch = "labeled" if labeled else "unlabeled"
    fractions = []
    for i, group in enumerate(state.groups):
        cross = state.groups[i if single else 1 - i].teacher_name
        url_field = js_divergence(outputs[group.student_name], outputs[cross])
        fields[f"{batch}_group{i}"] = url_field

        if single:
            mask = make_masks(js_divergence(outputs[group.student_name], outputs[group.teacher_name]), cfg.kappa)
        else:
            mask = strategy_mask(cfg.strategy, outputs, i, cfg.kappa)
        fractions.append(mask.fraction())

        if pace is None:
            continue
        if pace == "teacher":
            pseudo = argmax_labels(outputs[group.teacher_name])
        else:
            pseudo = clg_strategy(cfg.strategy, outputs, i, cfg.kappa, bypass_mask=(pace == "mean"))

        semi = l_semi(student_probs[i], pseudo)
        if cfg.mode.uses_url:
            url = l_url(student_probs[i], outputs[cross], cfg.kappa, cfg.num_classes)
        else:
            url = T.Tensor(0.0)
        breakdown.add_group(i, semi=semi.item(), url=url.item(), labeled=labeled)
        losses[i] = T.add(losses[i], l_pace(semi, 0.0, url, 0.0, cfg.alpha, cfg.beta))

    return fractions


def train_step(state: TrainerState, labeled_batch, unlabeled_batch, cfg: TrainConfig,
               debugger: Optional[TrainingDebugger] = None) -> LossBreakdown:
    """One optimizer step for every student, then the EMA update of every teacher"""
    images_l, labels_l = labeled_batch
    lr = lr_schedule(cfg.eta0, state.iteration, cfg.max_iter)
    breakdown = LossBreakdown(cfg.alpha, cfg.beta)
    fields: Dict[str, np.ndarray] = {}

    logits_l = [g.student_logits(images_l) for g in state.groups]
    losses = []
    for i, z in enumerate(logits_l):
        sup = l_sup(z, labels_l)
        breakdown.add_group(i, sup=sup.item())
        losses.append(sup)

    fractions = _pace_terms(state, cfg, images_l, logits_l, losses, breakdown, True, fields)

    if cfg.mode.uses_unlabeled and unlabeled_batch is not None:
        images_u = unlabeled_batch[0]
        logits_u = [g.student_logits(images_u) for g in state.groups]
        zero = [T.Tensor(0.0) for _ in state.groups]
        fractions += _pace_terms(state, cfg, images_u, logits_u, zero, breakdown, False, fields)
        losses = [T.add(l, u) for l, u in zip(losses, zero)]

    breakdown.cons_fraction = float(np.mean(fractions)) if fractions else 0.0

    if not breakdown.is_finite():
        dump = debugger.dump_divergence(fields, "non-finite loss", breakdown) if debugger else None
        raise TrainingDiverged(state.iteration, breakdown, dump)

    # Each loss only reaches its own student; outputs used across groups are detached
    for group, loss in zip(state.groups, losses):
        group.student.zero_grad()
        T.backward(loss)
        group.optimizer.step(lr)

    for group in state.groups:
        group.update_teacher(cfg.omega)

    state.iteration += 1
    return breakdown


def teacher_agreement(teacher_probs, labels) -> Tuple[np.ndarray, float]:
    """Pixels where the teacher's argmax equals the ground truth, and their fraction"""
    agree = argmax_labels(teacher_probs) == np.asarray(labels, dtype=np.int64)
    return agree, float(agree.mean()) if agree.size else 0.0


def evaluate_models(models: Dict[str, ModelParams], samples: List[SyntheticSample],
                    num_classes: int, ensemble: bool = True) -> Dict[str, MetricReport]:
    """Metrics per model, plus the argmax of the mean of all ProbMaps"""
    images, labels = stack_batch(samples)
    predictions = {name: [] for name in models}
    mean_labels = []
    for i in range(0, len(images), EVAL_BATCH):
        chunk = images[i:i + EVAL_BATCH]
        probs = {name: predict_probs(params, chunk) for name, params in models.items()}
        for name, p in probs.items():
            predictions[name].append(argmax_labels(p))
        mean_labels.append(argmax_labels(sum(probs.values()) / len(probs)))

    reports = {name: evaluate_labels(np.concatenate(preds), labels, num_classes)
               for name, preds in predictions.items()}
    if ensemble and len(models) > 1:
        reports["ensemble"] = evaluate_labels(np.concatenate(mean_labels), labels, num_classes)
    return reports


def build_corpus(corpus: CorpusConfig, num_classes: int) -> DatasetSplit:
    corpus.validate()
    samples = generate(corpus.data_seed, corpus.total, corpus.image_size, corpus.image_size,
                       num_classes, corpus.noise_sigma)
    return split(samples, corpus.labeled_fraction, corpus.test_fraction, corpus.data_seed)


def write_manifest(path: str, cfg: TrainConfig, corpus: CorpusConfig) -> str:
    pairs = [("version", VERSION)] + config_pairs(cfg, corpus)
    pairs += [
        ("layout.losses", "losses.csv"),
        ("layout.probe", "probe.csv"),
        ("layout.metrics", "metrics.csv"),
        ("layout.snapshots", "agreement_XXXX.pgm agreement_XXXX.png"),
        ("layout.checkpoints", "checkpoints/<model>.ckpt"),
        ("layout.debug", f"{DEBUG_DIR}/snapshots {DEBUG_DIR}/screenshots"),
    ]
    return write_key_values(path, pairs, comment=f"{TITLE} run manifest")


def load_models(run_dir: str, cfg: TrainConfig) -> Dict[str, ModelParams]:
    names = [n for n in MODEL_NAMES if int(n[-1]) < cfg.mode.groups]
    return {name: load_checkpoint(os.path.join(run_dir, "checkpoints", f"{name}.ckpt")) for name in names}


class TrainingReport:
    """Everything a finished run produced"""

    def __init__(self, cfg: TrainConfig, corpus: Optional[CorpusConfig], metrics: Dict[str, MetricReport],
                 losses: List[Dict], probe: List[Dict], out_dir: Optional[str]):
        self.config = cfg
        self.corpus = corpus
        self.metrics = metrics
        self.losses = losses
        self.probe = probe
        self.out_dir = out_dir

    @property
    def iterations(self) -> int:
        return self.losses[-1]["iter"] if self.losses else 0

    def headline(self, model: str = HEADLINE_MODEL) -> Dict[str, Optional[float]]:
        return self.metrics[model].foreground_mean()

    def probe_value(self, iteration: int, column: str = "cons_fraction") -> Optional[float]:
        for row in self.probe:
            if row["iter"] == iteration:
                return row[column]
        return None


class Trainer:
    """Runs one configuration end to end"""

    def __init__(self, cfg: TrainConfig, data: DatasetSplit, out_dir: Optional[str] = None,
                 corpus: Optional[CorpusConfig] = None, quiet: bool = False):
        self.cfg = cfg.validate()
        if not data.labeled:
            raise ValueError("the split has no labeled samples")
        if not data.test:
            raise ValueError("the split has no test samples")
        if cfg.mode.uses_unlabeled and not data.unlabeled:
            raise ValueError(f"mode {cfg.mode.value} needs unlabeled samples; lower labeled_fraction")

        self.data = data
        self.corpus = corpus
        self.out_dir = out_dir
        self.quiet = quiet
        self.phase = Phase.SETUP

        self.state = TrainerState(cfg)
        self.loss_rows: List[Dict] = []
        self.probe_rows: List[Dict] = []
        self.last_breakdown: Optional[LossBreakdown] = None
        self.final_agreement: Optional[np.ndarray] = None

        probe = data.test[:cfg.probe_size]
        self.probe_images, self.probe_labels = stack_batch(probe)

        self.debugger: Optional[TrainingDebugger] = None
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            self.debugger = TrainingDebugger(self)

    def config_summary(self) -> Dict[str, str]:
        configs = (self.cfg, self.corpus) if self.corpus is not None else (self.cfg,)
        return dict(config_pairs(*configs))

    def log(self, message: str):
        if not self.quiet:
            print(f"[train] {message}")

    def run(self) -> TrainingReport:
        cfg = self.cfg
        if self.out_dir and self.corpus is not None:
            write_manifest(os.path.join(self.out_dir, "manifest.txt"), cfg, self.corpus)

        self.log(f"{cfg.mode.display_name}: {len(self.state.groups)} group(s), "
                 f"{len(self.data.labeled)} labeled / {len(self.data.unlabeled)} unlabeled / "
                 f"{len(self.data.test)} test, {cfg.max_iter} iterations")
        self.phase = Phase.TRAINING
        if self.debugger:
            self.debugger.log_event("training_started", {"mode": cfg.mode.value, "seed": cfg.seed})
        self._probe()

        try:
            while self.state.iteration < cfg.max_iter:
                labeled = draw_batch(self.state.rng_labeled, self.data.labeled, cfg.labeled_batch)
                unlabeled = None
                if cfg.mode.uses_unlabeled:
                    unlabeled = draw_batch(self.state.rng_unlabeled, self.data.unlabeled, cfg.unlabeled_batch)

                breakdown = train_step(self.state, labeled, unlabeled, cfg, self.debugger)
                self.last_breakdown = breakdown
                self.loss_rows.append(breakdown.to_row(self.state.iteration))

                if self.state.iteration % cfg.snapshot_every == 0 or self.state.iteration == cfg.max_iter:
                    self._probe()
                    self.log(f"iter {self.state.iteration}: total {breakdown.total:.4f}, "
                             f"cons {breakdown.cons_fraction:.3f}")
        except TrainingDiverged as e:
            self.phase = Phase.DIVERGED
            self.last_breakdown = e.breakdown
            if self.debugger:
                self.debugger.export_full_snapshot()
            self._write_tables()
            raise

        self.phase = Phase.EVALUATING
        metrics = evaluate_models(self.state.models(), self.data.test, cfg.num_classes)

        self.phase = Phase.DONE
        if self.out_dir:
            self._write_tables()
            write_metrics(os.path.join(self.out_dir, "metrics.csv"), metrics)
            for name, params in self.state.models().items():
                save_checkpoint(params, os.path.join(self.out_dir, "checkpoints", f"{name}.ckpt"))
            self.debugger.log_event("training_finished", {"iterations": self.state.iteration})
            headline_dsc = metrics[HEADLINE_MODEL].foreground_mean()["dsc"]
            self.debugger.capture_screenshot(self.final_agreement, meta={"headline_dsc": headline_dsc})
            self.debugger.export_full_snapshot()

        head = metrics[HEADLINE_MODEL].foreground_mean()
        self.log(f"done: {HEADLINE_MODEL} DSC {_fmt(head['dsc'])}, HD95 {_fmt(head['hd95'])}")
        return TrainingReport(cfg, self.corpus, metrics, self.loss_rows, self.probe_rows, self.out_dir)

    def _probe(self):
        """Teacher-vs-ground-truth agreement and consistency on the fixed probe batch"""
        cfg = self.cfg
        outputs = {}
        for group in self.state.groups:
            outputs[group.student_name] = predict_probs(group.student, self.probe_images)
            outputs[group.teacher_name] = group.teacher_probs(self.probe_images)

        row = {"iter": self.state.iteration}
        maps = {}
        for group in self.state.groups:
            agree, fraction = teacher_agreement(outputs[group.teacher_name], self.probe_labels)
            maps[group.teacher_name] = agree
            row[f"agreement_t{group.index}"] = fraction

        if len(self.state.groups) == 2:
            mask = strategy_mask(cfg.strategy, outputs, 0, cfg.kappa)
        else:
            mask = make_masks(js_divergence(outputs["student0"], outputs["teacher0"]), cfg.kappa)
        row["cons_fraction"] = mask.fraction()
        self.probe_rows.append(row)

        if self.out_dir:
            gray = tile([mask_to_gray(a) for a in maps["teacher0"]], gap=1)
            self.final_agreement = gray
            base = os.path.join(self.out_dir, f"agreement_{self.state.iteration:04d}")
            write_pgm(base + ".pgm", gray)
            save_png(base + ".png", gray, palette=agreement_palette())
            self.debugger.log_event("probe", {k: v for k, v in row.items() if k != "iter"})

    def _write_tables(self):
        if not self.out_dir:
            return
        write_csv(os.path.join(self.out_dir, "losses.csv"), LOSS_COLUMNS, self.loss_rows)
        write_csv(os.path.join(self.out_dir, "probe.csv"), PROBE_COLUMNS, self.probe_rows)


def _fmt(value) -> str:
    return "undefined" if value is None else f"{value:.2f}"


def run_training(cfg: TrainConfig, data: DatasetSplit, out_dir: Optional[str] = None,
                 corpus: Optional[CorpusConfig] = None, quiet: bool = False) -> TrainingReport:
    return Trainer(cfg, data, out_dir, corpus, quiet).run()


def evaluate_run(run_dir: str) -> Tuple[TrainConfig, Dict[str, MetricReport]]:
    """Rebuild the corpus from a run's manifest and score its checkpoints"""
    cfg, corpus = load_config_file(os.path.join(run_dir, "manifest.txt"))
    cfg.validate()
    data = build_corpus(corpus, cfg.num_classes)
    return cfg, evaluate_models(load_models(run_dir, cfg), data.test, cfg.num_classes)
