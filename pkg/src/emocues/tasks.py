"""EPC/ERC training, evaluation, metrics and the ablation grid."""
from __future__ import annotations

import csv
import json
import logging
import math
from fractions import Fraction
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from emocues.audio import AudioConfig
from emocues.config import TrainConfig, flat_config, split_config
from emocues.corpus import Conversation, EpcInstance, build_epc_instances, build_erc_instances
from emocues.errors import ValidationError
from emocues.knowledge import KnowledgeBase, load_kb, sample_kb_path
from emocues.kwrt import load_lexicon
from emocues.model import EmotionModel, Featurizer, Instance, ModelInput, Vocab, render_instance
from emocues.nn.checkpoint import load_into, read_manifest, round_to_float32, save_checkpoint
from emocues.nn.optim import Adam, NonFiniteGradient
from emocues.nn.tensor import no_grad

log = logging.getLogger(__name__)


# -- metrics --------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, columns = predicted

    @classmethod
    def from_predictions(cls, true: Sequence[int], pred: Sequence[int], n_classes: int) -> "ConfusionMatrix":
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        for t, p in zip(true, pred):
            counts[t, p] += 1
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class Metrics:
    uar: float
    macro_f1: float
    accuracy: float
    weighted_f1: float

    def as_dict(self) -> dict:
        return asdict(self)


def compute_metrics(cm: ConfusionMatrix | np.ndarray) -> Metrics:
    """UAR, macro-F1, accuracy and support-weighted F1 from a confusion matrix.

    Classes with no true instances are left out of the UAR mean; classes
    absent from both rows and columns are left out of macro-F1.  Arithmetic
    is exact on the integer counts, so each value is the correctly rounded float.
    """
    counts = np.asarray(cm.counts if isinstance(cm, ConfusionMatrix) else cm)
    if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
        raise ValueError("confusion matrix must be square")
    if np.any(counts < 0) or np.any(counts != np.round(counts)):
        raise ValueError("confusion matrix entries must be non-negative integers")
    counts = counts.astype(np.int64)
    total = int(counts.sum())
    if total <= 0:
        raise ValueError("confusion matrix has no entries")
    tp = [int(x) for x in np.diag(counts)]
    support = [int(x) for x in counts.sum(axis=1)]
    predicted = [int(x) for x in counts.sum(axis=0)]
    recalls, f1s, weighted = [], [], Fraction(0)
    for c in range(len(tp)):
        if support[c] == 0 and predicted[c] == 0:
            continue
        # F1 = 2 tp / (support + predicted)
        f1 = Fraction(2 * tp[c], support[c] + predicted[c])
        f1s.append(f1)
        weighted += f1 * support[c]
        if support[c]:
            recalls.append(Fraction(tp[c], support[c]))
    return Metrics(
        uar=float(sum(recalls) / len(recalls)),
        macro_f1=float(sum(f1s) / len(f1s)),
        accuracy=float(Fraction(sum(tp), total)),
        weighted_f1=float(weighted / total),
    )


def metrics_json(metrics: Metrics, cm: ConfusionMatrix) -> dict:
    return {**metrics.as_dict(), "confusion": cm.counts.tolist()}


# -- model bundle ---------------------------------------------------------

@dataclass
class TrainedModel:
    model: EmotionModel
    cfg: TrainConfig
    audio_cfg: AudioConfig
    labels: tuple[str, ...]
    vocab: Vocab
    n_mels: int

    def meta(self) -> dict:
        return {"config": flat_config(self.cfg, self.audio_cfg), "labels": list(self.labels),
                "vocab": self.vocab.tokens, "n_mels": self.n_mels}

    def save(self, path: str | Path) -> Path:
        return save_checkpoint(path, self.model, self.meta())

    @classmethod
    def load(cls, path: str | Path) -> "TrainedModel":
        meta = read_manifest(path)["meta"]
        cfg, audio_cfg = split_config(meta["config"])
        vocab = Vocab(meta["vocab"])
        model = EmotionModel(cfg, len(vocab), meta["n_mels"], len(meta["labels"]),
                             np.random.default_rng(0))
        load_into(path, model)
        return cls(model, cfg, audio_cfg, tuple(meta["labels"]), vocab, meta["n_mels"])


def resolve_knowledge(cfg: TrainConfig, kb: KnowledgeBase | None = None, lexicon=None):
    if kb is None:
        kb = load_kb(cfg.kb or sample_kb_path())
    if lexicon is None:
        lexicon = load_lexicon(cfg.lexicon)
    return kb, lexicon


def build_instances(convs: Sequence[Conversation], cfg: TrainConfig) -> list[Instance]:
    build = build_epc_instances if cfg.task == "epc" else build_erc_instances
    return [inst for c in convs for inst in build(c, cfg.window)]


def corpus_labels(convs: Sequence[Conversation]) -> tuple[str, ...]:
    if not convs:
        raise ValidationError("empty corpus")
    labels = convs[0].labels
    for c in convs[1:]:
        if c.labels != labels:
            raise ValidationError(f"conversation {c.id!r} declares labels {list(c.labels)}, "
                                  f"expected {list(labels)}")
    return labels


# -- training -------------------------------------------------------------

class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainResult:
    bundle: TrainedModel
    trace: list[dict] = field(default_factory=list)
    checkpoint: Path | None = None
    final: "EvalResult | None" = None


def train(convs: Sequence[Conversation], cfg: TrainConfig, audio_cfg: AudioConfig = AudioConfig(),
          kb: KnowledgeBase | None = None, lexicon=None, out_dir: str | Path | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Train with Adam on the cross-entropy of the averaged logits.

    Deterministic for a fixed ``cfg.seed``.  The final parameters are rounded
    to float32 so that the in-memory model equals its checkpoint exactly.
    """
    labels = corpus_labels(convs)
    kb, lexicon = resolve_knowledge(cfg, kb, lexicon)
    instances = build_instances(convs, cfg)
    if not instances:
        raise ValidationError(f"corpus yields no {cfg.task.upper()} instances")

    featurizer = Featurizer(cfg, audio_cfg, kb, lexicon)
    featurizer.vocab = Vocab.build(render_instance(inst) for inst in instances)
    inputs = [featurizer(inst) for inst in instances]

    init_rng = np.random.default_rng([cfg.seed, 0])
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    drop_rng = np.random.default_rng([cfg.seed, 2]) if cfg.dropout > 0 else None
    model = EmotionModel(cfg, len(featurizer.vocab), audio_cfg.n_mels, len(labels), init_rng)
    bundle = TrainedModel(model, cfg, audio_cfg, labels, featurizer.vocab, audio_cfg.n_mels)
    opt = Adam(model.parameters(), lr=cfg.lr)

    trace = []
    n = len(inputs)
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        total_loss, correct = 0.0, 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            batch = [inputs[i] for i in order[start:start + cfg.batch_size]]
            opt.zero_grad()
            for inp in batch:
                loss, logits = model.loss(inp, drop_rng)
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingDiverged(f"non-finite loss in epoch {epoch} batch {b} "
                                           f"(instance {inp.instance_id})")
                (loss * (1.0 / len(batch))).backward()
                total_loss += value
                correct += int(logits.predicted() == inp.label)
            try:
                opt.step()
            except NonFiniteGradient as exc:
                raise TrainingDiverged(f"epoch {epoch} batch {b}: {exc}") from None
        row = {"epoch": epoch, "loss": total_loss / n, "accuracy": correct / n}
        trace.append(row)
        if on_epoch:
            on_epoch(row)
        if cfg.target_accuracy is not None and row["accuracy"] >= cfg.target_accuracy:
            round_to_float32(model)
            if _accuracy(model, inputs) >= cfg.target_accuracy:
                break
    round_to_float32(model)

    result = TrainResult(bundle, trace)
    result.final = _evaluate_inputs(bundle, inputs)
    if out_dir is not None:
        result.checkpoint = bundle.save(Path(out_dir) / "checkpoint")
    return result


def _accuracy(model: EmotionModel, inputs: Sequence[ModelInput]) -> float:
    with no_grad():
        hits = sum(model(inp).predicted() == inp.label for inp in inputs)
    return hits / len(inputs)


# -- evaluation -----------------------------------------------------------

@dataclass
class Prediction:
    instance_id: str
    true: int
    pred: int
    logits: np.ndarray


@dataclass
class EvalResult:
    metrics: Metrics
    confusion: ConfusionMatrix
    predictions: list[Prediction]
    labels: tuple[str, ...]

    def write(self, out_dir: str | Path, stem: str = "") -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        mpath = out_dir / f"{stem}metrics.json"
        mpath.write_text(json.dumps(metrics_json(self.metrics, self.confusion), indent=2) + "\n")
        ppath = out_dir / f"{stem}predictions.csv"
        write_predictions(ppath, self.predictions, self.labels)
        return {"metrics": mpath, "predictions": ppath}


def write_predictions(path: Path, preds: Sequence[Prediction], labels: Sequence[str]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance_id", "true", "pred"] + [f"logit_{l}" for l in labels])
        for p in preds:
            true = labels[p.true] if p.true >= 0 else ""
            w.writerow([p.instance_id, true, labels[p.pred]] + [repr(float(x)) for x in p.logits])


def _evaluate_inputs(bundle: TrainedModel, inputs: Sequence[ModelInput]) -> EvalResult:
    preds = []
    with no_grad():
        for inp in inputs:
            logits = bundle.model(inp)
            preds.append(Prediction(inp.instance_id, inp.label, logits.predicted(),
                                    logits.averaged.data.copy()))
    cm = ConfusionMatrix.from_predictions([p.true for p in preds], [p.pred for p in preds],
                                          len(bundle.labels))
    return EvalResult(compute_metrics(cm), cm, preds, bundle.labels)


def evaluate(convs: Sequence[Conversation], bundle: TrainedModel, kb: KnowledgeBase | None = None,
             lexicon=None) -> EvalResult:
    labels = corpus_labels(convs)
    if labels != bundle.labels:
        raise ValidationError(f"corpus labels {list(labels)} do not match checkpoint labels "
                              f"{list(bundle.labels)}")
    kb, lexicon = resolve_knowledge(bundle.cfg, kb, lexicon)
    featurizer = Featurizer(bundle.cfg, bundle.audio_cfg, kb, lexicon, bundle.vocab)
    instances = build_instances(convs, bundle.cfg)
    if not instances:
        raise ValidationError(f"corpus yields no {bundle.cfg.task.upper()} instances")
    return _evaluate_inputs(bundle, [featurizer(i) for i in instances])


def forecast(convs: Sequence[Conversation], bundle: TrainedModel, kb: KnowledgeBase | None = None,
             lexicon=None, next_speaker: str | None = None) -> list[Prediction]:
    """Predict the emotion of the unseen turn after each conversation's last utterance.

    The next speaker defaults to whoever spoke the turn before the last one
    (turn alternation); with a single turn it is the same speaker.
    """
    kb, lexicon = resolve_knowledge(bundle.cfg, kb, lexicon)
    featurizer = Featurizer(bundle.cfg, bundle.audio_cfg, kb, lexicon, bundle.vocab)
    preds = []
    with no_grad():
        for c in convs:
            utts = c.utterances
            if next_speaker is not None:
                names = {u.speaker_name: u.speaker for u in utts}
                spk = names.get(next_speaker, max(names.values()) + 1)
            else:
                spk = utts[-2].speaker if len(utts) > 1 else utts[-1].speaker
            history = utts[-bundle.cfg.window:]
            inst = EpcInstance(c.id, history, len(utts), spk, -1, bundle.cfg.window)
            logits = bundle.model(featurizer(inst))
            preds.append(Prediction(inst.instance_id, -1, logits.predicted(),
                                    logits.averaged.data.copy()))
    return preds


# -- ablation -------------------------------------------------------------

ABLATIONS = (("full", {}), ("w/o KWRT", {"no_kwrt": True}), ("w/o PE", {"no_pe": True}),
             ("w/o TMF", {"no_tmf": True}))


@dataclass
class AblationRow:
    variant: str
    metrics: Metrics
    n_params: int
    final_loss: float
    delta: dict | None  # None for the baseline row

    def as_dict(self) -> dict:
        return {"variant": self.variant, **self.metrics.as_dict(), "n_params": self.n_params,
                "final_loss": self.final_loss, "delta": self.delta}


def run_ablation(convs: Sequence[Conversation], cfg: TrainConfig,
                 audio_cfg: AudioConfig = AudioConfig(), eval_convs: Sequence[Conversation] | None = None,
                 kb: KnowledgeBase | None = None, lexicon=None) -> list[AblationRow]:
    if cfg.modality != "T+S":
        raise ValidationError("ablation needs the multi-modal (T+S) configuration")
    kb, lexicon = resolve_knowledge(cfg, kb, lexicon)
    eval_convs = convs if eval_convs is None else eval_convs
    rows = []
    base = None
    for name, flags in ABLATIONS:
        variant_cfg = cfg.with_(**{"no_kwrt": False, "no_pe": False, "no_tmf": False, **flags})
        res = train(convs, variant_cfg, audio_cfg, kb, lexicon)
        ev = evaluate(eval_convs, res.bundle, kb, lexicon)
        m = ev.metrics
        delta = None
        if base is None:
            base = m
        else:
            delta = {k: getattr(m, k) - getattr(base, k) for k in m.as_dict()}
        rows.append(AblationRow(name, m, res.bundle.model.num_parameters(), res.trace[-1]["loss"], delta))
        log.info("ablation %s: uar=%.4f macro_f1=%.4f", name, m.uar, m.macro_f1)
    return rows


def format_ablation_table(rows: Sequence[AblationRow]) -> str:
    """Delta table in percentage points; the baseline row reads ``/``."""
    header = f"{'variant':<10} | {'UAR':>8} | {'M-F1':>8} | {'params':>8}"
    lines = [header, "-" * len(header)]
    for r in rows:
        if r.delta is None:
            uar = mf1 = "/"
        else:
            uar = f"{100 * r.delta['uar']:+.2f}"
            mf1 = f"{100 * r.delta['macro_f1']:+.2f}"
        lines.append(f"{r.variant:<10} | {uar:>8} | {mf1:>8} | {r.n_params:>8d}")
    return "\n".join(lines)
