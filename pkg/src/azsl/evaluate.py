"""Classification protocols and metrics: per-class top-1, harmonic mean, reports.

Transductive runs evaluate the student over the full class space (even for the
conventional task); inductive runs evaluate the generated-feature classifier.
Accuracies are macro-averaged per class and reported in percent.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .client import ArtifactBundle
from .data import Dataset, SplitBundle, MODE_TRANSDUCTIVE

TASK_CZSL = "czsl"
TASK_GZSL = "gzsl"


@dataclass
class EvalReport:
    task: str
    teacher_mode: str
    scenario: str
    u: float
    s: float | None
    h: float | None
    per_class: dict[int, float]
    confusion: np.ndarray
    seeds: list[int] = field(default_factory=list)
    transcript_digest: str = ""


def predict(params: nn.MlpParams, features: np.ndarray, class_space, head_classes=None) -> np.ndarray:
    """Argmax over the head columns restricted to class_space; ties -> lowest id."""
    class_space = np.asarray(sorted(class_space), dtype=np.int64)
    head = (
        np.arange(params.out_dim, dtype=np.int64)
        if head_classes is None
        else np.asarray(head_classes, dtype=np.int64)
    )
    cols = np.searchsorted(head, class_space)
    if cols.size == 0 or (cols >= len(head)).any() or (head[np.minimum(cols, len(head) - 1)] != class_space).any():
        raise ValueError("class space not covered by the model head")
    logits, _ = nn.mlp_forward(params, features)
    return class_space[logits[:, cols].argmax(axis=1)]


def per_class_top1(preds, labels, classes) -> float:
    """Macro top-1 in percent over the classes present in the evaluation set."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ValueError("predictions and labels must align")
    if labels.size == 0:
        raise ValueError("empty evaluation set")
    accs = []
    for c in np.asarray(sorted(classes), dtype=np.int64):
        mask = labels == c
        if mask.any():
            accs.append((preds[mask] == c).mean())
    if not accs:
        raise ValueError("no requested class appears in the evaluation set")
    return float(np.mean(accs) * 100.0)


def harmonic_mean(u: float, s: float) -> float:
    if u < 0 or s < 0:
        raise ValueError("accuracies must be >= 0")
    if u + s == 0:
        return 0.0
    return 2.0 * u * s / (u + s)


def _confusion(preds, labels, n_classes: int) -> np.ndarray:
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (labels, preds), 1)
    return m


def _per_class_from_confusion(confusion: np.ndarray, classes) -> dict[int, float]:
    out = {}
    for c in classes:
        row = confusion[c]
        total = row.sum()
        if total:
            out[int(c)] = float(row[c] / total * 100.0)
    return out


def _bundle_model(bundle: ArtifactBundle, split: SplitBundle):
    if split.teacher_mode == MODE_TRANSDUCTIVE:
        return bundle.student, bundle.student_classes
    if bundle.classifier is None:
        raise ValueError("inductive evaluation needs the generated-feature classifier")
    return bundle.classifier, bundle.classifier_classes


def eval_czsl(
    bundle: ArtifactBundle, split: SplitBundle, dataset: Dataset, masked: bool = False
) -> EvalReport:
    """Unseen-row evaluation. Transductive keeps the full class space unless masked."""
    rows = split.client_eval_unseen
    if rows.size == 0:
        raise ValueError("no unseen evaluation rows")
    model, head = _bundle_model(bundle, split)
    if split.teacher_mode == MODE_TRANSDUCTIVE:
        space = split.unseen_classes if masked else bundle.student_classes
    else:
        space = split.unseen_classes
    preds = predict(model, dataset.features[rows], space, head)
    labels = dataset.labels[rows]
    u = per_class_top1(preds, labels, split.unseen_classes)
    confusion = _confusion(preds, labels, dataset.n_classes)
    return EvalReport(
        task=TASK_CZSL,
        teacher_mode=split.teacher_mode,
        scenario=bundle.cfg.scenario,
        u=u,
        s=None,
        h=None,
        per_class=_per_class_from_confusion(confusion, split.unseen_classes),
        confusion=confusion,
        transcript_digest=bundle.transcript.digest(),
    )


def eval_gzsl(bundle: ArtifactBundle, split: SplitBundle, dataset: Dataset) -> EvalReport:
    """Seen + unseen evaluation over the full class space; reports u, s, H."""
    if split.client_eval_seen.size == 0 or split.client_eval_unseen.size == 0:
        raise ValueError("generalised evaluation needs both seen and unseen rows")
    model, head = _bundle_model(bundle, split)
    space = np.arange(dataset.n_classes)
    if split.teacher_mode == MODE_TRANSDUCTIVE:
        space = bundle.student_classes  # transductive head already covers all classes
    rows = np.concatenate([split.client_eval_seen, split.client_eval_unseen])
    preds = predict(model, dataset.features[rows], space, head)
    labels = dataset.labels[rows]
    n_seen = len(split.client_eval_seen)
    s = per_class_top1(preds[:n_seen], labels[:n_seen], split.seen_classes)
    u = per_class_top1(preds[n_seen:], labels[n_seen:], split.unseen_classes)
    confusion = _confusion(preds, labels, dataset.n_classes)
    present = sorted(set(labels.tolist()))
    return EvalReport(
        task=TASK_GZSL,
        teacher_mode=split.teacher_mode,
        scenario=bundle.cfg.scenario,
        u=u,
        s=s,
        h=harmonic_mean(u, s),
        per_class=_per_class_from_confusion(confusion, present),
        confusion=confusion,
        transcript_digest=bundle.transcript.digest(),
    )


def render_report(report: EvalReport) -> str:
    """Deterministic text form: key/value header plus a csv confusion block."""
    lines = [
        f"task: {report.task}",
        f"teacher_mode: {report.teacher_mode}",
        f"scenario: {report.scenario}",
        f"seeds: {','.join(str(s) for s in report.seeds)}",
        f"transcript: {report.transcript_digest}",
        f"u: {report.u:.2f}",
    ]
    if report.s is not None:
        lines.append(f"s: {report.s:.2f}")
        lines.append(f"H: {report.h:.2f}")
    lines.append("")
    lines.append("[per_class]")
    lines.append("class,accuracy")
    for c in sorted(report.per_class):
        lines.append(f"{c},{report.per_class[c]:.2f}")
    lines.append("")
    lines.append("[confusion]")
    lines.append("true\\pred," + ",".join(str(c) for c in range(report.confusion.shape[1])))
    for c, row in enumerate(report.confusion):
        lines.append(f"{c}," + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def save_report(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(render_report(report))


def export_projection(features: np.ndarray, labels, path: str | Path) -> None:
    """Top-2 PCA projection written as `label,pc1,pc2` csv for external plotting."""
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or len(x) < 2:
        raise ValueError("need at least 2 feature rows")
    centered = x - x.mean(axis=0)
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    if svals[0] <= 1e-12:
        raise ValueError("data has rank 0; nothing to project")
    comps = vt[:2]
    if comps.shape[0] < 2:  # single feature column: pad a zero direction
        comps = np.vstack([comps, np.zeros_like(comps[0])])
    for i in range(2):
        j = np.argmax(np.abs(comps[i]))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    proj = centered @ comps.T
    lines = ["label,pc1,pc2"]
    for lab, (a, b) in zip(labels, proj):
        lines.append(f"{lab},{float(a)!r},{float(b)!r}")
    Path(path).write_text("\n".join(lines) + "\n")
