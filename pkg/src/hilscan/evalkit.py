"""Scoring of pipeline decisions against labeled capture corpora.

The reporting convention here treats normal traffic as the positive
class: a true positive is normal traffic classified normal, and a false
positive is malicious traffic that slipped through as normal. That
inverts the usual IDS reading, so every report carries its convention
name; the "standard" convention (positive = malicious) is available as a
swap.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from hilscan import binvis, engine
from hilscan.capture import parse_capture
from hilscan.engine import SEVERITY_RANK
from hilscan.errors import EmptyCorpus, EmptyMatrix, HilscanError

LABEL_NORMAL = "normal"
LABEL_MALICIOUS = "malicious"

CONVENTION_POSITIVE_NORMAL = "positive=normal"
CONVENTION_POSITIVE_MALICIOUS = "positive=malicious"


@dataclass
class ConfusionMatrix:
    tp: int = 0  # normal classified normal
    fp: int = 0  # malicious classified normal
    tn: int = 0  # malicious classified malicious
    fn: int = 0  # normal classified malicious

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    def merged(self, other):
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)

    def to_json_dict(self):
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def swap_convention(cm):
    """Swap the positive class: (tp, fn) trade places with (tn, fp)."""
    return ConfusionMatrix(tp=cm.tn, fp=cm.fn, tn=cm.tp, fn=cm.fp)


def accumulate(pairs):
    """Tally (true label, predicted label) pairs, positive = normal."""
    cm = ConfusionMatrix()
    for true, predicted in pairs:
        if true not in (LABEL_NORMAL, LABEL_MALICIOUS):
            raise ValueError(f"unknown true label {true!r}")
        if predicted not in (LABEL_NORMAL, LABEL_MALICIOUS):
            raise ValueError(f"unknown predicted label {predicted!r}")
        if true == LABEL_NORMAL:
            if predicted == LABEL_NORMAL:
                cm.tp += 1
            else:
                cm.fn += 1
        else:
            if predicted == LABEL_NORMAL:
                cm.fp += 1
            else:
                cm.tn += 1
    return cm


@dataclass
class MetricsReport:
    """Metrics in [0, 1]; a metric whose denominator was zero is None and
    is omitted from serialized output rather than reported as 0."""

    accuracy: float | None = None
    fpr: float | None = None
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    convention: str = CONVENTION_POSITIVE_NORMAL

    def to_json_dict(self):
        out = {"convention": self.convention}
        for name in ("accuracy", "fpr", "precision", "recall", "f1"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out

    def to_table(self):
        rows = [("Accuracy", self.accuracy), ("FPR", self.fpr),
                ("Precision", self.precision), ("Recall", self.recall),
                ("F1-score", self.f1)]
        width = max(len(name) for name, _ in rows)
        lines = [f"{'Metric':<{width}}  Value ({self.convention})"]
        for name, value in rows:
            shown = f"{value * 100:.2f}%" if value is not None else "undefined"
            lines.append(f"{name:<{width}}  {shown}")
        return "\n".join(lines)


def compute_metrics(cm, convention=CONVENTION_POSITIVE_NORMAL):
    """Accuracy, FPR, precision, recall, and F1 from a confusion matrix.

    Each ratio is computed only when its denominator is positive; F1
    needs both precision and recall defined and not jointly zero.
    """
    if convention == CONVENTION_POSITIVE_MALICIOUS:
        cm = swap_convention(cm)
    elif convention != CONVENTION_POSITIVE_NORMAL:
        raise ValueError(f"unknown convention {convention!r}")
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix has no entries")

    report = MetricsReport(convention=convention)
    report.accuracy = (cm.tp + cm.tn) / cm.total
    if cm.fp + cm.tn > 0:
        report.fpr = cm.fp / (cm.fp + cm.tn)
    if cm.tp + cm.fp > 0:
        report.precision = cm.tp / (cm.tp + cm.fp)
    if cm.tp + cm.fn > 0:
        report.recall = cm.tp / (cm.tp + cm.fn)
    if (report.precision is not None and report.recall is not None
            and report.precision + report.recall > 0):
        report.f1 = (2 * report.precision * report.recall
                     / (report.precision + report.recall))
    return report


@dataclass
class FileDecision:
    path: str
    true_label: str
    predicted_label: str
    alert_count: int


@dataclass
class CorpusResult:
    matrix: ConfusionMatrix
    metrics: MetricsReport
    decisions: list[FileDecision]
    skipped: list[str]

    def decisions_csv(self):
        import io
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["path", "true", "predicted", "alert_count"])
        for d in self.decisions:
            writer.writerow([d.path, d.true_label, d.predicted_label, d.alert_count])
        return buf.getvalue()

    def to_json_dict(self):
        return {
            "matrix": self.matrix.to_json_dict(),
            "metrics": self.metrics.to_json_dict(),
            "files": len(self.decisions),
            "skipped": self.skipped,
        }


def _alerting(alerts):
    return [a for a in alerts if SEVERITY_RANK[a.severity] >= SEVERITY_RANK["warning"]]


def _decide_file(path, true_label, profiles, model, config, decision_mode):
    try:
        capture = parse_capture(Path(path).read_bytes())
    except (HilscanError, OSError) as exc:
        return None, f"{path}: {exc}"
    alerts = engine.run_offline(capture, profiles, model, config,
                                capture_id=Path(path).name)
    alerting = _alerting(alerts)
    if decision_mode == "any-alert":
        malicious = bool(alerting)
    elif decision_mode == "chunk-vote":
        # majority of chunks malicious, or any profiler flag
        stream = binvis.capture_byte_stream(capture, payload_only=config.payload_only)
        n_chunks = -(-len(stream) // config.chunk_size)  # ceil
        classifier_hits = sum(1 for a in alerting if a.source == "classifier")
        profiler_hits = any(a.source == "profiler" for a in alerting)
        malicious = profiler_hits or (n_chunks > 0 and classifier_hits * 2 > n_chunks)
    else:
        raise ValueError(f"unknown decision mode {decision_mode!r}")
    predicted = LABEL_MALICIOUS if malicious else LABEL_NORMAL
    return FileDecision(str(path), true_label, predicted, len(alerting)), None


def evaluate_corpus(normal_dir, malicious_dir, profiles, model, config,
                    decision_mode="any-alert", convention=CONVENTION_POSITIVE_NORMAL,
                    max_workers=None):
    """Run every capture in both directories through the offline pipeline
    and score the file-level decisions.

    A file is predicted malicious when the run emits any alert of warning
    severity or above (or by chunk majority in chunk-vote mode). Files
    that fail to parse are skipped and excluded from the matrix. Files
    evaluate in parallel; accumulation order is fixed by sorted path, so
    results are deterministic.
    """
    jobs = []
    for directory, label in ((normal_dir, LABEL_NORMAL), (malicious_dir, LABEL_MALICIOUS)):
        if directory is None:
            continue
        for path in sorted(Path(directory).iterdir()):
            if path.is_file():
                jobs.append((path, label))
    if not jobs:
        raise EmptyCorpus(f"no capture files under {normal_dir} or {malicious_dir}")

    decisions, skipped = [], []
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = list(pool.map(
            lambda job: _decide_file(job[0], job[1], profiles, model, config, decision_mode),
            jobs))
    for decision, failure in results:
        if decision is None:
            skipped.append(failure)
        else:
            decisions.append(decision)

    matrix = accumulate([(d.true_label, d.predicted_label) for d in decisions])
    metrics = compute_metrics(matrix, convention=convention)
    return CorpusResult(matrix, metrics, decisions, skipped)


def report_json(result):
    return json.dumps(result.to_json_dict(), indent=2)
