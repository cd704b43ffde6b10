"""Semantic IoU, panoptic quality and their mergeable accumulators."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from .primitives import OBJECT_CLASSES, SemanticClass
from .render import PanopticImage

NUM_CLASSES = len(SemanticClass)
THING_CLASSES = tuple(int(c) for c in OBJECT_CLASSES)


@dataclass
class ConfusionAccumulator:
    tp: np.ndarray = field(default_factory=lambda: np.zeros(NUM_CLASSES, np.int64))
    fp: np.ndarray = field(default_factory=lambda: np.zeros(NUM_CLASSES, np.int64))
    fn: np.ndarray = field(default_factory=lambda: np.zeros(NUM_CLASSES, np.int64))

    def update(self, pred, ref, ignore=None) -> "ConfusionAccumulator":
        pred = np.asarray(pred)
        ref = np.asarray(ref)
        if pred.shape != ref.shape:
            raise ValueError(f"shape mismatch: {pred.shape} vs {ref.shape}")
        keep = np.ones(ref.shape, bool) if ignore is None else ~np.asarray(ignore, bool)
        if ignore is not None and np.shape(ignore) != ref.shape:
            raise ValueError("ignore mask shape mismatch")
        p = pred[keep].astype(np.int64)
        r = ref[keep].astype(np.int64)
        cm = np.bincount(r * NUM_CLASSES + p, minlength=NUM_CLASSES * NUM_CLASSES).reshape(NUM_CLASSES, NUM_CLASSES)
        diag = np.diag(cm)
        self.tp += diag
        self.fp += cm.sum(axis=0) - diag
        self.fn += cm.sum(axis=1) - diag
        return self

    def merge(self, other: "ConfusionAccumulator") -> "ConfusionAccumulator":
        return ConfusionAccumulator(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def iou(self, cls: int) -> Optional[float]:
        union = self.tp[cls] + self.fp[cls] + self.fn[cls]
        return None if union == 0 else float(self.tp[cls]) / float(union)

    def result(self) -> "IoUResult":
        per = {SemanticClass(c): self.iou(c) for c in THING_CLASSES}
        vals = [v for v in per.values() if v is not None]
        return IoUResult(per, float(np.mean(vals)) if vals else float("nan"))


@dataclass(frozen=True)
class IoUResult:
    per_class: Dict[SemanticClass, Optional[float]]
    miou: float


def miou(pred, ref, ignore=None) -> IoUResult:
    """Per-class IoU and their mean over the object classes with nonzero union."""
    return ConfusionAccumulator().update(pred, ref, ignore).result()


def miou_3d(pred, ref) -> IoUResult:
    """Point-wise IoU; ``ref.ignore`` points are excluded."""
    p = getattr(pred, "semantic", pred)
    r = getattr(ref, "semantic", ref)
    if len(p) != len(r):
        raise ValueError(f"point count mismatch: {len(p)} vs {len(r)}")
    return miou(p, r, getattr(ref, "ignore", None))


# ---------------------------------------------------------------------------
# panoptic quality


@dataclass
class PanopticAccumulator:
    tp: np.ndarray = field(default_factory=lambda: np.zeros(NUM_CLASSES, np.int64))
    fp: np.ndarray = field(default_factory=lambda: np.zeros(NUM_CLASSES, np.int64))
    fn: np.ndarray = field(default_factory=lambda: np.zeros(NUM_CLASSES, np.int64))
    iou_sum: np.ndarray = field(default_factory=lambda: np.zeros(NUM_CLASSES, float))

    def update(self, pred: PanopticImage, ref: PanopticImage) -> "PanopticAccumulator":
        """Match segments of one image pair; ``ref.ignore`` marks void pixels."""
        if pred.ids.shape != ref.ids.shape:
            raise ValueError(f"shape mismatch: {pred.ids.shape} vs {ref.ids.shape}")
        void = ref.ignore
        valid = ~void
        # prediction areas count every pixel; void overlap is removed from unions
        p_ids, p_area = np.unique(pred.ids, return_counts=True)
        p_area = dict(zip(p_ids.tolist(), p_area.tolist()))
        pv_ids, pv_cnt = np.unique(pred.ids[void], return_counts=True)
        p_void = dict(zip(pv_ids.tolist(), pv_cnt.tolist()))
        g_ids, g_area = np.unique(ref.ids[valid], return_counts=True)
        g_area = dict(zip(g_ids.tolist(), g_area.tolist()))
        pairs, inter = np.unique(
            np.stack([pred.ids[valid], ref.ids[valid]], axis=1), axis=0, return_counts=True
        ) if valid.any() else (np.zeros((0, 2), np.int64), np.zeros(0, np.int64))
        matched_p, matched_g = set(), set()
        for (pi, gi), n in zip(pairs.tolist(), inter.tolist()):
            pc, gc = pred.classes[pi], ref.classes[gi]
            if pc != gc:
                continue
            union = p_area[pi] + g_area[gi] - n - p_void.get(pi, 0)
            iou = n / union
            if iou > 0.5:
                self.tp[gc] += 1
                self.iou_sum[gc] += iou
                matched_p.add(pi)
                matched_g.add(gi)
        for gi in g_area:
            if gi not in matched_g:
                self.fn[ref.classes[gi]] += 1
        for pi, area in p_area.items():
            if pi in matched_p:
                continue
            if p_void.get(pi, 0) / area > 0.5:
                continue
            self.fp[pred.classes[pi]] += 1
        return self

    def merge(self, other: "PanopticAccumulator") -> "PanopticAccumulator":
        return PanopticAccumulator(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn,
                                   self.iou_sum + other.iou_sum)

    def class_quality(self, cls: int) -> Optional[Tuple[float, float, float]]:
        tp, fp, fn = self.tp[cls], self.fp[cls], self.fn[cls]
        if tp + fp + fn == 0:
            return None
        sq = float(self.iou_sum[cls] / tp) if tp else 0.0
        rq = float(tp / (tp + 0.5 * fp + 0.5 * fn))
        return sq, rq, sq * rq

    def result(self) -> "PanopticResult":
        per = {SemanticClass(c): self.class_quality(c) for c in THING_CLASSES}
        vals = [v for v in per.values() if v is not None]
        if vals:
            sq, rq, pq = (float(np.mean([v[i] for v in vals])) for i in range(3))
        else:
            sq = rq = pq = float("nan")
        return PanopticResult(per, sq, rq, pq)


@dataclass(frozen=True)
class PanopticResult:
    per_class: Dict[SemanticClass, Optional[Tuple[float, float, float]]]
    sq: float
    rq: float
    pq: float


def panoptic_from_segments(segments: Sequence[Tuple[int, int, np.ndarray]], shape, ignore=None) -> PanopticImage:
    """Rasterise ``(segment_id, class, mask)`` triples; overlapping masks are an error."""
    ids = np.zeros(shape, np.int64)
    taken = np.zeros(shape, bool)
    classes = {0: int(SemanticClass.BACKGROUND)}
    for sid, cls, mask in segments:
        mask = np.asarray(mask, bool)
        if np.any(taken & mask):
            raise ValueError(f"segment {sid} overlaps another segment")
        if sid in classes and sid != 0:
            raise ValueError(f"duplicate segment id {sid}")
        taken |= mask
        ids[mask] = sid
        classes[int(sid)] = int(cls)
    ign = np.zeros(shape, bool) if ignore is None else np.asarray(ignore, bool)
    return PanopticImage(ids, classes, ign)


def panoptic_quality(pred: PanopticImage, ref: PanopticImage) -> PanopticResult:
    return PanopticAccumulator().update(pred, ref).result()


# ---------------------------------------------------------------------------
# reports

REPORT_COLUMNS = ("IoU_Po", "IoU_TL", "IoU_TS", "mIoU", "SQ_th", "RQ_th", "PQ_th")


def report_row(iou: IoUResult, pq: Optional[PanopticResult] = None) -> Dict[str, float]:
    def val(x):
        return float("nan") if x is None else float(x)

    row = {
        "IoU_Po": val(iou.per_class[SemanticClass.POLE]),
        "IoU_TL": val(iou.per_class[SemanticClass.TRAFFIC_LIGHT]),
        "IoU_TS": val(iou.per_class[SemanticClass.TRAFFIC_SIGN]),
        "mIoU": iou.miou,
    }
    row["SQ_th"] = pq.sq if pq is not None else float("nan")
    row["RQ_th"] = pq.rq if pq is not None else float("nan")
    row["PQ_th"] = pq.pq if pq is not None else float("nan")
    return row


def format_table(rows: Dict[str, Dict[str, float]], columns: Iterable[str] = REPORT_COLUMNS) -> str:
    """Plain-text table with values in percent."""
    columns = list(columns)
    width = max([len(k) for k in rows] + [8])
    lines = [" ".join([" " * width] + [f"{c:>8}" for c in columns])]
    for name, row in rows.items():
        cells = []
        for c in columns:
            v = row.get(c, float("nan"))
            cells.append(f"{'-':>8}" if not np.isfinite(v) else f"{100 * v:8.1f}")
        lines.append(" ".join([f"{name:<{width}}"] + cells))
    return "\n".join(lines)


def format_key_values(rows: Dict[str, Dict[str, float]]) -> str:
    out = []
    for name, row in rows.items():
        for c, v in row.items():
            out.append(f"{name}.{c}={v:.6f}")
    return "\n".join(out) + "\n"
