"""Symmetry-aware pose errors and the evaluation metric suite.

AUC/VUS integrals are evaluated in closed form (the accuracy curves are
step functions of the sorted errors), so results are resolution
independent. Degrees and centimeters appear only in these reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aggregation import SymmetrySpec
from .geometry import Rotation, ScaledPose, box_iou, geodesic_distance

AUC_THRESHOLDS = (25, 50, 75)
VUS_THRESHOLDS = ((5, 2), (5, 5), (10, 2), (10, 5))


@dataclass(frozen=True)
class PoseError:
    rot_err: float    # degrees, in [0, 180]
    trans_err: float  # centimeters
    iou: float        # in [0, 1]

    def __post_init__(self):
        if not (np.isfinite(self.rot_err) and np.isfinite(self.trans_err)
                and np.isfinite(self.iou)):
            raise ValueError("pose error fields must be finite")
        if self.rot_err < 0 or self.rot_err > 180 or self.trans_err < 0 \
                or not (0 <= self.iou <= 1):
            raise ValueError(f"pose error out of range: {self}")


@dataclass(frozen=True)
class EvalInstance:
    gt: ScaledPose
    pred: ScaledPose
    symmetry: SymmetrySpec = SymmetrySpec()
    category: str = "uncategorized"


@dataclass
class MetricReport:
    auc_iou: dict[int, float]                 # threshold percent -> percent
    vus: dict[tuple[int, int], float]         # (deg, cm) -> percent
    per_category: dict[str, dict]
    instance_count: int


def sym_rotation_error(gt: Rotation, pred: Rotation, sym: SymmetrySpec) -> float:
    """Rotation error in degrees, discounting the object's symmetries."""
    if sym.kind == "none":
        angle = geodesic_distance(gt, pred)
    elif sym.kind == "discrete":
        angle = min(geodesic_distance(gt.compose(g), pred) for g in sym.group)
    else:  # continuous: angle between the two images of the symmetry axis
        a_gt = gt.apply(sym.axis)
        a_pred = pred.apply(sym.axis)
        angle = float(np.arccos(np.clip(a_gt @ a_pred, -1.0, 1.0)))
    return float(np.degrees(angle))


def _align_about_axis(reference: Rotation, target: Rotation, axis: np.ndarray) -> Rotation:
    """Rotate `target` about `axis` (object frame) to minimize distance to `reference`."""
    rel = reference.inverse().compose(target).q
    w, v = rel[0], rel[1:]
    phi = 2.0 * float(np.arctan2(-(v @ np.asarray(axis)), w))
    return target.compose(Rotation.from_axis_angle(axis, phi))


def pose_error(inst: EvalInstance) -> PoseError:
    """Rotation (deg), translation (cm), and box IoU for one instance.

    For continuous-symmetry objects the predicted box is first spun about
    the symmetry axis to the ground-truth azimuth, so IoU does not
    penalize free rotation.
    """
    rot_err = sym_rotation_error(inst.gt.pose.rotation, inst.pred.pose.rotation,
                                 inst.symmetry)
    trans_err = float(np.linalg.norm(inst.gt.pose.translation
                                     - inst.pred.pose.translation)) * 100.0
    gt_box = inst.gt.box()
    pred_box = inst.pred.box()
    if inst.symmetry.kind == "continuous":
        aligned = _align_about_axis(inst.gt.pose.rotation, inst.pred.pose.rotation,
                                    inst.symmetry.axis)
        pred_box = ScaledPose(
            inst.pred.pose.__class__(aligned, inst.pred.pose.translation),
            inst.pred.scale).box()
    iou = box_iou(gt_box, pred_box)
    return PoseError(min(rot_err, 180.0), trans_err, iou)


def auc_iou(instances: list[EvalInstance], n: int,
            errors: list[PoseError] | None = None) -> float:
    """Area under the accuracy-vs-IoU-threshold curve, thresholds n% to 100%.

    Closed form: each instance contributes max(0, iou - n/100), normalized
    by (1 - n/100).
    """
    if not instances:
        raise ValueError("auc_iou of empty instance list")
    errors = errors or [pose_error(i) for i in instances]
    low = n / 100.0
    contrib = [max(0.0, e.iou - low) for e in errors]
    return 100.0 * float(np.mean(contrib)) / (1.0 - low)


def vus(instances: list[EvalInstance], n: float, m: float,
        errors: list[PoseError] | None = None) -> float:
    """Volume under the joint accuracy surface up to n degrees and m cm.

    Closed form: each instance contributes (n - rot)+ * (m - trans)+ / (n*m).
    """
    if not instances:
        raise ValueError("vus of empty instance list")
    errors = errors or [pose_error(i) for i in instances]
    contrib = [max(0.0, n - e.rot_err) * max(0.0, m - e.trans_err) for e in errors]
    return 100.0 * float(np.mean(contrib)) / (n * m)


def metric_report(instances: list[EvalInstance]) -> MetricReport:
    """Full report: per-category metrics plus their unweighted mean."""
    if not instances:
        raise ValueError("metric_report of empty instance list")
    by_cat: dict[str, list[EvalInstance]] = {}
    for inst in instances:
        by_cat.setdefault(inst.category, []).append(inst)
    per_category = {}
    for cat, insts in sorted(by_cat.items()):
        errs = [pose_error(i) for i in insts]
        per_category[cat] = {
            "auc_iou": {n: auc_iou(insts, n, errs) for n in AUC_THRESHOLDS},
            "vus": {nm: vus(insts, nm[0], nm[1], errs) for nm in VUS_THRESHOLDS},
            "instance_count": len(insts),
        }
    cats = list(per_category.values())
    return MetricReport(
        auc_iou={n: float(np.mean([c["auc_iou"][n] for c in cats])) for n in AUC_THRESHOLDS},
        vus={nm: float(np.mean([c["vus"][nm] for c in cats])) for nm in VUS_THRESHOLDS},
        per_category=per_category,
        instance_count=len(instances),
    )


@dataclass
class TrackingSummary:
    fps: float
    vus_5_5: float
    miou: float   # percent
    rerr: float   # degrees
    terr: float   # centimeters


def tracking_summary(per_frame: list[PoseError], wall_times: list[float]) -> TrackingSummary:
    """Sequence-level tracking metrics: speed plus mean errors."""
    if not per_frame:
        raise ValueError("tracking_summary of empty frame list")
    if len(wall_times) != len(per_frame):
        raise ValueError("one wall time per frame required")
    total = float(np.sum(wall_times))
    if total <= 0:
        raise ValueError("total wall time must be positive")
    contrib = [max(0.0, 5.0 - e.rot_err) * max(0.0, 5.0 - e.trans_err) for e in per_frame]
    return TrackingSummary(
        fps=len(per_frame) / total,
        vus_5_5=100.0 * float(np.mean(contrib)) / 25.0,
        miou=100.0 * float(np.mean([e.iou for e in per_frame])),
        rerr=float(np.mean([e.rot_err for e in per_frame])),
        terr=float(np.mean([e.trans_err for e in per_frame])),
    )
