"""
评测指标模块
检测 AP@0.5, CLEAR MOT 指标 (MOTA/MOTP/FP/FN/IDSW/MT/ML) 以及 IDF1/IDP/IDR

没有定义的比值 (例如真值为空时的MOTA) 记为 nan, 不记为0。
"""

import math
from dataclasses import asdict, dataclass, fields
from typing import List, Tuple

import motmetrics as mm
import numpy as np
import pandas as pd
from loguru import logger

from errors import ValidationError
from geometry import Box, boxes_to_array, iou_matrix
from mot_io import atomic_write

MOSTLY_TRACKED = 0.8
MOSTLY_LOST = 0.2


@dataclass
class GroundTruthFrame:
    frame_index: int
    entries: List[Tuple[int, Box]]

    def __post_init__(self):
        _check_unique(self.frame_index, [e[0] for e in self.entries], '真值')


@dataclass
class HypothesisFrame:
    frame_index: int
    entries: List[Tuple[int, Box, float]]

    def __post_init__(self):
        _check_unique(self.frame_index, [e[0] for e in self.entries], '跟踪结果')


def _check_unique(frame, ids, kind):
    if len(set(ids)) != len(ids):
        raise ValidationError(f"第{frame}帧{kind}中存在重复编号: {sorted(ids)}")


def _index(frames):
    """帧列表或 {帧号: 条目} → {帧号: 条目列表}"""
    if isinstance(frames, dict):
        return {f: list(entries) for f, entries in frames.items()}
    out = {}
    for frame in frames:
        out.setdefault(frame.frame_index, []).extend(frame.entries)
    return out


@dataclass
class ClearResult:
    """CLEAR MOT 指标; mt/ml 为轨迹条数"""

    mota: float
    motp: float
    fp: int
    fn: int
    idsw: int
    mt: int
    ml: int
    num_gt: int
    num_matches: int
    num_gt_tracks: int

    @property
    def mt_ratio(self):
        return self.mt / self.num_gt_tracks if self.num_gt_tracks else math.nan

    @property
    def ml_ratio(self):
        return self.ml / self.num_gt_tracks if self.num_gt_tracks else math.nan


def accumulate(gts, hyps, iou_thresh=0.5):
    """
    逐帧把真值与假设的距离 (1 - IoU) 累积到 motmetrics 的 MOTAccumulator

    IoU 低于门限的配对距离记为 nan, 不参与匹配。
    每个真值沿用其最近一次的对应假设 (仍满足门限时), 其余配对按距离做最小代价匹配。

    参数:
        gts: GroundTruthFrame 列表或 {帧号: [(gt_id, Box)]}
        hyps: HypothesisFrame 列表或 {帧号: [(hyp_id, Box, score)]}

    返回:
        MOTAccumulator; 两侧都没有框时为 None
    """
    gt_map, hyp_map = _index(gts), _index(hyps)
    frames = sorted(set(gt_map) | set(hyp_map))
    if not any(gt_map.values()) and not any(hyp_map.values()):
        return None
    acc = mm.MOTAccumulator(auto_id=True)
    for frame in frames:
        g, h = gt_map.get(frame, []), hyp_map.get(frame, [])
        ious = iou_matrix([e[1] for e in g], [e[1] for e in h])
        dists = np.where(ious >= iou_thresh, 1.0 - ious, np.nan)
        acc.update([e[0] for e in g], [e[0] for e in h], dists)
    return acc


def _summary(acc, metrics):
    return mm.metrics.create().compute(acc, metrics=metrics, name='sequence').iloc[0]


def _track_ratios(acc):
    """每个真值轨迹被匹配的帧数占其出现帧数的比例"""
    events = acc.mot_events
    per_object = events[events['Type'].isin(['MATCH', 'SWITCH', 'MISS'])]
    if per_object.empty:
        return pd.Series(dtype=float)
    hit = per_object['Type'].isin(['MATCH', 'SWITCH']).astype(float)
    return hit.groupby(per_object['OId']).mean()


def _clear_from(acc):
    if acc is None:
        return ClearResult(math.nan, math.nan, 0, 0, 0, 0, 0, 0, 0, 0)
    row = _summary(acc, ['num_objects', 'num_detections', 'num_false_positives', 'num_misses',
                         'num_switches', 'mota', 'motp'])
    num_gt, matches = int(row['num_objects']), int(row['num_detections'])
    ratios = _track_ratios(acc)
    return ClearResult(
        mota=float(row['mota']) if num_gt else math.nan,
        motp=float(row['motp']) if matches else math.nan,
        fp=int(row['num_false_positives']), fn=int(row['num_misses']),
        idsw=int(row['num_switches']),
        mt=int((ratios >= MOSTLY_TRACKED).sum()),
        ml=int((ratios <= MOSTLY_LOST).sum()),
        num_gt=num_gt, num_matches=matches, num_gt_tracks=len(ratios),
    )


def clear_metrics(gts, hyps, iou_thresh=0.5):
    """
    CLEAR MOT 指标

    参数:
        gts: GroundTruthFrame 列表或 {帧号: [(gt_id, Box)]}
        hyps: HypothesisFrame 列表或 {帧号: [(hyp_id, Box, score)]}

    返回:
        ClearResult; MOTP 为匹配对的平均 (1 - IoU)
    """
    return _clear_from(accumulate(gts, hyps, iou_thresh))


@dataclass
class IdentityResult:
    idf1: float
    idp: float
    idr: float
    idtp: int
    num_gt: int
    num_hyp: int


def _identity_from(acc, num_gt, num_hyp):
    if num_gt == 0 and num_hyp == 0:
        return IdentityResult(1.0, 1.0, 1.0, 0, 0, 0)
    idtp = 0
    if num_gt and num_hyp:
        idtp = int(_summary(acc, ['idtp'])['idtp'])
    return IdentityResult(
        idf1=2.0 * idtp / (num_gt + num_hyp),
        idp=idtp / num_hyp if num_hyp else math.nan,
        idr=idtp / num_gt if num_gt else math.nan,
        idtp=idtp, num_gt=num_gt, num_hyp=num_hyp,
    )


def _box_counts(gts, hyps):
    return (sum(len(v) for v in _index(gts).values()),
            sum(len(v) for v in _index(hyps).values()))


def idf1(gts, hyps, iou_thresh=0.5):
    """
    全局身份匹配下的 IDF1/IDP/IDR; 两侧都为空时约定全部为1

    真值身份与假设身份一一对应, 使 IoU >= 门限的共现帧数之和最大

    返回:
        IdentityResult
    """
    return _identity_from(accumulate(gts, hyps, iou_thresh), *_box_counts(gts, hyps))


def _box_score(entry):
    if hasattr(entry, 'box'):
        return entry.box, float(entry.score)
    return entry[1], float(entry[2])


def average_precision(dets, gts, iou_thresh=0.5):
    """
    AP@iou_thresh, 全点插值

    参数:
        dets: {帧号: [ScoredDetection 或 (id, Box, score)]} 或 HypothesisFrame 列表
        gts: GroundTruthFrame 列表或 {帧号: [(gt_id, Box)]}

    返回:
        AP; 真值为空时为 nan
    """
    det_map, gt_map = _index(dets), _index(gts)
    total_gt = sum(len(v) for v in gt_map.values())
    if total_gt == 0:
        return math.nan

    pool = [(frame,) + _box_score(e) for frame in sorted(det_map) for e in det_map[frame]]
    if not pool:
        return 0.0
    order = np.argsort(-np.array([p[2] for p in pool]), kind='stable')

    gt_boxes = {f: boxes_to_array([e[1] for e in v]) for f, v in gt_map.items()}
    used = {f: np.zeros(len(v), dtype=bool) for f, v in gt_map.items()}
    tp = np.zeros(len(pool))
    for rank, k in enumerate(order):
        frame, box, _ = pool[k]
        if frame not in gt_boxes or gt_boxes[frame].shape[0] == 0:
            continue
        ious = iou_matrix(boxes_to_array([box]), gt_boxes[frame])[0]
        ious[used[frame]] = -1.0
        best = int(np.argmax(ious))
        if ious[best] >= iou_thresh:
            used[frame][best] = True
            tp[rank] = 1.0

    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / total_gt
    precision = ctp / (ctp + cfp)

    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    changed = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[changed + 1] - mrec[changed]) * mpre[changed + 1]))


@dataclass
class SequenceEval:
    """单个序列的指标汇总"""

    name: str
    mota: float
    motp: float
    idf1: float
    idp: float
    idr: float
    fp: int
    fn: int
    idsw: int
    mt: int
    ml: int
    mt_ratio: float
    ml_ratio: float
    num_gt: int
    num_hyp: int
    idtp: int
    num_matches: int
    num_gt_tracks: int
    ap: float = math.nan


def evaluate_sequence(gts, hyps, dets=None, name='sequence', iou_thresh=0.5):
    """计算一个序列的全部指标; 给出检测时附带AP"""
    acc = accumulate(gts, hyps, iou_thresh)
    clear = _clear_from(acc)
    ident = _identity_from(acc, *_box_counts(gts, hyps))
    ap = average_precision(dets, gts, iou_thresh) if dets is not None else math.nan
    result = SequenceEval(
        name=name, mota=clear.mota, motp=clear.motp, idf1=ident.idf1, idp=ident.idp,
        idr=ident.idr, fp=clear.fp, fn=clear.fn, idsw=clear.idsw, mt=clear.mt, ml=clear.ml,
        mt_ratio=clear.mt_ratio, ml_ratio=clear.ml_ratio, num_gt=clear.num_gt,
        num_hyp=ident.num_hyp, idtp=ident.idtp, num_matches=clear.num_matches,
        num_gt_tracks=clear.num_gt_tracks, ap=ap,
    )
    logger.info("{}: MOTA={:.4f} IDF1={:.4f} IDSW={} FP={} FN={}", name, result.mota,
                result.idf1, result.idsw, result.fp, result.fn)
    return result


def _overall(evals):
    total = {k: sum(getattr(e, k) for e in evals)
             for k in ('fp', 'fn', 'idsw', 'mt', 'ml', 'num_gt', 'num_hyp', 'idtp',
                       'num_matches', 'num_gt_tracks')}
    distance = sum(e.motp * e.num_matches for e in evals if e.num_matches)
    aps = [e.ap for e in evals if not math.isnan(e.ap)]
    g, h, tracks = total['num_gt'], total['num_hyp'], total['num_gt_tracks']
    return SequenceEval(
        name='OVERALL',
        mota=1.0 - (total['fn'] + total['fp'] + total['idsw']) / g if g else math.nan,
        motp=distance / total['num_matches'] if total['num_matches'] else math.nan,
        idf1=2.0 * total['idtp'] / (g + h) if g + h else 1.0,
        idp=total['idtp'] / h if h else math.nan,
        idr=total['idtp'] / g if g else math.nan,
        mt_ratio=total['mt'] / tracks if tracks else math.nan,
        ml_ratio=total['ml'] / tracks if tracks else math.nan,
        ap=float(np.mean(aps)) if aps else math.nan,
        **total,
    )


def report_table(evals):
    """每个序列一行, 最后一行为汇总"""
    evals = list(evals)
    rows = [asdict(e) for e in evals]
    if evals:
        rows.append(asdict(_overall(evals)))
    return pd.DataFrame(rows, columns=[f.name for f in fields(SequenceEval)])


def write_report(evals, path):
    with atomic_write(path) as f:
        report_table(evals).to_csv(f, index=False, float_format='%.6f')
