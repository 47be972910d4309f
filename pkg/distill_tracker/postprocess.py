"""
推理后处理模块
分数过滤 → 非极大值抑制 → 取前k个, 以及嵌入归一化

排序一律为稳定排序, 分数相同按输入顺序。
"""

from dataclasses import dataclass, replace

import numpy as np

from errors import ValidationError
from geometry import boxes_to_array, iou_matrix


@dataclass(frozen=True)
class PostprocessConfig:
    """分数阈值、NMS交并比阈值和最多保留的检测数"""

    score_threshold: float = 0.05
    nms_iou: float = 0.5
    max_detections: int = 100

    def __post_init__(self):
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValidationError(f"score_threshold 必须在[0,1]内: {self.score_threshold}")
        if not 0.0 < self.nms_iou <= 1.0:
            raise ValidationError(f"nms_iou 必须在(0,1]内: {self.nms_iou}")
        if self.max_detections < 1:
            raise ValidationError(f"max_detections 必须至少为1: {self.max_detections}")


def filter_scores(dets, threshold):
    """保留分数 >= threshold 的检测 (恰好等于阈值的保留)"""
    return [d for d in dets if d.score >= threshold]


def _descending(dets):
    scores = np.array([d.score for d in dets], dtype=float)
    return np.argsort(-scores, kind='stable')


def nms(dets, iou_threshold):
    """
    贪心非极大值抑制

    参数:
        dets: ScoredDetection 列表
        iou_threshold: 与已保留检测的交并比超过该值即被抑制

    返回:
        按分数降序排列的保留检测
    """
    if not dets:
        return []
    order = _descending(dets)
    boxes = boxes_to_array([dets[i].box for i in order])
    overlaps = iou_matrix(boxes, boxes)

    keep = []
    suppressed = np.zeros(len(order), dtype=bool)
    for rank in range(len(order)):
        if suppressed[rank]:
            continue
        keep.append(order[rank])
        suppressed |= overlaps[rank] > iou_threshold
    return [dets[i] for i in keep]


def top_k(dets, k):
    """分数最高的k个检测, 降序"""
    if k < 1:
        raise ValidationError(f"k 必须至少为1: {k}")
    return [dets[i] for i in _descending(dets)[:k]] if dets else []


def normalize_embedding(e):
    """
    L2归一化; 零向量原样返回零向量, 作为"没有外观信息"的退化标记
    """
    e = np.asarray(e, dtype=float)
    norm = np.linalg.norm(e)
    if norm == 0.0 or not np.isfinite(norm):
        return np.zeros_like(e)
    return e / norm


def is_degenerate(e):
    """嵌入缺失或为零向量"""
    return e is None or not np.any(e)


def postprocess(dets, config=PostprocessConfig()):
    """
    完整后处理流水线: 过滤 → NMS → top_k, 并归一化保留检测的嵌入
    """
    kept = top_k(nms(filter_scores(dets, config.score_threshold), config.nms_iou),
                 config.max_detections) if dets else []
    return [replace(d, embedding=normalize_embedding(d.embedding)) if d.embedding is not None else d
            for d in kept]
