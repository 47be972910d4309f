"""
锚框模块
生成多层级锚框网格, 并按交并比把真值框和教师嵌入分配给锚框

层级 l 的步长为 2^l, 基础边长为 base_size_multiplier·2^l,
每个特征格上有 S 个倍频尺度 2^(k/S) 与 R 个宽高比 (w/h)。
展平顺序: 层级 → 行 → 列 → 尺度 → 宽高比。
"""

import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from loguru import logger

from errors import ValidationError
from geometry import Box, boxes_to_array, iou_matrix

# 锚框标签
NEGATIVE = -1
IGNORE = -2


@dataclass(frozen=True)
class AnchorConfig:
    """锚框配置, 默认值与RetinaNet一致"""

    levels: Tuple[int, ...] = (3, 4, 5, 6, 7)
    scales_per_level: int = 3
    aspect_ratios: Tuple[float, ...] = (0.25, 0.5, 1.0)
    base_size_multiplier: float = 4.0
    positive_iou: float = 0.5
    negative_iou: float = 0.4

    def __post_init__(self):
        if len(self.levels) == 0:
            raise ValidationError("锚框层级列表不能为空")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValidationError(f"锚框层级必须严格递增: {self.levels}")
        if self.scales_per_level < 1:
            raise ValidationError(f"每层尺度数必须为正: {self.scales_per_level}")
        if len(self.aspect_ratios) == 0 or any(r <= 0 for r in self.aspect_ratios):
            raise ValidationError(f"宽高比必须为正: {self.aspect_ratios}")
        if self.base_size_multiplier <= 0:
            raise ValidationError(f"基础尺寸倍数必须为正: {self.base_size_multiplier}")
        if not self.positive_iou > self.negative_iou:
            raise ValidationError(
                f"正样本阈值必须大于负样本阈值: {self.positive_iou} <= {self.negative_iou}")

    @property
    def anchors_per_cell(self):
        return self.scales_per_level * len(self.aspect_ratios)


@dataclass
class LevelGrid:
    """单个层级的锚框"""

    level: int
    stride: int
    height: int
    width: int
    boxes: np.ndarray  # (H_l·W_l·S·R, 4)


@dataclass
class AnchorGrid:
    """多层级锚框网格"""

    config: AnchorConfig
    image_width: float
    image_height: float
    levels: List[LevelGrid] = field(default_factory=list)

    @property
    def num_anchors(self):
        return sum(lv.boxes.shape[0] for lv in self.levels)

    def all_boxes(self):
        """所有层级锚框拼接为 (N,4) 数组"""
        return np.concatenate([lv.boxes for lv in self.levels], axis=0)

    def boxes(self):
        return [Box.from_array(row) for row in self.all_boxes()]


@dataclass
class AnchorAssignment:
    """
    锚框分配结果

    labels[i] >= 0 为正样本对应的真值索引, NEGATIVE 为负样本, IGNORE 为忽略
    """

    labels: np.ndarray
    max_iou: np.ndarray
    gt_boxes: np.ndarray
    gt_embeddings: np.ndarray

    @property
    def num_positive(self):
        return int(np.count_nonzero(self.labels >= 0))

    @property
    def num_negative(self):
        return int(np.count_nonzero(self.labels == NEGATIVE))

    @property
    def num_ignore(self):
        return int(np.count_nonzero(self.labels == IGNORE))

    def positive_indices(self):
        return np.flatnonzero(self.labels >= 0)

    def target_box(self, anchor_index):
        gt = self.labels[anchor_index]
        if gt < 0:
            return None
        return Box.from_array(self.gt_boxes[gt])

    def target_embedding(self, anchor_index):
        """未分配的锚框没有伪真值嵌入, 返回None"""
        gt = self.labels[anchor_index]
        if gt < 0:
            return None
        return self.gt_embeddings[gt]

    def positive_targets(self):
        """
        返回:
            (正样本锚框索引, 目标框数组(P,4), 目标教师嵌入(P,D_t))
        """
        idx = self.positive_indices()
        gt = self.labels[idx]
        return idx, self.gt_boxes[gt], self.gt_embeddings[gt]


def _level_boxes(config, level, feat_h, feat_w):
    stride = 2 ** level
    base = config.base_size_multiplier * stride
    shapes = []
    for k in range(config.scales_per_level):
        size = base * 2.0 ** (k / config.scales_per_level)
        for ratio in config.aspect_ratios:
            w = size * math.sqrt(ratio)
            h = size / math.sqrt(ratio)
            shapes.append((w, h))
    shapes = np.array(shapes, dtype=float)  # (S·R, 2)

    cy, cx = np.meshgrid((np.arange(feat_h) + 0.5) * stride,
                         (np.arange(feat_w) + 0.5) * stride, indexing='ij')
    centers = np.stack([cx.ravel(), cy.ravel()], axis=1)  # (H·W, 2)

    half = 0.5 * shapes[None, :, :]
    c = centers[:, None, :]
    boxes = np.concatenate([c - half, c + half], axis=2)
    return boxes.reshape(-1, 4)


def generate_anchors(config, image_width, image_height):
    """
    生成多层级锚框网格

    参数:
        config: AnchorConfig
        image_width, image_height: 图像尺寸 (像素)

    返回:
        AnchorGrid, 锚框中心位于特征格中心 (i+0.5)·stride, 不裁剪到图像边界
    """
    if image_width <= 0 or image_height <= 0:
        raise ValidationError(f"图像尺寸必须为正: {image_width}x{image_height}")

    grid = AnchorGrid(config=config, image_width=image_width, image_height=image_height)
    for level in config.levels:
        stride = 2 ** level
        feat_h = math.ceil(image_height / stride)
        feat_w = math.ceil(image_width / stride)
        boxes = _level_boxes(config, level, feat_h, feat_w)
        grid.levels.append(LevelGrid(level, stride, feat_h, feat_w, boxes))
    return grid


def assign_anchors(grid, gts):
    """
    按交并比为每个锚框分配标签

    参数:
        grid: AnchorGrid
        gts: (Box, 教师嵌入) 列表

    返回:
        AnchorAssignment; 交并比并列时取真值索引最小者
    """
    config = grid.config
    anchors = grid.all_boxes()
    n = anchors.shape[0]

    if len(gts) == 0:
        return AnchorAssignment(
            labels=np.full(n, NEGATIVE, dtype=int),
            max_iou=np.zeros(n),
            gt_boxes=np.zeros((0, 4)),
            gt_embeddings=np.zeros((0, 0)),
        )

    gt_boxes = boxes_to_array([b for b, _ in gts])
    embeddings = [np.asarray(getattr(e, 'values', e), dtype=float) for _, e in gts]
    dims = {e.shape[0] for e in embeddings}
    if len(dims) != 1:
        raise ValidationError(f"教师嵌入维度不一致: {sorted(dims)}")
    gt_embeddings = np.stack(embeddings)

    overlaps = iou_matrix(anchors, gt_boxes)
    best_gt = np.argmax(overlaps, axis=1)  # 并列时argmax取第一个, 即最小索引
    best_iou = overlaps[np.arange(n), best_gt]

    labels = np.full(n, IGNORE, dtype=int)
    labels[best_iou < config.negative_iou] = NEGATIVE
    positive = best_iou >= config.positive_iou
    labels[positive] = best_gt[positive]

    assignment = AnchorAssignment(labels, best_iou, gt_boxes, gt_embeddings)
    logger.debug("锚框分配: {} 个锚框, 正样本 {}, 负样本 {}, 忽略 {}",
                 n, assignment.num_positive, assignment.num_negative, assignment.num_ignore)
    return assignment


def encode_residuals(anchors, targets):
    """
    计算相对锚框的回归残差

    参数:
        anchors: (N,4) 锚框
        targets: (N,4) 目标框

    返回:
        (N,4) 残差: 中心偏移除以锚框尺寸, 宽高取对数比
    """
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    ax = anchors[:, 0] + 0.5 * aw
    ay = anchors[:, 1] + 0.5 * ah
    tw = targets[:, 2] - targets[:, 0]
    th = targets[:, 3] - targets[:, 1]
    tx = targets[:, 0] + 0.5 * tw
    ty = targets[:, 1] + 0.5 * th
    return np.stack([(tx - ax) / aw, (ty - ay) / ah, np.log(tw / aw), np.log(th / ah)], axis=1)


def decode_residuals(anchors, residuals):
    """encode_residuals 的逆变换"""
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    ax = anchors[:, 0] + 0.5 * aw
    ay = anchors[:, 1] + 0.5 * ah
    cx = ax + residuals[:, 0] * aw
    cy = ay + residuals[:, 1] * ah
    w = aw * np.exp(residuals[:, 2])
    h = ah * np.exp(residuals[:, 3])
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)
