"""
几何模块
轴对齐矩形框的基本运算, 其他模块共用

坐标为实数像素, 原点在左上角, 内部统一使用角点形式 (x_min, y_min, x_max, y_max)。
MOTChallenge 的 (x, y, w, h) 只在文件读写处转换。
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from errors import ValidationError


@dataclass(frozen=True)
class Box:
    """轴对齐矩形框 (不可变)"""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise ValidationError(f"矩形框坐标必须有限: {coords}")
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise ValidationError(f"矩形框角点顺序错误: {coords}")

    @property
    def width(self):
        """宽度 x_max - x_min"""
        return self.x_max - self.x_min

    @property
    def height(self):
        """高度 y_max - y_min"""
        return self.y_max - self.y_min

    @property
    def center(self):
        """中心点 (cx, cy)"""
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def as_array(self):
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max], dtype=float)

    def to_tlwh(self):
        """(左, 上, 宽, 高)"""
        return (self.x_min, self.y_min, self.width, self.height)

    def to_xyah(self):
        """
        转换为卡尔曼滤波的观测形式

        返回:
            (中心x, 中心y, 宽高比w/h, 高度h)
        """
        if self.height <= 0:
            raise ValidationError(f"高度为0的矩形框无法转换为观测: {self}")
        cx, cy = self.center
        return np.array([cx, cy, self.width / self.height, self.height], dtype=float)

    def translate(self, dx, dy):
        return Box(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    @classmethod
    def from_tlwh(cls, x, y, w, h):
        return cls(x, y, x + w, y + h)

    @classmethod
    def from_xyah(cls, xyah):
        """to_xyah 的逆变换"""
        cx, cy, a, h = (float(v) for v in xyah[:4])
        w = a * h
        return cls(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)

    @classmethod
    def from_array(cls, values):
        return cls(*(float(v) for v in values[:4]))


@dataclass(frozen=True)
class ScoredDetection:
    """
    带置信度的检测结果

    embedding 为可选的学生嵌入, 长度为 D_s
    """

    box: Box
    score: float
    embedding: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"检测置信度必须在[0,1]内: {self.score}")


def area(b):
    """矩形框面积"""
    return (b.x_max - b.x_min) * (b.y_max - b.y_min)


def iou(a, b):
    """
    计算两个矩形框的交并比

    参数:
        a, b: Box对象

    返回:
        交集面积/并集面积; 两个零面积框返回0
    """
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = area(a) + area(b) - inter
    if union <= 0:
        return 0.0
    return inter / union


def clip(b, width, height):
    """把矩形框裁剪到 [0,width]×[0,height] 范围内"""
    if width <= 0 or height <= 0:
        raise ValidationError(f"图像尺寸必须为正: {width}x{height}")
    return Box(
        min(max(b.x_min, 0.0), width),
        min(max(b.y_min, 0.0), height),
        min(max(b.x_max, 0.0), width),
        min(max(b.y_max, 0.0), height),
    )


def boxes_to_array(boxes):
    """Box列表 → (N,4) 数组"""
    if len(boxes) == 0:
        return np.zeros((0, 4), dtype=float)
    return np.array([[b.x_min, b.y_min, b.x_max, b.y_max] for b in boxes], dtype=float)


def iou_matrix(boxes_a, boxes_b):
    """
    向量化的两两交并比

    参数:
        boxes_a: (N,4) 角点数组或Box列表
        boxes_b: (M,4) 角点数组或Box列表

    返回:
        (N,M) 交并比矩阵
    """
    a = boxes_a if isinstance(boxes_a, np.ndarray) else boxes_to_array(boxes_a)
    b = boxes_b if isinstance(boxes_b, np.ndarray) else boxes_to_array(boxes_b)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]), dtype=float)

    ix1 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy1 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix2 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(ix2 - ix1, 0, None) * np.clip(iy2 - iy1, 0, None)

    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter

    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def paired_iou(boxes_a, boxes_b):
    """逐行交并比: (N,4) 与 (N,4) → (N,)"""
    a = np.asarray(boxes_a, dtype=float).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=float).reshape(-1, 4)
    if a.shape != b.shape:
        raise ValidationError(f"逐行交并比需要相同形状: {a.shape} != {b.shape}")
    iw = np.minimum(a[:, 2], b[:, 2]) - np.maximum(a[:, 0], b[:, 0])
    ih = np.minimum(a[:, 3], b[:, 3]) - np.maximum(a[:, 1], b[:, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1]) + (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1]) - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out
