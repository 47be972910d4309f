"""
玩具学生头训练模块
在逐锚框特征上训练一个两层的学生头 (分类、框回归、嵌入三个输出),
用加权总损失回归固定投影教师给出的嵌入

正负样本和框回归目标由锚框网格按交并比分配得到。
卷积换成逐锚框的仿射层, 批归一化换成固定的特征标准化加隐层的逐样本L2归一化。
"""

import math
from dataclasses import dataclass, field
from typing import List

import numpy as np
from loguru import logger
from tqdm import tqdm

from anchors import IGNORE, NEGATIVE, AnchorConfig, assign_anchors, decode_residuals, encode_residuals, generate_anchors
from distill import truncate
from errors import TrainingDivergedError, ValidationError
from geometry import Box, paired_iou
from losses import (FocalParams, HuberParams, LossWeights, embedding_loss, focal_loss,
                    huber_loss, total_loss)

POSITIVE_LABEL = 1
NEGATIVE_LABEL = 0
IGNORE_LABEL = -1
# 分类输出的先验概率, 用于初始化偏置
CLASS_PRIOR = 0.01
# 目标框形状取自 3~5 层的方形和 1:2 锚框形状, 与被训练的锚框配置无关
OBJECT_LEVELS = (3, 4, 5)
OBJECT_RATIOS = (0.5, 1.0)
OBJECT_JITTER = 0.03


@dataclass(frozen=True)
class ToyHeadConfig:
    """玩具学生头及其训练/数据的配置"""

    feature_dim: int = 64
    hidden_dim: int = 256
    student_dim: int = 128
    learning_rate: float = 0.02
    iterations: int = 2000
    batch_size: int = 128
    rng_seed: int = 0
    momentum: float = 0.9
    weight_decay: float = 1e-4
    warmup_iterations: int = 100
    warmup_learning_rate: float = 0.001
    init_scale: float = 0.25
    identity_count: int = 200
    samples_per_identity: int = 10
    heldout_per_identity: int = 5
    negative_ratio: int = 3
    feature_noise: float = 0.3
    image_size: int = 256

    def __post_init__(self):
        positive = ('feature_dim', 'hidden_dim', 'student_dim', 'learning_rate', 'iterations',
                    'batch_size', 'init_scale', 'identity_count', 'samples_per_identity',
                    'heldout_per_identity', 'image_size')
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} 必须为正: {getattr(self, name)}")
        if self.rng_seed < 0:
            raise ValidationError(f"rng_seed 必须非负: {self.rng_seed}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError(f"momentum 必须在[0,1)内: {self.momentum}")
        if self.weight_decay < 0 or self.warmup_iterations < 0 or self.warmup_learning_rate < 0:
            raise ValidationError("weight_decay/warmup 参数必须非负")
        if self.negative_ratio < 0 or self.feature_noise < 0:
            raise ValidationError("negative_ratio/feature_noise 必须非负")


@dataclass
class ToyAnchorSet:
    """
    逐锚框的特征和标签

    labels: 1 正样本, 0 负样本, -1 忽略
    residuals: 正样本相对锚框的回归残差 (N,4), 其余为0
    identities: 正样本的身份编号, 其余为-1
    anchors: 锚框角点 (N,4)
    gt_boxes: 正样本对应的真值框 (N,4), 其余为0
    """

    features: np.ndarray
    labels: np.ndarray
    residuals: np.ndarray
    identities: np.ndarray
    anchors: np.ndarray
    gt_boxes: np.ndarray

    def __len__(self):
        return self.features.shape[0]

    @property
    def positive(self):
        """正样本掩码"""
        return self.labels == POSITIVE_LABEL

    @classmethod
    def concat(cls, parts, feature_dim):
        """按行拼接多个锚框集合"""
        if not parts:
            return cls(np.zeros((0, feature_dim)), np.zeros(0, dtype=int), np.zeros((0, 4)),
                       np.zeros(0, dtype=int), np.zeros((0, 4)), np.zeros((0, 4)))
        return cls(*(np.concatenate([getattr(p, name) for p in parts])
                     for name in ('features', 'labels', 'residuals', 'identities', 'anchors', 'gt_boxes')))


@dataclass
class ToyDataset:
    train: ToyAnchorSet
    heldout: ToyAnchorSet


class ProjectionTeacher:
    """固定随机投影 + L2归一化, 充当逐锚框特征上的教师嵌入器"""

    def __init__(self, feature_dim, dim=512, seed=0):
        rng = np.random.default_rng([seed, 101])
        self.dim = dim
        self.projection = rng.standard_normal((feature_dim, dim)) / math.sqrt(feature_dim)

    def embed_features(self, features):
        """(N,feature_dim) → (N,D_t) 单位向量"""
        out = features @ self.projection
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        return out / np.maximum(norms, 1e-12)


def object_shapes():
    """玩具目标框的 (宽, 高) 候选"""
    shapes = []
    for level in OBJECT_LEVELS:
        for k in range(3):
            size = 4.0 * 2 ** level * 2.0 ** (k / 3)
            for ratio in OBJECT_RATIOS:
                shapes.append((size * math.sqrt(ratio), size / math.sqrt(ratio)))
    return np.array(shapes)


def make_toy_dataset(config, anchor_config=AnchorConfig(), source=0):
    """
    生成玩具数据

    每个样本是一张只含一个目标的图像: 目标框随机放置, 经锚框分配得到正/负/忽略锚框。
    正样本特征 = 身份潜在向量 + 残差相关分量 + 噪声, 负样本 (背景) 沿固定方向偏移。
    默认锚框配置下每个目标至少有一个正样本锚框。
    不同 source 的身份和目标互不相同, 残差分量和背景方向由 rng_seed 决定, 各数据源共用。

    参数:
        config: ToyHeadConfig
        anchor_config: AnchorConfig
        source: 数据源编号

    返回:
        ToyDataset, 留出集只含正样本
    """
    world = np.random.default_rng([config.rng_seed, 103])
    rng = np.random.default_rng([config.rng_seed, 102, source])
    dim = config.feature_dim
    latents = rng.standard_normal((config.identity_count, dim))
    mixing = world.standard_normal((4, dim))
    background = np.zeros(dim)
    background[0] = 4.0
    grid = generate_anchors(anchor_config, config.image_size, config.image_size)
    anchors = grid.all_boxes()
    shapes = object_shapes()

    def rows(idx, features, label, residuals=None, identity=-1, gt_boxes=None):
        n = idx.size
        return ToyAnchorSet(
            features=features,
            labels=np.full(n, label, dtype=int),
            residuals=np.zeros((n, 4)) if residuals is None else residuals,
            identities=np.full(n, identity, dtype=int),
            anchors=anchors[idx],
            gt_boxes=np.zeros((n, 4)) if gt_boxes is None else gt_boxes,
        )

    def sample(identity, with_background):
        w, h = shapes[rng.integers(len(shapes))] * np.exp(rng.uniform(-OBJECT_JITTER, OBJECT_JITTER, 2))
        cx, cy = rng.uniform(0.0, config.image_size, 2)
        box = Box(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
        assignment = assign_anchors(grid, [(box, latents[identity])])
        idx, targets, identity_latents = assignment.positive_targets()
        residuals = encode_residuals(anchors[idx], targets)
        noise = rng.standard_normal((idx.size, dim)) * config.feature_noise
        parts = [rows(idx, identity_latents + residuals @ mixing + noise, POSITIVE_LABEL,
                      residuals, identity + source * config.identity_count, targets)]
        if not with_background or idx.size == 0:
            return parts

        neg = rng.choice(np.flatnonzero(assignment.labels == NEGATIVE),
                         size=idx.size * config.negative_ratio, replace=False)
        parts.append(rows(neg, rng.standard_normal((neg.size, dim)) + background, NEGATIVE_LABEL))
        pool = np.flatnonzero(assignment.labels == IGNORE)
        ign = rng.choice(pool, size=min(idx.size, pool.size), replace=False)
        # 与目标部分重叠: 身份信息减半
        ign_feats = 0.5 * (latents[identity] + background) + rng.standard_normal((ign.size, dim))
        parts.append(rows(ign, ign_feats, IGNORE_LABEL))
        return parts

    def build(per_identity, with_background):
        parts = []
        for identity in range(config.identity_count):
            for _ in range(per_identity):
                parts.extend(sample(identity, with_background))
        return ToyAnchorSet.concat(parts, dim)

    train = build(config.samples_per_identity, True)
    heldout = build(config.heldout_per_identity, False)
    logger.debug("玩具数据: 训练锚框 {} (正样本 {}), 留出正样本 {}", len(train),
                 int(train.positive.sum()), len(heldout))
    return ToyDataset(train, heldout)


class ToyHead:
    """
    两层学生头: h = normalize(tanh(W1·x̃ + b1)), 分类/回归/嵌入三个仿射输出共享 h

    x̃ 是用训练集统计量做过标准化的特征; h 按样本归一化为单位向量
    """

    PARAMS = ('w1', 'b1', 'w_cls', 'b_cls', 'w_box', 'b_box', 'w_emb', 'b_emb')
    DECAYED = ('w1', 'w_cls', 'w_box', 'w_emb')

    def __init__(self, feature_dim, hidden_dim, student_dim, rng, init_scale=0.25,
                 mean=None, std=None):
        self.mean = np.zeros(feature_dim) if mean is None else mean
        self.std = np.ones(feature_dim) if std is None else std
        self.w1 = rng.standard_normal((feature_dim, hidden_dim)) * (init_scale / math.sqrt(feature_dim))
        self.b1 = np.zeros(hidden_dim)
        self.w_cls = rng.standard_normal(hidden_dim) * 0.01
        self.b_cls = np.array(-math.log((1.0 - CLASS_PRIOR) / CLASS_PRIOR))
        self.w_box = rng.standard_normal((hidden_dim, 4)) * 0.01
        self.b_box = np.zeros(4)
        self.w_emb = rng.standard_normal((hidden_dim, student_dim)) * 0.01
        self.b_emb = np.zeros(student_dim)

    def hidden(self, features):
        """
        返回:
            (标准化输入 x̃, tanh 激活 a, 激活范数 (N,1), 归一化隐层 h)
        """
        x = (features - self.mean) / self.std
        a = np.tanh(x @ self.w1 + self.b1)
        norm = np.maximum(np.linalg.norm(a, axis=1, keepdims=True), 1e-12)
        return x, a, norm, a / norm

    def forward(self, features):
        """
        返回:
            (分类概率, 框残差, 学生嵌入, hidden() 的中间结果)
        """
        cache = self.hidden(features)
        h = cache[3]
        logits = h @ self.w_cls + self.b_cls
        probs = 1.0 / (1.0 + np.exp(-logits))
        return probs, h @ self.w_box + self.b_box, h @ self.w_emb + self.b_emb, cache

    def embed(self, features):
        """学生嵌入 (未归一化)"""
        return self.hidden(features)[3] @ self.w_emb + self.b_emb

    def predict_boxes(self, features, anchors):
        """预测残差并按锚框解码为角点框"""
        residuals = self.hidden(features)[3] @ self.w_box + self.b_box
        return decode_residuals(anchors, residuals)

    def parameters_finite(self):
        return all(np.all(np.isfinite(getattr(self, name))) for name in self.PARAMS)


def hidden_backward(dh, cache):
    """隐层输出梯度 → 隐层预激活梯度, 经过L2归一化和tanh"""
    _, a, norm, h = cache
    da = (dh - h * np.sum(dh * h, axis=1, keepdims=True)) / norm
    return da * (1.0 - a * a)


@dataclass
class LossRecord:
    iteration: int
    cls: float
    box: float
    emb: float
    total: float


@dataclass
class TrainResult:
    head: ToyHead
    curve: List[LossRecord] = field(default_factory=list)
    initial_embedding_loss: float = 0.0
    final_embedding_loss: float = 0.0


def learning_rate_at(iteration, config):
    """线性预热后余弦衰减到0"""
    if iteration < config.warmup_iterations:
        frac = iteration / config.warmup_iterations
        return config.warmup_learning_rate + (config.learning_rate - config.warmup_learning_rate) * frac
    span = max(1, config.iterations - config.warmup_iterations)
    progress = (iteration - config.warmup_iterations) / span
    return 0.5 * config.learning_rate * (1.0 + math.cos(math.pi * progress))


def _full_embedding_loss(head, anchors, targets):
    pos = anchors.positive
    if not np.any(pos):
        return 0.0
    loss, _ = embedding_loss(head.embed(anchors.features[pos]), targets[pos])
    return loss


def train_toy_head(anchors, teacher_targets, config, weights=LossWeights(),
                   focal=FocalParams(), huber=HuberParams(), progress=False):
    """
    用带动量的随机梯度下降训练玩具学生头

    各项损失都按批内正样本数平均; 隐层归一化使输出层的曲率不随第一层权重增长。

    参数:
        anchors: ToyAnchorSet 训练数据
        teacher_targets: (N, D_s) 截断后的教师嵌入, 只使用正样本行
        config: ToyHeadConfig
        weights, focal, huber: 损失参数
        progress: 是否显示进度条

    返回:
        TrainResult, 损失曲线逐迭代记录
    """
    teacher_targets = np.asarray(teacher_targets, dtype=float)
    n = len(anchors)
    if anchors.features.shape != (n, config.feature_dim):
        raise ValidationError(f"特征形状 {anchors.features.shape} 与 feature_dim={config.feature_dim} 不符")
    if teacher_targets.shape != (n, config.student_dim):
        raise ValidationError(
            f"教师目标形状 {teacher_targets.shape} 与 ({n}, {config.student_dim}) 不符")
    if np.unique(anchors.identities[anchors.positive]).size < 2:
        raise ValidationError("训练数据至少需要2个身份")

    rng_init = np.random.default_rng([config.rng_seed, 1])
    rng_batch = np.random.default_rng([config.rng_seed, 2])
    mean = anchors.features.mean(axis=0)
    std = np.maximum(anchors.features.std(axis=0), 1e-8)
    head = ToyHead(config.feature_dim, config.hidden_dim, config.student_dim, rng_init,
                   config.init_scale, mean, std)
    velocity = {name: np.zeros_like(getattr(head, name)) for name in ToyHead.PARAMS}
    usable = np.flatnonzero(anchors.labels != IGNORE_LABEL)
    batch_size = min(config.batch_size, usable.size)

    result = TrainResult(head=head)
    result.initial_embedding_loss = _full_embedding_loss(head, anchors, teacher_targets)

    for it in tqdm(range(config.iterations), desc='traintoy', disable=not progress):
        batch = rng_batch.choice(usable, size=batch_size, replace=False)
        labels = anchors.labels[batch]
        pos = labels == POSITIVE_LABEL
        n_pos = max(1, int(np.count_nonzero(pos)))
        probs, boxes, embs, cache = head.forward(anchors.features[batch])
        x, h = cache[0], cache[3]

        fl, dfl_dp = focal_loss(probs, labels, focal)
        loss_c = float(np.sum(fl)) / n_pos
        g_logit = weights.alpha_c * dfl_dp * probs * (1.0 - probs) / n_pos

        g_box = np.zeros_like(boxes)
        g_emb = np.zeros_like(embs)
        loss_b = loss_e = 0.0
        if np.any(pos):
            hl, hg = huber_loss(boxes[pos], anchors.residuals[batch][pos], huber)
            loss_b = float(np.sum(hl)) / n_pos
            g_box[pos] = weights.alpha_b * hg / n_pos
            loss_e, demb = embedding_loss(embs[pos], teacher_targets[batch][pos])
            g_emb[pos] = weights.alpha_e * demb

        total = total_loss(loss_c, loss_b, loss_e, weights)
        if not math.isfinite(total):
            raise TrainingDivergedError(it, total)

        dh = np.outer(g_logit, head.w_cls) + g_box @ head.w_box.T + g_emb @ head.w_emb.T
        dz = hidden_backward(dh, cache)
        grads = {
            'w1': x.T @ dz, 'b1': dz.sum(axis=0),
            'w_cls': h.T @ g_logit, 'b_cls': np.array(g_logit.sum()),
            'w_box': h.T @ g_box, 'b_box': g_box.sum(axis=0),
            'w_emb': h.T @ g_emb, 'b_emb': g_emb.sum(axis=0),
        }
        lr = learning_rate_at(it, config)
        for name in ToyHead.PARAMS:
            g = grads[name]
            if name in ToyHead.DECAYED:
                g = g + config.weight_decay * getattr(head, name)
            velocity[name] = config.momentum * velocity[name] + g
            setattr(head, name, getattr(head, name) - lr * velocity[name])
        if not head.parameters_finite():
            raise TrainingDivergedError(it, float('nan'))

        result.curve.append(LossRecord(it, loss_c, loss_b, loss_e, total))

    result.final_embedding_loss = _full_embedding_loss(head, anchors, teacher_targets)
    logger.info("玩具学生头训练完成: {} 次迭代, L_e {:.4f} -> {:.4f}", config.iterations,
                result.initial_embedding_loss, result.final_embedding_loss)
    return result


def retrieval_top1(head, gallery, queries):
    """
    最近邻身份检索的top-1准确率

    参数:
        head: 训练好的 ToyHead
        gallery: 提供各身份平均嵌入的锚框集合 (只用正样本)
        queries: 待检索的正样本

    返回:
        top-1 准确率; 没有查询样本时为 nan
    """
    def normalized(e):
        return e / np.maximum(np.linalg.norm(e, axis=1, keepdims=True), 1e-12)

    q = queries.positive
    if not np.any(q):
        return math.nan
    pos = gallery.positive
    emb = normalized(head.embed(gallery.features[pos]))
    ids = gallery.identities[pos]
    unique_ids = np.unique(ids)
    centroids = normalized(np.stack([emb[ids == i].mean(axis=0) for i in unique_ids]))

    query_emb = normalized(head.embed(queries.features[q]))
    predicted = unique_ids[np.argmax(query_emb @ centroids.T, axis=1)]
    return float(np.mean(predicted == queries.identities[q]))


def box_iou(head, queries):
    """解码后的预测框与真值框的平均交并比; 没有正样本时为 nan"""
    q = queries.positive
    if not np.any(q):
        return math.nan
    boxes = head.predict_boxes(queries.features[q], queries.anchors[q])
    return float(np.mean(paired_iou(boxes, queries.gt_boxes[q])))


@dataclass
class ToyRun:
    """一次玩具蒸馏的训练结果和留出集评估"""

    result: TrainResult
    top1: float
    box_iou: float = math.nan
    train_positives: int = 0


def _teacher_targets(config, teacher_dim, features, zero_targets=False):
    teacher = ProjectionTeacher(config.feature_dim, teacher_dim, config.rng_seed)
    full = teacher.embed_features(features)
    targets = np.stack([truncate(row, config.student_dim) for row in full])
    return np.zeros_like(targets) if zero_targets else targets


def run_toy_distillation(config, teacher_dim=512, weights=LossWeights(), focal=FocalParams(),
                         huber=HuberParams(), zero_targets=False, progress=False,
                         anchor_config=AnchorConfig()):
    """
    生成玩具数据、计算投影教师嵌入并截断到 D_s, 训练后在留出集上评估检索和框回归

    zero_targets 为真时教师目标全为0 (退化目标)
    """
    if config.student_dim > teacher_dim:
        raise ValidationError(f"D_s={config.student_dim} 不能大于 D_t={teacher_dim}")
    data = make_toy_dataset(config, anchor_config)
    targets = _teacher_targets(config, teacher_dim, data.train.features, zero_targets)
    result = train_toy_head(data.train, targets, config, weights, focal, huber, progress)
    top1 = retrieval_top1(result.head, data.train, data.heldout)
    iou = box_iou(result.head, data.heldout)
    logger.info("留出集检索 top-1: {:.4f}, 框交并比 {:.4f} (D_s={})", top1, iou, config.student_dim)
    return ToyRun(result, top1, iou, int(data.train.positive.sum()))


def run_multi_source_distillation(config, sources, teacher_dim=512, weights=LossWeights(),
                                  focal=FocalParams(), huber=HuberParams(), progress=False,
                                  anchor_config=AnchorConfig()):
    """
    在前 sources 个数据源的并集上训练, 在未参与训练的下一个数据源上评估

    目标数据源的训练部分作为检索库, 留出部分作为查询, 身份都没有在训练中出现过

    参数:
        config: ToyHeadConfig, 每个数据源的规模相同
        sources: 训练数据源个数, >= 1

    返回:
        ToyRun, train_positives 为所有训练数据源的正样本总数
    """
    if sources < 1:
        raise ValidationError(f"训练数据源个数必须为正: {sources}")
    if config.student_dim > teacher_dim:
        raise ValidationError(f"D_s={config.student_dim} 不能大于 D_t={teacher_dim}")
    parts = [make_toy_dataset(config, anchor_config, source=s) for s in range(sources + 1)]
    train = ToyAnchorSet.concat([p.train for p in parts[:sources]], config.feature_dim)
    target = parts[sources]
    targets = _teacher_targets(config, teacher_dim, train.features)
    result = train_toy_head(train, targets, config, weights, focal, huber, progress)
    top1 = retrieval_top1(result.head, target.train, target.heldout)
    iou = box_iou(result.head, target.heldout)
    logger.info("{} 个数据源训练, 目标数据源检索 top-1: {:.4f}, 框交并比 {:.4f}", sources, top1, iou)
    return ToyRun(result, top1, iou, int(train.positive.sum()))
