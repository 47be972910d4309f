"""
损失函数模块
分类focal损失、框回归Huber损失、嵌入L2损失, 以及加权总损失和有限差分梯度检查

所有损失同时返回解析梯度, 支持标量或numpy数组输入 (逐元素计算)。
"""

from dataclasses import dataclass

import numpy as np

from errors import ValidationError

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """总损失中三项的权重"""

    alpha_c: float = 1.0
    alpha_b: float = 50.0
    alpha_e: float = 10.0

    def __post_init__(self):
        if min(self.alpha_c, self.alpha_b, self.alpha_e) < 0:
            raise ValidationError(f"损失权重必须非负: {self}")


@dataclass(frozen=True)
class FocalParams:
    """focal损失的 α 与 γ"""

    alpha: float = 0.25
    gamma: float = 1.5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"focal alpha 必须在[0,1]内: {self.alpha}")
        if self.gamma < 0:
            raise ValidationError(f"focal gamma 必须非负: {self.gamma}")


@dataclass(frozen=True)
class HuberParams:
    """Huber损失的转折点 δ"""

    delta: float = 0.1

    def __post_init__(self):
        if self.delta <= 0:
            raise ValidationError(f"Huber delta 必须为正: {self.delta}")


def focal_loss(p, y, params=FocalParams()):
    """
    focal损失及其对概率的梯度

    参数:
        p: 预测概率, 会被截断到 [1e-7, 1-1e-7]
        y: 二值标签 (1为正样本)
        params: FocalParams

    返回:
        (loss, dloss_dp), 形状与输入一致
    """
    p = np.clip(np.asarray(p, dtype=float), PROB_CLAMP, 1.0 - PROB_CLAMP)
    positive = np.asarray(y) == 1
    p_t = np.where(positive, p, 1.0 - p)
    alpha_t = np.where(positive, params.alpha, 1.0 - params.alpha)
    sign = np.where(positive, 1.0, -1.0)
    gamma = params.gamma

    one_minus = 1.0 - p_t
    log_pt = np.log(p_t)
    loss = -alpha_t * one_minus ** gamma * log_pt

    # d/dp_t [-(1-p_t)^γ ln p_t] = γ(1-p_t)^(γ-1) ln p_t - (1-p_t)^γ / p_t
    if gamma == 0:
        dpt = -1.0 / p_t
    else:
        dpt = gamma * one_minus ** (gamma - 1.0) * log_pt - one_minus ** gamma / p_t
    grad = alpha_t * dpt * sign
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


def huber_loss(pred, target, params=HuberParams()):
    """
    Huber损失及其对预测值的梯度

    |r| <= δ 时为 0.5r², 否则为 δ(|r| - 0.5δ); 梯度幅值不超过 δ
    """
    r = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    delta = params.delta
    abs_r = np.abs(r)
    quadratic = abs_r <= delta
    loss = np.where(quadratic, 0.5 * r * r, delta * (abs_r - 0.5 * delta))
    grad = np.where(quadratic, r, delta * np.sign(r))
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


def embedding_loss(preds, targets):
    """
    嵌入L2损失: 每个锚框为 Σ(f_i - f̂_i)², 对所有已分配锚框取平均

    参数:
        preds: 学生嵌入列表或 (N,D_s) 数组
        targets: 截断后的教师嵌入列表或 (N,D_s) 数组

    返回:
        (loss, 对preds的梯度 (N,D_s)); 空输入返回 (0.0, 空数组)
    """
    if len(preds) != len(targets):
        raise ValidationError(f"预测与目标数量不一致: {len(preds)} != {len(targets)}")
    if len(preds) == 0:
        return 0.0, np.zeros((0, 0))
    pred_dims = {len(p) for p in preds}
    target_dims = {len(t) for t in targets}
    if len(pred_dims | target_dims) != 1:
        raise ValidationError(f"嵌入维度不一致: 预测 {sorted(pred_dims)}, 目标 {sorted(target_dims)}")

    f_hat = np.asarray(preds, dtype=float)
    f = np.asarray(targets, dtype=float)
    diff = f_hat - f
    n = diff.shape[0]
    loss = float(np.sum(diff * diff) / n)
    return loss, 2.0 * diff / n


def total_loss(loss_c, loss_b, loss_e, weights=LossWeights()):
    """加权总损失 α_c·L_c + α_b·L_b + α_e·L_e"""
    return weights.alpha_c * loss_c + weights.alpha_b * loss_b + weights.alpha_e * loss_e


def grad_check(loss_fn, sample_inputs, epsilon=1e-6):
    """
    用中心差分检查解析梯度

    参数:
        loss_fn: x -> (标量损失, 与x同形状的梯度)
        sample_inputs: 输入样本的可迭代对象 (标量或数组)
        epsilon: 差分步长

    返回:
        所有样本所有分量上的最大相对误差
    """
    worst = 0.0
    for x in sample_inputs:
        x = np.array(x, dtype=float)
        _, analytic = loss_fn(x)
        analytic = np.broadcast_to(np.asarray(analytic, dtype=float), x.shape)
        flat = x.reshape(-1)
        for i in range(flat.size):
            plus = flat.copy()
            minus = flat.copy()
            plus[i] += epsilon
            minus[i] -= epsilon
            f_plus = float(np.sum(loss_fn(plus.reshape(x.shape))[0]))
            f_minus = float(np.sum(loss_fn(minus.reshape(x.shape))[0]))
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = float(analytic.reshape(-1)[i])
            scale = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / scale)
    return worst
