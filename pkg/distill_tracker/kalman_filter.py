"""
卡尔曼滤波模块
8维匀速模型, 状态为 (cx, cy, a, h, vx, vy, va, vh), 观测为 (cx, cy, a, h)

过程噪声和观测噪声的标准差与目标高度h成正比。
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.stats import chi2

from errors import KalmanFilterError, ValidationError

# 4自由度卡方分布0.95分位数, 用作马氏距离门限
CHI2_95_4DOF = 9.4877


@dataclass(frozen=True)
class KalmanConfig:
    """过程/观测噪声标准差相对框高度的比例"""

    std_weight_position: float = 1.0 / 20
    std_weight_velocity: float = 1.0 / 160

    def __post_init__(self):
        if self.std_weight_position <= 0 or self.std_weight_velocity <= 0:
            raise ValidationError(f"卡尔曼噪声权重必须为正: {self}")


@dataclass(frozen=True, eq=False)
class KalmanState:
    """均值 (cx, cy, a, h 及其速度) 和 8×8 协方差"""

    mean: np.ndarray
    covariance: np.ndarray

    def measurement(self):
        """均值的前4维, 即观测空间的 (cx, cy, a, h)"""
        return self.mean[:4].copy()


def gate_quantile(dof=4, probability=0.95):
    """卡方分布分位数"""
    return float(chi2.ppf(probability, dof))


def mahalanobis_sq(mean, covariance, measurements):
    """
    平方马氏距离 dᵀ S⁻¹ d

    参数:
        mean: (4,) 投影后的均值
        covariance: (4,4) 新息协方差 S
        measurements: (4,) 或 (N,4)

    返回:
        标量或 (N,) 数组
    """
    z = np.atleast_2d(np.asarray(measurements, dtype=float))
    try:
        factor = np.linalg.cholesky(covariance)
    except np.linalg.LinAlgError:
        raise KalmanFilterError("新息协方差不是正定矩阵") from None
    d = z - mean
    solved = scipy.linalg.solve_triangular(factor, d.T, lower=True, check_finite=False,
                                           overwrite_b=True)
    dist = np.sum(solved * solved, axis=0)
    return float(dist[0]) if np.ndim(measurements) == 1 else dist


class KalmanFilter:
    """
    图像空间中边界框的匀速卡尔曼滤波器
    """

    ndim = 4

    def __init__(self, config=KalmanConfig()):
        self.config = config
        self._motion_mat = np.eye(2 * self.ndim)
        for i in range(self.ndim):
            self._motion_mat[i, self.ndim + i] = 1.0
        self._update_mat = np.eye(self.ndim, 2 * self.ndim)

    def initiate(self, measurement):
        """
        由一次观测创建状态

        参数:
            measurement: (cx, cy, a, h)

        返回:
            KalmanState, 速度为0, 协方差为对角阵
        """
        measurement = np.asarray(measurement, dtype=float)
        h = measurement[3]
        if not h > 0:
            raise ValidationError(f"观测高度必须为正: {h}")
        mean = np.r_[measurement, np.zeros(self.ndim)]
        wp = self.config.std_weight_position
        wv = self.config.std_weight_velocity
        std = [2 * wp * h, 2 * wp * h, 1e-2, 2 * wp * h,
               10 * wv * h, 10 * wv * h, 1e-5, 10 * wv * h]
        return KalmanState(mean, np.diag(np.square(std)))

    def predict(self, state):
        """匀速模型预测一帧, 协方差加上过程噪声"""
        h = abs(state.mean[3])
        wp = self.config.std_weight_position
        wv = self.config.std_weight_velocity
        std_pos = [wp * h, wp * h, 1e-2, wp * h]
        std_vel = [wv * h, wv * h, 1e-5, wv * h]
        motion_cov = np.diag(np.square(np.r_[std_pos, std_vel]))

        mean = self._motion_mat @ state.mean
        covariance = self._motion_mat @ state.covariance @ self._motion_mat.T + motion_cov
        return KalmanState(mean, 0.5 * (covariance + covariance.T))

    def project(self, state):
        """
        投影到观测空间

        返回:
            (投影均值 (4,), 新息协方差 S (4,4))
        """
        h = abs(state.mean[3])
        wp = self.config.std_weight_position
        innovation_cov = np.diag(np.square([wp * h, wp * h, 1e-1, wp * h]))
        mean = self._update_mat @ state.mean
        covariance = self._update_mat @ state.covariance @ self._update_mat.T
        return mean, covariance + innovation_cov

    def update(self, state, measurement):
        """
        卡尔曼校正

        参数:
            state: 预测状态
            measurement: (cx, cy, a, h)

        返回:
            后验 KalmanState
        """
        projected_mean, projected_cov = self.project(state)
        try:
            chol_factor, lower = scipy.linalg.cho_factor(projected_cov, lower=True,
                                                         check_finite=False)
        except np.linalg.LinAlgError:
            raise KalmanFilterError("新息协方差不可逆, 状态协方差可能已损坏") from None
        kalman_gain = scipy.linalg.cho_solve(
            (chol_factor, lower), (state.covariance @ self._update_mat.T).T,
            check_finite=False).T
        innovation = np.asarray(measurement, dtype=float) - projected_mean

        mean = state.mean + innovation @ kalman_gain.T
        covariance = state.covariance - kalman_gain @ projected_cov @ kalman_gain.T
        return KalmanState(mean, 0.5 * (covariance + covariance.T))

    def gating_distance(self, state, measurements):
        """
        观测与状态之间的平方马氏距离

        参数:
            state: KalmanState
            measurements: (4,) 或 (N,4) 的 (cx, cy, a, h)
        """
        mean, covariance = self.project(state)
        return mahalanobis_sq(mean, covariance, measurements)
