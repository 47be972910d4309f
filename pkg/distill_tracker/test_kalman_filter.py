"""
卡尔曼滤波模块测试
"""

import unittest

import numpy as np

from errors import KalmanFilterError, ValidationError
from kalman_filter import CHI2_95_4DOF, KalmanFilter, KalmanState, gate_quantile, mahalanobis_sq


class TestKalmanFilter(unittest.TestCase):
    """卡尔曼滤波测试类"""

    def setUp(self):
        self.kf = KalmanFilter()
        self.rng = np.random.default_rng(2)

    def random_block_state(self):
        """位置和速度块之间不相关的随机正定状态"""
        a = self.rng.normal(size=(4, 4))
        b = self.rng.normal(size=(4, 4))
        cov = np.zeros((8, 8))
        cov[:4, :4] = a @ a.T + 0.1 * np.eye(4)
        cov[4:, 4:] = b @ b.T + 0.1 * np.eye(4)
        mean = np.r_[self.rng.uniform(0, 500, 2), 0.5, self.rng.uniform(20, 200), self.rng.normal(size=4)]
        return KalmanState(mean, cov)

    def test_initiate(self):
        """测试初始化为零速度且协方差对称正定"""
        state = self.kf.initiate([10, 10, 0.5, 20])
        np.testing.assert_array_equal(state.mean, [10, 10, 0.5, 20, 0, 0, 0, 0])
        np.testing.assert_array_equal(state.covariance, state.covariance.T)
        self.assertTrue(np.all(np.linalg.eigvalsh(state.covariance) > 0))
        again = self.kf.initiate([10, 10, 0.5, 20])
        np.testing.assert_array_equal(again.covariance, state.covariance)
        with self.assertRaises(ValidationError):
            self.kf.initiate([10, 10, 0.5, 0])

    def test_predict_constant_velocity(self):
        """测试匀速预测"""
        base = self.kf.initiate([10, 10, 0.5, 20])
        moving = KalmanState(base.mean + np.r_[0, 0, 0, 0, 2, 0, 0, 0], base.covariance)
        self.assertEqual(self.kf.predict(moving).mean[0], 12)
        np.testing.assert_array_equal(self.kf.predict(base).mean[:4], base.mean[:4])

    def test_predict_inflates_covariance(self):
        """测试预测后协方差的迹严格增大"""
        for _ in range(100):
            state = self.random_block_state()
            predicted = self.kf.predict(state)
            self.assertGreater(np.trace(predicted.covariance), np.trace(state.covariance))
            np.testing.assert_allclose(predicted.covariance, predicted.covariance.T)

    def test_update_zero_innovation(self):
        """测试观测等于预测位置时均值不变"""
        state = self.kf.predict(self.kf.initiate([100, 50, 0.4, 80]))
        updated = self.kf.update(state, state.measurement())
        np.testing.assert_allclose(updated.mean, state.mean, atol=1e-12)

    def test_repeated_updates_converge(self):
        """测试对同一观测重复校正后位置误差小于1e-3"""
        start = np.array([100.0, 50.0, 0.4, 80.0])
        target = start + np.array([0.05, 0.05, 0.0, 0.0])
        state = self.kf.initiate(start)
        for _ in range(20):
            state = self.kf.update(state, target)
        self.assertLess(np.max(np.abs(state.mean[:4] - target)), 1e-3)

    def test_update_reduces_position_variance(self):
        """测试一次校正后位置方差不增大"""
        state = self.kf.initiate([60, 60, 0.5, 50])
        for _ in range(10):
            predicted = self.kf.predict(state)
            z = predicted.measurement() + self.rng.normal(0, 1, 4) * [1, 1, 0.01, 1]
            state = self.kf.update(predicted, z)
            self.assertTrue(np.all(np.diag(state.covariance)[:4] <= np.diag(predicted.covariance)[:4] + 1e-12))

    def test_gating_distance(self):
        """测试门限距离: 零新息为0, 平移不变"""
        state = self.kf.predict(self.kf.initiate([200, 100, 0.5, 60]))
        self.assertAlmostEqual(self.kf.gating_distance(state, state.measurement()), 0.0, places=12)

        z = state.measurement() + [3, -2, 0.01, 1]
        shift = np.r_[50.0, -20.0, 0, 0, 0, 0, 0, 0]
        moved = KalmanState(state.mean + shift, state.covariance)
        self.assertAlmostEqual(self.kf.gating_distance(state, z),
                               self.kf.gating_distance(moved, z + shift[:4]), places=9)
        batch = self.kf.gating_distance(state, np.stack([z, state.measurement()]))
        self.assertEqual(batch.shape, (2,))

    def test_isotropic_mahalanobis(self):
        """测试 S = I 时等于欧氏距离平方"""
        z = self.rng.normal(size=(5, 4))
        mean = self.rng.normal(size=4)
        np.testing.assert_allclose(mahalanobis_sq(mean, np.eye(4), z), np.sum((z - mean) ** 2, axis=1))
        with self.assertRaises(KalmanFilterError):
            mahalanobis_sq(mean, -np.eye(4), z)

    def test_gate_quantile(self):
        """测试卡方分位数常量"""
        self.assertAlmostEqual(gate_quantile(4, 0.95), CHI2_95_4DOF, places=3)


if __name__ == '__main__':
    unittest.main()
