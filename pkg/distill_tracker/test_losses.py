"""
损失函数模块测试
"""

import math
import unittest

import numpy as np

from errors import ValidationError
from losses import (FocalParams, HuberParams, LossWeights, embedding_loss, focal_loss, grad_check,
                    huber_loss, total_loss)


class TestLossValues(unittest.TestCase):
    """损失取值测试类"""

    def test_focal_golden(self):
        """测试 focal(p=0.9, y=1) 的闭式值"""
        loss, _ = focal_loss(0.9, 1)
        self.assertAlmostEqual(loss, 0.25 * 0.1 ** 1.5 * -math.log(0.9), delta=1e-12)
        self.assertAlmostEqual(loss, 8.331e-4, delta=2e-7)

    def test_focal_reduces_to_cross_entropy(self):
        """测试 γ=0, α=1 时退化为交叉熵"""
        loss, grad = focal_loss(0.5, 1, FocalParams(alpha=1.0, gamma=0.0))
        self.assertAlmostEqual(loss, math.log(2), places=12)
        self.assertAlmostEqual(grad, -2.0, places=9)

    def test_focal_monotone(self):
        """测试固定标签时损失随 p_t 单调不增且趋于0"""
        p = np.linspace(0.01, 0.999999, 200)
        pos, _ = focal_loss(p, np.ones_like(p))
        self.assertTrue(np.all(np.diff(pos) <= 0))
        self.assertLess(focal_loss(1.0, 1)[0], 1e-12)
        self.assertTrue(math.isfinite(focal_loss(0.0, 1)[0]))

    def test_huber_values(self):
        """测试 Huber 损失的分段取值"""
        self.assertEqual(huber_loss(0.0, 0.0)[0], 0.0)
        self.assertAlmostEqual(huber_loss(0.05, 0.0)[0], 0.00125, places=15)
        self.assertAlmostEqual(huber_loss(1.0, 0.0)[0], 0.095, delta=1e-15)
        # 两段在 |r| = δ 处连续
        self.assertAlmostEqual(huber_loss(0.1, 0.0)[0], huber_loss(0.1 + 1e-12, 0.0)[0], places=10)
        _, grad = huber_loss(np.array([-5.0, 5.0, 0.03]), 0.0)
        np.testing.assert_allclose(grad, [-0.1, 0.1, 0.03])

    def test_embedding_loss_values(self):
        """测试L2嵌入损失的例子和错误输入"""
        self.assertEqual(embedding_loss([[1.0, 2.0]], [[1.0, 2.0]])[0], 0.0)
        self.assertEqual(embedding_loss([[0.0, 1.0, 0.0]], [[1.0, 0.0, 0.0]])[0], 2.0)
        loss, _ = embedding_loss([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]], [[1.0, 0.0, 0.0]] * 2)
        self.assertEqual(loss, 1.0)
        loss, grad = embedding_loss([], [])
        self.assertEqual(loss, 0.0)
        self.assertEqual(grad.size, 0)
        with self.assertRaises(ValidationError):
            embedding_loss([[1.0, 2.0]], [[1.0, 2.0, 3.0]])
        with self.assertRaises(ValidationError):
            embedding_loss([[1.0]], [])

    def test_total_loss(self):
        """测试加权总损失"""
        self.assertEqual(total_loss(0, 0, 0), 0)
        self.assertAlmostEqual(total_loss(0.1, 0.01, 0.05), 1.1, delta=1e-12)
        self.assertEqual(total_loss(0.3, 7.0, 9.0, LossWeights(1.0, 0.0, 0.0)), 0.3)

    def test_parameter_validation(self):
        """测试非法参数被拒绝"""
        with self.assertRaises(ValidationError):
            FocalParams(alpha=1.5)
        with self.assertRaises(ValidationError):
            HuberParams(delta=0.0)
        with self.assertRaises(ValidationError):
            LossWeights(alpha_e=-1.0)


class TestGradients(unittest.TestCase):
    """有限差分梯度检查测试类"""

    def setUp(self):
        self.rng = np.random.default_rng(11)

    def test_focal_gradient(self):
        """测试 focal 梯度与中心差分一致"""
        p = self.rng.uniform(0.01, 0.99, size=100)
        y = self.rng.integers(0, 2, size=100)
        worst = max(grad_check(lambda x, label=label: focal_loss(x, label), [pi])
                    for pi, label in zip(p, y))
        self.assertLess(worst, 1e-4)

    def test_focal_gradient_gamma_zero(self):
        """测试 γ=0 时的梯度分支"""
        params = FocalParams(alpha=0.5, gamma=0.0)
        p = self.rng.uniform(0.05, 0.95, size=20)
        self.assertLess(grad_check(lambda x: focal_loss(x, 1, params), list(p)), 1e-4)

    def test_huber_gradient(self):
        """测试远离拐点处 Huber 梯度与中心差分一致"""
        r = self.rng.uniform(-1.0, 1.0, size=400)
        r = r[np.abs(np.abs(r) - 0.1) >= 1e-5][:100]
        self.assertEqual(r.size, 100)
        self.assertLess(grad_check(lambda x: huber_loss(x, 0.0), list(r)), 1e-4)

    def test_embedding_gradient(self):
        """测试嵌入损失梯度与中心差分一致"""
        targets = self.rng.normal(size=(4, 6))
        samples = [targets + self.rng.uniform(0.5, 1.5, size=(4, 6)) for _ in range(100)]
        self.assertLess(grad_check(lambda x: embedding_loss(x, targets), samples), 1e-6)


if __name__ == '__main__':
    unittest.main()
