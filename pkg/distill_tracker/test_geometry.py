"""
几何模块测试
"""

import unittest

import numpy as np

from errors import ValidationError
from geometry import Box, ScoredDetection, area, clip, iou, iou_matrix


class TestGeometry(unittest.TestCase):
    """矩形框运算测试类"""

    def setUp(self):
        self.rng = np.random.default_rng(7)

    def random_box(self):
        x, y = self.rng.uniform(0, 100, size=2)
        w, h = self.rng.uniform(0, 30, size=2)
        return Box(x, y, x + w, y + h)

    def test_box_validation(self):
        """测试角点顺序和非有限坐标被拒绝"""
        with self.assertRaises(ValidationError):
            Box(10, 0, 5, 5)
        with self.assertRaises(ValidationError):
            Box(0, 0, float('nan'), 5)
        Box(3, 3, 3, 3)

    def test_iou_examples(self):
        """测试交并比的手算例子"""
        self.assertAlmostEqual(iou(Box(0, 0, 10, 10), Box(5, 0, 15, 10)), 50 / 150)
        self.assertEqual(iou(Box(0, 0, 10, 10), Box(20, 20, 30, 30)), 0.0)
        self.assertEqual(iou(Box(0, 0, 10, 10), Box(0, 0, 10, 10)), 1.0)
        # 两个零面积框
        self.assertEqual(iou(Box(1, 1, 1, 1), Box(1, 1, 1, 1)), 0.0)

    def test_iou_properties(self):
        """测试交并比对称且在[0,1]内"""
        for _ in range(200):
            a, b = self.random_box(), self.random_box()
            value = iou(a, b)
            self.assertGreaterEqual(value, 0.0)
            self.assertLessEqual(value, 1.0)
            self.assertAlmostEqual(value, iou(b, a), places=12)
            if area(a) > 0:
                self.assertAlmostEqual(iou(a, a), 1.0, places=12)

    def test_iou_matrix_matches_scalar(self):
        """测试向量化交并比与逐对计算一致"""
        boxes_a = [self.random_box() for _ in range(6)]
        boxes_b = [self.random_box() for _ in range(4)]
        matrix = iou_matrix(boxes_a, boxes_b)
        self.assertEqual(matrix.shape, (6, 4))
        for i, a in enumerate(boxes_a):
            for j, b in enumerate(boxes_b):
                self.assertAlmostEqual(matrix[i, j], iou(a, b), places=12)
        self.assertEqual(iou_matrix([], boxes_b).shape, (0, 4))

    def test_clip(self):
        """测试裁剪到图像范围"""
        clipped = clip(Box(-5, -5, 50, 20), 40, 30)
        self.assertEqual(clipped, Box(0, 0, 40, 20))
        self.assertEqual(clip(Box(50, 50, 60, 60), 40, 30), Box(40, 30, 40, 30))
        with self.assertRaises(ValidationError):
            clip(Box(0, 0, 1, 1), 0, 10)

    def test_conversions(self):
        """测试 tlwh 和 xyah 表示的互相转换"""
        box = Box(10, 20, 30, 60)
        self.assertEqual(box.to_tlwh(), (10, 20, 20, 40))
        np.testing.assert_allclose(box.to_xyah(), [20, 40, 0.5, 40])
        back = Box.from_xyah(box.to_xyah())
        np.testing.assert_allclose(back.as_array(), box.as_array())
        self.assertEqual(Box.from_tlwh(10, 20, 20, 40), box)
        with self.assertRaises(ValidationError):
            Box(0, 5, 10, 5).to_xyah()

    def test_detection_score_range(self):
        """测试检测置信度必须在[0,1]内"""
        ScoredDetection(Box(0, 0, 1, 1), 1.0)
        with self.assertRaises(ValidationError):
            ScoredDetection(Box(0, 0, 1, 1), 1.5)


if __name__ == '__main__':
    unittest.main()
