"""
锚框模块测试
"""

import unittest

import numpy as np

from anchors import (IGNORE, NEGATIVE, AnchorConfig, assign_anchors, decode_residuals,
                     encode_residuals, generate_anchors)
from distill import synthetic_oracle_embed
from errors import ValidationError
from geometry import Box


class TestAnchorGeneration(unittest.TestCase):
    """锚框生成测试类"""

    def test_anchor_counts(self):
        """测试每层锚框数量 = H_l·W_l·S·R"""
        config = AnchorConfig(levels=(5,))
        self.assertEqual(generate_anchors(config, 32, 32).num_anchors, 9)
        self.assertEqual(generate_anchors(config, 64, 64).num_anchors, 36)
        # 不能整除时向上取整
        self.assertEqual(generate_anchors(config, 33, 32).num_anchors, 18)

    def test_single_anchor_geometry(self):
        """测试基础边长为 4·2^l 且中心位于特征格中心"""
        config = AnchorConfig(levels=(5,), scales_per_level=1, aspect_ratios=(1.0,))
        grid = generate_anchors(config, 32, 32)
        np.testing.assert_allclose(grid.all_boxes(), [[-48, -48, 80, 80]])

    def test_default_pyramid(self):
        """测试默认五层金字塔的总数和展平顺序"""
        grid = generate_anchors(AnchorConfig(), 640, 480)
        expected = sum(-(-640 // 2 ** l) * -(-480 // 2 ** l) * 9 for l in range(3, 8))
        self.assertEqual(grid.num_anchors, expected)
        self.assertEqual([lv.stride for lv in grid.levels], [8, 16, 32, 64, 128])
        first = grid.levels[0].boxes[:9]
        centers = 0.5 * (first[:, :2] + first[:, 2:])
        np.testing.assert_allclose(centers, np.full((9, 2), 4.0))

    def test_aspect_ratio_is_width_over_height(self):
        """测试宽高比定义为 w/h 且面积只由尺度决定"""
        config = AnchorConfig(levels=(3,), scales_per_level=1, aspect_ratios=(0.25, 1.0))
        boxes = generate_anchors(config, 8, 8).all_boxes()
        w = boxes[:, 2] - boxes[:, 0]
        h = boxes[:, 3] - boxes[:, 1]
        np.testing.assert_allclose(w / h, [0.25, 1.0])
        np.testing.assert_allclose(w * h, [32.0 ** 2] * 2)

    def test_invalid_config(self):
        """测试非法配置被拒绝"""
        with self.assertRaises(ValidationError):
            AnchorConfig(levels=(4, 3))
        with self.assertRaises(ValidationError):
            AnchorConfig(positive_iou=0.3, negative_iou=0.4)
        with self.assertRaises(ValidationError):
            generate_anchors(AnchorConfig(), 0, 10)


class TestAnchorAssignment(unittest.TestCase):
    """锚框分配测试类"""

    def setUp(self):
        config = AnchorConfig(levels=(5,), scales_per_level=1, aspect_ratios=(1.0,))
        self.grid = generate_anchors(config, 32, 32)
        self.embedding = synthetic_oracle_embed(1, dim=8)

    def label_for(self, box):
        return assign_anchors(self.grid, [(box, self.embedding)]).labels[0]

    def test_identical_gt_is_positive(self):
        """测试与真值重合的锚框为正样本并继承其嵌入"""
        assignment = assign_anchors(self.grid, [(Box(-48, -48, 80, 80), self.embedding)])
        self.assertEqual(assignment.labels[0], 0)
        np.testing.assert_array_equal(assignment.target_embedding(0), self.embedding.values)
        self.assertEqual(assignment.target_box(0), Box(-48, -48, 80, 80))

    def test_thresholds(self):
        """测试 IoU 0.3 为负样本, 0.45 为忽略"""
        self.assertEqual(self.label_for(Box(-48, 0, 80, 0.3 * 128)), NEGATIVE)
        self.assertEqual(self.label_for(Box(-48, 0, 80, 0.45 * 128)), IGNORE)

    def test_no_gt(self):
        """测试没有真值时全部为负样本"""
        assignment = assign_anchors(generate_anchors(AnchorConfig(), 128, 128), [])
        self.assertEqual(assignment.num_negative, assignment.labels.size)
        self.assertIsNone(assignment.target_embedding(0))

    def test_partition_and_tie_break(self):
        """测试标签划分完整, 以及交并比并列时取最小真值索引"""
        grid = generate_anchors(AnchorConfig(), 256, 256)
        rng = np.random.default_rng(3)
        gts = []
        for k in range(6):
            x, y = rng.uniform(0, 200, size=2)
            gts.append((Box(x, y, x + 40, y + 50), synthetic_oracle_embed(k, dim=16)))
        # 重复的真值框: 并列时应分给前一个
        gts.append((gts[0][0], synthetic_oracle_embed(99, dim=16)))
        assignment = assign_anchors(grid, gts)
        total = assignment.num_positive + assignment.num_negative + assignment.num_ignore
        self.assertEqual(total, grid.num_anchors)
        self.assertNotIn(len(gts) - 1, set(assignment.labels.tolist()))
        idx, boxes, embeddings = assignment.positive_targets()
        self.assertEqual(boxes.shape, (idx.size, 4))
        self.assertEqual(embeddings.shape, (idx.size, 16))

    def test_embedding_dimension_mismatch(self):
        """测试教师嵌入维度不一致时报错"""
        gts = [(Box(0, 0, 10, 10), synthetic_oracle_embed(1, dim=8)),
               (Box(5, 5, 20, 20), synthetic_oracle_embed(2, dim=16))]
        with self.assertRaises(ValidationError):
            assign_anchors(self.grid, gts)

    def test_residual_round_trip(self):
        """测试残差编码与解码互逆"""
        anchors = generate_anchors(AnchorConfig(levels=(4,)), 64, 64).all_boxes()
        rng = np.random.default_rng(0)
        xy = rng.uniform(0, 50, size=(anchors.shape[0], 2))
        wh = rng.uniform(5, 30, size=(anchors.shape[0], 2))
        targets = np.concatenate([xy, xy + wh], axis=1)
        np.testing.assert_allclose(decode_residuals(anchors, encode_residuals(anchors, targets)),
                                   targets, atol=1e-9)
        np.testing.assert_allclose(encode_residuals(anchors, anchors), 0.0, atol=1e-12)


if __name__ == '__main__':
    unittest.main()
