"""
可视化模块测试
"""

import os
import shutil
import tempfile
import unittest

import pandas as pd

from geometry import Box
from toy_head import LossRecord
from visualizer import TrackingVisualizer, read_loss_curve


class TestVisualizer(unittest.TestCase):
    """可视化测试类"""

    def setUp(self):
        self.tmp = tempfile.mkdtemp()
        self.visualizer = TrackingVisualizer(figsize=(4, 3), dpi=50)

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def assertPng(self, path):
        with open(path, 'rb') as f:
            self.assertEqual(f.read(8), b'\x89PNG\r\n\x1a\n')

    def test_loss_curve_from_records(self):
        """测试从 LossRecord 列表绘制损失曲线"""
        curve = [LossRecord(i, 1.0 / (i + 1), 0.5, 0.2, 1.7 / (i + 1)) for i in range(30)]
        path = os.path.join(self.tmp, 'curve.png')
        self.assertEqual(self.visualizer.plot_loss_curve(curve, path, smooth=5), path)
        self.assertPng(path)

    def test_loss_curve_from_json_lines(self):
        """测试读取 JSON lines 曲线后绘图"""
        source = os.path.join(self.tmp, 'curve.jsonl')
        with open(source, 'w', encoding='utf-8') as f:
            for i in range(5):
                f.write(f'{{"iteration": {i}, "cls": 1.0, "box": 0.5, "emb": 0.25, "total": 1.75}}\n')
        table = read_loss_curve(source)
        self.assertEqual(list(table['iteration']), [0, 1, 2, 3, 4])
        path = os.path.join(self.tmp, 'curve.png')
        self.visualizer.plot_loss_curve(table, path, smooth=1)
        self.assertPng(path)

    def test_tracks(self):
        """测试轨迹图"""
        frames = {f: [(1, Box(10 + f, 20, 30 + f, 60), 1.0), (2, Box(100, 10 + f, 120, 50 + f), 1.0)]
                  for f in range(1, 11)}
        path = os.path.join(self.tmp, 'tracks.png')
        self.visualizer.plot_tracks(frames, path, image_size=(200, 100))
        self.assertPng(path)

    def test_ablation(self):
        """测试消融条形图按参数取平均"""
        table = pd.DataFrame({
            'fusion_lambda': [0.0, 0.0, 0.98, 0.98],
            'seed': [0, 1, 0, 1],
            'idsw': [4, 6, 1, 1],
            'idf1': [0.8, 0.7, 0.95, 0.9],
        })
        path = os.path.join(self.tmp, 'ablation.png')
        self.visualizer.plot_ablation(table, 'fusion_lambda', ['idsw', 'idf1'], path)
        self.assertPng(path)


if __name__ == '__main__':
    unittest.main()
