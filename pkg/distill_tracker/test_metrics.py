"""
评测指标模块测试
"""

import math
import os
import tempfile
import unittest

import numpy as np
import pandas as pd

from errors import ValidationError
from geometry import Box, ScoredDetection
from metrics import (GroundTruthFrame, HypothesisFrame, average_precision, clear_metrics,
                     evaluate_sequence, idf1, report_table, write_report)
from selftest import (brute_force_clear, brute_force_idf1, clear_example, random_small_scenario,
                      ranked_fp_example, split_identity_example)


class TestClearMetrics(unittest.TestCase):
    """CLEAR MOT 指标测试类"""

    def test_hand_example(self):
        """测试2帧×2个真值的手算例子 MOTA = 0.5"""
        gts, hyps = clear_example()
        result = clear_metrics(gts, hyps)
        self.assertEqual((result.fn, result.fp, result.idsw), (1, 0, 1))
        self.assertEqual(result.mota, 0.5)
        self.assertAlmostEqual(result.motp, 0.0)

    def test_perfect_and_empty(self):
        """测试完全一致时 MOTA = 1, 真值为空时为 nan"""
        box = Box(0, 0, 10, 10)
        gts = {1: [(1, box)], 2: [(1, box)]}
        hyps = {1: [(5, box, 1.0)], 2: [(5, box, 1.0)]}
        self.assertEqual(clear_metrics(gts, hyps).mota, 1.0)
        self.assertTrue(math.isnan(clear_metrics({}, hyps).mota))
        self.assertEqual(clear_metrics(gts, {}).mota, 0.0)

    def test_carry_over_keeps_previous_match(self):
        """测试上一帧的对应关系在IoU达标时优先沿用"""
        a = Box(0, 0, 10, 10)
        gts = {1: [(1, a)], 2: [(1, a)]}
        # 第2帧出现一个更贴合的假设, 但旧对应仍达标, 不计身份切换
        hyps = {1: [(7, a.translate(3, 0), 1.0)],
                2: [(7, a.translate(3, 0), 1.0), (8, a, 1.0)]}
        result = clear_metrics(gts, hyps)
        self.assertEqual((result.idsw, result.fp), (0, 1))

    def test_mostly_tracked_and_lost(self):
        """测试 MT/ML 统计"""
        box = Box(0, 0, 10, 10)
        other = Box(100, 100, 110, 110)
        gts = {f: [(1, box), (2, other)] for f in range(1, 11)}
        hyps = {f: [(1, box, 1.0)] + ([(2, other, 1.0)] if f <= 2 else []) for f in range(1, 11)}
        result = clear_metrics(gts, hyps)
        self.assertEqual((result.mt, result.ml, result.num_gt_tracks), (1, 1, 2))
        self.assertEqual(result.mt_ratio, 0.5)

    def test_frame_validation(self):
        """测试同一帧内重复编号被拒绝"""
        with self.assertRaises(ValidationError):
            GroundTruthFrame(1, [(1, Box(0, 0, 1, 1)), (1, Box(2, 2, 3, 3))])
        frames = [GroundTruthFrame(1, [(1, Box(0, 0, 1, 1))])]
        hyps = [HypothesisFrame(1, [(3, Box(0, 0, 1, 1), 1.0)])]
        self.assertEqual(clear_metrics(frames, hyps).mota, 1.0)


class TestIdentityMetrics(unittest.TestCase):
    """IDF1 测试类"""

    def test_split_identity(self):
        """测试一个身份被两个假设各覆盖一半时 IDF1 = 0.5"""
        gts, hyps = split_identity_example(10)
        result = idf1(gts, hyps)
        self.assertEqual(result.idf1, 0.5)
        self.assertEqual((result.idp, result.idr), (0.5, 0.5))

    def test_empty(self):
        """测试两侧都为空时约定为1"""
        self.assertEqual(idf1({}, {}).idf1, 1.0)
        self.assertEqual(idf1({1: [(1, Box(0, 0, 1, 1))]}, {}).idf1, 0.0)

    def test_max_weight_mapping(self):
        """测试全局映射按共现帧数最大化而非匹配数"""
        box, other = Box(0, 0, 10, 10), Box(50, 0, 60, 10)
        gts = {f: [(1, box), (2, other)] for f in range(1, 5)}
        hyps = {f: [(9, box, 1.0)] for f in range(2, 5)}
        hyps[1] = [(9, other, 1.0), (8, box, 1.0)]
        # 最大匹配数的映射 1-8, 2-9 只有2帧, 最大权映射 1-9 有3帧
        self.assertEqual(idf1(gts, hyps).idtp, 3)


class TestAveragePrecision(unittest.TestCase):
    """AP 测试类"""

    def test_ranked_false_positive(self):
        """测试分数最高的是误检时 AP = 0.5"""
        dets, gts = ranked_fp_example()
        self.assertEqual(average_precision(dets, gts), 0.5)

    def test_edge_cases(self):
        """测试全部正确为1, 没有检测为0, 没有真值为 nan"""
        gts = {1: [(1, Box(0, 0, 10, 10)), (2, Box(20, 20, 30, 30))]}
        dets = {1: [ScoredDetection(Box(0, 0, 10, 10), 0.9), ScoredDetection(Box(20, 20, 30, 30), 0.8)]}
        self.assertEqual(average_precision(dets, gts), 1.0)
        self.assertEqual(average_precision({}, gts), 0.0)
        self.assertTrue(math.isnan(average_precision(dets, {})))
        # 同一真值的重复检测只算一次
        dup = {1: [ScoredDetection(Box(0, 0, 10, 10), 0.9), ScoredDetection(Box(0, 0, 10, 10), 0.8)]}
        self.assertAlmostEqual(average_precision(dup, gts), 0.5)


class TestOracles(unittest.TestCase):
    """与穷举参照实现对比的测试类"""

    def test_random_scenarios(self):
        """测试200个随机小场景与穷举匹配一致"""
        rng = np.random.default_rng(99)
        for _ in range(200):
            gts, hyps = random_small_scenario(rng)
            clear = clear_metrics(gts, hyps)
            mota, fp, fn, idsw = brute_force_clear(gts, hyps)
            self.assertEqual((clear.fp, clear.fn, clear.idsw), (fp, fn, idsw))
            if math.isnan(mota):
                self.assertTrue(math.isnan(clear.mota))
            else:
                self.assertAlmostEqual(clear.mota, mota, places=12)
            self.assertAlmostEqual(idf1(gts, hyps).idf1, brute_force_idf1(gts, hyps), places=12)

    def test_hypothesis_relabeling(self):
        """测试假设编号整体换名后 CLEAR 与 IDF1 不变"""
        rng = np.random.default_rng(7)
        rename = {101: 7, 102: 3, 103: 55}
        for _ in range(50):
            gts, hyps = random_small_scenario(rng)
            renamed = {f: [(rename[e[0]], e[1], e[2]) for e in v] for f, v in hyps.items()}
            a, b = clear_metrics(gts, hyps), clear_metrics(gts, renamed)
            self.assertEqual((a.fp, a.fn, a.idsw, a.num_matches), (b.fp, b.fn, b.idsw, b.num_matches))
            self.assertEqual(idf1(gts, hyps).idtp, idf1(gts, renamed).idtp)

    def test_low_score_false_positive(self):
        """测试追加一个分数最低的误检不会提高AP"""
        rng = np.random.default_rng(11)
        far = Box(1000, 1000, 1010, 1010)
        for _ in range(50):
            gts, hyps = random_small_scenario(rng)
            dets = {f: [(e[0], e[1], 0.1 + float(rng.random())) for e in v] for f, v in hyps.items()}
            before = average_precision(dets, gts)
            frame = min(dets)
            dets[frame] = dets[frame] + [(999, far, 0.0)]
            after = average_precision(dets, gts)
            if math.isnan(before):
                self.assertTrue(math.isnan(after))
            else:
                self.assertLessEqual(after, before + 1e-12)


class TestReport(unittest.TestCase):
    """报告表测试类"""

    def test_report_table(self):
        """测试每个序列一行加汇总行"""
        gts, hyps = clear_example()
        first = evaluate_sequence(gts, hyps, name='a')
        second = evaluate_sequence(*split_identity_example(10), name='b')
        table = report_table([first, second])
        self.assertEqual(list(table['name']), ['a', 'b', 'OVERALL'])
        overall = table.iloc[-1]
        self.assertEqual(overall['num_gt'], 14)
        self.assertAlmostEqual(overall['mota'], 1.0 - (overall['fn'] + overall['fp'] + overall['idsw']) / 14)
        self.assertTrue(math.isnan(overall['ap']))

    def test_write_report(self):
        """测试CSV报告的列和浮点格式"""
        gts, hyps = clear_example()
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'report.csv')
            write_report([evaluate_sequence(gts, hyps, name='seq')], path)
            table = pd.read_csv(path)
            with open(path, encoding='utf-8') as f:
                self.assertIn('0.500000', f.read())
        self.assertEqual(list(table.columns[:4]), ['name', 'mota', 'motp', 'idf1'])
        self.assertEqual(len(table), 2)


if __name__ == '__main__':
    unittest.main()
