"""
命令行与端到端流程测试
"""

import json
import os
import shutil
import tempfile
import unittest

import pandas as pd

from ablation import anchor_level_sweep, dataset_sweep, dimension_sweep, run_ablation, summarize
from cli import main
from toy_head import ToyHeadConfig

EXAMPLES = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'examples')


class TestCommandLine(unittest.TestCase):
    """命令行测试类"""

    def setUp(self):
        self.tmp = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def path(self, *names):
        return os.path.join(self.tmp, *names)

    def run_pipeline(self, tag):
        """synth → distill → track → eval, 返回结果文件和报告的字节"""
        scene = self.path(f'scene-{tag}')
        self.assertEqual(main(['synth', '--config', os.path.join(EXAMPLES, 'noiseless.cfg'),
                               '--out-dir', scene]), 0)
        augmented = self.path(f'aug-{tag}.bin')
        self.assertEqual(main(['distill', '--in', os.path.join(scene, 'det.txt'), '--embedder',
                               'file:' + os.path.join(scene, 'embeddings.txt'), '--out', augmented]), 0)
        results = self.path(f'res-{tag}.txt')
        self.assertEqual(main(['track', '--in', augmented, '--config',
                               os.path.join(EXAMPLES, 'default_run.cfg'), '--out', results]), 0)
        report = self.path(f'report-{tag}.csv')
        self.assertEqual(main(['eval', '--gt', os.path.join(scene, 'gt.txt'), '--res', results,
                               '--det', os.path.join(scene, 'det.txt'), '--report', report]), 0)
        with open(results, 'rb') as f, open(report, 'rb') as g:
            return f.read(), g.read(), report

    def test_noiseless_pipeline_is_perfect_and_deterministic(self):
        """测试无噪声流水线 MOTA = 1 且两次运行输出逐字节相同"""
        first_results, first_report, report = self.run_pipeline('a')
        second_results, second_report, _ = self.run_pipeline('b')
        self.assertEqual(first_results, second_results)
        self.assertEqual(first_report.replace(b'res-a', b'res-b'), second_report)
        table = pd.read_csv(report)
        self.assertEqual(table.loc[0, 'mota'], 1.0)
        self.assertEqual(table.loc[0, 'idsw'], 0)
        self.assertEqual(table.loc[0, 'ap'], 1.0)

    def test_missing_embedding_file(self):
        """测试嵌入文件不存在时退出码为2且不产生输出"""
        scene = self.path('scene')
        main(['synth', '--config', os.path.join(EXAMPLES, 'noiseless.cfg'), '--out-dir', scene])
        out = self.path('aug.txt')
        code = main(['distill', '--in', os.path.join(scene, 'det.txt'), '--embedder',
                     'file:' + self.path('missing.txt'), '--out', out])
        self.assertEqual(code, 2)
        self.assertFalse(os.path.exists(out))

    def test_oracle_distill(self):
        """测试理想教师嵌入器蒸馏"""
        scene = self.path('scene')
        main(['synth', '--config', os.path.join(EXAMPLES, 'noiseless.cfg'), '--out-dir', scene])
        out = self.path('aug.txt')
        self.assertEqual(main(['distill', '--in', os.path.join(scene, 'det.txt'), '--embedder', 'oracle',
                               '--dim', '64', '--workers', '2', '--out', out]), 0)
        with open(out, encoding='utf-8') as f:
            self.assertEqual(f.readline().strip(), '#format=augmented-text')

    def test_validation_failure(self):
        """测试配置错误时退出码为1"""
        bad = self.path('bad.cfg')
        with open(bad, 'w', encoding='utf-8') as f:
            f.write('association.unknown=1\n')
        self.assertEqual(main(['traintoy', '--config', bad, '--out', self.path('curve.jsonl')]), 1)
        self.assertEqual(main(['distill', '--in', bad, '--embedder', 'oracle',
                               '--out', self.path('x.txt')]), 1)

    def test_traintoy_curve(self):
        """测试玩具训练输出 JSON lines 损失曲线"""
        cfg = self.path('toy.cfg')
        with open(cfg, 'w', encoding='utf-8') as f:
            f.write('toy.iterations=20\ntoy.identity_count=10\n')
        out = self.path('curve.jsonl')
        self.assertEqual(main(['traintoy', '--config', cfg, '--out', out]), 0)
        with open(out, encoding='utf-8') as f:
            rows = [json.loads(line) for line in f]
        self.assertEqual(len(rows), 20)
        self.assertEqual(set(rows[0]), {'iteration', 'cls', 'box', 'emb', 'total'})

        png = self.path('curve.png')
        self.assertEqual(main(['plot', 'curve', '--in', out, '--out', png]), 0)
        self.assertTrue(os.path.getsize(png) > 0)

    def test_plot_dataset_ablation(self):
        """测试数据源个数消融表可以画成柱状图"""
        table = pd.DataFrame({'sources': [1, 1, 2, 2], 'seed': [0, 1, 0, 1],
                              'top1': [0.6, 0.7, 0.8, 0.9], 'box_iou': [0.5, 0.6, 0.7, 0.7],
                              'train_positives': [100, 110, 200, 220],
                              'final_embedding_loss': [0.02, 0.03, 0.01, 0.02]})
        csv = self.path('datasets.csv')
        table.to_csv(csv, index=False)
        png = self.path('datasets.png')
        self.assertEqual(main(['plot', 'ablation', '--in', csv, '--out', png]), 0)
        self.assertTrue(os.path.getsize(png) > 0)

    def test_selftest(self):
        """测试自检全部通过"""
        self.assertEqual(main(['selftest']), 0)


class TestAblation(unittest.TestCase):
    """消融实验测试类"""

    def test_small_dimension_sweep(self):
        """测试维度扫描的表结构"""
        base = ToyHeadConfig(iterations=20, identity_count=10)
        table = dimension_sweep(dims=(8, 16), seeds=(0, 1), base=base)
        self.assertEqual(len(table), 4)
        summary = summarize(table, 'student_dim')
        self.assertEqual(list(summary['student_dim']), [8, 16])

    def test_dataset_sweep(self):
        """测试数据源个数扫描: 训练正样本数随数据源个数增加"""
        base = ToyHeadConfig(iterations=20, identity_count=8, samples_per_identity=2,
                             heldout_per_identity=1)
        table = dataset_sweep(source_counts=(1, 2), base=base)
        self.assertEqual(list(table['sources']), [1, 2])
        self.assertLess(table['train_positives'][0], table['train_positives'][1])
        self.assertTrue(table['top1'].between(0.0, 1.0).all())

    def test_anchor_level_sweep(self):
        """测试锚框层级扫描的表结构"""
        base = ToyHeadConfig(iterations=20, identity_count=8, samples_per_identity=2,
                             heldout_per_identity=1)
        table = anchor_level_sweep(level_sets=((3, 4, 5), (3, 4, 5, 6, 7)), base=base)
        self.assertEqual(list(table['max_level']), [5, 7])
        self.assertEqual(set(table.columns), {'max_level', 'seed', 'top1', 'box_iou',
                                              'train_positives', 'final_embedding_loss'})

    def test_unknown_kind(self):
        """测试未知的消融类型被拒绝"""
        with self.assertRaises(ValueError):
            run_ablation('nothing')


if __name__ == '__main__':
    unittest.main()
