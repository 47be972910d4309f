"""
命令行入口
蒸馏、跟踪、评测、场景合成、玩具训练、自检、消融和绘图子命令

退出码: 0 成功, 1 校验失败, 2 I/O失败。诊断信息只写到标准错误, 数据只写到文件。
"""

import argparse
import json
import os
import sys
from dataclasses import asdict

import pandas as pd
from loguru import logger

from ablation import SWEEPS, run_ablation, summarize
from config import RunConfig, load_run_config, load_scenario_config
from distill import PrecomputedEmbedder, SyntheticOracleEmbedder, distill_dataset, storage_overhead
from errors import ValidationError, exit_code
from metrics import evaluate_sequence, write_report
from mot_io import (atomic_write, mot_to_records, read_augmented, read_mot_file, results_to_rows,
                    write_augmented, write_mot_file)
from pipeline import dets_from_mot, frames_from_records, gt_from_mot, hyps_from_mot, run_tracker
from scenario import synth_scenario, write_scenario
from selftest import run_selftest
from toy_head import run_toy_distillation
from visualizer import TrackingVisualizer, read_loss_curve

LOG_FORMAT = '<green>{time:HH:mm:ss}</green> | <level>{level: <7}</level> | {message}'


def setup_logging(verbose=False):
    logger.remove()
    logger.add(sys.stderr, level='DEBUG' if verbose else 'INFO', format=LOG_FORMAT)


def _run_config(path):
    return load_run_config(path) if path else RunConfig()


def make_embedder(spec, dim=512, noise=0.0, seed=0):
    """
    根据 --embedder 参数构造嵌入器

    参数:
        spec: "oracle" 或 "file:<路径>"
    """
    if spec == 'oracle':
        return SyntheticOracleEmbedder(dim, noise, seed)
    if spec.startswith('file:'):
        path = spec[len('file:'):]
        records, metadata = read_augmented(path)
        return PrecomputedEmbedder(records, source=path, crop=metadata.crop, seed=metadata.seed)
    raise ValidationError(f"未知的嵌入器 {spec!r}, 应为 oracle 或 file:<路径>")


def cmd_distill(args):
    records = mot_to_records(read_mot_file(args.input))
    embedder = make_embedder(args.embedder, args.dim, args.noise, args.seed)
    dataset, metadata = distill_dataset(records, embedder, args.workers, args.progress)
    write_augmented(dataset, metadata, args.out)
    overhead = storage_overhead(dataset, os.path.getsize(args.input), metadata.float_width)
    logger.info("嵌入存储开销: 原始数据的 {:.1%} ({} 条 × {} 维 × {} 字节)", overhead,
                len(dataset), metadata.dim, metadata.float_width)


def cmd_track(args):
    run_config = _run_config(args.config)
    records, metadata = read_augmented(args.input)
    logger.debug("输入嵌入 D_t={}, 嵌入器 {}", metadata.dim, metadata.embedder)
    frames = frames_from_records(records, run_config.student_dim)
    results = run_tracker(frames, run_config, progress=args.progress)
    write_mot_file(results_to_rows(results), args.out)


def _sequence_name(path):
    name = os.path.splitext(os.path.basename(path))[0]
    parent = os.path.basename(os.path.dirname(os.path.abspath(path)))
    return f"{parent}/{name}" if parent else name


def cmd_eval(args):
    if len(args.gt) != len(args.res):
        raise ValidationError(f"--gt 与 --res 数量不一致: {len(args.gt)} != {len(args.res)}")
    if args.det and len(args.det) != len(args.gt):
        raise ValidationError(f"--det 与 --gt 数量不一致: {len(args.det)} != {len(args.gt)}")
    evals = []
    for k, (gt_path, res_path) in enumerate(zip(args.gt, args.res)):
        gts = gt_from_mot(read_mot_file(gt_path))
        hyps = hyps_from_mot(read_mot_file(res_path))
        dets = dets_from_mot(read_mot_file(args.det[k])) if args.det else None
        evals.append(evaluate_sequence(gts, hyps, dets, _sequence_name(res_path), args.iou))
    write_report(evals, args.report)


def cmd_synth(args):
    write_scenario(synth_scenario(load_scenario_config(args.config)), args.out_dir)
    logger.info("场景已写入 {}", args.out_dir)


def cmd_traintoy(args):
    run_config = _run_config(args.config)
    run = run_toy_distillation(run_config.toy_config(), run_config.teacher_dim, run_config.loss,
                               run_config.focal, run_config.huber, progress=args.progress,
                               anchor_config=run_config.anchors)
    with atomic_write(args.out) as f:
        for record in run.result.curve:
            f.write(json.dumps(asdict(record)) + '\n')


def cmd_selftest(args):
    results = run_selftest(args.seed)
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.error("自检失败 {}/{} 项: {}", len(failed), len(results), ', '.join(failed))
        return 1
    logger.info("自检全部通过 ({} 项)", len(results))
    return 0


def cmd_ablate(args):
    table = run_ablation(args.kind, args.seeds, args.progress)
    summarize(table, SWEEPS[args.kind][0])
    with atomic_write(args.out) as f:
        table.to_csv(f, index=False, float_format='%.6f')


def cmd_plot(args):
    visualizer = TrackingVisualizer()
    if args.kind == 'curve':
        visualizer.plot_loss_curve(read_loss_curve(args.input), args.out)
    elif args.kind == 'tracks':
        visualizer.plot_tracks(hyps_from_mot(read_mot_file(args.input)), args.out)
    else:
        table = pd.read_csv(args.input)
        by = table.columns[0]
        if 'top1' in table:
            metrics = [m for m in ('top1', 'box_iou', 'final_embedding_loss') if m in table]
        else:
            metrics = ['idsw', 'idf1']
        visualizer.plot_ablation(table, by, metrics, args.out)


def build_parser():
    parser = argparse.ArgumentParser(description='外观嵌入蒸馏与多目标跟踪工具')
    parser.add_argument('--verbose', action='store_true', help='输出调试日志')
    parser.add_argument('--progress', action='store_true', help='显示进度条')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('distill', help='为检测附加教师嵌入')
    p.add_argument('--in', dest='input', required=True, help='MOT格式检测文件')
    p.add_argument('--embedder', required=True, help='oracle 或 file:<嵌入文件>')
    p.add_argument('--out', required=True, help='输出蒸馏数据集 (.bin 为二进制)')
    p.add_argument('--dim', type=int, default=512, help='oracle 嵌入维度 D_t')
    p.add_argument('--noise', type=float, default=0.0, help='oracle 嵌入噪声')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--workers', type=int, default=1)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser('track', help='在带嵌入的检测上运行跟踪器')
    p.add_argument('--in', dest='input', required=True, help='蒸馏数据集, image_id 为帧号')
    p.add_argument('--config', help='RunConfig 文件, 缺省使用默认值')
    p.add_argument('--out', required=True, help='输出MOT结果文件')
    p.set_defaults(func=cmd_track)

    p = sub.add_parser('eval', help='计算评测指标')
    p.add_argument('--gt', nargs='+', required=True)
    p.add_argument('--res', nargs='+', required=True)
    p.add_argument('--det', nargs='+', help='可选, 检测文件, 用于计算AP')
    p.add_argument('--report', required=True, help='输出CSV报告')
    p.add_argument('--iou', type=float, default=0.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('synth', help='生成合成场景')
    p.add_argument('--config', required=True)
    p.add_argument('--out-dir', required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser('traintoy', help='训练玩具学生头并输出损失曲线')
    p.add_argument('--config', help='RunConfig 文件, 缺省使用默认值')
    p.add_argument('--out', required=True, help='JSON lines 损失曲线')
    p.set_defaults(func=cmd_traintoy)

    p = sub.add_parser('selftest', help='梯度、匈牙利算法和评测指标自检')
    p.add_argument('--seed', type=int, default=0)
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser('ablate', help='消融实验')
    p.add_argument('--kind', choices=sorted(SWEEPS), required=True)
    p.add_argument('--seeds', type=int, nargs='+')
    p.add_argument('--out', required=True, help='输出CSV')
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser('plot', help='绘图')
    p.add_argument('kind', choices=['curve', 'tracks', 'ablation'])
    p.add_argument('--in', dest='input', required=True)
    p.add_argument('--out', required=True, help='输出PNG')
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    """
    主函数

    返回:
        退出码
    """
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        return args.func(args) or 0
    except Exception as e:
        code = exit_code(e)
        if code is None:
            raise
        logger.error("{}", e)
        return code


if __name__ == '__main__':
    sys.exit(main())
