"""
消融实验模块
在玩具蒸馏与合成场景上做小规模参数扫描, 结果为 pandas 表
"""

from dataclasses import replace

import pandas as pd
from loguru import logger
from tqdm import tqdm

from anchors import AnchorConfig
from config import RunConfig, ScenarioConfig
from losses import LossWeights
from metrics import evaluate_sequence
from pipeline import frames_from_scenario, hyps_from_results, run_tracker
from scenario import synth_scenario
from toy_head import ToyHeadConfig, run_multi_source_distillation, run_toy_distillation

DEFAULT_DIMS = (64, 128, 256, 512)
DEFAULT_NOISE_LEVELS = (0.0, 0.1, 0.3, 0.6)
DEFAULT_LAMBDAS = (0.98, 0.0)
DEFAULT_EMBEDDING_WEIGHTS = (2.0, 4.0, 6.0, 8.0, 10.0)
DEFAULT_SOURCE_COUNTS = (1, 2, 3)
DEFAULT_LEVEL_SETS = ((3,), (3, 4), (3, 4, 5), (3, 4, 5, 6, 7))

# 与带噪声跟踪验收相同的场景
NOISY_SCENARIO = ScenarioConfig(identity_count=20, frame_count=300, detection_noise=2.0,
                                dropout_rate=0.05, embedding_noise=0.1)


def dimension_sweep(dims=DEFAULT_DIMS, seeds=(0,), base=ToyHeadConfig(), teacher_dim=512,
                    progress=False):
    """
    截断维度 D_s → 留出集检索 top-1 与最终嵌入损失

    返回:
        DataFrame, 列为 student_dim, seed, top1, initial_embedding_loss, final_embedding_loss
    """
    rows = []
    grid = [(d, s) for d in dims for s in seeds]
    for dim, seed in tqdm(grid, desc='dims', disable=not progress):
        run = run_toy_distillation(replace(base, student_dim=dim, rng_seed=seed), teacher_dim)
        rows.append({
            'student_dim': dim, 'seed': seed, 'top1': run.top1,
            'initial_embedding_loss': run.result.initial_embedding_loss,
            'final_embedding_loss': run.result.final_embedding_loss,
        })
    return pd.DataFrame(rows)


def embedding_weight_sweep(weights=DEFAULT_EMBEDDING_WEIGHTS, seeds=(0,), base=ToyHeadConfig(),
                           loss=LossWeights(), teacher_dim=512, progress=False):
    """嵌入损失权重 α_e → 最终嵌入损失与 top-1"""
    rows = []
    grid = [(a, s) for a in weights for s in seeds]
    for alpha_e, seed in tqdm(grid, desc='weight', disable=not progress):
        run = run_toy_distillation(replace(base, rng_seed=seed), teacher_dim,
                                   replace(loss, alpha_e=alpha_e))
        rows.append({
            'alpha_e': alpha_e, 'seed': seed, 'top1': run.top1,
            'initial_embedding_loss': run.result.initial_embedding_loss,
            'final_embedding_loss': run.result.final_embedding_loss,
        })
    return pd.DataFrame(rows)


def dataset_sweep(source_counts=DEFAULT_SOURCE_COUNTS, seeds=(0,), base=ToyHeadConfig(),
                  teacher_dim=512, progress=False):
    """
    训练数据源个数 → 未见数据源上的检索 top-1 与框交并比

    返回:
        DataFrame, 列为 sources, seed, top1, box_iou, train_positives, final_embedding_loss
    """
    rows = []
    grid = [(k, s) for k in source_counts for s in seeds]
    for count, seed in tqdm(grid, desc='datasets', disable=not progress):
        run = run_multi_source_distillation(replace(base, rng_seed=seed), count, teacher_dim)
        rows.append({
            'sources': count, 'seed': seed, 'top1': run.top1, 'box_iou': run.box_iou,
            'train_positives': run.train_positives,
            'final_embedding_loss': run.result.final_embedding_loss,
        })
    return pd.DataFrame(rows)


def anchor_level_sweep(level_sets=DEFAULT_LEVEL_SETS, seeds=(0,), base=ToyHeadConfig(),
                       anchors=AnchorConfig(), teacher_dim=512, progress=False):
    """
    锚框层级组合 → 正样本数、top-1 与框交并比

    层级不足时较大的目标分不到正样本锚框
    """
    rows = []
    grid = [(lv, s) for lv in level_sets for s in seeds]
    for levels, seed in tqdm(grid, desc='levels', disable=not progress):
        run = run_toy_distillation(replace(base, rng_seed=seed), teacher_dim,
                                   anchor_config=replace(anchors, levels=tuple(levels)))
        rows.append({
            'max_level': max(levels), 'seed': seed, 'top1': run.top1, 'box_iou': run.box_iou,
            'train_positives': run.train_positives,
            'final_embedding_loss': run.result.final_embedding_loss,
        })
    return pd.DataFrame(rows)


def _track_and_score(scenario_config, run_config, association):
    scenario = synth_scenario(scenario_config)
    frames = frames_from_scenario(scenario, run_config.student_dim)
    results = run_tracker(frames, run_config, association)
    return evaluate_sequence(scenario.gt_frames, hyps_from_results(results),
                             name=f'seed{scenario_config.rng_seed}')


def teacher_quality_sweep(noise_levels=DEFAULT_NOISE_LEVELS, seeds=(0, 1, 2, 3, 4),
                          scenario=NOISY_SCENARIO, run_config=RunConfig(), progress=False):
    """
    理想教师嵌入的噪声幅度 → 跟踪的 IDSW/IDF1/MOTA

    噪声越小相当于教师越好
    """
    rows = []
    grid = [(n, s) for n in noise_levels for s in seeds]
    for noise, seed in tqdm(grid, desc='teacher', disable=not progress):
        cfg = replace(scenario, embedding_noise=noise, rng_seed=seed)
        result = _track_and_score(cfg, run_config, run_config.association)
        rows.append({'embedding_noise': noise, 'seed': seed, 'idsw': result.idsw,
                     'idf1': result.idf1, 'mota': result.mota})
    return pd.DataFrame(rows)


def fusion_comparison(lambdas=DEFAULT_LAMBDAS, seeds=(0, 1, 2, 3, 4), scenario=NOISY_SCENARIO,
                      run_config=RunConfig(), progress=False):
    """
    融合系数 λ 对比; λ=0 时只用运动和IoU关联

    返回:
        DataFrame, 列为 fusion_lambda, seed, idsw, idf1, mota
    """
    rows = []
    grid = [(lam, s) for lam in lambdas for s in seeds]
    for lam, seed in tqdm(grid, desc='fusion', disable=not progress):
        association = replace(run_config.association, fusion_lambda=lam)
        result = _track_and_score(replace(scenario, rng_seed=seed), run_config, association)
        rows.append({'fusion_lambda': lam, 'seed': seed, 'idsw': result.idsw,
                     'idf1': result.idf1, 'mota': result.mota})
    return pd.DataFrame(rows)


def summarize(table, by):
    """按参数列对各种子取平均"""
    summary = table.drop(columns=['seed']).groupby(by, sort=False).mean().reset_index()
    logger.info("消融结果 ({}):\n{}", by, summary.to_string(index=False))
    return summary


SWEEPS = {
    'dims': ('student_dim', dimension_sweep),
    'teacher': ('embedding_noise', teacher_quality_sweep),
    'fusion': ('fusion_lambda', fusion_comparison),
    'weight': ('alpha_e', embedding_weight_sweep),
    'datasets': ('sources', dataset_sweep),
    'levels': ('max_level', anchor_level_sweep),
}


def run_ablation(kind, seeds=None, progress=False, **kwargs):
    """
    按名字运行一组消融

    参数:
        kind: dims / teacher / fusion / weight / datasets / levels
        seeds: 可选, 覆盖默认种子

    返回:
        每个种子一行的 DataFrame
    """
    if kind not in SWEEPS:
        raise ValueError(f"未知的消融类型 {kind!r}, 可选 {sorted(SWEEPS)}")
    _, sweep = SWEEPS[kind]
    if seeds is not None:
        kwargs['seeds'] = tuple(seeds)
    return sweep(progress=progress, **kwargs)
