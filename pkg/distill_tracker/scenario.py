"""
合成场景模块
生成匀速运动 (可选随机转向) 的真值轨迹, 以及带噪声、漏检、误检和理想教师嵌入的检测
"""

import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from config import consumer_rng
from distill import AugmentedRecord, DistillMetadata, TeacherEmbedding, synthetic_oracle_embed
from geometry import Box, ScoredDetection
from mot_io import MotRow, atomic_write, write_augmented, write_mot_file

FP_SCORE_RANGE = (0.3, 0.9)
TP_SCORE_RANGE = (0.6, 1.0)


@dataclass
class Scenario:
    """
    gt_frames: {帧号: [(身份, Box)]}
    detection_frames: {帧号: [ScoredDetection]}, 嵌入为 D_t 维教师嵌入
    identity_map: {帧号: [身份]}, 与 detection_frames 一一对应, 误检为-1
    """

    config: object
    gt_frames: Dict[int, List[Tuple[int, Box]]] = field(default_factory=dict)
    detection_frames: Dict[int, List[ScoredDetection]] = field(default_factory=dict)
    identity_map: Dict[int, List[int]] = field(default_factory=dict)


def _bounce(pos, vel, lo, hi):
    """在 [lo, hi] 内反弹"""
    if hi <= lo:
        return lo, vel
    pos += vel
    if pos < lo:
        pos, vel = 2 * lo - pos, -vel
    if pos > hi:
        pos, vel = 2 * hi - pos, -vel
    return min(max(pos, lo), hi), vel


def _trajectories(cfg):
    rng = consumer_rng(cfg.rng_seed, 'scenario.motion')
    lane = cfg.image_height / cfg.identity_count
    tracks = {}
    for identity in range(1, cfg.identity_count + 1):
        h = rng.uniform(cfg.box_height_min, cfg.box_height_max)
        w = h * rng.uniform(cfg.aspect_min, cfg.aspect_max)
        if cfg.allow_overlap:
            y_lo, y_hi = 0.0, cfg.image_height - h
        else:
            y_lo = (identity - 1) * lane
            y_hi = y_lo + lane - h
        x_lo, x_hi = 0.0, cfg.image_width - w
        x = rng.uniform(x_lo, x_hi)
        y = rng.uniform(y_lo, y_hi)
        speed = rng.uniform(cfg.speed_min, cfg.speed_max)
        angle = rng.uniform(0.0, 2 * math.pi)
        vx, vy = speed * math.cos(angle), speed * math.sin(angle)

        boxes = []
        for _ in range(cfg.frame_count):
            boxes.append(Box(x, y, x + w, y + h))
            turn = rng.uniform(0.0, 2 * math.pi)
            if rng.random() < cfg.direction_change_rate:
                vx, vy = speed * math.cos(turn), speed * math.sin(turn)
            x, vx = _bounce(x, vx, x_lo, x_hi)
            y, vy = _bounce(y, vy, y_lo, y_hi)
        tracks[identity] = boxes
    return tracks


def _noisy(box, noise):
    x1, y1, x2, y2 = box.as_array() + noise
    return Box(x1, y1, max(x2, x1 + 1e-3), max(y2, y1 + 1e-3))


def synth_scenario(cfg):
    """
    按配置生成合成场景, 同一种子结果完全相同

    参数:
        cfg: ScenarioConfig

    返回:
        Scenario
    """
    tracks = _trajectories(cfg)
    occluded = cfg.occlusion_windows()
    rng = consumer_rng(cfg.rng_seed, 'scenario.detections')
    scenario = Scenario(cfg)
    next_fresh = cfg.identity_count + 1

    for frame in range(1, cfg.frame_count + 1):
        gts = [(identity, boxes[frame - 1]) for identity, boxes in tracks.items()]
        dets, ids = [], []
        for identity, box in gts:
            noise = rng.standard_normal(4) * cfg.detection_noise
            dropped = rng.random() < cfg.dropout_rate
            score = rng.uniform(*TP_SCORE_RANGE)
            hidden = any(i == identity and s <= frame <= e for i, s, e in occluded)
            if dropped or hidden:
                continue
            embedding = synthetic_oracle_embed(identity, cfg.embedding_noise, cfg.rng_seed,
                                               cfg.teacher_dim, noise_key=frame)
            det_box = _noisy(box, noise) if cfg.detection_noise > 0 else box
            dets.append(ScoredDetection(det_box, float(score), embedding.values))
            ids.append(identity)

        for _ in range(rng.binomial(cfg.identity_count, cfg.false_positive_rate)):
            h = rng.uniform(cfg.box_height_min, cfg.box_height_max)
            w = h * rng.uniform(cfg.aspect_min, cfg.aspect_max)
            x = rng.uniform(0.0, cfg.image_width - w)
            y = rng.uniform(0.0, cfg.image_height - h)
            score = rng.uniform(*FP_SCORE_RANGE)
            embedding = synthetic_oracle_embed(next_fresh, cfg.embedding_noise, cfg.rng_seed,
                                               cfg.teacher_dim, noise_key=frame)
            next_fresh += 1
            dets.append(ScoredDetection(Box(x, y, x + w, y + h), float(score), embedding.values))
            ids.append(-1)

        scenario.gt_frames[frame] = gts
        scenario.detection_frames[frame] = dets
        scenario.identity_map[frame] = ids

    n_det = sum(len(v) for v in scenario.detection_frames.values())
    logger.info("合成场景: {} 个身份, {} 帧, {} 个检测", cfg.identity_count, cfg.frame_count, n_det)
    return scenario


def scenario_records(scenario):
    """检测 → 附带教师嵌入的记录, image_id 为帧号"""
    records = []
    for frame, dets in scenario.detection_frames.items():
        for det, identity in zip(dets, scenario.identity_map[frame]):
            teacher = TeacherEmbedding(det.embedding)
            records.append(AugmentedRecord(str(frame), det.box, teacher, 0, identity, det.score))
    return records


def write_scenario(scenario, out_dir):
    """
    写出 gt.txt, det.txt, embeddings.txt, identities.csv 和 scenario.cfg
    """
    cfg = scenario.config
    os.makedirs(out_dir, exist_ok=True)
    gt_rows = {f: [MotRow.from_box(f, identity, box, 1.0) for identity, box in entries]
               for f, entries in scenario.gt_frames.items() if entries}
    det_rows = {f: [MotRow.from_box(f, -1, d.box, d.score) for d in dets]
                for f, dets in scenario.detection_frames.items() if dets}
    write_mot_file(gt_rows, os.path.join(out_dir, 'gt.txt'))
    write_mot_file(det_rows, os.path.join(out_dir, 'det.txt'))

    metadata = DistillMetadata(dim=cfg.teacher_dim, embedder='oracle', seed=cfg.rng_seed)
    write_augmented(scenario_records(scenario), metadata, os.path.join(out_dir, 'embeddings.txt'),
                    binary=False)

    table = pd.DataFrame(
        [(f, k, identity) for f, ids in scenario.identity_map.items() for k, identity in enumerate(ids)],
        columns=['frame', 'index', 'identity'])
    with atomic_write(os.path.join(out_dir, 'identities.csv')) as f:
        table.to_csv(f, index=False)
    with atomic_write(os.path.join(out_dir, 'scenario.cfg')) as f:
        f.write(cfg.to_text())
