"""
在线多目标跟踪模块
卡尔曼运动模型 + 外观/运动融合代价的匈牙利匹配 + IoU兜底匹配 + 轨迹生命周期

匹配分两级:
  1. 已确认和丢失状态的轨迹, 代价 λ·余弦距离 + (1-λ)·归一化马氏距离, 双门限;
  2. 剩余的未丢失轨迹 (含未确认轨迹) 与剩余检测, 代价 1-IoU, IoU < 0.5 禁止。
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
from loguru import logger
from tqdm import tqdm

from assignment import hungarian
from errors import ValidationError
from geometry import Box, boxes_to_array, iou_matrix
from kalman_filter import CHI2_95_4DOF, KalmanFilter
from postprocess import is_degenerate, normalize_embedding


class TrackState(Enum):
    """轨迹生命周期状态"""

    TENTATIVE = 'tentative'
    CONFIRMED = 'confirmed'
    LOST = 'lost'
    DELETED = 'deleted'


@dataclass(frozen=True)
class AssociationConfig:
    """数据关联与轨迹生命周期参数"""

    embedding_distance_threshold: float = 0.4
    motion_gate_threshold: float = CHI2_95_4DOF
    fusion_lambda: float = 0.98
    iou_fallback_threshold: float = 0.5
    max_age: int = 30
    n_init: int = 3
    embedding_ema_momentum: float = 0.9
    track_threshold: float = 0.5
    output_tentative_history: bool = True

    def __post_init__(self):
        if not 0.0 <= self.embedding_distance_threshold <= 2.0:
            raise ValidationError(f"embedding_distance_threshold 超出[0,2]: {self.embedding_distance_threshold}")
        if self.motion_gate_threshold <= 0:
            raise ValidationError(f"motion_gate_threshold 必须为正: {self.motion_gate_threshold}")
        if not 0.0 <= self.fusion_lambda <= 1.0:
            raise ValidationError(f"fusion_lambda 必须在[0,1]内: {self.fusion_lambda}")
        if not 0.0 < self.iou_fallback_threshold <= 1.0:
            raise ValidationError(f"iou_fallback_threshold 必须在(0,1]内: {self.iou_fallback_threshold}")
        if self.max_age < 0 or self.n_init < 1:
            raise ValidationError(f"max_age 必须非负且 n_init 至少为1: {self.max_age}, {self.n_init}")
        if not 0.0 <= self.embedding_ema_momentum <= 1.0:
            raise ValidationError(f"embedding_ema_momentum 必须在[0,1]内: {self.embedding_ema_momentum}")
        if not 0.0 <= self.track_threshold <= 1.0:
            raise ValidationError(f"track_threshold 必须在[0,1]内: {self.track_threshold}")


class Tracklet:
    """
    单条轨迹的在线状态

    参数:
        track_id: 轨迹编号
        state: KalmanState
        embedding: 平滑后的单位外观向量, 零向量表示没有外观信息
    """

    def __init__(self, track_id, state, embedding):
        self.track_id = track_id
        self.state = state
        self.embedding = embedding
        self.status = TrackState.TENTATIVE
        self.hits = 1
        self.time_since_update = 0
        self.history = []  # 未确认期间的 (帧号, Box)

    @property
    def is_confirmed(self):
        return self.status == TrackState.CONFIRMED

    def box(self):
        return Box.from_xyah(self.state.mean[:4])

    def tlbr(self):
        cx, cy, a, h = self.state.mean[:4]
        w = a * h
        return np.array([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2])

    def __repr__(self):
        return f"Tracklet(id={self.track_id}, status={self.status.value}, hits={self.hits})"


def update_embedding(tracklet, embedding, momentum):
    """
    指数滑动平均更新外观向量: normalize(momentum·旧 + (1-momentum)·新)

    新嵌入为退化标记时保持不变; 旧嵌入为退化标记时直接替换
    """
    if is_degenerate(embedding):
        return tracklet
    if is_degenerate(tracklet.embedding):
        tracklet.embedding = normalize_embedding(embedding)
    else:
        tracklet.embedding = normalize_embedding(
            momentum * tracklet.embedding + (1.0 - momentum) * np.asarray(embedding, dtype=float))
    return tracklet


def cosine_distance(a, b):
    """余弦距离 1 - cos; 任意一方退化时为1"""
    if is_degenerate(a) or is_degenerate(b):
        return 1.0
    if len(a) != len(b):
        raise ValidationError(f"嵌入维度不一致: {len(a)} != {len(b)}")
    return float(1.0 - np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def cost_matrix(tracklets, detections, cfg, kalman_filter=None):
    """
    融合代价矩阵

    返回:
        (代价矩阵, 禁止矩阵); 马氏距离超过门限, 或 λ>0 时余弦距离超过门限, 即禁止
    """
    kf = kalman_filter or KalmanFilter()
    cost = np.zeros((len(tracklets), len(detections)))
    forbidden = np.zeros(cost.shape, dtype=bool)
    if cost.size == 0:
        return cost, forbidden

    measurements = np.stack([d.box.to_xyah() for d in detections])
    lam = cfg.fusion_lambda
    for i, track in enumerate(tracklets):
        gate = np.atleast_1d(kf.gating_distance(track.state, measurements))
        appearance = np.array([cosine_distance(track.embedding, d.embedding) for d in detections])
        motion = np.minimum(gate / cfg.motion_gate_threshold, 1.0)
        cost[i] = lam * appearance + (1.0 - lam) * motion
        forbidden[i] = gate > cfg.motion_gate_threshold
        if lam > 0:
            forbidden[i] |= appearance > cfg.embedding_distance_threshold
    return cost, forbidden


def iou_cost(tracklets, detections):
    """1 - IoU 代价"""
    if not tracklets or not detections:
        return np.zeros((len(tracklets), len(detections)))
    track_boxes = np.stack([t.tlbr() for t in tracklets])
    det_boxes = boxes_to_array([d.box for d in detections])
    return 1.0 - iou_matrix(track_boxes, det_boxes)


def associate(tracklets, detections, cfg, kalman_filter=None):
    """
    两级关联

    返回:
        (匹配列表[(轨迹下标, 检测下标)], 未匹配轨迹下标, 未匹配检测下标)
    """
    stage1_tracks = [i for i, t in enumerate(tracklets)
                     if t.status in (TrackState.CONFIRMED, TrackState.LOST)]
    matches = []
    if stage1_tracks and detections:
        cost, forbidden = cost_matrix([tracklets[i] for i in stage1_tracks], detections, cfg,
                                      kalman_filter)
        for r, c in hungarian(cost, forbidden):
            matches.append((stage1_tracks[r], c))

    matched_tracks = {t for t, _ in matches}
    matched_dets = {d for _, d in matches}
    stage2_tracks = [i for i, t in enumerate(tracklets)
                     if i not in matched_tracks and t.status != TrackState.LOST]
    stage2_dets = [j for j in range(len(detections)) if j not in matched_dets]
    if stage2_tracks and stage2_dets:
        cost = iou_cost([tracklets[i] for i in stage2_tracks], [detections[j] for j in stage2_dets])
        forbidden = cost > 1.0 - cfg.iou_fallback_threshold
        for r, c in hungarian(cost, forbidden):
            matches.append((stage2_tracks[r], stage2_dets[c]))

    matched_tracks = {t for t, _ in matches}
    matched_dets = {d for _, d in matches}
    unmatched_tracks = [i for i in range(len(tracklets)) if i not in matched_tracks]
    unmatched_dets = [j for j in range(len(detections)) if j not in matched_dets]
    return sorted(matches), unmatched_tracks, unmatched_dets


class Tracker:
    """
    在线多目标跟踪器 (单线程可变状态, 每个序列一个实例)

    参数:
        config: AssociationConfig
        kalman_filter: KalmanFilter
    """

    def __init__(self, config=AssociationConfig(), kalman_filter=None):
        self.config = config
        self.kf = kalman_filter or KalmanFilter()
        self.tracklets = []
        self.frame_index = 0
        self.backfill = []  # 刚确认的轨迹在未确认期间的输出 (帧号, track_id, Box)
        self._next_id = 1

    def _start(self, detection):
        state = self.kf.initiate(detection.box.to_xyah())
        embedding = None if detection.embedding is None else normalize_embedding(detection.embedding)
        track = Tracklet(self._next_id, state, embedding)
        self._next_id += 1
        track.history.append((self.frame_index, track.box()))
        if self.config.n_init <= 1:
            track.status = TrackState.CONFIRMED
        self.tracklets.append(track)
        logger.debug("帧 {}: 新建轨迹 {}", self.frame_index, track.track_id)
        return track

    def step(self, frame_detections):
        """
        处理一帧检测

        参数:
            frame_detections: 已经后处理过的 ScoredDetection 列表

        返回:
            本帧更新过的已确认轨迹 [(track_id, Box)]
        """
        cfg = self.config
        self.frame_index += 1
        detections = [d for d in frame_detections
                      if d.score >= cfg.track_threshold and d.box.height > 0]

        for track in self.tracklets:
            track.state = self.kf.predict(track.state)

        matches, unmatched_tracks, unmatched_dets = associate(self.tracklets, detections, cfg, self.kf)

        outputs = []
        for ti, di in matches:
            track = self.tracklets[ti]
            det = detections[di]
            track.state = self.kf.update(track.state, det.box.to_xyah())
            update_embedding(track, det.embedding, cfg.embedding_ema_momentum)
            track.hits += 1
            track.time_since_update = 0
            if track.status == TrackState.LOST:
                track.status = TrackState.CONFIRMED
            elif track.status == TrackState.TENTATIVE:
                track.history.append((self.frame_index, track.box()))
                if track.hits >= cfg.n_init:
                    track.status = TrackState.CONFIRMED
                    self.backfill.extend((f, track.track_id, b) for f, b in track.history[:-1])
                    track.history = []

        for ti in unmatched_tracks:
            track = self.tracklets[ti]
            track.time_since_update += 1
            track.hits = 0
            if track.status == TrackState.TENTATIVE:
                track.status = TrackState.DELETED
            elif track.time_since_update > cfg.max_age:
                track.status = TrackState.DELETED
            else:
                track.status = TrackState.LOST

        for di in unmatched_dets:
            self._start(detections[di])

        deleted = [t.track_id for t in self.tracklets if t.status == TrackState.DELETED]
        if deleted:
            logger.debug("帧 {}: 删除轨迹 {}", self.frame_index, deleted)
        self.tracklets = [t for t in self.tracklets if t.status != TrackState.DELETED]

        for track in self.tracklets:
            if track.is_confirmed and track.time_since_update == 0:
                outputs.append((track.track_id, track.box()))
        outputs.sort(key=lambda item: item[0])
        return outputs

    def pop_backfill(self):
        rows, self.backfill = self.backfill, []
        return rows


def track_sequence(frames, config=AssociationConfig(), kalman_filter=None, progress=False):
    """
    对整个序列运行跟踪器

    参数:
        frames: {帧号: ScoredDetection 列表}, 帧号从1开始; 缺失的帧视为没有检测
        config: AssociationConfig

    返回:
        {帧号: [(track_id, Box)]}; config.output_tentative_history 为真时
        包含轨迹确认前的输出
    """
    tracker = Tracker(config, kalman_filter)
    last = max(frames) if frames else 0
    results = {f: [] for f in range(1, last + 1)}
    for frame in tqdm(range(1, last + 1), desc='track', disable=not progress):
        results[frame].extend(tracker.step(frames.get(frame, [])))
        backfill = tracker.pop_backfill()
        if config.output_tentative_history:
            for f, track_id, box in backfill:
                results[f].append((track_id, box))
    for f in results:
        results[f].sort(key=lambda item: item[0])
    ids = {tid for rows in results.values() for tid, _ in rows}
    logger.info("跟踪完成: {} 帧, {} 条轨迹", last, len(ids))
    return results
