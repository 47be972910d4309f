"""
流水线模块
把蒸馏记录、合成场景和MOT文件转换成跟踪与评测需要的逐帧结构
"""

from dataclasses import replace

from distill import truncate
from errors import ValidationError
from geometry import ScoredDetection
from kalman_filter import KalmanFilter
from postprocess import normalize_embedding, postprocess
from tracker import track_sequence


def _student(values, student_dim):
    return normalize_embedding(truncate(values, student_dim))


def frames_from_records(records, student_dim):
    """
    蒸馏记录 → {帧号: [ScoredDetection]}, 嵌入截断到 D_s 后归一化

    image_id 必须是帧号
    """
    frames = {}
    for r in records:
        try:
            frame = int(r.image_id)
        except ValueError:
            raise ValidationError(f"跟踪输入的 image_id 必须是帧号: {r.image_id!r}") from None
        if frame < 1:
            raise ValidationError(f"帧号必须从1开始: {frame}")
        score = min(max(r.score, 0.0), 1.0)
        det = ScoredDetection(r.box, score, _student(r.teacher.values, student_dim))
        frames.setdefault(frame, []).append(det)
    return dict(sorted(frames.items()))


def frames_from_scenario(scenario, student_dim):
    return {frame: [replace(d, embedding=_student(d.embedding, student_dim)) for d in dets]
            for frame, dets in scenario.detection_frames.items()}


def run_tracker(frames, run_config, association=None, progress=False):
    """
    逐帧后处理后运行跟踪器

    参数:
        frames: {帧号: [ScoredDetection]}
        run_config: RunConfig
        association: 可选, 覆盖 run_config.association

    返回:
        {帧号: [(track_id, Box)]}
    """
    association = association or run_config.association
    processed = {f: postprocess(dets, run_config.postprocess) for f, dets in frames.items()}
    return track_sequence(processed, association, KalmanFilter(run_config.kalman), progress)


def gt_from_mot(frames):
    """MOT真值行 → {帧号: [(gt_id, Box)]}"""
    return {f: [(row.id, row.to_box()) for row in rows] for f, rows in frames.items()}


def hyps_from_mot(frames):
    return {f: [(row.id, row.to_box(), row.conf) for row in rows] for f, rows in frames.items()}


def hyps_from_results(results):
    return {f: [(tid, box, 1.0) for tid, box in entries] for f, entries in results.items()}


def dets_from_mot(frames):
    """MOT检测行 → {帧号: [(序号, Box, 置信度)]}"""
    return {f: [(k, row.to_box(), row.conf) for k, row in enumerate(rows)] for f, rows in frames.items()}
