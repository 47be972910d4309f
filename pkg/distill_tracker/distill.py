"""
数据蒸馏模块
用可插拔的教师嵌入器把检测数据集转换为"检测框+教师嵌入"数据集

教师嵌入以L2归一化形式保存; 截断到前 D_s 维后不再重新归一化。
"""

import abc
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from loguru import logger
from tqdm import tqdm

from errors import EmbedderLookupError, ValidationError
from geometry import Box

DEFAULT_TEACHER_DIM = 512
NORM_TOLERANCE = 1e-6
# 没有身份信息的记录使用的合成身份从这里开始编号
SYNTHETIC_IDENTITY_BASE = 1 << 30


@dataclass(frozen=True, eq=False)
class TeacherEmbedding:
    """教师嵌入, 单位L2范数"""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.shape[0] == 0:
            raise ValidationError(f"教师嵌入必须是非空向量, 实际形状 {values.shape}")
        norm = float(np.linalg.norm(values))
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise ValidationError(f"教师嵌入必须归一化, 实际范数 {norm:.9f}")
        object.__setattr__(self, 'values', values)

    @property
    def dim(self):
        return self.values.shape[0]

    @classmethod
    def normalized(cls, values):
        values = np.asarray(values, dtype=float)
        return cls(values / np.linalg.norm(values))


@dataclass(frozen=True)
class CropContract:
    """教师嵌入器期望的输入分辨率 (只记录, 核心流程中没有像素)"""

    height: int = 256
    width: int = 128

    def __str__(self):
        return f"{self.height}x{self.width}"

    @classmethod
    def parse(cls, text):
        try:
            h, w = text.lower().split('x')
            return cls(int(h), int(w))
        except ValueError:
            raise ValidationError(f"裁剪约定格式应为 HxW: {text!r}") from None


@dataclass(frozen=True)
class DetectionRecord:
    """
    检测数据集的一行

    identity 为已知的身份编号 (例如真值文件中的轨迹编号), 未知为-1;
    score 为检测置信度, 真值记录为1
    """

    image_id: str
    box: Box
    class_id: int = 0
    identity: int = -1
    score: float = 1.0

    def __post_init__(self):
        if ',' in self.image_id or '\n' in self.image_id or self.image_id == '':
            raise ValidationError(f"image_id 不能为空或包含逗号/换行: {self.image_id!r}")


@dataclass(frozen=True, eq=False)
class AugmentedRecord:
    """附带教师嵌入的检测记录"""

    image_id: str
    box: Box
    teacher: TeacherEmbedding
    class_id: int = 0
    identity: int = -1
    score: float = 1.0

    @classmethod
    def from_record(cls, record, teacher):
        return cls(record.image_id, record.box, teacher, record.class_id,
                   record.identity, record.score)

    def to_record(self):
        return DetectionRecord(self.image_id, self.box, self.class_id, self.identity, self.score)


@dataclass(frozen=True)
class DistillMetadata:
    """蒸馏数据集的元数据"""

    dim: int
    embedder: str
    crop: CropContract = field(default_factory=CropContract)
    seed: Optional[int] = None
    float_width: int = 4


def record_key(image_id, box):
    """查找键: 坐标取到1e-4像素, 吸收 (x,y,w,h) 与角点换算的舍入误差"""
    return (str(image_id),) + tuple(round(float(c), 4) for c in
                                    (box.x_min, box.y_min, box.x_max, box.y_max))


class Embedder(abc.ABC):
    """
    教师嵌入器接口

    给定一条检测记录 (image_id, box, ...) 返回 TeacherEmbedding。
    thread_safe 声明实现能否被并发调用, 否则蒸馏流程退回顺序执行。
    """

    name = 'embedder'
    thread_safe = False

    def __init__(self, dim, crop=None, seed=None):
        if dim < 1:
            raise ValidationError(f"嵌入维度必须为正: {dim}")
        self.dim = dim
        self.crop = crop or CropContract()
        self.seed = seed

    @abc.abstractmethod
    def embed(self, record):
        """返回 record 的 TeacherEmbedding"""

    def metadata(self):
        return DistillMetadata(dim=self.dim, embedder=self.name, crop=self.crop, seed=self.seed)


class PrecomputedEmbedder(Embedder):
    """从预先计算好的嵌入文件中按 (image_id, box) 查找"""

    thread_safe = True

    def __init__(self, records, source='memory', crop=None, seed=None):
        records = list(records)
        dims = {r.teacher.dim for r in records}
        if len(dims) > 1:
            raise ValidationError(f"嵌入文件中的维度不一致: {sorted(dims)}")
        dim = dims.pop() if dims else DEFAULT_TEACHER_DIM
        super().__init__(dim, crop, seed)
        self.name = f"file:{source}"
        self._table = {record_key(r.image_id, r.box): r.teacher for r in records}
        logger.debug("载入预计算嵌入 {} 条, 维度 {}", len(self._table), dim)

    def embed(self, record):
        key = record_key(record.image_id, record.box)
        teacher = self._table.get(key)
        if teacher is None:
            raise EmbedderLookupError(
                f"嵌入文件中找不到记录 image_id={record.image_id} box={key[1:]}")
        return teacher


def synthetic_oracle_embed(identity_id, noise_sigma=0.0, rng_seed=0,
                           dim=DEFAULT_TEACHER_DIM, noise_key=0):
    """
    合成的"理想教师"嵌入

    参数:
        identity_id: 身份编号 (非负整数), 决定基础向量
        noise_sigma: 噪声总幅度, 各分量标准差为 noise_sigma/sqrt(dim)
        rng_seed: 随机种子
        dim: 嵌入维度 D_t
        noise_key: 区分同一身份的不同观测, 决定噪声样本

    返回:
        TeacherEmbedding
    """
    if identity_id < 0:
        raise ValidationError(f"身份编号必须非负: {identity_id}")
    if noise_sigma < 0:
        raise ValidationError(f"噪声幅度必须非负: {noise_sigma}")
    base = np.random.default_rng([rng_seed, identity_id]).standard_normal(dim)
    base /= np.linalg.norm(base)
    if noise_sigma > 0:
        rng = np.random.default_rng([rng_seed, identity_id, noise_key + 1])
        base = base + rng.standard_normal(dim) * (noise_sigma / np.sqrt(dim))
    return TeacherEmbedding.normalized(base)


class SyntheticOracleEmbedder(Embedder):
    """按记录的身份编号生成嵌入; 身份未知的记录按 (image_id, box) 派生一个新身份"""

    name = 'oracle'
    thread_safe = True

    def __init__(self, dim=DEFAULT_TEACHER_DIM, noise_sigma=0.0, seed=0, crop=None):
        super().__init__(dim, crop, seed)
        if noise_sigma < 0:
            raise ValidationError(f"噪声幅度必须非负: {noise_sigma}")
        self.noise_sigma = noise_sigma

    @staticmethod
    def _key_hash(record):
        return zlib.crc32(repr(record_key(record.image_id, record.box)).encode('utf-8'))

    def embed(self, record):
        identity = record.identity
        if identity < 0:
            identity = SYNTHETIC_IDENTITY_BASE + self._key_hash(record)
        return synthetic_oracle_embed(identity, self.noise_sigma, self.seed, self.dim,
                                      noise_key=self._key_hash(record))


def distill_dataset(records, embedder, workers=1, progress=False):
    """
    为每条检测记录附加教师嵌入

    参数:
        records: DetectionRecord 列表
        embedder: Embedder 实现
        workers: 并发线程数, 嵌入器不是线程安全时忽略
        progress: 是否显示进度条

    返回:
        (AugmentedRecord 列表, DistillMetadata), 顺序与输入一致
    """
    records = list(records)

    def embed_one(indexed):
        index, record = indexed
        try:
            teacher = embedder.embed(record)
        except EmbedderLookupError as e:
            raise EmbedderLookupError(f"第{index}条记录: {e}") from None
        if not isinstance(teacher, TeacherEmbedding):
            teacher = TeacherEmbedding(teacher)
        if teacher.dim != embedder.dim:
            raise ValidationError(
                f"第{index}条记录的嵌入维度 {teacher.dim} 与 D_t={embedder.dim} 不一致")
        return AugmentedRecord.from_record(record, teacher)

    items = tqdm(enumerate(records), total=len(records), desc='distill', disable=not progress)
    if workers > 1 and embedder.thread_safe:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            augmented = list(pool.map(embed_one, items))
    else:
        if workers > 1:
            logger.warning("嵌入器 {} 不支持并发调用, 改为顺序执行", embedder.name)
        augmented = [embed_one(item) for item in items]

    metadata = embedder.metadata()
    logger.info("蒸馏完成: {} 条记录, D_t={}, 嵌入器 {}", len(augmented), metadata.dim, metadata.embedder)
    return augmented, metadata


def truncate(t, student_dim):
    """
    取教师嵌入的前 D_s 维作为学生嵌入的回归目标 (不重新归一化)

    参数:
        t: TeacherEmbedding 或向量
        student_dim: D_s, 1 <= D_s <= D_t
    """
    values = np.asarray(getattr(t, 'values', t), dtype=float)
    if not 1 <= student_dim <= values.shape[0]:
        raise ValidationError(f"截断维度 {student_dim} 超出范围 [1, {values.shape[0]}]")
    return values[:student_dim].copy()


def storage_overhead(dataset, base_bytes, float_width=4):
    """
    教师嵌入占用的额外存储相对原始数据集的比例

    返回:
        记录数·D_t·float_width / base_bytes
    """
    if base_bytes <= 0:
        raise ValidationError(f"原始数据大小必须为正: {base_bytes}")
    dataset = list(dataset)
    if not dataset:
        return 0.0
    dim = dataset[0].teacher.dim
    return len(dataset) * dim * float_width / base_bytes
