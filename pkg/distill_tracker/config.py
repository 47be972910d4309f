"""
配置模块
RunConfig 与 ScenarioConfig 的扁平 key=value 文本读写, 以及按用途拆分的随机数发生器

RunConfig 的键为 "分组.字段", 例如 association.fusion_lambda=0.98;
ScenarioConfig 的键没有分组前缀。'#' 开头的行和空行被忽略。
"""

import zlib
from dataclasses import dataclass, field, fields, replace

import numpy as np

from anchors import AnchorConfig
from errors import FormatError, ValidationError
from kalman_filter import KalmanConfig
from losses import FocalParams, HuberParams, LossWeights
from postprocess import PostprocessConfig
from toy_head import ToyHeadConfig
from tracker import AssociationConfig


def consumer_rng(seed, name):
    """同一个运行种子按用途名派生互相独立的随机数发生器"""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode('utf-8'))])


@dataclass(frozen=True)
class RunConfig:
    """一次运行的全部超参数"""

    anchors: AnchorConfig = field(default_factory=AnchorConfig)
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)
    association: AssociationConfig = field(default_factory=AssociationConfig)
    kalman: KalmanConfig = field(default_factory=KalmanConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    focal: FocalParams = field(default_factory=FocalParams)
    huber: HuberParams = field(default_factory=HuberParams)
    toy: ToyHeadConfig = field(default_factory=ToyHeadConfig)
    teacher_dim: int = 512
    student_dim: int = 128
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.student_dim <= self.teacher_dim:
            raise ValidationError(f"需要 1 <= D_s <= D_t, 实际 D_s={self.student_dim}, D_t={self.teacher_dim}")
        if self.seed < 0:
            raise ValidationError(f"seed 必须非负: {self.seed}")

    def toy_config(self):
        return replace(self.toy, student_dim=self.student_dim, rng_seed=self.seed)

    def to_text(self):
        lines = []
        for section, cls in _SECTIONS.items():
            obj = getattr(self, section)
            for f in fields(cls):
                if (section, f.name) in _EXCLUDED:
                    continue
                lines.append(f"{section}.{f.name}={_format(getattr(obj, f.name))}")
        for key, attr in _TOP_LEVEL.items():
            lines.append(f"{key}={_format(getattr(self, attr))}")
        return '\n'.join(lines) + '\n'


_SECTIONS = {
    'anchors': AnchorConfig,
    'postprocess': PostprocessConfig,
    'association': AssociationConfig,
    'kalman': KalmanConfig,
    'loss': LossWeights,
    'focal': FocalParams,
    'huber': HuberParams,
    'toy': ToyHeadConfig,
}
# 由 embedding.student_dim 和 seed 统一决定
_EXCLUDED = {('toy', 'student_dim'), ('toy', 'rng_seed')}
_TOP_LEVEL = {
    'embedding.teacher_dim': 'teacher_dim',
    'embedding.student_dim': 'student_dim',
    'seed': 'seed',
}


@dataclass(frozen=True)
class ScenarioConfig:
    """
    合成场景配置

    身份编号从1开始。occlusions 写作 "身份:起始帧-结束帧;...",
    窗口内该身份没有检测 (真值仍在)
    """

    identity_count: int = 10
    frame_count: int = 100
    image_width: float = 1280.0
    image_height: float = 720.0
    box_height_min: float = 60.0
    box_height_max: float = 100.0
    aspect_min: float = 0.35
    aspect_max: float = 0.5
    speed_min: float = 0.5
    speed_max: float = 3.0
    direction_change_rate: float = 0.0
    allow_overlap: bool = True
    occlusions: str = ''
    detection_noise: float = 0.0
    dropout_rate: float = 0.0
    false_positive_rate: float = 0.0
    embedding_noise: float = 0.0
    teacher_dim: int = 512
    rng_seed: int = 0

    def __post_init__(self):
        for name in ('identity_count', 'frame_count', 'image_width', 'image_height',
                     'box_height_min', 'aspect_min', 'teacher_dim'):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} 必须为正: {getattr(self, name)}")
        for name in ('direction_change_rate', 'dropout_rate', 'false_positive_rate'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"{name} 必须在[0,1]内: {getattr(self, name)}")
        if self.box_height_max < self.box_height_min or self.aspect_max < self.aspect_min:
            raise ValidationError("box_height/aspect 的最大值不能小于最小值")
        if self.speed_min < 0 or self.speed_max < self.speed_min:
            raise ValidationError(f"速度范围无效: [{self.speed_min}, {self.speed_max}]")
        if min(self.detection_noise, self.embedding_noise) < 0 or self.rng_seed < 0:
            raise ValidationError("噪声幅度和种子必须非负")
        if self.box_height_max >= self.image_height or self.box_height_max * self.aspect_max >= self.image_width:
            raise ValidationError("目标框不能大于图像")
        if not self.allow_overlap and self.image_height / self.identity_count <= self.box_height_max:
            raise ValidationError(
                f"不允许重叠时每条通道高度 {self.image_height / self.identity_count:.1f} 必须大于最大框高")
        self.occlusion_windows()

    def occlusion_windows(self):
        """
        返回:
            ((身份, 起始帧, 结束帧), ...), 闭区间
        """
        windows = []
        for item in filter(None, (s.strip() for s in self.occlusions.split(';'))):
            try:
                identity, span = item.split(':')
                start, end = span.split('-')
                window = (int(identity), int(start), int(end))
            except ValueError:
                raise ValidationError(f"遮挡窗口格式应为 身份:起始-结束, 实际 {item!r}") from None
            if not 1 <= window[0] <= self.identity_count or window[1] > window[2]:
                raise ValidationError(f"遮挡窗口无效: {item!r}")
            windows.append(window)
        return tuple(windows)

    def to_text(self):
        return ''.join(f"{f.name}={_format(getattr(self, f.name))}\n" for f in fields(self))


def _format(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, tuple):
        return ','.join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(raw, default, key, line_num):
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in ('true', '1', 'yes'):
                return True
            if lowered in ('false', '0', 'no'):
                return False
            raise ValueError(f"无法解析布尔值 {raw!r}")
        if isinstance(default, tuple):
            elem = type(default[0]) if default else float
            return tuple(elem(p.strip()) for p in raw.split(',') if p.strip())
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as e:
        raise FormatError(f"{key} 的值无效: {e}", line=line_num) from None


def _read_pairs(text):
    pairs = []
    seen = set()
    for line_num, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        key, sep, value = line.partition('=')
        key = key.strip()
        if not sep or not key:
            raise FormatError(f"应为 key=value: {line!r}", line=line_num)
        if key in seen:
            raise FormatError(f"重复的键 {key}", line=line_num)
        seen.add(key)
        pairs.append((key, value.strip(), line_num))
    return pairs


def _defaults(cls):
    return {f.name: getattr(cls(), f.name) for f in fields(cls)}


def parse_run_config(text):
    """
    解析 RunConfig 文本, 未出现的键取默认值

    错误:
        未知键、重复键、无法转换的值 → FormatError; 取值违反约束 → ValidationError
    """
    overrides = {section: {} for section in _SECTIONS}
    top = {}
    for key, raw, line_num in _read_pairs(text):
        if key in _TOP_LEVEL:
            attr = _TOP_LEVEL[key]
            top[attr] = _convert(raw, getattr(RunConfig, attr), key, line_num)
            continue
        section, _, name = key.partition('.')
        cls = _SECTIONS.get(section)
        if cls is None or name not in _defaults(cls) or (section, name) in _EXCLUDED:
            raise FormatError(f"未知的配置键 {key}", line=line_num)
        overrides[section][name] = _convert(raw, _defaults(cls)[name], key, line_num)
    sections = {section: _SECTIONS[section](**values) for section, values in overrides.items()}
    return RunConfig(**sections, **top)


def parse_scenario_config(text):
    defaults = _defaults(ScenarioConfig)
    values = {}
    for key, raw, line_num in _read_pairs(text):
        if key not in defaults:
            raise FormatError(f"未知的场景配置键 {key}", line=line_num)
        values[key] = _convert(raw, defaults[key], key, line_num)
    return ScenarioConfig(**values)


def load_run_config(path):
    with open(path, 'r', encoding='utf-8') as f:
        return parse_run_config(f.read())


def load_scenario_config(path):
    with open(path, 'r', encoding='utf-8') as f:
        return parse_scenario_config(f.read())
