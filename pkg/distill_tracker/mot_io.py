"""
文件格式模块
MOTChallenge 10字段文本, 蒸馏数据集的文本格式和紧凑二进制格式

二进制格式 (小端):
    magic 'DTAB' | uint32 version | uint32 dim | uint32 count | uint32 float_width
    | uint32 meta_len | meta_len 字节 UTF-8 JSON (embedder, crop, seed)
    | count 个记录头: uint16 id_len, image_id, 4×float64 框, int32 class_id,
      int32 identity, float64 score
    | 嵌入块: count·dim 个 float32, 按记录依次排列
"""

import io
import json
import math
import os
import struct
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from distill import AugmentedRecord, CropContract, DetectionRecord, DistillMetadata, TeacherEmbedding
from errors import FormatError, ValidationError
from geometry import Box

BINARY_MAGIC = b'DTAB'
BINARY_VERSION = 1
_HEADER = struct.Struct('<4sIIIII')
_RECORD_TAIL = struct.Struct('<4diid')
_ID_LEN = struct.Struct('<H')


@contextmanager
def atomic_write(path, mode='w'):
    """先写入同目录临时文件, 成功后再替换目标文件"""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix='.tmp-')
    try:
        kwargs = {'encoding': 'utf-8', 'newline': '\n'} if 'b' not in mode else {}
        with os.fdopen(fd, mode, **kwargs) as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------- MOT 文本

@dataclass(frozen=True)
class MotRow:
    """MOTChallenge 一行: frame,id,x,y,w,h,conf,x3,y3,z3"""

    frame: int
    id: int
    x: float
    y: float
    w: float
    h: float
    conf: float = -1.0
    x3: float = -1.0
    y3: float = -1.0
    z3: float = -1.0

    def __post_init__(self):
        if self.frame < 1:
            raise ValidationError(f"帧号必须从1开始: {self.frame}")

    def to_box(self):
        return Box(self.x, self.y, self.x + self.w, self.y + self.h)

    @classmethod
    def from_box(cls, frame, track_id, box, conf=-1.0):
        return cls(frame, track_id, box.x_min, box.y_min, box.width, box.height, conf)


def format_number(value):
    """最短十进制表示; 整数值不带小数部分"""
    value = float(value)
    if value.is_integer():
        return str(int(value))
    return repr(value)


def parse_mot(stream):
    """
    解析MOT文本

    参数:
        stream: 文本流或字符串

    返回:
        {帧号: [MotRow]}, 帧号升序, 帧内保持输入顺序
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    frames = {}
    for line_num, line in enumerate(stream, 1):
        line = line.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(',')]
        if not 6 <= len(parts) <= 10:
            raise FormatError(f"字段数应为6~10, 实际为{len(parts)}", line=line_num)
        try:
            frame, track_id = int(float(parts[0])), int(float(parts[1]))
            values = [float(p) for p in parts[2:]]
        except ValueError as e:
            raise FormatError(str(e), line=line_num) from None
        if not all(math.isfinite(v) for v in values):
            raise FormatError("存在非有限数值", line=line_num)
        values += [-1.0] * (8 - len(values))
        try:
            row = MotRow(frame, track_id, *values)
        except ValidationError as e:
            raise FormatError(str(e), line=line_num) from None
        frames.setdefault(frame, []).append(row)
    return dict(sorted(frames.items()))


def write_mot(frames, stream=None):
    """
    写出MOT文本, 帧号升序

    参数:
        frames: {帧号: [MotRow]}
        stream: 可选的输出流; 为None时返回字符串
    """
    lines = []
    for frame in sorted(frames):
        for row in frames[frame]:
            fields_ = [str(int(row.frame)), str(int(row.id))]
            fields_ += [format_number(v) for v in (row.x, row.y, row.w, row.h, row.conf,
                                                   row.x3, row.y3, row.z3)]
            lines.append(','.join(fields_))
    text = ''.join(line + '\n' for line in lines)
    if stream is None:
        return text
    stream.write(text)
    return None


def read_mot_file(path):
    with open(path, 'r', encoding='utf-8') as f:
        return parse_mot(f)


def write_mot_file(frames, path):
    """原子地写出MOT格式文件"""
    with atomic_write(path) as f:
        write_mot(frames, f)


def results_to_rows(results):
    """跟踪输出 {帧号: [(track_id, Box)]} → {帧号: [MotRow]}"""
    return {frame: [MotRow.from_box(frame, tid, box, 1.0) for tid, box in entries]
            for frame, entries in results.items() if entries}


def mot_to_records(frames):
    """MOT行 → DetectionRecord, image_id 为帧号; 检测置信度截断到[0,1]"""
    records = []
    for frame, rows in frames.items():
        for row in rows:
            score = min(max(row.conf, 0.0), 1.0) if row.id < 0 else 1.0
            records.append(DetectionRecord(str(frame), row.to_box(), 0, row.id, score))
    return records


# ---------------------------------------------------------------- 蒸馏数据集

def _float32_text(values):
    return ','.join(repr(v) for v in np.asarray(values, dtype=np.float32).tolist())


def write_augmented_text(records, metadata, stream):
    """
    文本格式: '#key=value' 头部, 之后每行一条记录
    image_id,x_min,y_min,x_max,y_max,class_id,identity,score,v_1..v_D
    """
    records = list(records)
    stream.write('#format=augmented-text\n')
    stream.write(f'#dim={metadata.dim}\n')
    stream.write(f'#embedder={metadata.embedder}\n')
    stream.write(f'#crop={metadata.crop}\n')
    stream.write(f'#seed={"" if metadata.seed is None else metadata.seed}\n')
    stream.write(f'#float_width={metadata.float_width}\n')
    stream.write(f'#count={len(records)}\n')
    for r in records:
        if r.teacher.dim != metadata.dim:
            raise ValidationError(f"记录 {r.image_id} 的嵌入维度 {r.teacher.dim} 与头部 {metadata.dim} 不一致")
        box = r.box
        head = [r.image_id] + [repr(float(c)) for c in (box.x_min, box.y_min, box.x_max, box.y_max)]
        head += [str(r.class_id), str(r.identity), repr(float(r.score))]
        stream.write(','.join(head) + ',' + _float32_text(r.teacher.values) + '\n')


def _teacher_from_float32(values):
    """float32 存储的向量范数误差约1e-7, 仍在归一化容差内"""
    return TeacherEmbedding(np.asarray(values, dtype=np.float32).astype(float))


def read_augmented_text(stream):
    """
    返回:
        (AugmentedRecord 列表, DistillMetadata)
    """
    header = {}
    records = []
    dim = None
    for line_num, line in enumerate(stream, 1):
        line = line.rstrip('\n')
        if not line.strip():
            continue
        if line.startswith('#'):
            key, sep, value = line[1:].partition('=')
            if not sep:
                raise FormatError(f"头部应为 #key=value: {line!r}", line=line_num)
            header[key.strip()] = value.strip()
            continue
        if dim is None:
            if header.get('format') != 'augmented-text' or 'dim' not in header:
                raise FormatError("缺少蒸馏数据集头部", line=line_num)
            dim = int(header['dim'])
        parts = line.split(',')
        if len(parts) != 8 + dim:
            raise FormatError(f"字段数应为{8 + dim}, 实际为{len(parts)} (D_t 与头部不一致)", line=line_num)
        try:
            box = Box(*(float(p) for p in parts[1:5]))
            teacher = _teacher_from_float32([float(p) for p in parts[8:]])
            records.append(AugmentedRecord(parts[0], box, teacher, int(parts[5]), int(parts[6]),
                                           float(parts[7])))
        except ValueError as e:
            raise FormatError(str(e), line=line_num) from None

    if 'dim' not in header:
        raise FormatError("缺少蒸馏数据集头部", line=1)
    if 'count' in header and int(header['count']) != len(records):
        raise FormatError(f"头部记录数 {header['count']} 与实际 {len(records)} 不一致")
    seed = header.get('seed', '')
    metadata = DistillMetadata(
        dim=int(header['dim']), embedder=header.get('embedder', ''),
        crop=CropContract.parse(header.get('crop', '256x128')),
        seed=int(seed) if seed else None,
        float_width=int(header.get('float_width', 4)),
    )
    return records, metadata


def write_augmented_binary(records, metadata, stream):
    records = list(records)
    if metadata.float_width != 4:
        raise ValidationError(f"二进制格式只支持4字节浮点: {metadata.float_width}")
    meta = json.dumps({'embedder': metadata.embedder, 'crop': str(metadata.crop),
                       'seed': metadata.seed}, sort_keys=True).encode('utf-8')
    stream.write(_HEADER.pack(BINARY_MAGIC, BINARY_VERSION, metadata.dim, len(records),
                              metadata.float_width, len(meta)))
    stream.write(meta)
    block = np.zeros((len(records), metadata.dim), dtype='<f4')
    for k, r in enumerate(records):
        if r.teacher.dim != metadata.dim:
            raise ValidationError(f"记录 {r.image_id} 的嵌入维度 {r.teacher.dim} 与头部 {metadata.dim} 不一致")
        image_id = r.image_id.encode('utf-8')
        stream.write(_ID_LEN.pack(len(image_id)))
        stream.write(image_id)
        b = r.box
        stream.write(_RECORD_TAIL.pack(b.x_min, b.y_min, b.x_max, b.y_max, r.class_id,
                                       r.identity, r.score))
        block[k] = r.teacher.values
    stream.write(block.tobytes())


def _take(data, offset, size):
    if offset + size > len(data):
        raise FormatError(f"文件被截断, 需要{size}字节, 剩余{len(data) - offset}字节", offset=offset)
    return data[offset:offset + size], offset + size


@dataclass
class BinaryLayout:
    """二进制文件中嵌入块的位置"""

    embedding_offset: int
    embedding_nbytes: int


def read_augmented_binary(data, layout=False):
    """
    参数:
        data: 文件的全部字节
        layout: 为真时额外返回 BinaryLayout

    返回:
        (AugmentedRecord 列表, DistillMetadata[, BinaryLayout])
    """
    chunk, offset = _take(data, 0, _HEADER.size)
    magic, version, dim, count, width, meta_len = _HEADER.unpack(chunk)
    if magic != BINARY_MAGIC or version != BINARY_VERSION:
        raise FormatError(f"未知的文件标识 {magic!r} 或版本 {version}", offset=0)
    if width != 4:
        raise FormatError(f"不支持的浮点宽度 {width}", offset=16)
    chunk, offset = _take(data, offset, meta_len)
    try:
        meta = json.loads(chunk.decode('utf-8'))
    except ValueError as e:
        raise FormatError(f"元数据不是合法JSON: {e}", offset=offset - meta_len) from None

    heads = []
    for _ in range(count):
        chunk, offset = _take(data, offset, _ID_LEN.size)
        (id_len,) = _ID_LEN.unpack(chunk)
        id_start = offset
        chunk, offset = _take(data, offset, id_len)
        try:
            image_id = chunk.decode('utf-8')
        except UnicodeDecodeError as e:
            raise FormatError(f"图像编号不是合法的UTF-8: {e.reason}", offset=id_start + e.start) from None
        start = offset
        chunk, offset = _take(data, offset, _RECORD_TAIL.size)
        x1, y1, x2, y2, class_id, identity, score = _RECORD_TAIL.unpack(chunk)
        try:
            heads.append((image_id, Box(x1, y1, x2, y2), class_id, identity, score))
        except ValidationError as e:
            raise FormatError(str(e), offset=start) from None

    nbytes = count * dim * width
    block_offset = offset
    chunk, offset = _take(data, offset, nbytes)
    if offset != len(data):
        raise FormatError(f"文件末尾有{len(data) - offset}字节多余数据", offset=offset)
    block = np.frombuffer(chunk, dtype='<f4').reshape(count, dim)

    records = [AugmentedRecord(image_id, box, _teacher_from_float32(block[k]), class_id, identity, score)
               for k, (image_id, box, class_id, identity, score) in enumerate(heads)]
    metadata = DistillMetadata(dim=dim, embedder=meta.get('embedder', ''),
                               crop=CropContract.parse(meta.get('crop', '256x128')),
                               seed=meta.get('seed'), float_width=width)
    if layout:
        return records, metadata, BinaryLayout(block_offset, nbytes)
    return records, metadata


def read_augmented(path):
    """按文件开头的标识自动识别文本或二进制格式"""
    with open(path, 'rb') as f:
        data = f.read()
    if data.startswith(BINARY_MAGIC):
        return read_augmented_binary(data)
    return read_augmented_text(io.StringIO(data.decode('utf-8')))


def write_augmented(records, metadata, path, binary=None):
    """binary 为None时按扩展名判断 (.bin 为二进制)"""
    if binary is None:
        binary = path.endswith('.bin')
    if binary:
        with atomic_write(path, 'wb') as f:
            write_augmented_binary(records, metadata, f)
    else:
        with atomic_write(path) as f:
            write_augmented_text(records, metadata, f)
