"""
异常定义模块
工具包内所有可预期的错误都从 ToolkitError 派生, 命令行据此决定退出码
"""


class ToolkitError(Exception):
    """工具包错误基类"""


class ValidationError(ToolkitError, ValueError):
    """参数或数据不满足约束"""


class FormatError(ValidationError):
    """
    文件内容格式错误

    参数:
        message: 错误描述
        line: 出错的行号 (文本格式, 从1开始)
        offset: 出错的字节偏移 (二进制格式)
    """

    def __init__(self, message, line=None, offset=None):
        if line is not None:
            message = f"第{line}行解析错误: {message}"
        elif offset is not None:
            message = f"字节偏移{offset}处解析错误: {message}"
        super().__init__(message)
        self.line = line
        self.offset = offset


class EmbedderLookupError(ValidationError):
    """嵌入器无法为某条记录给出教师嵌入"""


class KalmanFilterError(ToolkitError, ArithmeticError):
    """新息协方差不可逆, 通常意味着状态协方差已损坏"""


class TrainingDivergedError(ToolkitError, ArithmeticError):
    """训练损失出现非有限值"""

    def __init__(self, iteration, value):
        super().__init__(f"第{iteration}次迭代损失发散: {value}")
        self.iteration = iteration
        self.value = value


def exit_code(exc):
    """
    把异常映射为命令行退出码

    返回:
        1 表示校验失败, 2 表示I/O失败; 其余异常返回None由调用方继续抛出
    """
    if isinstance(exc, (ToolkitError, ValueError)):
        return 1
    if isinstance(exc, OSError):
        return 2
    return None
