"""
errors.py - 异常定义模块

集中定义项目内所有异常类型，库代码只负责抛出，
由命令行层通过 exit_code_for() 映射为进程退出码：
    0 成功 | 1 用法/配置错误 | 2 数据错误 | 3 内部不变量被破坏
"""


class IENetError(Exception):
    """项目异常基类（默认视为内部错误，退出码 3）"""

    exit_code = 3


class ConfigError(IENetError, ValueError):
    """配置文件或命令行参数错误"""

    exit_code = 1


class DataFormatError(IENetError, ValueError):
    """数据集文件缺失、格式错误或内容不一致"""

    exit_code = 2


class CheckpointError(IENetError):
    """检查点文件损坏、版本不符或网络结构不匹配"""

    exit_code = 2


class ShapeError(IENetError, ValueError):
    """张量形状不匹配"""


class SelectionError(IENetError, ValueError):
    """通道索引越界或选择集非法"""


class PlanError(IENetError, ValueError):
    """子网络方案与网络结构不匹配，或宽度列表非法"""


class InvariantError(IENetError):
    """数值或状态不变量被破坏（如出现非有限值）"""


def exit_code_for(exc: BaseException) -> int:
    """根据异常类型返回命令行退出码

    Args:
        exc: 捕获到的异常

    Returns:
        int: 1 / 2 / 3
    """
    if isinstance(exc, IENetError):
        return exc.exit_code
    if isinstance(exc, (FileNotFoundError, IsADirectoryError)):
        return 2
    return 3
