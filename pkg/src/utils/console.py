import sys

from tqdm import tqdm

_quiet = False


def set_quiet(quiet: bool) -> None:
    global _quiet
    _quiet = bool(quiet)


def _emit(prefix: str, message: str, stream) -> None:
    # tqdm.write keeps an active progress bar intact
    tqdm.write(f"{prefix} {message}", file=stream)


def info(message: str) -> None:
    if not _quiet:
        _emit("ℹ️", message, sys.stderr)


def success(message: str) -> None:
    if not _quiet:
        _emit("✓", message, sys.stderr)


def warn(message: str) -> None:
    _emit("⚠️", message, sys.stderr)


def error(message: str) -> None:
    _emit("❌", message, sys.stderr)


def progress(iterable, total: int | None = None, desc: str = ""):
    """
    包装 tqdm 进度条，quiet 模式下不显示

    Args:
        iterable: 要遍历的对象
        total: 总数
        desc: 进度条描述

    Returns:
        可遍历对象
    """
    return tqdm(iterable, total=total, desc=desc, disable=_quiet, file=sys.stderr, leave=False)
