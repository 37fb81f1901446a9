import json
import math
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, List, Union

import numpy as np
import pandas as pd

from src.utils import console
from src.utils.errors import OutputError

CSV_FLOAT_FORMAT = "%.15g"


def _jsonable(value):
    """numpy scalars/arrays → plain Python; non-finite floats → None."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


class RobustWriter:
    """
    健壮的结果写入器

    All files of one command are staged as temporaries and renamed into place
    only when every write succeeded, so a failing run leaves no partial output.
    """

    def __init__(self, save_dir: Union[str, Path] = "save"):
        """
        初始化写入器

        Args:
            save_dir: 保存目录，默认为"save"
        """
        self.save_dir = Path(save_dir)
        self._staged: List[tuple[Path, Path]] = []
        self._batch_depth = 0

    def _target(self, filename: str) -> Path:
        return self.save_dir / filename

    def _stage(self, filename: str) -> Path:
        try:
            self.save_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise OutputError(f"cannot create output directory {self.save_dir}: {e}")
        target = self._target(filename)
        temp = target.with_name(f".tmp-{target.name}")
        self._staged.append((temp, target))
        return temp

    def _finish(self) -> List[str]:
        """
        Move every staged file into place.

        Existing targets are first set aside as `.bak-<name>`. If any move fails, the
        committed targets are removed and the set-aside files restored before
        OutputError is raised.
        """
        backups: List[tuple[Path, Path]] = []
        committed: List[Path] = []
        try:
            for _, target in self._staged:
                if target.exists():
                    backup = target.with_name(f".bak-{target.name}")
                    os.replace(target, backup)
                    backups.append((backup, target))
            for temp, target in self._staged:
                os.replace(temp, target)
                committed.append(target)
        except OSError as e:
            self._rollback(committed, backups)
            self._discard()
            raise OutputError(f"cannot move results into place: {e}")
        for backup, _ in backups:
            try:
                backup.unlink(missing_ok=True)
            except OSError:
                pass
        self._staged = []
        return [str(target) for target in committed]

    @staticmethod
    def _rollback(committed: List[Path], backups: List[tuple[Path, Path]]) -> None:
        for target in committed:
            try:
                target.unlink(missing_ok=True)
            except OSError:
                pass
        for backup, target in backups:
            try:
                os.replace(backup, target)
            except OSError as e:
                console.warn(f"无法恢复 {target}：{e}（原文件保留在 {backup}）")

    def _discard(self) -> None:
        for temp, _ in self._staged:
            try:
                temp.unlink(missing_ok=True)
            except OSError:
                pass
        self._staged = []

    @contextmanager
    def batch(self):
        """Group several writes: all land together or none do."""
        self._batch_depth += 1
        try:
            yield self
        except BaseException:
            self._batch_depth -= 1
            if self._batch_depth == 0:
                self._discard()
            raise
        self._batch_depth -= 1
        if self._batch_depth == 0:
            for path in self._finish():
                console.success(f"已保存: {path}")

    def _commit_if_single(self) -> None:
        if self._batch_depth == 0:
            for path in self._finish():
                console.success(f"已保存: {path}")

    def write_csv(self, df: pd.DataFrame, filename: str) -> Path:
        """
        写入 CSV：15 位有效数字，LF 换行，NaN 写为空字段

        Args:
            df: 要写入的数据
            filename: 文件名

        Returns:
            Path: 最终文件路径
        """
        temp = self._stage(filename)
        try:
            df.to_csv(temp, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n", na_rep="", encoding="utf-8")
        except OSError as e:
            self._discard()
            raise OutputError(f"cannot write {filename}: {e}")
        self._commit_if_single()
        return self._target(filename)

    def write_json(self, data: dict, filename: str) -> Path:
        temp = self._stage(filename)
        try:
            with open(temp, "w", encoding="utf-8", newline="\n") as f:
                json.dump(_jsonable(data), f, ensure_ascii=False, indent=2)
                f.write("\n")
        except OSError as e:
            self._discard()
            raise OutputError(f"cannot write {filename}: {e}")
        self._commit_if_single()
        return self._target(filename)

    def write_workbook(self, data_dict: Dict[str, pd.DataFrame], filename: str) -> Path:
        """
        写入多工作表 Excel 文件，并调整列宽

        Args:
            data_dict: 字典，键为工作表名，值为 DataFrame
            filename: 文件名
        """
        temp = self._stage(filename)
        try:
            with pd.ExcelWriter(temp, engine="openpyxl") as writer:
                for sheet_name, df in data_dict.items():
                    df.to_excel(writer, sheet_name=sheet_name, index=False)

                    # 调整列宽
                    worksheet = writer.sheets[sheet_name]
                    for column in worksheet.columns:
                        max_length = max((len(str(cell.value)) for cell in column if cell.value is not None), default=0)
                        # 设置合适的列宽，最大不超过50
                        worksheet.column_dimensions[column[0].column_letter].width = min(max_length + 2, 50)
        except (OSError, ValueError) as e:
            self._discard()
            raise OutputError(f"cannot write {filename}: {e}")
        self._commit_if_single()
        return self._target(filename)
