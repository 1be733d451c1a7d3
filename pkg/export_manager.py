# export_manager.py
"""Result export (CSV, JSON lines, JSON, Excel) with detailed error messages"""

import csv
import json
import logging
import os
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence, TextIO


def _atomic_write(filename: str | os.PathLike, write: Callable[[TextIO], None]) -> None:
    """Write through `<name>.tmp` and rename, so readers never see a partial file."""
    target = Path(filename)
    tmp = target.with_name(target.name + ".tmp")
    try:
        with open(tmp, "w", newline="", encoding="utf-8") as f:
            write(f)
        os.replace(tmp, target)
    finally:
        if tmp.exists():
            tmp.unlink()


def _failure(kind: str, e: Exception) -> tuple[bool, str]:
    if isinstance(e, PermissionError):
        msg = f"No write permission for {e.filename or 'the target file'}"
    elif isinstance(e, OSError):
        msg = f"Failed to write {e.filename or 'file'}: {e.strerror or e}"
    else:
        msg = f"Export failed: {e}"
    logging.getLogger("ExportManager").error(f"{kind} export failed: {msg}")
    return False, msg


class ExportManager:
    """Manages data export to various formats"""

    @staticmethod
    def write_rows(
        filename: str | os.PathLike,
        header: Sequence[str],
        rows: Iterable[Sequence[Any]],
    ) -> tuple[bool, str]:
        """Write a header plus positional rows as CSV."""
        count = 0

        def write(f: TextIO) -> None:
            nonlocal count
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow(row)
                count += 1

        try:
            _atomic_write(filename, write)
            return True, f"Saved {count:,} rows to {filename}"
        except Exception as e:
            return _failure("CSV", e)

    @staticmethod
    def export_to_csv(
        data: Sequence[Mapping[str, Any]],
        filename: str | os.PathLike,
        fields: Sequence[str] | None = None,
    ) -> tuple[bool, str]:
        """
        Export list of dicts to CSV. Missing fields are written empty.

        Returns:
            Tuple of (success: bool, message: str)
        """
        if not data and not fields:
            return False, "Nothing to export"
        field_names = list(fields) if fields else list(data[0].keys())

        def write(f: TextIO) -> None:
            writer = csv.DictWriter(f, fieldnames=field_names, lineterminator="\n")
            writer.writeheader()
            for row in data:
                writer.writerow({k: row.get(k) for k in field_names})

        try:
            _atomic_write(filename, write)
            return True, f"Saved {len(data):,} rows to {filename}"
        except Exception as e:
            return _failure("CSV", e)

    @staticmethod
    def export_to_jsonl(
        data: Sequence[Mapping[str, Any]],
        filename: str | os.PathLike,
    ) -> tuple[bool, str]:
        """One JSON object per line, keys in insertion order."""

        def write(f: TextIO) -> None:
            for row in data:
                f.write(json.dumps(dict(row), ensure_ascii=False) + "\n")

        try:
            _atomic_write(filename, write)
            return True, f"Saved {len(data):,} records to {filename}"
        except Exception as e:
            return _failure("JSONL", e)

    @staticmethod
    def export_json(obj: Any, filename: str | os.PathLike) -> tuple[bool, str]:
        try:
            _atomic_write(
                filename,
                lambda f: f.write(json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True) + "\n"),
            )
            return True, f"Saved {filename}"
        except Exception as e:
            return _failure("JSON", e)

    @staticmethod
    def export_lines(lines: Sequence[str], filename: str | os.PathLike) -> tuple[bool, str]:
        try:
            _atomic_write(filename, lambda f: f.writelines(line + "\n" for line in lines))
            return True, f"Saved {len(lines):,} lines to {filename}"
        except Exception as e:
            return _failure("Text", e)

    @staticmethod
    def export_to_excel(
        data: Sequence[Mapping[str, Any]],
        filename: str | os.PathLike,
        fields: Sequence[str] | None = None,
        title: str = "summary",
    ) -> tuple[bool, str]:
        """
        Export list of dicts to Excel.

        Returns:
            Tuple of (success: bool, message: str)
        """
        try:
            from openpyxl import Workbook
            from openpyxl.utils import get_column_letter
        except ImportError:
            msg = "openpyxl is not installed; run 'pip install openpyxl'"
            logging.getLogger("ExportManager").error(msg)
            return False, msg

        if not data:
            return False, "Nothing to export"

        try:
            wb = Workbook()
            ws = wb.active
            if ws is None:
                return False, "Export failed: could not create a worksheet"
            ws.title = title

            field_names = list(fields) if fields else list(data[0].keys())
            ws.append(field_names)
            for row in data:
                ws.append([row.get(k) for k in field_names])

            # Auto-adjust column widths (approximate)
            for i, field in enumerate(field_names, 1):
                max_length = len(str(field))
                for row in data[:50]:
                    cell_value = str(row.get(field, ''))
                    if len(cell_value) > max_length:
                        max_length = min(len(cell_value), 50)
                ws.column_dimensions[get_column_letter(i)].width = max_length + 2

            target = Path(filename)
            tmp = target.with_name(target.name + ".tmp")
            wb.save(tmp)
            os.replace(tmp, target)
            return True, f"Saved {len(data):,} rows to {filename}"
        except Exception as e:
            return _failure("Excel", e)
