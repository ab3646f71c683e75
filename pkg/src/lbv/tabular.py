"""Delimited-text interchange shared by every pipeline stage."""

import csv
import io
import math
import os


def sniff_delimiter(header_line):
    return "\t" if "\t" in header_line else ","


def open_table(path):
    """Open a delimited file and return ``(reader, handle)``.

    The delimiter is taken from the header line: tab if present, otherwise comma.
    """
    handle = open(path, newline="", encoding="utf-8")
    first = handle.readline()
    handle.seek(0)
    reader = csv.DictReader(handle, delimiter=sniff_delimiter(first))
    return reader, handle


def read_table(path):
    reader, handle = open_table(path)
    with handle:
        rows = list(reader)
        return list(reader.fieldnames or []), rows


def format_cell(value):
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        value = value.item()
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(value)
    return str(value)


def write_table(path, columns, rows):
    """Write rows (mappings or sequences) as comma-delimited text with ``\\n`` endings."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        if isinstance(row, dict):
            row = [row.get(c) for c in columns]
        writer.writerow([format_cell(v) for v in row])
    if os.path.dirname(path):
        os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def parse_optional_float(text):
    text = (text or "").strip()
    if text == "" or text.lower() in ("nan", "na", "null", "none"):
        return None
    return float(text)
