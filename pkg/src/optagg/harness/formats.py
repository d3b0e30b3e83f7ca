"""On-disk artifacts: stack files, PGM heatmaps, CSV and JSON tables.

A stack file is a directory holding ``manifest.json`` and a raw payload of
``k * d`` little-endian float32 values, method-major (all of method 0,
then method 1, ...).  The manifest records dims, method names and the
CRC-32 of the payload.
"""
import csv
import io
import json
import math
import zlib
from pathlib import Path

import numpy as np

from ..core import AttributionStack, Shape
from ..errors import FormatError

MANIFEST = "manifest.json"
PAYLOAD = "data.f32"
VERSION = 1
DTYPE = "f32le"
_KEYS = {"version", "dtype", "d", "shape", "k", "methods", "payload", "crc32"}


def save_stack(stack, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    payload = np.ascontiguousarray(stack.matrix.T, dtype="<f4").tobytes()
    shape = stack.shape
    manifest = {
        "version": VERSION,
        "dtype": DTYPE,
        "d": shape.d,
        "shape": [shape.height, shape.width, shape.channels],
        "k": stack.k,
        "methods": list(stack.method_names),
        "payload": PAYLOAD,
        "crc32": f"{zlib.crc32(payload):08x}",
    }
    (directory / PAYLOAD).write_bytes(payload)
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return directory


def _key_offset(text, key):
    pos = text.find(f'"{key}"')
    return max(pos, 0)


def _read_manifest(path):
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: {exc}", 0) from exc
    try:
        text = raw.decode("utf-8")
        manifest = json.loads(text)
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not UTF-8", exc.start) from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg})", len(text[:exc.pos].encode())) from exc
    if not isinstance(manifest, dict):
        raise FormatError(f"{path}: manifest must be an object", 0)
    missing = _KEYS - manifest.keys()
    if missing:
        raise FormatError(f"{path}: missing keys {sorted(missing)}", 0)
    extra = manifest.keys() - _KEYS
    if extra:
        key = sorted(extra)[0]
        raise FormatError(f"{path}: unknown key {key!r}", _key_offset(text, key))

    def bad(key, why):
        return FormatError(f"{path}: {key} {why}", _key_offset(text, key))

    if manifest["version"] != VERSION:
        raise bad("version", f"must be {VERSION}")
    if manifest["dtype"] != DTYPE:
        raise bad("dtype", f"must be {DTYPE!r}")
    shape = manifest["shape"]
    if (not isinstance(shape, list) or len(shape) != 3
            or not all(isinstance(v, int) and v >= 1 for v in shape)):
        raise bad("shape", "must be three positive integers [H, W, C]")
    d, k = manifest["d"], manifest["k"]
    if not isinstance(d, int) or d != shape[0] * shape[1] * shape[2]:
        raise bad("d", "disagrees with shape")
    methods = manifest["methods"]
    if not isinstance(k, int) or k < 1:
        raise bad("k", "must be a positive integer")
    if not isinstance(methods, list) or len(methods) != k or not all(isinstance(m, str) for m in methods):
        raise bad("methods", f"must list {k} names")
    crc = manifest["crc32"]
    if not isinstance(crc, str) or len(crc) != 8:
        raise bad("crc32", "must be 8 hex digits")
    try:
        int(crc, 16)
    except ValueError:
        raise bad("crc32", "must be 8 hex digits") from None
    if not isinstance(manifest["payload"], str) or "/" in manifest["payload"]:
        raise bad("payload", "must be a file name")
    return manifest


def load_stack(directory):
    """Read and validate a stack file; any defect raises :class:`FormatError`."""
    directory = Path(directory)
    manifest = _read_manifest(directory / MANIFEST)
    ppath = directory / manifest["payload"]
    try:
        payload = ppath.read_bytes()
    except OSError as exc:
        raise FormatError(f"{ppath}: {exc}", 0) from exc
    k, d = manifest["k"], manifest["d"]
    expected = 4 * k * d
    if len(payload) != expected:
        raise FormatError(f"{ppath}: payload has {len(payload)} bytes, manifest implies {expected}",
                          min(len(payload), expected))
    if f"{zlib.crc32(payload):08x}" != manifest["crc32"].lower():
        raise FormatError(f"{ppath}: CRC-32 mismatch", 0)
    values = np.frombuffer(payload, dtype="<f4")
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise FormatError(f"{ppath}: non-finite value", int(4 * bad[0]))
    matrix = values.astype(np.float64).reshape(k, d).T
    return AttributionStack(Shape(*manifest["shape"]), tuple(manifest["methods"]), matrix)


def pgm_bytes(values, shape):
    """Binary PGM of one map; multi-channel maps are averaged over channels."""
    v = np.asarray(values, dtype=np.float64).reshape(shape.height, shape.width, shape.channels)
    v = v.mean(axis=2)
    pixels = np.floor(255.0 * np.clip(v, 0.0, 1.0) + 0.5).astype(np.uint8)
    header = f"P5\n{shape.width} {shape.height}\n255\n".encode("ascii")
    return header + pixels.tobytes()


def export_heatmap(attribution, path, shape=None):
    values = getattr(attribution, "values", attribution)
    shape = shape or attribution.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(pgm_bytes(values, shape))
    return path


def read_pgm(path):
    """Minimal P5 reader; returns a ``(H, W)`` array scaled to [0, 1]."""
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM", 0)
    width, height, maxval = (int(f) for f in fields[1:])
    if maxval > 255:
        raise FormatError(f"{path}: 16-bit PGM not supported", pos)
    raster = np.frombuffer(data[pos + 1:pos + 1 + width * height], dtype=np.uint8)
    if raster.size != width * height:
        raise FormatError(f"{path}: truncated raster", len(data))
    return raster.reshape(height, width) / maxval


def format_number(value):
    """Nine significant digits; ``None`` and NaN become ``NA``."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "NA"
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".9g")
    return str(value)


def csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_number(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(csv_text(header, rows).encode("utf-8"))
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if not math.isfinite(v) else v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def json_text(obj):
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(json_text(obj).encode("utf-8"))
    return path
