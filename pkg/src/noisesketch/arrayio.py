"""Two-file array serialization plus ``key: value`` text sidecars.

An array stored at ``stem`` occupies ``stem.hdr`` (``dims``, ``dtype`` and
``order`` lines) and ``stem.raw`` (little-endian, interleaved re/im for
complex data).
"""

from pathlib import Path

import numpy as np

_DTYPES = {
    "complex128": np.dtype("<c16"),
    "float64": np.dtype("<f8"),
    "bool": np.dtype("u1"),
    "int64": np.dtype("<i8"),
}


def _dtype_name(arr):
    if np.iscomplexobj(arr):
        return "complex128"
    if arr.dtype == np.bool_:
        return "bool"
    if np.issubdtype(arr.dtype, np.integer):
        return "int64"
    return "float64"


def save_array(stem, arr):
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(arr)
    name = _dtype_name(arr)
    data = np.ascontiguousarray(arr, dtype=_DTYPES[name])
    dims = " ".join(str(d) for d in arr.shape)
    stem.with_suffix(".hdr").write_text(
        f"dims: {dims}\ndtype: {name}\norder: row-major\n"
    )
    stem.with_suffix(".raw").write_bytes(data.tobytes())
    return stem


def load_array(stem):
    stem = Path(stem)
    header = read_sidecar(stem.with_suffix(".hdr"))
    if header.get("order", "row-major") != "row-major":
        raise ValueError(f"{stem}: unsupported order {header['order']!r}")
    name = header["dtype"]
    shape = tuple(int(d) for d in header["dims"].split())
    raw = np.frombuffer(stem.with_suffix(".raw").read_bytes(), dtype=_DTYPES[name])
    arr = raw.reshape(shape).astype(_DTYPES[name].newbyteorder("="))
    return arr.astype(bool) if name == "bool" else arr


def write_sidecar(path, fields):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{key}: {_fmt(value)}" for key, value in fields.items()]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_sidecar(path):
    fields = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, _, value = line.partition(":")
        fields[key.strip()] = value.strip()
    return fields


def _fmt(value):
    if isinstance(value, (list, tuple)):
        return " ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)
