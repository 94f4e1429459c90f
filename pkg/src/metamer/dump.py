"""Binary statistic dumps with a text manifest.

``<prefix>.bin`` holds little-endian float32 values, entry-major then
row-major. ``<prefix>.manifest`` lists one line per entry (index, kind,
channel, shape) after ``#`` header lines; pooled dumps also record the
pooling geometry in the header.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

HEADER = ("index", "kind", "channel", "shape")


def _paths(prefix):
    prefix = Path(prefix)
    return prefix.with_name(prefix.name + ".bin"), prefix.with_name(prefix.name + ".manifest")


def write_manifest(prefix, kinds, shape, geometry: dict | None = None) -> Path:
    _, man_path = _paths(prefix)
    rows, cols = shape
    with open(man_path, "w") as fh:
        fh.write("# dtype = float32 little-endian\n")
        fh.write("# layout = entry-major, row-major\n")
        fh.write(f"# entries = {len(kinds)}\n")
        for key, val in (geometry or {}).items():
            fh.write(f"# geometry.{key} = {val}\n")
        fh.write("\t".join(HEADER) + "\n")
        for i, k in enumerate(kinds):
            fh.write(f"{i}\t{k.label}\t{k.channel_label}\t{rows}x{cols}\n")
    return man_path


def open_dump(prefix, kinds, shape, geometry: dict | None = None) -> np.memmap:
    """Writable memory map for a dump too large to hold in memory; the manifest is written now."""
    bin_path, _ = _paths(prefix)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    write_manifest(prefix, kinds, shape, geometry)
    return np.memmap(bin_path, dtype="<f4", mode="w+", shape=(len(kinds),) + tuple(shape))


def write_dump(prefix, kinds, values, geometry: dict | None = None) -> tuple[Path, Path]:
    """Write ``values`` ``(K, rows, cols)`` for ``kinds``; returns the two paths written."""
    values = np.asarray(values)
    if values.ndim != 3 or values.shape[0] != len(kinds):
        raise ValueError(f"values of shape {values.shape} do not match {len(kinds)} kinds")
    bin_path, _ = _paths(prefix)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    values.astype("<f4").tofile(bin_path)
    return bin_path, write_manifest(prefix, kinds, values.shape[1:], geometry)


def read_dump(prefix) -> tuple[list[dict], dict, np.ndarray]:
    """Entries, header fields, and the ``(K, rows, cols)`` float32 array."""
    bin_path, man_path = _paths(prefix)
    header, entries = {}, []
    with open(man_path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, val = line[1:].partition("=")
                header[key.strip()] = val.strip()
            elif line.split("\t") == list(HEADER):
                continue
            elif line:
                idx, kind, channel, shape = line.split("\t")
                r, c = (int(v) for v in shape.split("x"))
                entries.append({"index": int(idx), "kind": kind, "channel": channel, "shape": (r, c)})
    data = np.fromfile(bin_path, dtype="<f4")
    if entries:
        r, c = entries[0]["shape"]
        data = data.reshape(len(entries), r, c)
    return entries, header, data
