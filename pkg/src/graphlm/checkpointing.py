"""Versioned checkpoint container.

A checkpoint is a zip archive holding ``manifest.json`` plus one ``.npy``
entry per named tensor.  The npy format already stores little-endian
IEEE-754 data with a shape header, and the manifest carries the format
version, config digest, seed and the tensor directory.  Containers are
written deterministically (fixed timestamps, sorted names) so identical
contents produce identical files.
"""

import hashlib
import io
import json
import zipfile

import numpy as np

from .errors import DataError

FORMAT_VERSION = 1
_FIXED_DATE = (2000, 1, 1, 0, 0, 0)


def save_checkpoint(path, manifest, tensors):
    """Write named float64/int64 arrays plus a manifest dict."""
    manifest = dict(manifest)
    manifest["format_version"] = FORMAT_VERSION
    manifest["tensors"] = {
        name: {"shape": list(np.asarray(t).shape), "dtype": str(np.asarray(t).dtype)}
        for name, t in sorted(tensors.items())
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("manifest.json", date_time=_FIXED_DATE)
        zf.writestr(info, json.dumps(manifest, sort_keys=True, indent=1))
        for name in sorted(tensors):
            buf = io.BytesIO()
            # asarray(order="C") keeps 0-d tensors 0-d (ascontiguousarray would not)
            np.lib.format.write_array(buf, np.asarray(tensors[name], order="C"))
            info = zipfile.ZipInfo(f"tensors/{name}.npy", date_time=_FIXED_DATE)
            zf.writestr(info, buf.getvalue())


def load_checkpoint(path):
    """Read back (manifest, tensors); verifies the directory matches."""
    tensors = {}
    with zipfile.ZipFile(path, "r") as zf:
        try:
            manifest = json.loads(zf.read("manifest.json").decode("utf-8"))
        except KeyError:
            raise DataError(f"{path}: not a checkpoint (missing manifest)") from None
        if manifest.get("format_version") != FORMAT_VERSION:
            raise DataError(
                f"{path}: unsupported checkpoint version {manifest.get('format_version')!r}")
        for entry in zf.namelist():
            if entry.startswith("tensors/") and entry.endswith(".npy"):
                name = entry[len("tensors/"):-len(".npy")]
                tensors[name] = np.lib.format.read_array(io.BytesIO(zf.read(entry)))
    directory = manifest.get("tensors", {})
    if set(directory) != set(tensors):
        raise DataError(f"{path}: manifest tensor directory does not match contents")
    for name, meta in directory.items():
        if list(tensors[name].shape) != meta["shape"]:
            raise DataError(f"{path}: tensor {name!r} shape differs from manifest")
    return manifest, tensors


def tensor_digest(tensors):
    """SHA-256 over names, shapes and raw little-endian bytes."""
    h = hashlib.sha256()
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], order="C")
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        h.update(name.encode("utf-8"))
        h.update(str(arr.shape).encode("utf-8"))
        h.update(arr.tobytes())
    return h.hexdigest()


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_digest(config_dict):
    """Canonical digest of a JSON-serializable configuration mapping."""
    blob = json.dumps(config_dict, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
