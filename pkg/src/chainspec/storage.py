"""Binary array files and on-disk datasets.

Array file layout (all integers little-endian)::

    b"CSPC" | u32 version | u8 dtype tag (1 = f32, 2 = f64) | u32 rank
    | u64 dim * rank | row-major payload

A dataset directory holds ``manifest.json`` plus one array file per field.
"""

import json
import os
import struct

import numpy as np

from .datasets import Dataset
from .forward import ForwardModelConfig, ProjectionGrid
from .frenet import ChainAngles

MAGIC = b"CSPC"
VERSION = 1
_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}

MANIFEST = "manifest.json"
FORMAT_NAME = "chainspec-dataset"


class FormatError(Exception):
    """Malformed or inconsistent file contents."""


def write_array(path, arr, dtype="f8"):
    arr = np.array(arr, dtype=np.dtype(dtype).newbyteorder("<"), order="C")
    code = _CODES[arr.dtype]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IBI", VERSION, code, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def read_array(path):
    with open(path, "rb") as fh:
        data = fh.read()
    head = 4 + 9
    if len(data) < head or data[:4] != MAGIC:
        raise FormatError(f"{path}: offset 0: missing CSPC magic")
    version, code, rank = struct.unpack_from("<IBI", data, 4)
    if version != VERSION:
        raise FormatError(f"{path}: offset 4: unsupported version {version}")
    if code not in _TAGS:
        raise FormatError(f"{path}: offset 8: unknown dtype tag {code}")
    if len(data) < head + 8 * rank:
        raise FormatError(f"{path}: offset {head}: truncated shape")
    shape = struct.unpack_from(f"<{rank}Q", data, head)
    start = head + 8 * rank
    dtype = _TAGS[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(data) - start != expected:
        raise FormatError(f"{path}: offset {start}: payload has {len(data) - start} bytes, "
                          f"shape {shape} needs {expected}")
    return np.frombuffer(data, dtype=dtype, offset=start).reshape(shape).astype(float)


_FIELDS = ("images", "clean", "positions", "frames", "betas", "truth", "ref_theta", "ref_psi")


def save_dataset(dirpath, dataset, extra=None):
    """Write ``dataset`` as a directory of array files plus a manifest."""
    os.makedirs(dirpath, exist_ok=True)
    arrays = {
        "images": dataset.images,
        "clean": dataset.clean,
        "positions": dataset.positions,
        "frames": dataset.frames,
        "betas": dataset.betas,
        "truth": dataset.truth,
        "ref_theta": dataset.ref_angles.theta,
        "ref_psi": dataset.ref_angles.psi,
    }
    for key, v in dataset.meta.items():
        if isinstance(v, np.ndarray):
            arrays[f"meta_{key}"] = v
    files = {}
    for name, arr in arrays.items():
        if arr is None:
            continue
        fname = f"{name}.cspc"
        write_array(os.path.join(dirpath, fname), arr)
        files[name] = {"file": fname, "shape": list(arr.shape)}
    fwd = dataset.fwd
    manifest = {
        "format": FORMAT_NAME,
        "version": VERSION,
        "n": len(dataset),
        "m": dataset.m,
        "dim": dataset.dim,
        "delta": dataset.delta,
        "j0": dataset.j0,
        "nu": fwd.nu,
        "sigma": fwd.sigma,
        "grid": fwd.grid.to_dict(),
        "psf": None if fwd.psf is None else fwd.psf.tolist(),
        "noise_variance": dataset.noise_variance,
        "test_indices": dataset.test_indices.tolist(),
        "files": files,
        "meta": _jsonable(dataset.meta),
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(dirpath, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _jsonable(meta):
    # arrays are written as separate files
    return {k: v for k, v in meta.items() if not isinstance(v, np.ndarray)}


def read_manifest(dirpath):
    path = os.path.join(dirpath, MANIFEST)
    with open(path) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if manifest.get("format") != FORMAT_NAME:
        raise FormatError(f"{path}: not a chainspec dataset manifest")
    return manifest


def load_dataset(dirpath):
    """Read a dataset directory, checking every array against the manifest."""
    manifest = read_manifest(dirpath)
    arrays = {}
    for name, entry in manifest["files"].items():
        if name not in _FIELDS and not name.startswith("meta_"):
            raise FormatError(f"{dirpath}: unknown array {name!r} in manifest")
        arr = read_array(os.path.join(dirpath, entry["file"]))
        if list(arr.shape) != list(entry["shape"]):
            raise FormatError(f"{dirpath}/{entry['file']}: shape {list(arr.shape)} does not "
                              f"match manifest {entry['shape']}")
        arrays[name] = arr
    n, m, dim = manifest["n"], manifest["m"], manifest["dim"]
    checks = {"images": n, "clean": n, "positions": n, "frames": n, "betas": n, "truth": n}
    for name, rows in checks.items():
        if name in arrays and arrays[name].shape[0] != rows:
            raise FormatError(f"{dirpath}: {name} has {arrays[name].shape[0]} rows, manifest says {n}")
    if arrays["ref_theta"].shape != (m - 2,):
        raise FormatError(f"{dirpath}: reference angles do not match m={m}")
    grid = ProjectionGrid.from_dict(manifest["grid"])
    psf = None if manifest.get("psf") is None else np.array(manifest["psf"])
    fwd = ForwardModelConfig(manifest["nu"], manifest["sigma"], grid, psf)
    meta = dict(manifest.get("meta", {}))
    for name, arr in arrays.items():
        if name.startswith("meta_"):
            meta[name[5:]] = arr
    is_test = np.zeros(n, dtype=bool)
    is_test[np.asarray(manifest["test_indices"], dtype=int)] = True
    ref = ChainAngles(arrays["ref_theta"], arrays.get("ref_psi") if dim == 3 else None)
    return Dataset(
        fwd=fwd, delta=manifest["delta"], j0=manifest["j0"], ref_angles=ref,
        images=arrays["images"], clean=arrays["clean"], positions=arrays["positions"],
        frames=arrays["frames"], betas=arrays["betas"], truth=arrays.get("truth"),
        is_test=is_test, noise_variance=manifest["noise_variance"],
        meta=meta,
    )
