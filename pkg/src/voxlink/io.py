"""Reading and writing volumes and manifests.

Two on-disk formats are supported:

* NIfTI-1 single file (``.nii`` / ``.nii.gz``), datatypes uint8, int16,
  float32 and float64.  Orientation is reduced to spacing + origin.
* the raw sidecar format: ``<name>.vol.json`` (dims, spacing, origin,
  dtype) next to ``<name>.vol`` holding little-endian float32 in x-fastest
  order, plus an optional ``<name>.mask`` of uint8 0/1 bytes.

NIfTI masks are stored as a companion ``<stem>.mask.nii[.gz]`` file.
"""

from __future__ import annotations

import csv
import gzip
import io
import json
import logging
import os
import struct
import tempfile
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Union

import numpy as np

from .errors import CorruptHeader, DimensionMismatch, IoFailure, ManifestError, UnsupportedFormat
from .volume import Volume

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

NIFTI_HEADER_SIZE = 348
_NIFTI_DTYPES = {2: np.uint8, 4: np.int16, 16: np.float32, 64: np.float64}
_NIFTI_CODES = {np.dtype(v): k for k, v in _NIFTI_DTYPES.items()}


def _kind(path: Path) -> str:
    name = path.name.lower()
    if name.endswith(".nii.gz"):
        return "nifti-gz"
    if name.endswith(".nii"):
        return "nifti"
    if name.endswith(".vol.json"):
        return "raw"
    if name.endswith(".vol"):
        return "raw"
    raise UnsupportedFormat(f"unrecognised volume extension: {path.name}")


def _raw_stem(path: Path) -> Path:
    name = path.name
    if name.endswith(".json"):
        name = name[: -len(".json")]
    return path.with_name(name[: -len(".vol")])


def _nifti_stem(path: Path) -> str:
    name = path.name
    return name[:-7] if name.lower().endswith(".nii.gz") else name[:-4]


def nifti_mask_path(path: PathLike) -> Path:
    path = Path(path)
    suffix = ".nii.gz" if path.name.lower().endswith(".nii.gz") else ".nii"
    return path.with_name(_nifti_stem(path) + ".mask" + suffix)


def _atomic_write(path: Path, payload: bytes) -> None:
    """Write bytes via a temp file in the same directory, then rename over ``path``."""
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def atomic_write_text(path: PathLike, text: str) -> None:
    _atomic_write(Path(path), text.encode("utf-8"))


def _sanitize(data: np.ndarray, source: Path) -> np.ndarray:
    data = data.astype(np.float32)
    bad = ~np.isfinite(data)
    n_bad = int(bad.sum())
    if n_bad:
        warnings.warn(f"{source}: replaced {n_bad} non-finite voxels with 0", RuntimeWarning, stacklevel=3)
        logger.warning("%s: replaced %d non-finite voxels with 0", source, n_bad)
        data = np.where(bad, np.float32(0), data)
    return data


# ---------------------------------------------------------------------------
# NIfTI-1


def _read_nifti_bytes(path: Path) -> bytes:
    try:
        if path.name.lower().endswith(".gz"):
            with gzip.open(path, "rb") as fh:
                return fh.read()
        return path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _parse_nifti(raw: bytes, path: Path):
    if len(raw) < NIFTI_HEADER_SIZE:
        raise CorruptHeader(f"{path}: file shorter than a NIfTI-1 header")
    for endian in "<>":
        if struct.unpack(endian + "i", raw[:4])[0] == NIFTI_HEADER_SIZE:
            break
    else:
        raise CorruptHeader(f"{path}: sizeof_hdr is not 348")
    magic = raw[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise CorruptHeader(f"{path}: bad NIfTI magic {magic!r}")
    if magic == b"ni1\x00":
        raise UnsupportedFormat(f"{path}: two-file NIfTI (.hdr/.img) is not supported")

    dim = struct.unpack(endian + "8h", raw[40:56])
    datatype = struct.unpack(endian + "h", raw[70:72])[0]
    pixdim = struct.unpack(endian + "8f", raw[76:108])
    vox_offset = int(struct.unpack(endian + "f", raw[108:112])[0])
    slope, inter = struct.unpack(endian + "2f", raw[112:120])
    qform_code, sform_code = struct.unpack(endian + "2h", raw[252:256])
    qoffset = struct.unpack(endian + "3f", raw[268:280])
    srow = np.array(struct.unpack(endian + "12f", raw[280:328])).reshape(3, 4)

    ndim = dim[0]
    if ndim < 3 or ndim > 7 or any(d != 1 for d in dim[4 : ndim + 1]):
        raise DimensionMismatch(f"{path}: expected a 3-D volume, header dim={dim}")
    shape = tuple(int(d) for d in dim[1:4])
    if min(shape) < 1:
        raise DimensionMismatch(f"{path}: non-positive dims {shape}")
    if datatype not in _NIFTI_DTYPES:
        raise UnsupportedFormat(f"{path}: NIfTI datatype code {datatype} not supported")
    dtype = np.dtype(_NIFTI_DTYPES[datatype]).newbyteorder(endian)
    nbytes = int(np.prod(shape)) * dtype.itemsize
    if vox_offset < NIFTI_HEADER_SIZE or len(raw) < vox_offset + nbytes:
        raise DimensionMismatch(f"{path}: payload shorter than dims {shape} require")
    data = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape)), offset=vox_offset)
    data = data.reshape(shape, order="F")
    if slope not in (0.0, 1.0) or inter != 0.0:
        data = data.astype(np.float64) * (slope if slope != 0.0 else 1.0) + inter

    spacing = tuple(abs(float(p)) if p != 0 else 1.0 for p in pixdim[1:4])
    if qform_code > 0:
        origin = tuple(float(q) for q in qoffset)
    elif sform_code > 0:
        origin = tuple(float(s) for s in srow[:, 3])
    else:
        origin = (0.0, 0.0, 0.0)
    return data, spacing, origin


def _nifti_bytes(data: np.ndarray, spacing, origin) -> bytes:
    data = np.asarray(data)
    code = _NIFTI_CODES[data.dtype]
    hdr = bytearray(NIFTI_HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, NIFTI_HEADER_SIZE)
    struct.pack_into("<c", hdr, 38, b"r")  # regular
    struct.pack_into("<8h", hdr, 40, 3, *data.shape, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, code)
    struct.pack_into("<h", hdr, 72, data.dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, *spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)
    struct.pack_into("<B", hdr, 123, 2 | 8)  # xyzt_units: mm, sec
    struct.pack_into("<2h", hdr, 252, 1, 1)
    struct.pack_into("<3f", hdr, 256, 0.0, 0.0, 0.0)  # identity quaternion
    struct.pack_into("<3f", hdr, 268, *origin)
    srow = np.zeros((3, 4))
    srow[:, :3] = np.diag(spacing)
    srow[:, 3] = origin
    struct.pack_into("<12f", hdr, 280, *srow.ravel())
    hdr[344:348] = b"n+1\x00"
    body = np.ascontiguousarray(data.astype(data.dtype.newbyteorder("<")).ravel(order="F")).tobytes()
    return bytes(hdr) + b"\x00\x00\x00\x00" + body


def _load_nifti(path: Path) -> Volume:
    data, spacing, origin = _parse_nifti(_read_nifti_bytes(path), path)
    data = _sanitize(data, path)
    mask = None
    mpath = nifti_mask_path(path)
    if mpath.exists():
        mdata, _, _ = _parse_nifti(_read_nifti_bytes(mpath), mpath)
        if mdata.shape != data.shape:
            raise DimensionMismatch(f"{mpath}: mask shape {mdata.shape} != {data.shape}")
        mask = mdata != 0
    return Volume(data, spacing, origin, mask)


def _save_nifti(v: Volume, path: Path) -> None:
    def encode(arr):
        payload = _nifti_bytes(arr, v.spacing, v.origin)
        if path.name.lower().endswith(".gz"):
            buf = io.BytesIO()
            # mtime=0 keeps repeated writes byte-identical
            with gzip.GzipFile(fileobj=buf, mode="wb", mtime=0) as gz:
                gz.write(payload)
            payload = buf.getvalue()
        return payload

    _atomic_write(path, encode(v.data))
    mpath = nifti_mask_path(path)
    if v.mask is not None:
        _atomic_write(mpath, encode(v.mask.astype(np.uint8)))
    elif mpath.exists():
        mpath.unlink()


# ---------------------------------------------------------------------------
# raw sidecar format


def _load_raw(path: Path) -> Volume:
    stem = _raw_stem(path)
    meta_path = stem.with_name(stem.name + ".vol.json")
    data_path = stem.with_name(stem.name + ".vol")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        payload = data_path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {data_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CorruptHeader(f"{meta_path}: invalid JSON ({exc})") from exc
    try:
        dims = tuple(int(d) for d in meta["dims"])
        spacing = tuple(float(s) for s in meta["spacing"])
        origin = tuple(float(o) for o in meta.get("origin", (0.0, 0.0, 0.0)))
        dtype = meta.get("dtype", "f32")
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptHeader(f"{meta_path}: malformed sidecar ({exc})") from exc
    if dtype != "f32":
        raise UnsupportedFormat(f"{meta_path}: dtype {dtype!r} not supported")
    if len(dims) != 3 or min(dims) < 1:
        raise DimensionMismatch(f"{meta_path}: dims must be 3 positive integers, got {dims}")
    n = int(np.prod(dims))
    if len(payload) != 4 * n:
        raise DimensionMismatch(f"{data_path}: {len(payload)} bytes, expected {4 * n}")
    data = np.frombuffer(payload, dtype="<f4").reshape(dims, order="F")
    data = _sanitize(data, data_path)
    mask = None
    mask_path = stem.with_name(stem.name + ".mask")
    if mask_path.exists():
        mbytes = mask_path.read_bytes()
        if len(mbytes) != n:
            raise DimensionMismatch(f"{mask_path}: {len(mbytes)} bytes, expected {n}")
        mask = np.frombuffer(mbytes, dtype=np.uint8).reshape(dims, order="F") != 0
    return Volume(data, spacing, origin, mask)


def _save_raw(v: Volume, path: Path) -> None:
    stem = _raw_stem(path)
    meta = {
        "dims": list(v.dims),
        "spacing": list(v.spacing),
        "origin": list(v.origin),
        "dtype": "f32",
    }
    _atomic_write(stem.with_name(stem.name + ".vol"), v.data.astype("<f4").tobytes(order="F"))
    _atomic_write(stem.with_name(stem.name + ".vol.json"), (json.dumps(meta) + "\n").encode("utf-8"))
    mask_path = stem.with_name(stem.name + ".mask")
    if v.mask is not None:
        _atomic_write(mask_path, v.mask.astype(np.uint8).tobytes(order="F"))
    elif mask_path.exists():
        mask_path.unlink()


def load_volume(path: PathLike) -> Volume:
    """Load a NIfTI-1 or raw-format volume; non-finite voxels become 0 with a warning."""
    path = Path(path)
    kind = _kind(path)
    if kind == "raw":
        return _load_raw(path)
    if not path.exists():
        raise IoFailure(f"no such file: {path}")
    return _load_nifti(path)


def save_volume(v: Volume, path: PathLike) -> None:
    """Write ``v`` in the format implied by the extension (float32 payload)."""
    path = Path(path)
    kind = _kind(path)
    if not path.parent.is_dir():
        raise IoFailure(f"parent directory does not exist: {path.parent}")
    if kind == "raw":
        _save_raw(v, path)
    else:
        _save_nifti(v, path)


# ---------------------------------------------------------------------------
# manifests

MANIFEST_FIELDS = ("path", "subject_id", "session_id", "variant_tag")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    subject_id: str
    session_id: str = ""
    variant_tag: str = ""


class Manifest:
    """Ordered list of volumes with their ground-truth subject identity.

    Relative paths are resolved against ``root`` (the manifest's directory
    when read from disk).
    """

    def __init__(self, entries: Iterable[ManifestEntry], root: Optional[PathLike] = None):
        self.entries: List[ManifestEntry] = list(entries)
        self.root = Path(root) if root is not None else None
        seen = set()
        for e in self.entries:
            if not e.subject_id:
                raise ManifestError(f"empty subject_id for {e.path!r}")
            if e.path in seen:
                raise ManifestError(f"duplicate manifest path {e.path!r}")
            seen.add(e.path)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def subject_of(self) -> dict:
        return {e.path: e.subject_id for e in self.entries}

    def check_paths(self) -> None:
        for e in self.entries:
            p = self.resolve(e)
            if not p.exists():
                raise IoFailure(f"manifest path does not exist: {p}")

    @classmethod
    def read(cls, path: PathLike) -> "Manifest":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot read manifest {path}: {exc}") from exc
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != MANIFEST_FIELDS:
            raise ManifestError(f"{path}: header must be {','.join(MANIFEST_FIELDS)}")
        entries = [ManifestEntry(**{k: (row[k] or "") for k in MANIFEST_FIELDS}) for row in reader]
        return cls(entries, root=path.parent)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
        writer.writerow(MANIFEST_FIELDS)
        for e in self.entries:
            writer.writerow([e.path, e.subject_id, e.session_id, e.variant_tag])
        return buf.getvalue()

    def write(self, path: PathLike) -> None:
        atomic_write_text(path, self.to_csv())
