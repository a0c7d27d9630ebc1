"""Reader and writer for single-file NIfTI-1 volumes (``.nii`` / ``.nii.gz``).

Only the header fields needed to recover a scaled 4D voxel grid and its
affine are decoded; extension blocks are skipped via ``vox_offset``.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import BadHeaderSize, BadMagic, NiftiError, TruncatedData, UnsupportedDatatype

HEADER_SIZE = 348
DEFAULT_VOX_OFFSET = 352

# code -> (numpy type char, bitpix)
DATATYPES = {
    4: ("i2", 16),
    8: ("i4", 32),
    16: ("f4", 32),
    64: ("f8", 64),
}
DTYPE_TO_CODE = {"int16": 4, "int32": 8, "float32": 16, "float64": 64}

MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"

# Field layout of the 348-byte header, in file order.
_LAYOUT = [
    ("sizeof_hdr", "i"),
    ("data_type", "10s"),
    ("db_name", "18s"),
    ("extents", "i"),
    ("session_error", "h"),
    ("regular", "c"),
    ("dim_info", "B"),
    ("dim", "8h"),
    ("intent_p", "3f"),
    ("intent_code", "h"),
    ("datatype", "h"),
    ("bitpix", "h"),
    ("slice_start", "h"),
    ("pixdim", "8f"),
    ("vox_offset", "f"),
    ("scl_slope", "f"),
    ("scl_inter", "f"),
    ("slice_end", "h"),
    ("slice_code", "B"),
    ("xyzt_units", "B"),
    ("cal_max", "f"),
    ("cal_min", "f"),
    ("slice_duration", "f"),
    ("toffset", "f"),
    ("glmax", "i"),
    ("glmin", "i"),
    ("descrip", "80s"),
    ("aux_file", "24s"),
    ("qform_code", "h"),
    ("sform_code", "h"),
    ("quatern", "3f"),
    ("qoffset", "3f"),
    ("srow_x", "4f"),
    ("srow_y", "4f"),
    ("srow_z", "4f"),
    ("intent_name", "16s"),
    ("magic", "4s"),
]
_FORMAT = "".join(f for _, f in _LAYOUT)
assert struct.calcsize("<" + _FORMAT) == HEADER_SIZE


class NonFiniteData(TruncatedData):
    """Raised when scaled voxel data contains NaN or infinity."""


@dataclass(frozen=True)
class NiftiHeader:
    dim: tuple
    datatype: int
    bitpix: int
    pixdim: tuple = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    vox_offset: float = float(DEFAULT_VOX_OFFSET)
    scl_slope: float = 1.0
    scl_inter: float = 0.0
    qform_code: int = 0
    sform_code: int = 0
    quatern: tuple = (0.0, 0.0, 0.0)
    qoffset: tuple = (0.0, 0.0, 0.0)
    srow_x: tuple = (1.0, 0.0, 0.0, 0.0)
    srow_y: tuple = (0.0, 1.0, 0.0, 0.0)
    srow_z: tuple = (0.0, 0.0, 1.0, 0.0)
    xyzt_units: int = 0
    descrip: bytes = b""
    magic: bytes = MAGIC_SINGLE
    byteorder: str = "<"
    sizeof_hdr: int = HEADER_SIZE

    @property
    def shape(self):
        rank = self.dim[0]
        return tuple(int(d) for d in self.dim[1 : rank + 1])

    @property
    def dtype(self):
        return np.dtype(self.byteorder + DATATYPES[self.datatype][0])

    @property
    def data_nbytes(self):
        return int(np.prod(self.shape, dtype=np.int64)) * self.bitpix // 8

    def affine(self):
        """4x4 voxel-to-world matrix (sform if set, else qform, else pixdim)."""
        if self.sform_code > 0:
            aff = np.eye(4)
            aff[0], aff[1], aff[2] = self.srow_x, self.srow_y, self.srow_z
            return aff
        if self.qform_code > 0:
            return _quaternion_affine(self.quatern, self.qoffset, self.pixdim)
        return np.diag([self.pixdim[1] or 1.0, self.pixdim[2] or 1.0, self.pixdim[3] or 1.0, 1.0])

    def to_dict(self):
        out = asdict(self)
        out["descrip"] = self.descrip.rstrip(b"\x00").decode("latin-1")
        out["magic"] = self.magic.rstrip(b"\x00").decode("latin-1")
        out["shape"] = list(self.shape)
        out["dtype"] = DATATYPES[self.datatype][0] if self.datatype in DATATYPES else None
        out["affine"] = self.affine().tolist()
        return out

    def to_bytes(self):
        values = {
            "sizeof_hdr": self.sizeof_hdr,
            "data_type": b"",
            "db_name": b"",
            "extents": 0,
            "session_error": 0,
            "regular": b"r",
            "dim_info": 0,
            "dim": self.dim,
            "intent_p": (0.0, 0.0, 0.0),
            "intent_code": 0,
            "datatype": self.datatype,
            "bitpix": self.bitpix,
            "slice_start": 0,
            "pixdim": self.pixdim,
            "vox_offset": self.vox_offset,
            "scl_slope": self.scl_slope,
            "scl_inter": self.scl_inter,
            "slice_end": 0,
            "slice_code": 0,
            "xyzt_units": self.xyzt_units,
            "cal_max": 0.0,
            "cal_min": 0.0,
            "slice_duration": 0.0,
            "toffset": 0.0,
            "glmax": 0,
            "glmin": 0,
            "descrip": self.descrip,
            "aux_file": b"",
            "qform_code": self.qform_code,
            "sform_code": self.sform_code,
            "quatern": self.quatern,
            "qoffset": self.qoffset,
            "srow_x": self.srow_x,
            "srow_y": self.srow_y,
            "srow_z": self.srow_z,
            "intent_name": b"",
            "magic": self.magic,
        }
        flat = []
        for name, fmt in _LAYOUT:
            v = values[name]
            if fmt[0].isdigit() and not fmt.endswith("s"):
                flat.extend(v)
            else:
                flat.append(v)
        return struct.pack(self.byteorder + _FORMAT, *flat)


@dataclass(frozen=True, eq=False)
class Volume4D:
    header: NiftiHeader
    data: np.ndarray = field(repr=False)
    subject_id: str = ""

    def __post_init__(self):
        if self.data.ndim != 4:
            raise NiftiError(f"expected 4D data, got shape {self.data.shape}")
        self.data.setflags(write=False)

    @property
    def shape(self):
        return self.data.shape

    @property
    def affine(self):
        return self.header.affine()

    @property
    def tr_seconds(self):
        return float(self.header.pixdim[4])

    @classmethod
    def from_array(cls, data, subject_id="", dtype="float32", affine=None, tr=2.0,
                   scl_slope=1.0, scl_inter=0.0, byteorder="<"):
        """Build a volume (and a matching header) from an in-memory array."""
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 3:
            data = data[..., None]
        code = DTYPE_TO_CODE[np.dtype(dtype).name]
        affine = np.eye(4) if affine is None else np.asarray(affine, dtype=float)
        zooms = np.sqrt((affine[:3, :3] ** 2).sum(axis=0))
        f32 = lambda seq: tuple(float(np.float32(v)) for v in seq)  # noqa: E731
        header = NiftiHeader(
            dim=(4, *data.shape, 1, 1, 1),
            datatype=code,
            bitpix=DATATYPES[code][1],
            pixdim=f32((1.0, *zooms, tr, 1.0, 1.0, 1.0)),
            scl_slope=float(np.float32(scl_slope)),
            scl_inter=float(np.float32(scl_inter)),
            sform_code=1,
            srow_x=f32(affine[0]),
            srow_y=f32(affine[1]),
            srow_z=f32(affine[2]),
            xyzt_units=2 | 8,  # mm, seconds
            byteorder=byteorder,
        )
        return cls(header, data, subject_id)


def _quaternion_affine(quatern, qoffset, pixdim):
    b, c, d = map(float, quatern)
    a = max(0.0, 1.0 - (b * b + c * c + d * d))
    a = np.sqrt(a)
    rot = np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ])
    qfac = -1.0 if pixdim[0] < 0 else 1.0
    zooms = np.array([pixdim[1], pixdim[2], pixdim[3] * qfac])
    aff = np.eye(4)
    aff[:3, :3] = rot * zooms
    aff[:3, 3] = qoffset
    return aff


def _detect_byteorder(raw):
    if struct.unpack("<i", raw[:4])[0] == HEADER_SIZE:
        return "<"
    if struct.unpack(">i", raw[:4])[0] == HEADER_SIZE:
        return ">"
    raise BadHeaderSize(f"sizeof_hdr is neither 348 nor byte-swapped 348 ({raw[:4]!r})")


def parse_header(raw):
    """Decode a NIfTI-1 header from the first 348 bytes of ``raw``."""
    raw = bytes(raw)
    if len(raw) < HEADER_SIZE:
        raise TruncatedData(f"need {HEADER_SIZE} header bytes, got {len(raw)}")
    order = _detect_byteorder(raw)
    vals = struct.unpack(order + _FORMAT, raw[:HEADER_SIZE])
    fields = {}
    pos = 0
    for name, fmt in _LAYOUT:
        if fmt[0].isdigit() and not fmt.endswith("s"):
            n = int(fmt[:-1])
            fields[name] = tuple(vals[pos : pos + n])
            pos += n
        else:
            fields[name] = vals[pos]
            pos += 1

    magic = fields["magic"]
    if magic not in (MAGIC_SINGLE, MAGIC_PAIR):
        raise BadMagic(f"unrecognised magic {magic!r}")
    dim = tuple(int(d) for d in fields["dim"])
    if not 1 <= dim[0] <= 7:
        raise NiftiError(f"dim[0] must be in 1..7, got {dim[0]}")
    datatype = int(fields["datatype"])
    if datatype not in DATATYPES:
        raise UnsupportedDatatype(f"datatype code {datatype} not supported")
    bitpix = int(fields["bitpix"])
    if bitpix != DATATYPES[datatype][1]:
        raise UnsupportedDatatype(f"bitpix {bitpix} inconsistent with datatype {datatype}")

    return NiftiHeader(
        dim=dim,
        datatype=datatype,
        bitpix=bitpix,
        pixdim=tuple(float(p) for p in fields["pixdim"]),
        vox_offset=float(fields["vox_offset"]),
        scl_slope=float(fields["scl_slope"]),
        scl_inter=float(fields["scl_inter"]),
        qform_code=int(fields["qform_code"]),
        sform_code=int(fields["sform_code"]),
        quatern=tuple(float(q) for q in fields["quatern"]),
        qoffset=tuple(float(q) for q in fields["qoffset"]),
        srow_x=tuple(float(v) for v in fields["srow_x"]),
        srow_y=tuple(float(v) for v in fields["srow_y"]),
        srow_z=tuple(float(v) for v in fields["srow_z"]),
        xyzt_units=int(fields["xyzt_units"]),
        descrip=fields["descrip"].rstrip(b"\x00"),
        magic=magic,
        byteorder=order,
        sizeof_hdr=HEADER_SIZE,
    )


def _scaling(header):
    slope = header.scl_slope
    # slope 0 (or non-finite) means "no scaling"
    if slope == 0 or not np.isfinite(slope):
        return 1.0, 0.0
    inter = header.scl_inter if np.isfinite(header.scl_inter) else 0.0
    return slope, inter


def decode_volume(raw, subject_id=""):
    """Build a :class:`Volume4D` from the bytes of a whole (uncompressed) file."""
    header = parse_header(raw)
    if header.magic != MAGIC_SINGLE:
        raise NiftiError("paired .hdr/.img files are not supported")
    if header.dim[0] > 4 and any(d != 1 for d in header.dim[5 : header.dim[0] + 1]):
        raise NiftiError(f"only up to 4 dimensions supported, dim={header.dim}")
    offset = int(header.vox_offset)
    if offset < DEFAULT_VOX_OFFSET:
        raise NiftiError(f"vox_offset {header.vox_offset} < 352 for single-file NIfTI")
    shape = header.shape[:4]
    nbytes = header.data_nbytes
    if len(raw) < offset + nbytes:
        raise TruncatedData(
            f"header promises {nbytes} data bytes at offset {offset}, file has {len(raw) - offset}"
        )
    values = np.frombuffer(raw, dtype=header.dtype, count=int(np.prod(shape)), offset=offset)
    # NIfTI stores voxels in Fortran (x fastest) order
    values = values.reshape(shape, order="F").astype(np.float64)
    slope, inter = _scaling(header)
    if slope != 1.0 or inter != 0.0:
        values = values * slope + inter
    if not np.all(np.isfinite(values)):
        raise NonFiniteData("volume contains NaN or infinite voxels")
    while values.ndim < 4:
        values = values[..., None]
    return Volume4D(header, values, subject_id)


def read_bytes(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _subject_id_from_path(path):
    name = Path(path).name
    for suffix in (".nii.gz", ".nii"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return name


def load_volume(path, subject_id=None):
    """Load a (possibly gzip-compressed) single-file NIfTI-1 volume."""
    raw = read_bytes(path)
    return decode_volume(raw, _subject_id_from_path(path) if subject_id is None else subject_id)


def encode_volume(vol):
    """Serialise a volume to uncompressed NIfTI-1 bytes."""
    header = vol.header
    data = vol.data
    if data.shape[3] == 0 or 0 in data.shape:
        raise TruncatedData(f"refusing to write a volume with an empty axis: {data.shape}")
    if max(data.shape) > np.iinfo(np.int16).max:
        raise NiftiError(f"shape {data.shape} exceeds int16 extents")
    header = replace(
        header,
        dim=(4, *data.shape, 1, 1, 1),
        vox_offset=float(DEFAULT_VOX_OFFSET),
        magic=MAGIC_SINGLE,
        sizeof_hdr=HEADER_SIZE,
    )
    slope, inter = _scaling(header)
    raw = data if (slope == 1.0 and inter == 0.0) else (data - inter) / slope
    if header.dtype.kind == "i":
        info = np.iinfo(header.dtype)
        raw = np.rint(raw)
        if raw.min() < info.min or raw.max() > info.max:
            raise NiftiError(f"values out of range for {header.dtype}")
    payload = np.asarray(raw, dtype=header.dtype).tobytes(order="F")
    pad = b"\x00" * (DEFAULT_VOX_OFFSET - HEADER_SIZE)
    return header.to_bytes() + pad + payload


def write_volume(vol, path):
    """Write ``vol`` to ``path``; a ``.gz`` suffix selects gzip compression."""
    blob = encode_volume(vol)
    path = Path(path)
    if path.suffix == ".gz":
        # mtime=0 keeps compressed output byte-identical across runs
        blob = gzip.compress(blob, compresslevel=6, mtime=0)
    path.write_bytes(blob)
