"""Single-file NIfTI-1 reading and writing for volumes used by the toolkit.

Only the uncompressed .nii layout is handled; values are converted to
float64 on read (uint8 is reserved for masks). The codec is bit-exact:
``read_nifti(write_nifti(header, data))`` returns the stored array
unchanged for every supported datatype.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .scheme import GradientScheme

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"

# NIfTI datatype code and bits per voxel.
_DTYPES = {
    "uint8": (2, 8, np.uint8),
    "float32": (16, 32, np.float32),
    "float64": (64, 64, np.float64),
}
_CODE_TO_NAME = {code: name for name, (code, _, _) in _DTYPES.items()}

# struct format for the fixed 348-byte header (little-endian shown; the
# byte-order character is prepended when packing/unpacking).
_HEADER_FMT = (
    "i"     # sizeof_hdr
    "10s"   # data_type (unused)
    "18s"   # db_name (unused)
    "i"     # extents
    "h"     # session_error
    "c"     # regular
    "B"     # dim_info
    "8h"    # dim
    "3f"    # intent_p1..p3
    "h"     # intent_code
    "h"     # datatype
    "h"     # bitpix
    "h"     # slice_start
    "8f"    # pixdim
    "f"     # vox_offset
    "f"     # scl_slope
    "f"     # scl_inter
    "h"     # slice_end
    "B"     # slice_code
    "B"     # xyzt_units
    "f"     # cal_max
    "f"     # cal_min
    "f"     # slice_duration
    "f"     # toffset
    "i"     # glmax
    "i"     # glmin
    "80s"   # descrip
    "24s"   # aux_file
    "h"     # qform_code
    "h"     # sform_code
    "3f"    # quatern_b, c, d
    "3f"    # qoffset_x, y, z
    "4f"    # srow_x
    "4f"    # srow_y
    "4f"    # srow_z
    "16s"   # intent_name
    "4s"    # magic
)
assert struct.calcsize("<" + _HEADER_FMT) == HEADER_SIZE


@dataclass
class VolumeHeader:
    """Geometry and storage metadata for a 3-D or 4-D volume."""

    dims: tuple
    voxel_size: tuple = (1.0, 1.0, 1.0)
    datatype: str = "float64"
    affine: np.ndarray = None

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if not 1 <= len(self.dims) <= 4 or any(d < 1 for d in self.dims):
            raise ValueError(f"bad dims {self.dims}")
        self.voxel_size = tuple(float(v) for v in self.voxel_size)[:3]
        if any(v <= 0 for v in self.voxel_size):
            raise ValueError(f"voxel size must be positive: {self.voxel_size}")
        if self.datatype not in _DTYPES:
            raise ValueError(f"unsupported datatype {self.datatype!r}")
        if self.affine is None:
            self.affine = np.diag(list(self.voxel_size) + [1.0])
        self.affine = np.asarray(self.affine, dtype=float)
        if self.affine.shape != (4, 4):
            raise ValueError("affine must be 4x4")

    def with_(self, **kw):
        """Copy of the header with selected fields replaced."""
        new = VolumeHeader(kw.pop("dims", self.dims),
                           kw.pop("voxel_size", self.voxel_size),
                           kw.pop("datatype", self.datatype),
                           kw.pop("affine", self.affine.copy()))
        if kw:
            raise TypeError(f"unknown fields {sorted(kw)}")
        return new


@dataclass
class ScalarVolume:
    """A 3-D map (mask, microstructure measure, b0 reference...)."""

    header: VolumeHeader
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 3:
            raise ValueError("scalar volume data must be 3-D")
        if tuple(self.data.shape) != self.header.dims[:3] or len(self.header.dims) > 3:
            raise ValueError(
                f"header dims {self.header.dims} do not match data shape "
                f"{self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("non-finite values in volume")


@dataclass
class DwiVolume:
    """A 4-D diffusion-weighted series with its gradient scheme."""

    header: VolumeHeader
    data: np.ndarray
    scheme: GradientScheme

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 4:
            raise ValueError("dwi data must be 4-D")
        if tuple(self.data.shape) != tuple(self.header.dims):
            raise ValueError(
                f"header dims {self.header.dims} do not match data shape "
                f"{self.data.shape}")
        if len(self.scheme) != self.data.shape[3]:
            raise ValueError(
                f"scheme has {len(self.scheme)} entries, data has "
                f"{self.data.shape[3]} volumes")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("non-finite values in volume")

    @property
    def spatial_dims(self):
        return self.data.shape[:3]


def require_binary_mask(vol):
    """Return the mask array as booleans, rejecting non-binary data."""
    data = vol.data if isinstance(vol, ScalarVolume) else np.asarray(vol)
    if not np.all(np.isin(data, (0.0, 1.0))):
        raise ValueError("mask contains values other than 0 and 1")
    return data.astype(bool)


def write_nifti(header, data):
    """Serialize a volume to single-file NIfTI-1 bytes.

    The array is stored x-fastest in the datatype named by the header;
    sform is set from the header affine, qform code is 0.
    """
    data = np.asarray(data)
    if tuple(data.shape) != tuple(header.dims):
        raise ValueError(
            f"header dims {header.dims} do not match data shape {data.shape}")
    code, bitpix, np_dtype = _DTYPES[header.datatype]

    dim = [data.ndim] + list(data.shape) + [1] * (7 - data.ndim)
    pixdim = [1.0] + list(header.voxel_size)
    pixdim += [1.0] * (8 - len(pixdim))
    aff = header.affine

    hdr = struct.pack(
        "<" + _HEADER_FMT,
        HEADER_SIZE, b"", b"", 0, 0, b"r", 0,
        *dim,
        0.0, 0.0, 0.0, 0, code, bitpix, 0,
        *pixdim,
        float(VOX_OFFSET), 1.0, 0.0, 0, 0,
        2 | 8,                 # spatial unit mm, time unit s
        0.0, 0.0, 0.0, 0.0, 0, 0,
        b"qxfer", b"", 0, 1,   # qform unused, sform set
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        *aff[0, :].astype(np.float32), *aff[1, :].astype(np.float32),
        *aff[2, :].astype(np.float32),
        b"", MAGIC_SINGLE,
    )
    payload = np.ascontiguousarray(data.astype(np_dtype, copy=False))
    return hdr + b"\x00" * (VOX_OFFSET - HEADER_SIZE) + payload.tobytes(order="F")


def read_nifti(blob):
    """Parse single-file NIfTI-1 bytes into (VolumeHeader, float64 array).

    Endianness is detected from sizeof_hdr. Raises ValueError on a bad
    magic, a detached-header file, an unsupported datatype, or a payload
    shorter than the header promises.
    """
    if len(blob) < HEADER_SIZE:
        raise ValueError("file shorter than a NIfTI-1 header")
    byteorder = "<"
    (sizeof_hdr,) = struct.unpack_from("<i", blob, 0)
    if sizeof_hdr != HEADER_SIZE:
        byteorder = ">"
        (sizeof_hdr,) = struct.unpack_from(">i", blob, 0)
        if sizeof_hdr != HEADER_SIZE:
            raise ValueError("not a NIfTI-1 file (bad sizeof_hdr)")
    fields = struct.unpack_from(byteorder + _HEADER_FMT, blob, 0)

    magic = fields[-1]
    if magic == MAGIC_PAIR:
        raise ValueError("detached header/image pairs are not supported")
    if magic != MAGIC_SINGLE:
        raise ValueError(f"bad NIfTI magic {magic!r}")

    dim = fields[7:15]
    ndim = dim[0]
    if not 1 <= ndim <= 4:
        raise ValueError(f"unsupported number of dimensions {ndim}")
    shape = tuple(int(d) for d in dim[1:1 + ndim])
    datatype_code = fields[19]
    if datatype_code not in _CODE_TO_NAME:
        raise ValueError(f"unsupported datatype code {datatype_code}")
    name = _CODE_TO_NAME[datatype_code]
    np_dtype = np.dtype(_DTYPES[name][2]).newbyteorder(byteorder)

    pixdim = fields[22:30]
    vox_offset = int(fields[30])
    if vox_offset < VOX_OFFSET:
        raise ValueError(f"vox_offset {vox_offset} below minimum {VOX_OFFSET}")
    sform_code = fields[45]
    if sform_code > 0:
        affine = np.eye(4)
        affine[0, :] = fields[52:56]
        affine[1, :] = fields[56:60]
        affine[2, :] = fields[60:64]
    else:
        affine = np.diag(list(pixdim[1:4]) + [1.0])

    n_items = int(np.prod(shape))
    expected = n_items * np_dtype.itemsize
    payload = blob[vox_offset:vox_offset + expected]
    if len(payload) < expected:
        raise ValueError(
            f"truncated payload: expected {expected} bytes, got {len(payload)}")
    data = np.frombuffer(payload, dtype=np_dtype).reshape(shape, order="F")

    header = VolumeHeader(shape, pixdim[1:1 + min(3, ndim)] + (1.0,) * max(0, 3 - ndim),
                          name, affine)
    return header, data.astype(np.float64)


def read_nifti_file(path):
    with open(path, "rb") as fh:
        return read_nifti(fh.read())


def write_nifti_file(path, header, data):
    with open(path, "wb") as fh:
        fh.write(write_nifti(header, data))


def read_scalar(path):
    header, data = read_nifti_file(path)
    if data.ndim == 4 and data.shape[3] == 1:
        data = data[..., 0]
        header = header.with_(dims=data.shape)
    return ScalarVolume(header, data)


def write_scalar(path, vol):
    write_nifti_file(path, vol.header, vol.data)


def read_mask(path):
    vol = read_scalar(path)
    require_binary_mask(vol)
    return vol


def read_dwi(nii_path, bval_path, bvec_path, **scheme_kw):
    from .scheme import read_fsl_gradients

    header, data = read_nifti_file(nii_path)
    if data.ndim == 3:
        data = data[..., None]
        header = header.with_(dims=data.shape)
    scheme = read_fsl_gradients(bval_path, bvec_path, **scheme_kw)
    return DwiVolume(header, data, scheme)


def write_dwi(nii_path, bval_path, bvec_path, dwi):
    from .scheme import write_fsl_gradients

    write_nifti_file(nii_path, dwi.header, dwi.data)
    write_fsl_gradients(dwi.scheme, bval_path, bvec_path)


def scalar_like(data, ref_header, datatype="float64"):
    """Wrap a 3-D array in a ScalarVolume copying geometry from a header."""
    data = np.asarray(data)
    header = VolumeHeader(data.shape, ref_header.voxel_size, datatype,
                          ref_header.affine.copy())
    return ScalarVolume(header, data)
