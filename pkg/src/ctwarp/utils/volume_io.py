"""Reading and writing volumes, label maps and displacement fields.

Two formats are supported: NIfTI-1 (``.nii`` / ``.nii.gz``, axis-aligned
orientations only) through nibabel, and a raw bundle made of a little-endian
float32 voxel block (``name.raw``) plus a JSON sidecar (``name.hdr.json``).
Scalar volumes and fields are stored as float32, so float64 inputs lose
precision beyond ~7 significant digits. Displacement fields are stored in
voxel units as 4-D arrays whose last axis has length 3.

All writes go to a temporary file first and are renamed into place.
"""

import json
import os
import tempfile

import nibabel as nib
import numpy as np

from ..core._1_volume_core import (
    DEFAULT_NUM_CLASSES, DisplacementField, Grid, LabelVolume, RegistrationPair, Volume
)
from ..core._6_phantom import PhantomPair, PhantomSpec
from ..core.exceptions import (
    MalformedFile, UnsupportedDatatype, UnsupportedOrientation, WriteError
)

FORMAT_VERSION = 1
DDF_DESCRIP = "ctwarp ddf units=voxel"
SUPPORTED_DTYPES = tuple(np.dtype(t) for t in ("uint8", "int16", "int32", "float32", "float64"))
RAW_SUFFIX = ".raw"
RAW_HEADER_SUFFIX = ".hdr.json"

BUNDLE_MANIFEST = "bundle.json"
BUNDLE_ROLES = (
    "moving_pet", "fixed_pet", "moving_ct", "fixed_ct", "moving_seg", "fixed_seg", "gt_ddf", "body_mask"
)


def volume_format(path):
    """'nifti' or 'raw' from the file name."""
    name = str(path).lower()
    if name.endswith(".nii") or name.endswith(".nii.gz"):
        return "nifti"
    if name.endswith(RAW_SUFFIX) or name.endswith(RAW_HEADER_SUFFIX):
        return "raw"
    raise MalformedFile(f"Unrecognized volume file extension: {path}")


def _raw_paths(path):
    path = str(path)
    if path.endswith(RAW_HEADER_SUFFIX):
        stem = path[: -len(RAW_HEADER_SUFFIX)]
    elif path.endswith(RAW_SUFFIX):
        stem = path[: -len(RAW_SUFFIX)]
    else:
        stem = path
    return stem + RAW_SUFFIX, stem + RAW_HEADER_SUFFIX


def _kind(obj):
    if isinstance(obj, DisplacementField):
        return "ddf"
    if isinstance(obj, LabelVolume):
        return "labels"
    if isinstance(obj, Volume):
        return "scalar"
    raise TypeError(f"Cannot write object of type {type(obj).__name__}")


def _payload(obj):
    kind = _kind(obj)
    if kind == "ddf":
        return obj.vectors
    if kind == "labels":
        return obj.labels
    return obj.values


def _atomic_write(path, write):
    """Call ``write(tmp_path)`` and move the result onto ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    name = os.path.basename(path)
    suffix = ".nii.gz" if name.endswith(".nii.gz") else os.path.splitext(name)[1]
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=".tmp_", suffix=suffix, dir=directory)
        os.close(fd)
    except OSError as e:
        raise WriteError(f"Could not create output file in {directory}: {e}") from e
    try:
        write(tmp)
        os.replace(tmp, path)
    except OSError as e:
        raise WriteError(f"Could not write {path}: {e}") from e
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


# NIfTI-1

def _affine(grid):
    affine = np.diag(list(grid.spacing) + [1.0])
    affine[:3, 3] = grid.origin
    return affine


def _write_nifti(obj, path):
    kind = _kind(obj)
    if kind == "labels":
        data = np.asarray(obj.labels, dtype=np.int32)
    else:
        data = np.asarray(_payload(obj), dtype=np.float32)

    img = nib.Nifti1Image(data, _affine(obj.grid))
    img.set_qform(_affine(obj.grid), code=1)
    img.set_sform(_affine(obj.grid), code=1)
    img.header.set_xyzt_units("mm")
    img.header.set_slope_inter(1.0, 0.0)
    if kind == "ddf":
        img.header["descrip"] = DDF_DESCRIP.encode("ascii")
    _atomic_write(path, lambda tmp: nib.save(img, tmp))


def _nifti_grid(header, affine, path):
    linear = affine[:3, :3]
    off_diagonal = linear - np.diag(np.diag(linear))
    if np.any(np.abs(off_diagonal) > 1e-6 * max(np.abs(linear).max(), 1.0)):
        raise UnsupportedOrientation(f"{path}: rotated orientations are not supported")
    zooms = header.get_zooms()
    spacing = tuple(float(z) if z > 0 else 1.0 for z in (list(zooms[:3]) + [1.0, 1.0, 1.0])[:3])
    if int(header["qform_code"]) == 0 and int(header["sform_code"]) == 0:
        origin = (0.0, 0.0, 0.0)
    else:
        origin = tuple(float(o) for o in affine[:3, 3])
    return spacing, origin


def _read_nifti(path):
    try:
        img = nib.load(path)
        header = img.header
        dtype = header.get_data_dtype()
        if dtype.newbyteorder("=") not in SUPPORTED_DTYPES:
            raise UnsupportedDatatype(f"{path}: datatype {dtype} is not supported")
        data = np.asanyarray(img.dataobj)
        spacing, origin = _nifti_grid(header, img.affine, path)
        descrip = header["descrip"].tobytes().split(b"\0", 1)[0].decode("ascii", "replace")
        slope, inter = header.get_slope_inter()
    except (UnsupportedDatatype, UnsupportedOrientation):
        raise
    except FileNotFoundError:
        raise
    except Exception as e:
        raise MalformedFile(f"{path}: not a readable NIfTI-1 file ({e})") from e

    if data.ndim == 5 and data.shape[3] == 1:
        data = data[:, :, :, 0, :]
    if data.ndim == 2:
        data = data[:, :, None]

    if data.ndim == 4 and data.shape[3] == 3:
        grid = Grid(data.shape[:3], spacing, origin)
        vectors = np.asarray(data, dtype=np.float64)
        if "units=mm" in descrip:
            vectors = vectors / np.asarray(spacing)
        return DisplacementField(grid, vectors)
    if data.ndim == 4 and data.shape[3] == 1:
        data = data[..., 0]
    if data.ndim != 3:
        raise MalformedFile(f"{path}: expected a 3-D volume or a 4-D field, got shape {data.shape}")

    grid = Grid(data.shape, spacing, origin)
    scaled = slope not in (None, 1.0) or inter not in (None, 0.0)
    if dtype.kind in "iu" and not scaled:
        labels = np.asarray(data, dtype=np.int64)
        # negative integers are intensities, e.g. an int16 CT in HU
        if not labels.size or labels.min() >= 0:
            top = int(labels.max()) if labels.size else 0
            return LabelVolume(grid, labels, max(DEFAULT_NUM_CLASSES, top + 1))
    return Volume(grid, np.asarray(data, dtype=np.float64))


# Raw bundle

def _write_raw(obj, path):
    data_path, header_path = _raw_paths(path)
    kind = _kind(obj)
    payload = np.ascontiguousarray(_payload(obj), dtype="<f4")
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "dims": list(obj.grid.dims),
        "spacing": list(obj.grid.spacing),
        "origin": list(obj.grid.origin),
    }
    if kind == "labels":
        header["num_classes"] = int(obj.num_classes)
    if kind == "ddf":
        header["units"] = "voxel"

    def write_data(tmp):
        with open(tmp, "wb") as f:
            f.write(payload.tobytes(order="C"))

    def write_header(tmp):
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(header, f, indent=2)

    _atomic_write(data_path, write_data)
    _atomic_write(header_path, write_header)


def _read_raw(path):
    data_path, header_path = _raw_paths(path)
    try:
        with open(header_path, "r", encoding="utf-8") as f:
            header = json.load(f)
        kind = header["kind"]
        grid = Grid(header["dims"], header["spacing"], header["origin"])
        version = int(header["format_version"])
    except FileNotFoundError:
        raise
    except (ValueError, KeyError, TypeError) as e:
        raise MalformedFile(f"{header_path}: invalid raw header ({e})") from e
    if version > FORMAT_VERSION:
        raise MalformedFile(f"{header_path}: format version {version} is newer than {FORMAT_VERSION}")
    if kind not in ("scalar", "labels", "ddf"):
        raise MalformedFile(f"{header_path}: unknown kind {kind!r}")

    shape = grid.dims + ((3,) if kind == "ddf" else ())
    with open(data_path, "rb") as f:
        raw = f.read()
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise MalformedFile(f"{data_path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)

    if kind == "ddf":
        return DisplacementField(grid, data)
    if kind == "labels":
        return LabelVolume(grid, data, int(header.get("num_classes", DEFAULT_NUM_CLASSES)))
    return Volume(grid, data)


def read_volume(path):
    """Load a Volume, LabelVolume or DisplacementField from NIfTI-1 or a raw bundle."""
    path = str(path)
    fmt = volume_format(path)
    if fmt == "raw":
        return _read_raw(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Volume file not found: {path}")
    return _read_nifti(path)


def write_volume(obj, path, fmt=None):
    """Write ``obj`` to ``path``; the format follows the extension unless given."""
    path = str(path)
    fmt = fmt or volume_format(path)
    if fmt == "nifti":
        _write_nifti(obj, path)
    elif fmt == "raw":
        _write_raw(obj, path)
    else:
        raise WriteError(f"Unknown volume format: {fmt}")
    return path


def as_label_volume(obj, path=""):
    """Label view of a volume read from a file that stores labels as floats."""
    if isinstance(obj, LabelVolume):
        return obj
    if isinstance(obj, Volume):
        top = int(obj.values.max()) if obj.values.size else 0
        return LabelVolume(obj.grid, obj.values, max(DEFAULT_NUM_CLASSES, top + 1))
    raise MalformedFile(f"{path}: expected a segmentation, found a displacement field")


def as_scalar_volume(obj, path=""):
    if isinstance(obj, Volume):
        return obj
    if isinstance(obj, LabelVolume):
        return Volume(obj.grid, obj.labels.astype(np.float64))
    raise MalformedFile(f"{path}: expected a scalar volume, found a displacement field")


def as_displacement_field(obj, path=""):
    if isinstance(obj, DisplacementField):
        return obj
    raise MalformedFile(f"{path}: expected a displacement field (4-D, last axis 3)")


# Phantom bundles

def _bundle_extension(fmt):
    return ".nii.gz" if fmt == "nifti" else RAW_SUFFIX


def write_phantom_bundle(phantom, directory, fmt="nifti"):
    """Write the six volumes, gt field and body mask plus a ``bundle.json`` manifest."""
    if fmt not in ("nifti", "raw"):
        raise WriteError(f"Unknown bundle format: {fmt}")
    pair = phantom.pair
    grid = pair.fixed_grid
    objects = {
        "moving_pet": pair.moving_pet,
        "fixed_pet": pair.fixed_pet,
        "moving_ct": pair.moving_ct,
        "fixed_ct": pair.fixed_ct,
        "moving_seg": pair.moving_seg,
        "fixed_seg": pair.fixed_seg,
        "gt_ddf": phantom.gt_ddf,
        "body_mask": LabelVolume(grid, phantom.body_mask.astype(np.int32)),
    }
    files = {}
    for role in BUNDLE_ROLES:
        files[role] = role + _bundle_extension(fmt)
        write_volume(objects[role], os.path.join(directory, files[role]), fmt)

    manifest = {
        "format_version": FORMAT_VERSION,
        "format": fmt,
        "subject": pair.subject,
        "tracer_moving": pair.tracer_moving,
        "tracer_fixed": pair.tracer_fixed,
        "files": files,
        "spec": phantom.spec.as_dict(),
    }

    def write_manifest(tmp):
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2)

    _atomic_write(os.path.join(directory, BUNDLE_MANIFEST), write_manifest)
    return directory


def read_bundle_manifest(directory):
    path = os.path.join(directory, BUNDLE_MANIFEST)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Bundle manifest not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
        files = manifest["files"]
        missing = [role for role in BUNDLE_ROLES if role not in files]
    except (ValueError, KeyError, TypeError) as e:
        raise MalformedFile(f"{path}: invalid bundle manifest ({e})") from e
    if missing:
        raise MalformedFile(f"{path}: manifest lacks {', '.join(missing)}")
    if int(manifest.get("format_version", 0)) > FORMAT_VERSION:
        raise MalformedFile(f"{path}: format version {manifest['format_version']} is not supported")
    return manifest


def read_phantom_bundle(directory):
    """Load a bundle written by ``write_phantom_bundle`` as a PhantomPair."""
    manifest = read_bundle_manifest(directory)
    loaded = {}
    for role in BUNDLE_ROLES:
        path = os.path.join(directory, manifest["files"][role])
        loaded[role] = read_volume(path)

    pair = RegistrationPair(
        as_scalar_volume(loaded["moving_pet"]), as_scalar_volume(loaded["fixed_pet"]),
        as_scalar_volume(loaded["moving_ct"]), as_scalar_volume(loaded["fixed_ct"]),
        as_label_volume(loaded["moving_seg"]), as_label_volume(loaded["fixed_seg"]),
        subject=manifest.get("subject", os.path.basename(os.path.normpath(directory))),
        tracer_moving=manifest.get("tracer_moving", "A"),
        tracer_fixed=manifest.get("tracer_fixed", "B"),
    )
    body = as_label_volume(loaded["body_mask"]).labels != 0
    spec = PhantomSpec.from_dict(manifest["spec"]) if manifest.get("spec") else PhantomSpec()
    return PhantomPair(pair, as_displacement_field(loaded["gt_ddf"]), body, spec)


def read_pair(moving_pet, fixed_pet, moving_ct, fixed_ct, moving_seg, fixed_seg, subject=""):
    """Load the six volumes of a registration pair from explicit paths."""
    return RegistrationPair(
        as_scalar_volume(read_volume(moving_pet), moving_pet),
        as_scalar_volume(read_volume(fixed_pet), fixed_pet),
        as_scalar_volume(read_volume(moving_ct), moving_ct),
        as_scalar_volume(read_volume(fixed_ct), fixed_ct),
        as_label_volume(read_volume(moving_seg), moving_seg),
        as_label_volume(read_volume(fixed_seg), fixed_seg),
        subject=subject,
    )
