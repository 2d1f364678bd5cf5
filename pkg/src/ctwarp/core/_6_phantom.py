"""Synthetic cross-tracer phantoms with known ground-truth deformations.

The phantom is an analytic scene of ellipsoids: a body, a spine-like bone,
two lungs and a set of soft organs. The moving volumes are the scene on the
voxel grid; the fixed volumes are the scene at ``x + gt(x)``, so warping the
moving volumes through ``gt_ddf`` reproduces the fixed ones and a
registration that recovers ``gt_ddf`` is exact.

Label layout: 0 air, 1 body soft tissue, 2 bone, 3 and 4 lungs, 5.. organs.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ._1_volume_core import (
    DisplacementField, Grid, LabelVolume, RegistrationPair, Volume, identity_points, normalize_unit
)
from .exceptions import DegenerateVolume, EmptyMask, InvalidParams, ShapeMismatch

AIR_LABEL = 0
BODY_LABEL = 1
BONE_LABEL = 2
LUNG_LABELS = (3, 4)
FIRST_ORGAN_LABEL = 5

# mean uptake of the fixed structures under tracer A (moving) and B (fixed)
TRACER_A_UPTAKE = {BODY_LABEL: 0.1, BONE_LABEL: 0.3, 3: 0.05, 4: 0.05}
TRACER_B_UPTAKE = {BODY_LABEL: 0.25, BONE_LABEL: 0.05, 3: 0.35, 4: 0.35}
ORGAN_UPTAKE_RANGE = (0.3, 1.0)

MIN_BUMP_SIGMA = 8.0
N_BUMPS = 4
MAX_PLACEMENT_ATTEMPTS = 500


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry, intensities and deformation of one synthetic pair."""

    dims: tuple = (64, 64, 96)
    spacing: tuple = (3.0, 3.0, 3.0)
    seed: int = 0
    n_soft_organs: int = 6
    bone_hu: float = 1000.0
    soft_hu: tuple = (20.0, 80.0)
    lung_hu: float = -800.0
    air_hu: float = -1000.0
    uptake_a: dict = None
    uptake_b: dict = None
    noise_sigma: float = 0.02
    max_displacement: float = 3.0
    bone_translation: float = 1.0
    single_tracer: bool = False

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "n_soft_organs", int(self.n_soft_organs))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "soft_hu", tuple(float(h) for h in self.soft_hu))
        for error, key in self.validation_errors():
            raise InvalidParams(error, key=key)

    def validation_errors(self):
        limit = min(self.dims) / 8.0 if len(self.dims) == 3 else 0.0
        checks = [
            (len(self.dims) == 3 and min(self.dims) >= 16, "phantom dims must be three values >= 16", "dims"),
            (len(self.spacing) == 3 and min(self.spacing) > 0, "phantom spacing must be three values > 0", "spacing"),
            (self.seed >= 0, "seed must be >= 0", "seed"),
            (self.n_soft_organs >= 0, "n_soft_organs must be >= 0", "n_soft_organs"),
            (len(self.soft_hu) == 2 and self.soft_hu[0] <= self.soft_hu[1],
             "soft_hu must be a (low, high) range", "soft_hu"),
            (self.air_hu < self.lung_hu < self.soft_hu[0] and self.soft_hu[-1] < self.bone_hu,
             "HU values must increase from air over lung and soft tissue to bone", "bone_hu"),
            (self.noise_sigma >= 0, "noise_sigma must be >= 0", "noise_sigma"),
            (0 <= self.max_displacement < limit,
             f"max_displacement must lie in [0, min(dims)/8 = {limit:g})", "max_displacement"),
            (0 <= self.bone_translation < limit,
             f"bone_translation must lie in [0, min(dims)/8 = {limit:g})", "bone_translation"),
        ]
        return [(message, key) for ok, message, key in checks if not ok]

    def as_dict(self):
        return {
            "dims": list(self.dims),
            "spacing": list(self.spacing),
            "seed": int(self.seed),
            "n_soft_organs": int(self.n_soft_organs),
            "bone_hu": self.bone_hu,
            "soft_hu": list(self.soft_hu),
            "lung_hu": self.lung_hu,
            "air_hu": self.air_hu,
            "uptake_a": {str(k): v for k, v in (self.uptake_a or {}).items()},
            "uptake_b": {str(k): v for k, v in (self.uptake_b or {}).items()},
            "noise_sigma": self.noise_sigma,
            "max_displacement": self.max_displacement,
            "bone_translation": self.bone_translation,
            "single_tracer": bool(self.single_tracer),
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        for key in ("uptake_a", "uptake_b"):
            if data.get(key):
                data[key] = {int(k): float(v) for k, v in data[key].items()}
            else:
                data[key] = None
        return cls(**data)


@dataclass(frozen=True, eq=False)
class PhantomPair:
    """A registration pair with its ground-truth field and body mask."""

    pair: RegistrationPair
    gt_ddf: DisplacementField
    body_mask: np.ndarray
    spec: PhantomSpec = field(default_factory=PhantomSpec)

    @property
    def bone_mask(self):
        return self.pair.fixed_seg.labels == BONE_LABEL

    @property
    def soft_mask(self):
        labels = self.pair.fixed_seg.labels
        return (labels == BODY_LABEL) | (labels >= FIRST_ORGAN_LABEL)


@dataclass(frozen=True)
class EndpointError:
    """Endpoint error statistics of an estimated field inside a mask."""

    mean_voxels: float
    mean_mm: float
    median_voxels: float
    max_voxels: float
    voxels: int

    def as_dict(self):
        return {
            "mean_voxels": self.mean_voxels,
            "mean_mm": self.mean_mm,
            "median_voxels": self.median_voxels,
            "max_voxels": self.max_voxels,
            "voxels": self.voxels,
        }


@dataclass(frozen=True)
class _Ellipsoid:
    label: int
    center: tuple
    axes: tuple

    def contains(self, points):
        r = (points - np.asarray(self.center)) / np.asarray(self.axes)
        return np.sum(r * r, axis=-1) <= 1.0

    def radius(self, points):
        r = (points - np.asarray(self.center)) / np.asarray(self.axes)
        return np.sqrt(np.sum(r * r, axis=-1))


def _anatomy(dims):
    """Body, bone and lung ellipsoids scaled to the grid."""
    h, w, d = (float(n) for n in dims)
    c = np.array([(h - 1) / 2, (w - 1) / 2, (d - 1) / 2])
    body = _Ellipsoid(BODY_LABEL, tuple(c), (0.42 * h, 0.36 * w, 0.46 * d))
    bone = _Ellipsoid(
        BONE_LABEL, tuple(c + [0.0, 0.15 * w, 0.0]),
        (max(0.06 * h, 1.5), max(0.06 * w, 1.5), 0.38 * d),
    )
    lungs = [
        _Ellipsoid(label, tuple(c + [side * 0.17 * h, -0.08 * w, 0.18 * d]), (0.11 * h, 0.14 * w, 0.16 * d))
        for label, side in zip(LUNG_LABELS, (-1.0, 1.0))
    ]
    return body, bone, lungs


def _paint(points, shapes):
    """Label map of ``shapes`` at ``points``; later shapes overwrite earlier ones."""
    labels = np.zeros(points.shape[:-1], dtype=np.int32)
    for shape in shapes:
        labels[shape.contains(points)] = shape.label
    return labels


def _place_organs(rng, dims, body, fixed_shapes, count):
    """Non-overlapping ellipsoidal organs inside the body soft tissue."""
    points = identity_points(dims)
    labels = _paint(points, [body] + fixed_shapes)
    base = max(2.0, 0.07 * min(dims))
    lo = np.asarray(body.center) - np.asarray(body.axes)
    hi = np.asarray(body.center) + np.asarray(body.axes)
    organs = []
    for k in range(count):
        label = FIRST_ORGAN_LABEL + k
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            axes = tuple(base * rng.uniform(0.8, 1.2, size=3))
            center = tuple(rng.uniform(lo, hi))
            # one voxel of soft tissue must surround every organ
            halo = _Ellipsoid(label, center, tuple(a + 1.0 for a in axes))
            inside = halo.contains(points)
            if inside.any() and np.all(labels[inside] == BODY_LABEL):
                organ = _Ellipsoid(label, center, axes)
                labels[organ.contains(points)] = label
                organs.append(organ)
                break
        else:
            raise InvalidParams(
                f"could not place organ {k + 1} of {count} in a {dims} phantom", key="n_soft_organs"
            )
    return organs


def _soft_field(rng, dims, body, max_displacement):
    """Sum of Gaussian displacement bumps, faded out towards the body surface."""
    points = identity_points(dims)
    sigma = max(MIN_BUMP_SIGMA, min(dims) / 4.0)
    lo = np.asarray(body.center) - 0.7 * np.asarray(body.axes)
    hi = np.asarray(body.center) + 0.7 * np.asarray(body.axes)
    bumps = np.zeros(points.shape)
    for _ in range(N_BUMPS):
        center = rng.uniform(lo, hi)
        direction = rng.normal(size=3)
        direction *= rng.uniform(0.5, 1.0) / np.linalg.norm(direction)
        dist2 = np.sum((points - center) ** 2, axis=-1)
        bumps += np.exp(-dist2 / (2.0 * sigma * sigma))[..., None] * direction

    # cosine ramp from full strength at 60% of the body radius to zero at the surface
    rho = body.radius(points)
    ramp = np.clip((rho - 0.6) / 0.4, 0.0, 1.0)
    bumps *= (0.5 + 0.5 * np.cos(np.pi * ramp))[..., None]

    inside = rho <= 1.0
    peak = np.linalg.norm(bumps[inside], axis=-1).max() if inside.any() else 0.0
    if max_displacement == 0 or peak == 0:
        return np.zeros(points.shape)
    return bumps * (max_displacement / peak)


def _rigidity(dims, bone):
    """Smooth weight that is ~1 inside the bone and 0 away from it."""
    sigma = max(1.0, min(dims) / 20.0)
    grow = int(np.ceil(2.0 * sigma))
    mask = bone.contains(identity_points(dims))
    grown = ndimage.binary_dilation(mask, structure=np.ones((3, 3, 3), dtype=bool), iterations=grow)
    return np.clip(ndimage.gaussian_filter(grown.astype(np.float64), sigma), 0.0, 1.0)


def _ground_truth(rng, spec, body, bone):
    soft = _soft_field(rng, spec.dims, body, spec.max_displacement)
    fallback = rng.normal(size=3)

    # the bone moves rigidly along the soft-tissue motion at its centre
    centre = tuple(int(round(c)) for c in bone.center)
    direction = soft[centre]
    if np.linalg.norm(direction) < 1e-9:
        direction = fallback
    translation = spec.bone_translation * direction / np.linalg.norm(direction)

    r = _rigidity(spec.dims, bone)[..., None]
    return (1.0 - r) * soft + r * translation


def _organ_uptakes(rng, organs, spec):
    """Per-organ uptake of both tracers, B in reversed rank order of A."""
    n = len(organs)
    a = rng.uniform(*ORGAN_UPTAKE_RANGE, size=n)
    b = np.sort(rng.uniform(*ORGAN_UPTAKE_RANGE, size=n))[::-1]
    b_for = np.empty(n)
    b_for[np.argsort(a)] = b
    table_a = dict(TRACER_A_UPTAKE)
    table_b = dict(TRACER_B_UPTAKE)
    for organ, ua, ub in zip(organs, a, b_for):
        table_a[organ.label] = float(ua)
        table_b[organ.label] = float(ub)
    table_a.update(spec.uptake_a or {})
    table_b.update(spec.uptake_b or {})
    return table_a, table_b


def _lookup(labels, table, default=0.0):
    lut = np.full(int(labels.max()) + 1, default, dtype=np.float64)
    for label, value in table.items():
        if 0 <= label < lut.size:
            lut[label] = value
    return lut[labels]


def _pet(labels, table, spec, stream):
    """Uptake map plus counter-based Gaussian noise, clamped at zero."""
    uptake = _lookup(labels, table)
    generator = np.random.Generator(np.random.Philox(key=np.array([spec.seed, stream], dtype=np.uint64)))
    scale = spec.noise_sigma * max(table.values())
    return np.maximum(uptake + scale * generator.standard_normal(labels.shape), 0.0)


def generate_phantom(spec=None):
    """Build a deterministic phantom pair from ``spec``."""
    spec = spec if spec is not None else PhantomSpec()
    rng = np.random.default_rng(spec.seed)
    grid = Grid(spec.dims, spec.spacing)

    body, bone, lungs = _anatomy(spec.dims)
    organs = _place_organs(rng, spec.dims, body, lungs + [bone], spec.n_soft_organs)
    shapes = [body] + lungs + [bone] + organs

    hu = {AIR_LABEL: spec.air_hu, BONE_LABEL: spec.bone_hu}
    hu.update({label: spec.lung_hu for label in LUNG_LABELS})
    hu[BODY_LABEL] = float(rng.uniform(*spec.soft_hu))
    for organ in organs:
        hu[organ.label] = float(rng.uniform(*spec.soft_hu))

    table_a, table_b = _organ_uptakes(rng, organs, spec)
    if spec.single_tracer:
        table_b = table_a

    gt = _ground_truth(rng, spec, body, bone)
    points = identity_points(spec.dims)
    moving_labels = _paint(points, shapes)
    fixed_labels = _paint(points + gt, shapes)

    moving_pet = _pet(moving_labels, table_a, spec, 0)
    fixed_pet = _pet(fixed_labels, table_b, spec, 0 if spec.single_tracer else 1)
    try:
        moving_pet = normalize_unit(Volume(grid, moving_pet))
        fixed_pet = normalize_unit(Volume(grid, fixed_pet))
    except DegenerateVolume as e:
        raise InvalidParams(f"phantom PET has no contrast: {e}", key="uptake_a") from e

    pair = RegistrationPair(
        moving_pet, fixed_pet,
        Volume(grid, _lookup(moving_labels, hu, spec.air_hu)),
        Volume(grid, _lookup(fixed_labels, hu, spec.air_hu)),
        LabelVolume(grid, moving_labels), LabelVolume(grid, fixed_labels),
        subject=f"phantom_seed{spec.seed}",
        tracer_moving="A", tracer_fixed="A" if spec.single_tracer else "B",
    )
    return PhantomPair(pair, DisplacementField(grid, gt), fixed_labels != AIR_LABEL, spec)


def _mask_array(mask, dims):
    mask = mask.labels != 0 if isinstance(mask, LabelVolume) else np.asarray(mask, dtype=bool)
    if mask.shape != tuple(dims):
        raise ShapeMismatch(f"mask dims {mask.shape} differ from field dims {tuple(dims)}")
    if not mask.any():
        raise EmptyMask("endpoint error over an empty mask")
    return mask


def endpoint_error(est, gt, mask):
    """Endpoint error ||est(x) - gt(x)|| over ``mask`` in voxels and mm."""
    if est.dims != gt.dims:
        raise ShapeMismatch(f"fields differ in dims: {est.dims} vs {gt.dims}")
    mask = _mask_array(mask, est.dims)
    diff = (est.vectors - gt.vectors)[mask]
    voxels = np.linalg.norm(diff, axis=-1)
    mm = np.linalg.norm(diff * np.asarray(gt.grid.spacing), axis=-1)
    return EndpointError(
        float(voxels.mean()), float(mm.mean()), float(np.median(voxels)), float(voxels.max()), int(mask.sum())
    )


def pearson_in_mask(a, b, mask):
    """Pearson correlation of two volumes over a binary mask."""
    a = np.asarray(a.values if isinstance(a, Volume) else a, dtype=np.float64)
    b = np.asarray(b.values if isinstance(b, Volume) else b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"volumes differ in shape: {a.shape} vs {b.shape}")
    mask = _mask_array(mask, a.shape)
    x = a[mask] - a[mask].mean()
    y = b[mask] - b[mask].mean()
    denom = np.sqrt(np.sum(x * x) * np.sum(y * y))
    if denom == 0:
        raise DegenerateVolume("correlation of a constant volume is undefined")
    return float(np.sum(x * y) / denom)
