"""Sphere <-> plane geometry: equirectangular images, cube faces and 4-3 unfoldings.

Axis convention (right-handed): +x points through face F, +y through R and
+z through T.  Longitude is measured from +x toward +y, latitude from the
equator toward +z.  Equirectangular column 0 sits at longitude -pi and row 0
at latitude +pi/2; pixel centres are at half-integer offsets.

Every face is stored as an (a, a) raster whose pixel ``(row, col)`` looks along
``normal + u * right + v * down`` with ``u, v`` the pixel-centre coordinates in
[-1, 1].  The four equatorial faces share ``down = -z`` and their ``right``
vector points east, so the horizontal ring F-R-B-L is seamless left to right.
T has its bottom edge against F and D has its top edge against F.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .tensor import DTYPE, ShapeError, as_tensor

FACES = ("F", "B", "L", "R", "T", "D")
RING = ("F", "R", "B", "L")  # equatorial faces, eastward
FACE_INDEX = {name: i for i, name in enumerate(FACES)}

# (normal, right, down) per face
FACE_BASIS = {
    "F": ((1, 0, 0), (0, 1, 0), (0, 0, -1)),
    "R": ((0, 1, 0), (-1, 0, 0), (0, 0, -1)),
    "B": ((-1, 0, 0), (0, -1, 0), (0, 0, -1)),
    "L": ((0, -1, 0), (1, 0, 0), (0, 0, -1)),
    "T": ((0, 0, 1), (0, 1, 0), (1, 0, 0)),
    "D": ((0, 0, -1), (0, 1, 0), (-1, 0, 0)),
}
_BASIS = np.array([FACE_BASIS[f] for f in FACES], dtype=np.float64)  # (6, 3, 3)

GRID_MAGIC = b"OMG1"
GRID_EP_TO_CUBE = 0
GRID_CUBE_TO_EP = 1
_GRID_RECORD = np.dtype([("face", "<i4"), ("index", "<u4", (4,)), ("weight", "<f8", (4,))])


class AspectError(ShapeError):
    """Equirectangular raster whose width is not twice its height."""


# ---------------------------------------------------------------------------
# direction helpers


def lonlat_to_directions(lon, lat) -> np.ndarray:
    lon = np.asarray(lon, dtype=np.float64)
    lat = np.asarray(lat, dtype=np.float64)
    cl = np.cos(lat)
    return np.stack([cl * np.cos(lon), cl * np.sin(lon), np.sin(lat)], axis=-1)


def directions_to_lonlat(d) -> tuple[np.ndarray, np.ndarray]:
    d = np.asarray(d, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    lon = np.arctan2(y, x)
    lon = np.where(lon >= np.pi, lon - 2 * np.pi, lon)
    lat = np.arctan2(z, np.hypot(x, y))
    return lon, lat


def ep_pixel_lonlat(heq: int) -> tuple[np.ndarray, np.ndarray]:
    """Longitude/latitude of every pixel centre of an (heq, 2*heq) raster."""
    weq = 2 * heq
    lon = -np.pi + (np.arange(weq) + 0.5) * (2 * np.pi / weq)
    lat = np.pi / 2 - (np.arange(heq) + 0.5) * (np.pi / heq)
    return np.meshgrid(lon, lat)


def lonlat_to_ep_coords(lon, lat, heq: int) -> tuple[np.ndarray, np.ndarray]:
    """Continuous (row, col) pixel coordinates, pixel centres at integers."""
    weq = 2 * heq
    col = (np.asarray(lon) + np.pi) / (2 * np.pi) * weq - 0.5
    row = (np.pi / 2 - np.asarray(lat)) / np.pi * heq - 0.5
    return row, col


def face_uv_to_directions(face, u, v) -> np.ndarray:
    """Unit directions for face indices and in-face coordinates (u right, v down)."""
    basis = _BASIS[np.asarray(face)]
    u = np.asarray(u, dtype=np.float64)[..., None]
    v = np.asarray(v, dtype=np.float64)[..., None]
    d = basis[..., 0, :] + u * basis[..., 1, :] + v * basis[..., 2, :]
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def owning_face(d) -> np.ndarray:
    """Index into FACES of the face hit by each direction.

    The dominant axis wins; exact ties prefer x over y over z.
    """
    d = np.asarray(d, dtype=np.float64)
    axis = np.argmax(np.abs(d), axis=-1)
    comp = np.take_along_axis(d, axis[..., None], axis=-1)[..., 0]
    positive = comp >= 0
    table = np.array([[FACE_INDEX["B"], FACE_INDEX["F"]],
                      [FACE_INDEX["L"], FACE_INDEX["R"]],
                      [FACE_INDEX["D"], FACE_INDEX["T"]]])
    return table[axis, positive.astype(int)]


def directions_to_face_uv(d) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    d = np.asarray(d, dtype=np.float64)
    face = owning_face(d)
    basis = _BASIS[face]
    depth = np.einsum("...k,...k->...", d, basis[..., 0, :])
    u = np.einsum("...k,...k->...", d, basis[..., 1, :]) / depth
    v = np.einsum("...k,...k->...", d, basis[..., 2, :]) / depth
    return face, u, v


def pixel_centres(a: int) -> np.ndarray:
    return (np.arange(a, dtype=np.float64) + 0.5) * (2.0 / a) - 1.0


@lru_cache(maxsize=32)
def face_directions(a: int) -> np.ndarray:
    """(6, a, a, 3) unit viewing directions of every face pixel centre."""
    c = pixel_centres(a)
    v, u = np.meshgrid(c, c, indexing="ij")
    faces = np.arange(6)[:, None, None]
    d = face_uv_to_directions(np.broadcast_to(faces, (6, a, a)), u[None], v[None])
    d.setflags(write=False)
    return d


# ---------------------------------------------------------------------------
# sampling grids


@dataclass(frozen=True)
class SamplingGrid:
    """Precomputed bilinear taps for one remapping direction.

    ``index`` holds four flat indices into the source planes (plane-major,
    row-major) and ``weight`` the matching bilinear weights for every
    destination pixel.  ``face`` is the owning source face, or -1 when the
    source is an equirectangular raster.
    """

    kind: int
    src_shape: tuple[int, int, int]
    dst_shape: tuple[int, int, int]
    face: np.ndarray
    index: np.ndarray
    weight: np.ndarray

    @property
    def n_pixels(self) -> int:
        return int(np.prod(self.dst_shape))

    def apply(self, flat_src: np.ndarray) -> np.ndarray:
        """Sample a (C, S) float source into (C, N) float64 values."""
        flat_src = np.asarray(flat_src, dtype=np.float64)
        if flat_src.shape[1] != int(np.prod(self.src_shape)):
            raise ShapeError(f"grid expects {self.src_shape} source, got {flat_src.shape[1]} values")
        out = flat_src[:, self.index[:, 0]] * self.weight[:, 0]
        for k in range(1, 4):
            out += flat_src[:, self.index[:, k]] * self.weight[:, k]
        return out

    def __eq__(self, other):
        if not isinstance(other, SamplingGrid):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.src_shape == other.src_shape
            and self.dst_shape == other.dst_shape
            and np.array_equal(self.face, other.face)
            and np.array_equal(self.index, other.index)
            and np.array_equal(self.weight, other.weight)
        )

    __hash__ = None


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


@lru_cache(maxsize=32)
def build_ep_to_cube_grid(heq: int, a: int) -> SamplingGrid:
    """Taps for extracting six a x a faces from an (heq, 2*heq) raster.

    Horizontal neighbours wrap around the date line; rows clamp at the poles.
    """
    if heq < 2 or a < 2:
        raise ShapeError(f"degenerate dims: heq={heq}, a={a}")
    weq = 2 * heq
    lon, lat = directions_to_lonlat(face_directions(a).reshape(-1, 3))
    row, col = lonlat_to_ep_coords(lon, lat, heq)

    x0 = np.floor(col)
    fx = col - x0
    x0 = x0.astype(np.int64) % weq
    x1 = (x0 + 1) % weq
    y0 = np.floor(row)
    fy = row - y0
    y0 = y0.astype(np.int64)
    y1 = np.clip(y0 + 1, 0, heq - 1)
    y0 = np.clip(y0, 0, heq - 1)

    index = np.stack([y0 * weq + x0, y0 * weq + x1, y1 * weq + x0, y1 * weq + x1], axis=1)
    weight = np.stack([(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx], axis=1)
    face = np.full(index.shape[0], -1, dtype=np.int32)
    _freeze(index, weight, face)
    return SamplingGrid(GRID_EP_TO_CUBE, (1, heq, weq), (6, a, a), face, index, weight)


@lru_cache(maxsize=32)
def build_cube_to_ep_grid(a: int, heq: int) -> SamplingGrid:
    """Taps for resampling six a x a faces into an (heq, 2*heq) raster.

    Each output pixel reads only from its owning face, clamping at the face
    border (no filtering across faces).
    """
    if heq < 2 or a < 1:
        raise ShapeError(f"degenerate dims: heq={heq}, a={a}")
    lon, lat = ep_pixel_lonlat(heq)
    face, u, v = directions_to_face_uv(lonlat_to_directions(lon, lat).reshape(-1, 3))
    col = np.clip((u + 1) / 2 * a - 0.5, 0, a - 1)
    row = np.clip((v + 1) / 2 * a - 0.5, 0, a - 1)
    x0 = np.floor(col).astype(np.int64)
    y0 = np.floor(row).astype(np.int64)
    fx = col - x0
    fy = row - y0
    x1 = np.minimum(x0 + 1, a - 1)
    y1 = np.minimum(y0 + 1, a - 1)
    base = face.astype(np.int64) * a * a
    index = np.stack([base + y0 * a + x0, base + y0 * a + x1, base + y1 * a + x0, base + y1 * a + x1], axis=1)
    weight = np.stack([(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx], axis=1)
    face = face.astype(np.int32)
    _freeze(index, weight, face)
    return SamplingGrid(GRID_CUBE_TO_EP, (6, a, a), (1, heq, 2 * heq), face, index, weight)


def write_grid(path, grid: SamplingGrid) -> None:
    """OMG1 cache file.

    Layout (little-endian): ``b"OMG1"``, then seven uint32 values
    ``kind, src_planes, src_h, src_w, dst_planes, dst_h, dst_w``, then one
    52-byte record per destination pixel in raster order:
    int32 source face (-1 for none), 4 x uint32 flat source indices,
    4 x float64 bilinear weights.
    """
    records = np.empty(grid.n_pixels, dtype=_GRID_RECORD)
    records["face"] = grid.face
    records["index"] = grid.index
    records["weight"] = grid.weight
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<7I", grid.kind, *grid.src_shape, *grid.dst_shape))
        fh.write(records.tobytes())


def read_grid(path) -> SamplingGrid:
    raw = Path(path).read_bytes()
    if raw[:4] != GRID_MAGIC:
        raise ValueError(f"{path}: not an OMG1 grid file")
    kind, *dims = struct.unpack_from("<7I", raw, 4)
    src_shape, dst_shape = tuple(dims[:3]), tuple(dims[3:])
    records = np.frombuffer(raw[32:], dtype=_GRID_RECORD)
    if records.size != int(np.prod(dst_shape)):
        raise ValueError(f"{path}: truncated grid file")
    face = records["face"].astype(np.int32)
    index = records["index"].astype(np.int64)
    weight = records["weight"].astype(np.float64)
    _freeze(face, index, weight)
    return SamplingGrid(kind, src_shape, dst_shape, face, index, weight)


# ---------------------------------------------------------------------------
# cube faces and projections


@dataclass(frozen=True)
class CubeFaceSet:
    """Six square rasters stacked as (6, C, a, a) in FACES order."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim != 4 or d.shape[0] != 6 or d.shape[2] != d.shape[3]:
            raise ShapeError(f"cube faces must be (6, C, a, a), got {d.shape}")

    @property
    def side(self) -> int:
        return self.data.shape[2]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    def __getitem__(self, label: str) -> np.ndarray:
        return self.data[FACE_INDEX[label]]

    @classmethod
    def from_dict(cls, faces: dict) -> "CubeFaceSet":
        missing = set(FACES) - set(faces)
        if missing:
            raise ShapeError(f"missing faces: {sorted(missing)}")
        arrays = [as_tensor(faces[f]) for f in FACES]
        if len({a.shape for a in arrays}) != 1:
            raise ShapeError("all six faces must share one shape")
        return cls(np.stack(arrays).astype(DTYPE))


def check_equirect(x, image: bool = False) -> np.ndarray:
    """Validate an equirectangular raster; ``image`` also checks channels and range."""
    x = as_tensor(x)
    c, h, w = x.shape
    if w != 2 * h:
        raise AspectError(f"equirectangular width must be 2 x height, got {h}x{w}")
    if image:
        if c not in (1, 3):
            raise ShapeError(f"equirectangular image must have 1 or 3 channels, got {c}")
        if x.size and (x.min() < 0 or x.max() > 1):
            raise ValueError("equirectangular image values must lie in [0, 1]")
    return x


def ep_to_cube(ep, a: int | None = None) -> CubeFaceSet:
    """Extract six cube faces of side ``a`` (default ``width / 4``)."""
    ep = check_equirect(ep)
    c, heq, weq = ep.shape
    a = weq // 4 if a is None else a
    grid = build_ep_to_cube_grid(heq, a)
    out = grid.apply(ep.reshape(c, -1)).reshape(c, 6, a, a)
    return CubeFaceSet(np.ascontiguousarray(out.transpose(1, 0, 2, 3), dtype=DTYPE))


def cube_to_ep(faces, heq_out: int) -> np.ndarray:
    """Resample cube faces (images or feature maps) into a (C, heq, 2*heq) raster."""
    if not isinstance(faces, CubeFaceSet):
        faces = CubeFaceSet(np.asarray(faces, dtype=DTYPE))
    a, c = faces.side, faces.channels
    grid = build_cube_to_ep_grid(a, heq_out)
    flat = faces.data.transpose(1, 0, 2, 3).reshape(c, -1)
    return np.ascontiguousarray(grid.apply(flat).reshape(c, heq_out, 2 * heq_out), dtype=DTYPE)


# ---------------------------------------------------------------------------
# 4-3 unfolding


@dataclass(frozen=True)
class UnfoldingLayout:
    """Slot assignment of one 4-3 unfolding.

    ``rotations`` maps a vertical-strip slot to the ``np.rot90`` power applied
    to that face before placement.
    """

    center: str
    horizontal: tuple[str, str, str, str]
    vertical: tuple[str, str, str]
    rotations: tuple[int, int, int]


@lru_cache(maxsize=None)
def layout_for(center: str) -> UnfoldingLayout:
    if center not in RING:
        raise ValueError(f"unfolding centre must be one of {RING}, got {center!r}")
    k = RING.index(center)
    horizontal = tuple(RING[(k + i) % 4] for i in (-1, 0, 1, 2))
    # T turns clockwise and D anticlockwise by k quarter turns so that the
    # edge each shares with the centre face faces it in the strip.
    return UnfoldingLayout(center, horizontal, ("T", center, "D"), (-k % 4, 0, k % 4))


@dataclass(frozen=True)
class CUPair:
    """One 4-3 unfolding split into a (C, a, 4a) and a (C, 3a, a) strip."""

    horizontal: np.ndarray
    vertical: np.ndarray
    layout: UnfoldingLayout


def _rot(x: np.ndarray, k: int) -> np.ndarray:
    return np.rot90(x, k, axes=(-2, -1))


def unfold(faces: CubeFaceSet, center: str) -> CUPair:
    layout = layout_for(center)
    horizontal = np.concatenate([faces[f] for f in layout.horizontal], axis=-1)
    vertical = np.concatenate(
        [_rot(faces[f], k) for f, k in zip(layout.vertical, layout.rotations)], axis=-2
    )
    return CUPair(np.ascontiguousarray(horizontal), np.ascontiguousarray(vertical), layout)


def render_43_canvas(pair: CUPair) -> tuple[np.ndarray, np.ndarray]:
    """Paste both strips into a (C, 3a, 4a) cross; returns (canvas, valid mask)."""
    c, a, _ = pair.horizontal.shape
    canvas = np.zeros((c, 3 * a, 4 * a), dtype=DTYPE)
    mask = np.zeros((3 * a, 4 * a), dtype=bool)
    canvas[:, :, a : 2 * a] = pair.vertical
    mask[:, a : 2 * a] = True
    canvas[:, a : 2 * a, :] = pair.horizontal
    mask[a : 2 * a, :] = True
    return canvas, mask


def strips_to_faces(horizontal, vertical, layout: UnfoldingLayout) -> CubeFaceSet:
    """Undo an unfolding; the centre face is the mean of its two copies."""
    horizontal = as_tensor(horizontal)
    vertical = as_tensor(vertical)
    c, h, w = horizontal.shape
    if w != 4 * h or vertical.shape != (c, 3 * h, h):
        raise ShapeError(
            f"strip shapes {horizontal.shape} / {vertical.shape} do not form a 4-3 unfolding"
        )
    faces = {}
    for i, f in enumerate(layout.horizontal):
        faces[f] = horizontal[:, :, i * h : (i + 1) * h]
    for i, (f, k) in enumerate(zip(layout.vertical, layout.rotations)):
        tile = _rot(vertical[:, i * h : (i + 1) * h, :], -k)
        if f == layout.center:
            faces[f] = ((faces[f].astype(np.float64) + tile) / 2).astype(DTYPE)
        else:
            faces[f] = tile
    return CubeFaceSet.from_dict(faces)


def cep_merge(horizontal, vertical, layout: UnfoldingLayout, heq_out: int) -> np.ndarray:
    """Cube-to-equirectangular projection of one unfolding's two feature strips."""
    return cube_to_ep(strips_to_faces(horizontal, vertical, layout), heq_out)
