import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from omnisal import oracles as O
from omnisal import projection as P
from omnisal.fixtures import great_circle_stripe
from omnisal.metrics import psnr
from omnisal.selftest import ROUNDTRIP_PSNR_FLOOR, seam_steps
from omnisal.tensor import ShapeError

from conftest import rand_tensor


def labelled_faces(a=4, channels=1):
    """Faces whose value encodes the face index, with a row/col ramp to expose rotations."""
    ramp = np.arange(a * a, dtype=np.float32).reshape(a, a) / 100
    data = np.stack([np.broadcast_to(i + ramp, (channels, a, a)) for i in range(6)])
    return P.CubeFaceSet(data.astype(np.float32))


def face_id(tile):
    return P.FACES[int(np.floor(tile.min()))]


class TestDirections:
    def test_front_centre_is_image_centre(self):
        d = P.face_uv_to_directions(P.FACE_INDEX["F"], 0.0, 0.0)
        np.testing.assert_allclose(d, [1, 0, 0])
        heq = 16
        row, col = P.lonlat_to_ep_coords(*P.directions_to_lonlat(d), heq)
        assert (row, col) == pytest.approx((heq / 2 - 0.5, heq - 0.5))

    def test_front_centre_pixel_samples_centre(self):
        heq, a = 32, 9  # odd side: the centre pixel sits exactly on the axis
        ep = np.zeros((1, heq, 2 * heq), np.float32)
        ep[0, heq // 2 - 1:heq // 2 + 1, heq - 1:heq + 1] = 1.0
        assert P.ep_to_cube(ep, a)["F"][0, a // 2, a // 2] == pytest.approx(1.0)

    @pytest.mark.parametrize("face,axis", [("F", (1, 0, 0)), ("R", (0, 1, 0)), ("T", (0, 0, 1)),
                                           ("B", (-1, 0, 0)), ("L", (0, -1, 0)), ("D", (0, 0, -1))])
    def test_axis_convention(self, face, axis):
        np.testing.assert_allclose(P.face_uv_to_directions(P.FACE_INDEX[face], 0, 0), axis, atol=1e-15)

    def test_longitude_origin(self):
        lon, lat = P.ep_pixel_lonlat(4)
        assert lon[0, 0] == pytest.approx(-np.pi + np.pi / 8)
        assert lat[0, 0] == pytest.approx(np.pi / 2 - np.pi / 8)

    @settings(max_examples=200, deadline=None)
    @given(st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 3).filter(lambda v: np.linalg.norm(v) > 1e-3))
    def test_face_uv_roundtrip(self, v):
        d = np.asarray(v) / np.linalg.norm(v)
        face, u, w = P.directions_to_face_uv(d)
        assert -1 - 1e-12 <= u <= 1 + 1e-12 and -1 - 1e-12 <= w <= 1 + 1e-12
        assert O.angle_between(d, P.face_uv_to_directions(face, u, w)) < 1e-4

    def test_ownership_matches_bruteforce(self):
        lon, lat = P.ep_pixel_lonlat(32)
        dirs = P.lonlat_to_directions(lon, lat).reshape(-1, 3)
        fast = P.owning_face(dirs)
        assert all(P.FACES[f] == O.closest_face(d) for f, d in zip(fast, dirs))

    @pytest.mark.parametrize("d,face", [((1, 1, 0), "F"), ((0, 1, 1), "R"), ((1, 0, 1), "F"),
                                        ((-1, -1, -1), "B")])
    def test_ownership_tie_rule(self, d, face):
        assert P.FACES[P.owning_face(np.array(d, float))] == face == O.closest_face(d)


class TestProjection:
    def test_constant_ep_constant_faces(self):
        faces = P.ep_to_cube(np.full((3, 16, 32), 0.4, np.float32))
        assert faces.side == 8
        np.testing.assert_allclose(faces.data, 0.4, atol=1e-6)

    def test_constant_faces_constant_ep(self):
        ep = P.cube_to_ep(np.full((6, 2, 8, 8), 0.7, np.float32), 16)
        assert ep.shape == (2, 16, 32)
        np.testing.assert_allclose(ep, 0.7, atol=1e-6)

    def test_paper_face_size(self):
        faces = P.ep_to_cube(np.zeros((1, 512, 1024), np.float32))
        assert faces.data.shape == (6, 1, 256, 256)

    def test_roundtrip_psnr(self, smooth_ep):
        back = P.cube_to_ep(P.ep_to_cube(smooth_ep, 128), 256)
        assert psnr(back, smooth_ep) >= ROUNDTRIP_PSNR_FLOOR

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_value_range_preserved(self, seed):
        ep = np.random.default_rng(seed).random((1, 8, 16)).astype(np.float32)
        lo, hi = ep.min(), ep.max()
        faces = P.ep_to_cube(ep, 6)
        assert faces.data.min() >= lo - 1e-6 and faces.data.max() <= hi + 1e-6
        back = P.cube_to_ep(faces, 8)
        assert back.min() >= lo - 1e-6 and back.max() <= hi + 1e-6

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_yaw_equivariance(self, rng, k):
        ep = rng.random((2, 16, 32)).astype(np.float32)
        before = P.ep_to_cube(ep)
        after = P.ep_to_cube(np.roll(ep, k * 8, axis=2))
        for i, f in enumerate(P.RING):
            np.testing.assert_allclose(after[f], before[P.RING[(i - k) % 4]], atol=1e-6)
        np.testing.assert_allclose(after["T"], np.rot90(before["T"], k, axes=(1, 2)), atol=1e-6)
        np.testing.assert_allclose(after["D"], np.rot90(before["D"], -k, axes=(1, 2)), atol=1e-6)

    @pytest.mark.parametrize("shape", [(1, 10, 10), (3, 8, 15)])
    def test_aspect_error(self, shape):
        with pytest.raises(P.AspectError):
            P.ep_to_cube(np.zeros(shape, np.float32))

    def test_image_checks(self):
        with pytest.raises(ShapeError):
            P.check_equirect(np.zeros((2, 4, 8)), image=True)
        with pytest.raises(ValueError):
            P.check_equirect(np.full((1, 4, 8), 1.5), image=True)


class TestGrids:
    @pytest.mark.parametrize("build,args", [(P.build_ep_to_cube_grid, (16, 8)),
                                            (P.build_cube_to_ep_grid, (8, 16))])
    def test_weights_convex(self, build, args):
        g = build(*args)
        assert np.all(g.weight >= 0)
        np.testing.assert_allclose(g.weight.sum(axis=1), 1.0, atol=1e-6)

    def test_reuse_is_identical(self):
        g1 = P.build_ep_to_cube_grid(16, 8)
        g2 = P.build_ep_to_cube_grid(16, 8)
        assert g1 is g2
        assert not g1.index.flags.writeable

    def test_rebuild_bit_identical(self):
        g1 = P.build_cube_to_ep_grid(8, 16)
        P.build_cube_to_ep_grid.cache_clear()
        assert P.build_cube_to_ep_grid(8, 16) == g1

    @pytest.mark.parametrize("build,args", [(P.build_ep_to_cube_grid, (8, 4)),
                                            (P.build_cube_to_ep_grid, (4, 8))])
    def test_file_roundtrip(self, tmp_path, build, args):
        g = build(*args)
        P.write_grid(tmp_path / "g.omg", g)
        raw = (tmp_path / "g.omg").read_bytes()
        assert raw[:4] == b"OMG1" and len(raw) == 32 + 52 * g.n_pixels
        assert P.read_grid(tmp_path / "g.omg") == g

    def test_cube_grid_reads_owning_face(self):
        g = P.build_cube_to_ep_grid(4, 8)
        assert np.all(g.index // 16 == g.face[:, None])


class TestUnfold:
    def test_horizontal_order_front(self):
        pair = P.unfold(labelled_faces(), "F")
        tiles = np.split(pair.horizontal, 4, axis=-1)
        assert [face_id(t) for t in tiles] == ["L", "F", "R", "B"]
        assert pair.horizontal.shape == (1, 4, 16) and pair.vertical.shape == (1, 12, 4)

    @pytest.mark.parametrize("center", P.RING)
    def test_centre_in_both_strips(self, center):
        faces = labelled_faces(5, 2)
        pair = P.unfold(faces, center)
        assert pair.horizontal[:, :, 5:10].tobytes() == pair.vertical[:, 5:10, :].tobytes()
        assert pair.horizontal[:, :, 5:10].tobytes() == faces[center].tobytes()

    def test_vertical_strips_share_poles(self):
        f = P.unfold(labelled_faces(), "F").vertical
        b = P.unfold(labelled_faces(), "B").vertical
        ids_f = [face_id(t) for t in np.split(f, 3, axis=1)]
        ids_b = [face_id(t) for t in np.split(b, 3, axis=1)]
        assert ids_f == ["T", "F", "D"] and ids_b == ["T", "B", "D"]
        assert not np.array_equal(f[:, :4], b[:, :4])  # same face, different rotation

    def test_layout_rejects_poles(self):
        with pytest.raises(ValueError):
            P.layout_for("T")

    def test_stripe_stays_straight(self):
        heq = 128
        ep = great_circle_stripe(heq, 0.04)
        vertical = P.unfold(P.ep_to_cube(ep), "F").vertical[0]
        mask = vertical > 0.5
        _, count = ndimage.label(mask, structure=np.ones((3, 3)))
        assert count == 1
        rows = [np.flatnonzero(r).mean() for r in mask if r.any()]
        assert len(rows) == mask.shape[0]
        assert max(rows) - min(rows) <= 1.0

    @pytest.mark.parametrize("a", [8, 16])
    def test_seam_continuity(self, a):
        assert max(seam_steps(a).values()) <= np.pi / a

    def test_canvas(self):
        pair = P.unfold(labelled_faces(4), "R")
        canvas, mask = P.render_43_canvas(pair)
        assert canvas.shape == (1, 12, 16)
        assert mask.sum() == 6 * 16
        assert not canvas[:, ~mask].any()


def assemble_by_hand(h, v, layout):
    a = h.shape[1]
    faces = {}
    for slot, name in enumerate(layout.horizontal):
        faces[name] = h[:, :, slot * a:(slot + 1) * a].astype(np.float64)
    for slot, name in enumerate(layout.vertical):
        tile = v[:, slot * a:(slot + 1) * a, :]
        for _ in range(layout.rotations[slot] % 4):  # undo one anticlockwise turn at a time
            tile = np.rot90(tile, -1, axes=(1, 2))
        if name in faces:
            faces[name] = 0.5 * (faces[name] + tile)
        else:
            faces[name] = tile
    return np.stack([faces[f] for f in P.FACES])


class TestCEP:
    @pytest.mark.parametrize("center", P.RING)
    def test_matches_hand_assembly(self, rng, center):
        layout = P.layout_for(center)
        h, v = rand_tensor(rng, 3, 6, 24), rand_tensor(rng, 3, 18, 6)
        ref = P.cube_to_ep(assemble_by_hand(h, v, layout).astype(np.float32), 12)
        np.testing.assert_allclose(P.cep_merge(h, v, layout, 12), ref, atol=1e-6)

    def test_equal_copies_no_op(self, rng):
        faces = P.CubeFaceSet(rand_tensor(rng, 6, 2, 8, 8))
        pair = P.unfold(faces, "L")
        merged = P.cep_merge(pair.horizontal, pair.vertical, pair.layout, 16)
        np.testing.assert_array_equal(merged, P.cube_to_ep(faces, 16))

    def test_constant_strips(self):
        layout = P.layout_for("B")
        h, v = np.full((2, 4, 16), 3.0, np.float32), np.full((2, 12, 4), 3.0, np.float32)
        np.testing.assert_allclose(P.cep_merge(h, v, layout, 8), 3.0, rtol=1e-6)

    def test_bad_strip_aspect(self, rng):
        with pytest.raises(ShapeError):
            P.cep_merge(rand_tensor(rng, 1, 4, 12), rand_tensor(rng, 1, 12, 4), P.layout_for("F"), 8)
