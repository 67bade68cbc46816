import numpy as np
import pytest
from hypothesis import given, strategies as st

from splatdistill.errors import SchemaError
from splatdistill.posecond import (
    BODY_KEYPOINTS, FACE_KEYPOINTS, KEYPOINTS, PoseSkeleton, VisibilityRules, mirror_skeleton, project_keypoints,
    rasterize_pose, trim_skeleton,
)
from splatdistill.splat import Camera
from splatdistill.synthetic import humanoid_keypoints

W, H = 48, 64


def _skeleton(seed=0):
    rng = np.random.default_rng(seed)
    return PoseSkeleton({n: (float(rng.uniform(4, W - 5)), float(rng.uniform(4, H - 5)), True) for n in KEYPOINTS})


def _face_visible(skel):
    return {n for n in FACE_KEYPOINTS if skel.visible(n)}


class TestTrim:
    def test_front_shows_whole_face(self):
        assert _face_visible(trim_skeleton(_skeleton(), 0)) == set(FACE_KEYPOINTS)

    def test_left_ear_drops_past_sixty(self):
        vis = _face_visible(trim_skeleton(_skeleton(), 70))
        assert vis == set(FACE_KEYPOINTS) - {"left_ear"}
        assert "left_ear" in _face_visible(trim_skeleton(_skeleton(), 60))

    def test_back_shows_only_ears(self):
        assert _face_visible(trim_skeleton(_skeleton(), 180)) == {"left_ear", "right_ear"}

    def test_body_untouched(self):
        s = trim_skeleton(_skeleton(), 180)
        assert all(s.visible(n) for n in BODY_KEYPOINTS)

    def test_masked_input_stays_masked(self):
        s = _skeleton()
        pts = dict(s.points)
        pts["nose"] = (pts["nose"][0], pts["nose"][1], False)
        assert not trim_skeleton(PoseSkeleton(pts), 0).visible("nose")

    def test_custom_thresholds(self):
        s = trim_skeleton(_skeleton(), 50, VisibilityRules(ear=45))
        assert not s.visible("left_ear")

    @given(st.floats(0, 360, exclude_max=True))
    def test_idempotent(self, a):
        once = trim_skeleton(_skeleton(), a)
        assert trim_skeleton(once, a) == once

    @given(st.floats(0, 360, exclude_max=True))
    def test_mirror_symmetry(self, a):
        s = _skeleton()
        left = trim_skeleton(s, a)
        right = trim_skeleton(mirror_skeleton(s, W), (360 - a) % 360)
        assert mirror_skeleton(left, W) == right

    @pytest.mark.parametrize("name", FACE_KEYPOINTS)
    def test_monotone_toward_back(self, name):
        # once masked on the way round, a keypoint stays masked until the back sector
        rules = VisibilityRules()
        seq = [rules.masked(name, a) for a in np.arange(0, rules.back_start, 0.5)]
        first = seq.index(True) if True in seq else len(seq)
        assert all(seq[first:])

    def test_unknown_name(self):
        with pytest.raises(SchemaError):
            PoseSkeleton({"tail": (0.0, 0.0, True)})


class TestRasterize:
    def test_nothing_visible_is_black(self):
        s = PoseSkeleton({n: (10.0, 10.0, False) for n in KEYPOINTS})
        np.testing.assert_array_equal(rasterize_pose(s, W, H), 0)

    def test_single_disc_area(self):
        s = PoseSkeleton({"nose": (W / 2, H / 2, True)})
        img = rasterize_pose(s, W, H)
        count = int(np.any(img > 0, axis=-1).sum())
        # lattice points within radius 3 of a lattice point
        assert abs(count - 29) <= 1
        assert abs(count - np.pi * 9) <= 1.5

    def test_limb_needs_both_ends(self):
        s = PoseSkeleton({"neck": (10.0, 10.0, True), "nose": (10.0, 40.0, False)})
        img = rasterize_pose(s, W, H)
        assert not np.any(img[20:30])

    def test_deterministic(self):
        s = _skeleton(3)
        np.testing.assert_array_equal(rasterize_pose(s, W, H), rasterize_pose(s, W, H))

    @pytest.mark.parametrize("a", [0, 30, 70, 100, 130, 180, 250, 300])
    def test_mirror_image(self, a):
        s = _skeleton(1)
        left = rasterize_pose(trim_skeleton(s, a), W, H)
        right = rasterize_pose(trim_skeleton(mirror_skeleton(s, W), (360 - a) % 360), W, H)
        np.testing.assert_array_equal(left, right[:, ::-1])


class TestIO:
    def test_json_round_trip(self):
        s = trim_skeleton(_skeleton(2), 100)
        assert PoseSkeleton.from_json(s.to_json()) == s

    def test_projection_of_reference_body(self):
        cam = Camera(0.0, 0.0, 3.0, 64, 64)
        s = project_keypoints(humanoid_keypoints(), cam)
        assert set(s.visible_names()) == set(KEYPOINTS)
        # the subject's left appears on the image's right in a frontal view
        assert s.points["left_shoulder"][0] > s.points["right_shoulder"][0]
        assert s.points["nose"][1] < s.points["left_ankle"][1]

    def test_behind_camera_invisible(self):
        cam = Camera(0.0, 0.0, 0.5, 16, 16)
        s = project_keypoints({"nose": (0.0, 0.0, 5.0)}, cam)
        assert not s.visible("nose")
