import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oplab.annotator import FrameLabel, annotate_video
from oplab.scene_sim import (PRESETS, ActionKind, CameraParams, InvalidConfigError,
                             ObjectSpec, ObjectState, ProjectionError, Scenario,
                             ScenarioConfig, Shape, Size, Vec3, build_scenario,
                             image_to_floor, project_bbox, project_points, simulate,
                             step_world)

from helpers import CONE, SNITCH, contain_then_carry, ev, nested_carry, obj, scene


def test_build_is_deterministic():
    a = build_scenario(7)
    b = build_scenario(7)
    assert a == b
    assert a.to_json() == b.to_json()
    assert build_scenario(8) != a


def test_scenario_json_round_trip():
    sc = build_scenario(3)
    assert Scenario.from_json(sc.to_json()) == sc


def test_lacater_preset_shape():
    for seed in range(5):
        sc = build_scenario(seed, PRESETS["lacater-like"])
        assert sc.num_frames == 300
        assert 5 <= len(sc.objects) <= 10


def test_exactly_one_snitch_and_unique_ids():
    for seed in range(20):
        sc = build_scenario(seed)
        assert sum(o.shape is Shape.SNITCH for o in sc.objects) == 1
        ids = [o.id for o in sc.objects]
        assert len(set(ids)) == len(ids)


def test_no_contain_events_means_no_hidden_labels():
    cfg = ScenarioConfig(contain_prob=0.0)
    for seed in range(15):
        labels = annotate_video(build_scenario(seed, cfg))["labels"]
        assert FrameLabel.CONTAINED not in labels
        assert FrameLabel.CARRIED not in labels


def test_default_config_produces_all_label_kinds():
    seen = set()
    for seed in range(40):
        seen.update(annotate_video(build_scenario(seed))["labels"])
    assert seen == set(FrameLabel)


@pytest.mark.parametrize("kw", [dict(min_objects=0, max_objects=0), dict(num_frames=0)])
def test_invalid_config(kw):
    with pytest.raises(InvalidConfigError):
        build_scenario(1, ScenarioConfig(**kw))


def test_config_json_round_trip(tmp_path):
    cfg = ScenarioConfig(num_frames=33, contain_prob=0.2)
    p = tmp_path / "cfg.json"
    import json
    p.write_text(json.dumps(cfg.to_dict()))
    assert ScenarioConfig.from_json(p) == cfg
    with pytest.raises(InvalidConfigError):
        ScenarioConfig.from_dict({"bogus": 1})


def test_events_well_formed():
    for seed in range(30):
        sc = build_scenario(seed)
        per_actor = {}
        for e in sc.events:
            assert 0 <= e.start_frame < e.end_frame < sc.num_frames
            per_actor.setdefault(e.actor, []).append(e)
            if e.kind is ActionKind.CONTAIN:
                assert sc.spec(e.actor).shape is Shape.CONE
        for evs in per_actor.values():
            evs.sort(key=lambda e: e.start_frame)
            for a, b in zip(evs, evs[1:]):
                assert a.end_frame < b.start_frame


def test_step_world_before_any_event_is_initial():
    sc = contain_then_carry()
    w = step_world(sc, 0)
    for o, p in zip(sc.objects, sc.initial_positions):
        assert w.objects[o.id].position == p
        assert w.objects[o.id].contained_by is None


def test_step_world_range():
    sc = contain_then_carry()
    with pytest.raises(IndexError):
        step_world(sc, sc.num_frames)
    with pytest.raises(IndexError):
        step_world(sc, -1)


def test_step_world_matches_simulate():
    sc = build_scenario(11)
    states = simulate(sc)
    for t in (0, 17, sc.num_frames - 1):
        assert step_world(sc, t) == states[t]


def test_carried_target_moves_rigidly_with_cone():
    sc = contain_then_carry()
    s = simulate(sc)
    assert s[10].objects[0].contained_by == 1
    t1, t2 = 15, 25
    cone_d = np.subtract(s[t2].objects[1].position[:2], s[t1].objects[1].position[:2])
    tgt_d = np.subtract(s[t2].objects[0].position[:2], s[t1].objects[0].position[:2])
    np.testing.assert_allclose(tgt_d, cone_d, atol=1e-12)
    np.testing.assert_allclose(cone_d, [2.0, 1.0], atol=1e-12)


def test_slide_is_linear_and_pick_place_lifts():
    sc = contain_then_carry()
    s = simulate(sc)
    mid = s[20].objects[1].position
    np.testing.assert_allclose(mid[:2], [1.0, 0.5], atol=1e-12)
    # during the contain (a pick-place) the cone leaves the floor
    assert s[6].objects[1].airborne
    assert s[6].objects[1].position.z > CONE.radius
    assert s[10].objects[1].position.z == pytest.approx(CONE.radius)


def _oracle_carrier_chains(sc: Scenario):
    """Replay containment from the event list alone: who holds whom at each frame."""
    holder = {}
    chains = []
    for t in range(sc.num_frames):
        for e in sc.events:
            if e.kind is not ActionKind.SLIDE and t == e.start_frame + 1:
                holder = {k: v for k, v in holder.items() if v != e.actor}
            if e.kind is ActionKind.CONTAIN and t == e.end_frame:
                holder[e.target] = e.actor
        chains.append(dict(holder))
    return chains


def test_nested_cones_carry_innermost_target():
    sc = nested_carry()
    states = simulate(sc)
    chains = _oracle_carrier_chains(sc)
    start = states[16]
    for t in range(16, 30):
        holder = chains[t]
        # brute-force transitive resolution
        root, seen = 0, []
        while root in holder:
            root = holder[root]
            seen.append(root)
        assert seen == states[t].carrier_chain(0)
        assert root == 2
        d_outer = np.subtract(states[t].objects[2].position[:2], start.objects[2].position[:2])
        d_target = np.subtract(states[t].objects[0].position[:2], start.objects[0].position[:2])
        np.testing.assert_allclose(d_target, d_outer, atol=1e-12)


def test_pick_place_releases_contents():
    sc = scene([SNITCH, CONE], [(0.0, 0.0), (-2.0, 0.0)],
               [ev(ActionKind.CONTAIN, 1, 0, 6, (0.0, 0.0), CONE.radius, target=0),
                ev(ActionKind.PICK_PLACE, 1, 10, 18, (2.0, 2.0), CONE.radius)])
    s = simulate(sc)
    assert s[10].objects[0].contained_by == 1
    assert s[11].objects[0].contained_by is None
    assert s[18].objects[0].position[:2] == pytest.approx((0.0, 0.0))


# ---------------------------------------------------------------------------
# invariants over generated scenarios
# ---------------------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**63 - 1))
def test_generated_scenario_invariants(seed):
    sc = build_scenario(seed)
    states = simulate(sc)
    for w in states:
        for i in w.objects:
            w.carrier_chain(i)  # raises on cycles
            c = w.objects[i].contained_by
            if c is not None:
                assert sc.spec(c).shape is Shape.CONE
        for o in sc.objects:
            b = project_bbox(sc.camera, o, w.objects[o.id])
            assert 0.0 <= b.x1 <= b.x2 <= 1.0 and 0.0 <= b.y1 <= b.y2 <= 1.0
    # attachment conservation
    for prev, cur in zip(states, states[1:]):
        for i, s in cur.objects.items():
            if s.contained_by is not None and prev.objects[i].contained_by == s.contained_by:
                c = s.contained_by
                d0 = np.subtract(prev.objects[i].position[:2], prev.objects[c].position[:2])
                d1 = np.subtract(s.position[:2], cur.objects[c].position[:2])
                np.testing.assert_allclose(d0, d1, atol=1e-9)
    # event closure: an uncontained actor is still between its events
    for e in sc.events:
        nxt = min((f.start_frame for f in sc.events
                   if f.actor == e.actor and f.start_frame > e.end_frame), default=sc.num_frames)
        for t in range(e.end_frame, nxt):
            if states[t].objects[e.actor].contained_by is not None:
                break  # once carried it may be released elsewhere
            assert states[t].objects[e.actor].position == states[e.end_frame].objects[e.actor].position


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

LEVEL_CAM = CameraParams(position=Vec3(0.0, -10.0, 0.5), look_at=Vec3(0.0, 0.0, 0.5),
                         focal_length=400.0, image_width=320, image_height=240)


def test_object_on_optical_axis_projects_to_center():
    spec = obj(0, Shape.CUBE, Size.MEDIUM)
    b = project_bbox(LEVEL_CAM, spec, ObjectState(Vec3(0.0, 0.0, 0.5)))
    assert b.center[0] == pytest.approx(0.5, abs=1e-9)
    assert b.center[1] == pytest.approx(0.5, abs=1e-9)


@pytest.mark.parametrize("pos", [(0.0, 0.0, 0.35), (1.5, 2.0, 0.35), (-2.5, -2.5, 0.7)])
def test_doubling_radius_grows_box(pos):
    cam = CameraParams()
    small = ObjectSpec(0, Shape.CUBE, Size.SMALL, 0.3)
    big = ObjectSpec(0, Shape.CUBE, Size.SMALL, 0.6)
    a = project_bbox(cam, small, ObjectState(Vec3(*pos)))
    b = project_bbox(cam, big, ObjectState(Vec3(*pos)))
    assert b.x2 - b.x1 >= a.x2 - a.x1
    assert b.y2 - b.y1 >= a.y2 - a.y1


def _homogeneous_projection(cam: CameraParams, pts: np.ndarray) -> np.ndarray:
    """Independent oracle: explicit 4x4 view matrix and 3x4 intrinsics."""
    c = np.array(cam.position, dtype=float)
    f = np.array(cam.look_at, dtype=float) - c
    f = f / np.linalg.norm(f)
    r = np.array([f[1], -f[0], 0.0])           # f x z_world
    r = r / np.linalg.norm(r)
    u = np.array([r[1] * f[2] - r[2] * f[1], r[2] * f[0] - r[0] * f[2], r[0] * f[1] - r[1] * f[0]])
    view = np.eye(4)
    # camera axes: x right, y down, z forward
    view[0, :3], view[1, :3], view[2, :3] = r, -u, f
    view[:3, 3] = -view[:3, :3] @ c
    K = np.array([[cam.focal_length, 0, cam.image_width / 2, 0],
                  [0, cam.focal_length, cam.image_height / 2, 0],
                  [0, 0, 1, 0]], dtype=float)
    P = K @ view
    hom = np.c_[pts, np.ones(len(pts))] @ P.T
    uv = hom[:, :2] / hom[:, 2:3]
    return uv / [cam.image_width, cam.image_height]


def test_projection_matches_homogeneous_oracle():
    cam = CameraParams(position=Vec3(1.0, -8.0, 6.0), look_at=Vec3(0.5, 0.5, 0.2),
                       focal_length=350.0, image_width=400, image_height=300)
    from oplab.scene_sim import cube_corners
    pts = cube_corners(Vec3(0.7, 1.1, 0.5), 0.5)
    np.testing.assert_allclose(project_points(cam, pts), _homogeneous_projection(cam, pts),
                               atol=1e-9)


def test_projection_behind_camera_raises():
    spec = obj(0, Shape.CUBE)
    with pytest.raises(ProjectionError):
        project_bbox(LEVEL_CAM, spec, ObjectState(Vec3(0.0, -20.0, 0.5)))


def test_image_to_floor_inverts_projection():
    cam = CameraParams()
    for p in [(0.0, 0.0, 0.35), (2.0, -1.5, 0.35), (-2.7, 2.4, 0.35)]:
        uv = project_points(cam, np.array([p]))[0]
        np.testing.assert_allclose(image_to_floor(cam, uv[0], uv[1], 0.35), p[:2], atol=1e-9)


def test_default_camera_sees_whole_floor():
    cam = CameraParams()
    corners = np.array([[x, y, 0.0] for x in (-3, 3) for y in (-3, 3)])
    uv = project_points(cam, corners)
    assert np.all((uv > 0) & (uv < 1))
