"""Hand-built scenes shared by several test modules."""
from oplab.scene_sim import (ActionEvent, ActionKind, CameraParams, ObjectSpec, Scenario,
                             Shape, Size, SIZE_RADIUS, Vec3)


def obj(i, shape, size=Size.MEDIUM):
    return ObjectSpec(id=i, shape=shape, size=size, radius=SIZE_RADIUS[size])


def scene(objects, positions, events=(), num_frames=30, camera=None):
    return Scenario(objects=tuple(objects),
                    initial_positions=tuple(Vec3(x, y, o.radius) for o, (x, y) in
                                            zip(objects, positions)),
                    events=tuple(events), num_frames=num_frames,
                    camera=camera or CameraParams(), seed=0)


def ev(kind, actor, start, end, dest_xy, z, target=None):
    return ActionEvent(kind=kind, actor=actor, start_frame=start, end_frame=end,
                       destination=Vec3(dest_xy[0], dest_xy[1], z), target=target)


SNITCH = obj(0, Shape.SNITCH, Size.SMALL)
CONE = obj(1, Shape.CONE, Size.MEDIUM)
BIG_CONE = obj(2, Shape.CONE, Size.LARGE)
CUBE = obj(3, Shape.CUBE, Size.LARGE)


def contain_then_carry(slide_to=(2.0, 1.0), num_frames=40):
    """Cone covers the snitch over frames 2-10, then slides it over 15-25."""
    return scene(
        [SNITCH, CONE],
        [(0.0, 0.0), (-2.0, 0.0)],
        [ev(ActionKind.CONTAIN, 1, 2, 10, (0.0, 0.0), CONE.radius, target=0),
         ev(ActionKind.SLIDE, 1, 15, 25, slide_to, CONE.radius)],
        num_frames=num_frames)


def nested_carry():
    """Medium cone covers the snitch, large cone covers the medium cone, then slides."""
    return scene(
        [SNITCH, CONE, BIG_CONE],
        [(0.0, 0.0), (-2.0, 0.0), (2.0, -1.0)],
        [ev(ActionKind.CONTAIN, 1, 1, 6, (0.0, 0.0), CONE.radius, target=0),
         ev(ActionKind.CONTAIN, 2, 8, 14, (0.0, 0.0), BIG_CONE.radius, target=1),
         ev(ActionKind.SLIDE, 2, 16, 26, (-1.5, 2.0), BIG_CONE.radius)],
        num_frames=30)
