"""Geometric adjudication of top-down parallel-jaw grasps."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .render import NO_JITTER, render


@dataclass(frozen=True)
class GraspAction:
    row: int
    col: int
    angle_index: int

    def angle(self, num_angles: int) -> float:
        """Jaw-closing direction in radians, measured from +x toward +y."""
        return self.angle_index * math.pi / num_angles


@dataclass(frozen=True)
class Gripper:
    jaw_opening: float = 0.13
    jaw_thickness: float = 0.02
    jaw_width: float = 0.05
    num_angles: int = 6
    # sampling step for chord and jaw tests, in workspace units
    step: float = 0.0025


@dataclass(frozen=True)
class GraspOutcome:
    grasped: object = None  # SceneObject or None
    collided: bool = False

    @property
    def success(self) -> bool:
        return self.grasped is not None


def grasp_point(action: GraspAction, size: int) -> tuple[float, float]:
    return (action.col + 0.5) / size, (action.row + 0.5) / size


def chord_extent(obj, x: float, y: float, direction, reach: float, step: float) -> float:
    """Length of the footprint run through (x, y) along ``direction``."""
    n = int(math.ceil(reach / step))
    t = np.arange(-n, n + 1) * step
    inside = obj.contains(x + t * direction[0], y + t * direction[1])
    if not inside[n]:
        return 0.0
    lo = n
    while lo > 0 and inside[lo - 1]:
        lo -= 1
    hi = n
    while hi < 2 * n and inside[hi + 1]:
        hi += 1
    if lo == 0 or hi == 2 * n:
        return math.inf
    return (hi - lo + 1) * step


def jaw_points(x: float, y: float, theta: float, gripper: Gripper) -> np.ndarray:
    """Sample points covering both jaw footprints, shape (K, 2)."""
    d = np.array([math.cos(theta), math.sin(theta)])
    p = np.array([-d[1], d[0]])
    na = max(int(math.ceil(gripper.jaw_thickness / gripper.step)), 1)
    nb = max(int(math.ceil(gripper.jaw_width / gripper.step)), 1)
    a = np.linspace(-gripper.jaw_thickness / 2, gripper.jaw_thickness / 2, na + 1)
    b = np.linspace(-gripper.jaw_width / 2, gripper.jaw_width / 2, nb + 1)
    aa, bb = np.meshgrid(a, b, indexing="ij")
    aa, bb = aa.ravel(), bb.ravel()
    off = gripper.jaw_opening / 2 + gripper.jaw_thickness / 2
    pts = []
    for sign in (-1.0, 1.0):
        cx, cy = x + sign * off * d[0], y + sign * off * d[1]
        pts.append(np.stack([cx + aa * d[0] + bb * p[0], cy + aa * d[1] + bb * p[1]], axis=1))
    return np.concatenate(pts)


def grasp_oracle(scene, action: GraspAction, gripper: Gripper = Gripper(), size: int = 96,
                 checks=("center", "extent", "jaws")) -> GraspOutcome:
    """Decide which object, if any, a grasp picks up.

    An object is grasped iff the grasp center is inside its footprint, its
    chord along the closing direction fits between the open jaws, and
    neither jaw footprint touches another object. ``checks`` exists so
    tests can disable one condition at a time.
    """
    if not (0 <= action.row < size and 0 <= action.col < size and 0 <= action.angle_index < gripper.num_angles):
        raise IndexError(f"action out of bounds: {action}")
    x, y = grasp_point(action, size)
    theta = action.angle(gripper.num_angles)
    d = (math.cos(theta), math.sin(theta))

    candidate = None
    for obj in scene.objects:
        if obj.contains(x, y):
            candidate = obj
            break
    if "center" not in checks and candidate is None:
        # nearest object stands in for the one under the fingers
        candidate = min(scene.objects, key=lambda o: math.hypot(o.pose[0] - x, o.pose[1] - y), default=None)

    pts = jaw_points(x, y, theta, gripper)
    collided = False
    if "jaws" in checks:
        for obj in scene.objects:
            if candidate is not None and obj.uid == candidate.uid:
                continue
            if obj.contains(pts[:, 0], pts[:, 1]).any():
                collided = True
                break
    if candidate is None or collided:
        return GraspOutcome(None, collided)
    if "extent" in checks:
        reach = gripper.jaw_opening + 2 * candidate.radius
        if chord_extent(candidate, x, y, d, reach, gripper.step) > gripper.jaw_opening:
            return GraspOutcome(None, False)
    return GraspOutcome(candidate, False)


def execute_and_diff(scene, action: GraspAction, jitter=NO_JITTER, gripper: Gripper = Gripper(),
                     size: int = 96, v_pre=None):
    """Run the oracle and render the post-grasp heightmap.

    On failure v_post is v_pre; on success it is the scene re-rendered
    without the grasped object, under the same jitter seed.
    """
    outcome = grasp_oracle(scene, action, gripper, size)
    if v_pre is None:
        v_pre, _ = render(scene, jitter, size)
    if not outcome.success:
        return outcome, v_pre
    v_post, _ = render(scene.without(outcome.grasped.uid), jitter, size)
    return outcome, v_post
