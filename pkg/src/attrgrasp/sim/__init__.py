"""Deterministic 2D tabletop simulator."""
from .grasp import GraspAction, GraspOutcome, Gripper, execute_and_diff, grasp_oracle
from .objects import (NOVEL_TEMPLATES, BasicPool, FixedPool, NovelPool, Part, SceneObject, basic_object,
                      compose_novel_object, make_pool, novel_object)
from .render import DEFAULT_JITTER, NO_JITTER, Heightmap, Jitter, footprint_mask, perturb, render
from .scene import PlacementError, Scene, sample_scene, single_object_scene

__all__ = [
    "BasicPool", "DEFAULT_JITTER", "FixedPool", "GraspAction", "GraspOutcome", "Gripper", "Heightmap",
    "Jitter", "NO_JITTER", "NOVEL_TEMPLATES", "NovelPool", "Part", "PlacementError", "Scene", "SceneObject",
    "basic_object", "compose_novel_object", "execute_and_diff", "footprint_mask", "grasp_oracle",
    "make_pool", "novel_object", "perturb", "render", "sample_scene", "single_object_scene",
]
