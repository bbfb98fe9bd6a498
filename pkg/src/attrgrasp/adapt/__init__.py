"""Adversarial and one-grasp adaptation with their data augmentations."""
from .adversarial import AdversarialConfig, adversarial_adapt, domain_accuracy
from .objectaug import (AugmentedImageSet, EmptyMask, MultipleObjects, ObjectCrop, extract_objects, mask_iou,
                        object_aug, raw_object_set, transform_crop)
from .onegrasp import (NoSuccessfulGrasp, OneGraspConfig, OneGraspSample, RotatedOutOfBounds, add_name_token,
                       named_query, one_grasp_adapt, one_grasp_aug, one_grasp_collect, rotate_action, rotate_sample)

__all__ = [
    "AdversarialConfig", "AugmentedImageSet", "EmptyMask", "MultipleObjects", "NoSuccessfulGrasp", "ObjectCrop",
    "OneGraspConfig", "OneGraspSample", "RotatedOutOfBounds", "add_name_token", "adversarial_adapt",
    "domain_accuracy", "extract_objects", "mask_iou", "named_query", "object_aug", "one_grasp_adapt",
    "one_grasp_aug", "one_grasp_collect", "raw_object_set", "rotate_action", "rotate_sample", "transform_crop",
]
