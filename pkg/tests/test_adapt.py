import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from attrgrasp.adapt import (AdversarialConfig, EmptyMask, MultipleObjects, NoSuccessfulGrasp, ObjectCrop,
                             OneGraspConfig, OneGraspSample, RotatedOutOfBounds, adversarial_adapt, domain_accuracy,
                             extract_objects, mask_iou, named_query, object_aug, one_grasp_adapt, one_grasp_aug,
                             one_grasp_collect, rotate_action, rotate_sample, transform_crop)
from attrgrasp.attributes import DuplicateToken
from attrgrasp.learn import TrainConfig, collect_and_train, grasp_loss
from attrgrasp.net import GraspNet, ModelConfig
from attrgrasp.sim import (GraspAction, Gripper, PlacementError, Scene, basic_object, footprint_mask, grasp_oracle,
                           render, sample_scene)

GRIP = Gripper()


def tiny_model(seed=0):
    torch.manual_seed(seed)
    return GraspNet(ModelConfig(image_size=24, embed_dim=8, token_dim=8, enc_channels=(4, 4, 8),
                                dec_channels=8, res_blocks=1))


@pytest.fixture(scope="module")
def tiny_source():
    cfg = TrainConfig(iterations=30, replay_epochs=0, batch_size=4, image_size=24, num_objects=2,
                      optimizer="adam", lr=1e-3, seed=1)
    model, data, _ = collect_and_train(cfg, tiny_model())
    return model, data, cfg


# -- object extraction and ObjectAug ---------------------------------------------------

def test_extract_cube_area_matches_footprint():
    for yaw in (0.0, 0.4, 1.1):
        cube = basic_object("red", "cube", (0.1, 0.1, 0.06)).at(0.45, 0.55, yaw, uid=1)
        hm, _ = render(Scene((cube,)))
        (crop,) = extract_objects([hm])
        assert abs(int(crop.mask.sum()) - int(footprint_mask(cube).sum())) <= 1
        assert crop.mask[0].any() and crop.mask[-1].any() and crop.mask[:, 0].any() and crop.mask[:, -1].any()


def test_extract_errors():
    hm, _ = render(Scene(()))
    with pytest.raises(EmptyMask):
        extract_objects([hm])
    a = basic_object("red", "cube", (0.08, 0.08, 0.06)).at(0.3, 0.3, 0.0, uid=1)
    b = basic_object("blue", "cube", (0.08, 0.08, 0.06)).at(0.7, 0.7, 0.0, uid=2)
    hm, _ = render(Scene((a, b)))
    with pytest.raises(MultipleObjects):
        extract_objects([hm])
    with pytest.raises(EmptyMask):
        ObjectCrop(np.zeros((2, 2, 3)), np.zeros((2, 2)), np.zeros((2, 2), bool))


def test_transform_identity_and_flip():
    rng = np.random.default_rng(0)
    m = rng.random((7, 5)) > 0.3
    m[0, 0] = m[-1, -1] = True
    crop = ObjectCrop(rng.random((7, 5, 3)) * m[..., None], rng.random((7, 5)) * m, m, 3)
    assert transform_crop(crop) is crop
    f = transform_crop(crop, flip=True)
    assert np.array_equal(f.mask, m[:, ::-1])
    # a half turn of a crop is an index reversal
    r = transform_crop(crop, angle=math.pi)
    assert np.array_equal(r.mask, m[::-1, ::-1])
    assert r.provenance == 3


def _single_crops(n=4):
    objs = [basic_object(c, "cube", (0.08, 0.08, 0.05)) for c in ("red", "green", "blue", "yellow")][:n]
    return extract_objects([render(Scene((o.at(0.5, 0.5, 0.3, uid=1),)))[0] for o in objs])


def test_object_aug_iou_bound_rechecked():
    crops = _single_crops()
    s = object_aug(crops, 60, np.random.default_rng(0), iou_max=0.05)
    assert len(s) == 60
    for placed in s.placements:
        assert 1 <= len(placed) <= 5
        full = []
        for r, c, m in placed:
            f = np.zeros((96, 96), bool)
            f[r:r + m.shape[0], c:c + m.shape[1]] = m
            full.append(f)
        for i in range(len(full)):
            for j in range(i):
                assert mask_iou(full[i], full[j]) <= 0.05


def test_object_aug_deterministic():
    crops = _single_crops()
    a = object_aug(crops, 5, np.random.default_rng(3))
    b = object_aug(crops, 5, np.random.default_rng(3))
    assert all(x.equals(y) for x, y in zip(a.images, b.images))
    assert a.crop_ids == b.crop_ids


def test_object_aug_identity_paste():
    (crop,) = _single_crops(1)
    s = object_aug([crop], 1, np.random.default_rng(1), mode="overlay", objects_per_image=(1, 1))
    (r, c, m), = s.placements[0]
    img = s.images[0]
    h, w = m.shape
    assert np.array_equal(m, crop.mask)
    assert np.allclose(img.depth[r:r + h, c:c + w][m], crop.depth[m], atol=1e-6)
    assert np.allclose(img.rgb[r:r + h, c:c + w][m], crop.rgb[m], atol=1e-6)
    outside = np.ones((96, 96), bool)
    outside[r:r + h, c:c + w] &= ~m
    assert (img.depth[outside] == 0).all()


def test_object_aug_placement_error():
    # five crops each wider than half the image cannot sit side by side without overlap
    big = np.ones((60, 60), bool)
    crops = [ObjectCrop(np.ones((60, 60, 3)), np.ones((60, 60)), big, i) for i in range(5)]
    with pytest.raises(PlacementError):
        object_aug(crops, 1, np.random.default_rng(0), iou_max=0.0, objects_per_image=(5, 5), mode="overlay")


# -- one-grasp augmentation --------------------------------------------------------

def _raw_sample(size=96):
    cube = basic_object("red", "cuboid", (0.09, 0.05, 0.05)).at(0.42, 0.58, 0.3, uid=1)
    scene = Scene((cube,))
    hm, mask = render(scene, size=size)
    for k in range(6):
        r, c = int(0.58 * size), int(0.42 * size)
        a = GraspAction(r, c, k)
        if grasp_oracle(scene, a, GRIP, size).success:
            return scene, OneGraspSample(hm, "red cuboid", mask, a)
    raise AssertionError("fixture has no successful grasp")


def test_rotation_k0_identity():
    _, raw = _raw_sample()
    s0 = one_grasp_aug(raw, 6)[0]
    assert s0.a == raw.a and s0.v_pre.equals(raw.v_pre) and np.array_equal(s0.M, raw.M)
    assert [s.rotation for s in one_grasp_aug(raw, 6)] == list(range(6))


def test_rotation_quarter_and_half_turns_exact():
    _, raw = _raw_sample()
    # k = N/2 is a quarter turn: (r, c) -> (c, S-1-r), angle index shifted by N/2
    s = one_grasp_aug(raw, 6)[3]
    assert (s.a.row, s.a.col) == (raw.a.col, 95 - raw.a.row)
    assert s.a.angle_index == (raw.a.angle_index + 3) % 6
    assert np.array_equal(s.v_pre.rgb, np.swapaxes(raw.v_pre.rgb, 0, 1)[:, ::-1])
    assert np.array_equal(s.M, raw.M.T[:, ::-1])
    # k = N is the half turn: point reflection, angle index unchanged
    h = rotate_sample(raw, 6, 6)
    assert (h.a.row, h.a.col) == (95 - raw.a.row, 95 - raw.a.col)
    assert h.a.angle_index == raw.a.angle_index
    assert np.array_equal(h.v_pre.rgb, raw.v_pre.rgb[::-1, ::-1])
    assert np.array_equal(h.v_pre.depth, raw.v_pre.depth[::-1, ::-1])
    assert np.array_equal(h.M, raw.M[::-1, ::-1])


def test_rotation_composition_returns_action():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = GraspAction(int(rng.integers(20, 76)), int(rng.integers(20, 76)), int(rng.integers(6)))
        for k in range(6):
            b = rotate_action(rotate_action(a, k, 6, 96), -k, 6, 96)
            assert b.angle_index == a.angle_index
            # exact at right angles; sub-pixel pixel rounding otherwise
            tol = 0 if k in (0, 3) else 1
            assert abs(b.row - a.row) <= tol and abs(b.col - a.col) <= tol


def test_rotated_corner_out_of_bounds():
    with pytest.raises(RotatedOutOfBounds):
        rotate_action(GraspAction(0, 0, 0), 1, 6, 96)


def test_rotated_actions_succeed_on_rotated_scenes():
    for seed in range(6):
        scene, raw = None, None
        s = sample_scene(1, "basic", rng_seed=seed)
        o = s.objects[0]
        r, c = int(o.pose[1] * 96), int(o.pose[0] * 96)
        for k in range(6):
            if grasp_oracle(s, GraspAction(r, c, k), GRIP).success:
                scene, raw = s, GraspAction(r, c, k)
                break
        if raw is None:
            continue
        for k in range(6):
            th = k * math.pi / 6
            x, y = o.pose[0] - 0.5, o.pose[1] - 0.5
            rotated = o.at(0.5 + math.cos(th) * x - math.sin(th) * y, 0.5 + math.sin(th) * x + math.cos(th) * y,
                           o.pose[2] + th)
            a = rotate_action(raw, k, 6, 96)
            assert grasp_oracle(Scene((rotated,)), a, GRIP).success, (seed, k)


def test_rpt_and_single_modes():
    _, raw = _raw_sample()
    rpt = one_grasp_aug(raw, 6, "rpt")
    assert len(rpt) == 6 and all(s.a == raw.a for s in rpt)
    assert one_grasp_aug(raw, 6, "single") == [raw]


# -- one-grasp collection and fine-tuning ------------------------------------------------

def test_collect_ungraspable_object():
    huge = basic_object("red", "cube", (2.2 * GRIP.jaw_opening,) * 2 + (0.05,))
    with pytest.raises(NoSuccessfulGrasp):
        one_grasp_collect(tiny_model(), huge, "red cube", np.random.default_rng(0), max_trials=3, size=24)


class DepthPeakPolicy(GraspNet):
    """Scores every angle by raw height, so the greedy grasp lands on the top of the object."""

    def forward(self, x, texts):
        return x[:, 3:4].repeat(1, self.config.num_angles, 1, 1)


def test_collect_records_single_success():
    sphere = basic_object("red", "sphere", (0.06, 0.06, 0.06))
    policy = DepthPeakPolicy(ModelConfig(image_size=24, embed_dim=8, token_dim=8, enc_channels=(4, 4, 8)))
    s = one_grasp_collect(policy, sphere, "red sphere", np.random.default_rng(0), max_trials=5, size=24)
    assert s.trials == 1 and s.q_label == 1.0 and s.rotation == 0
    assert not s.M[s.a.row, s.a.col]


def test_name_token_mean_init_keeps_text_vector():
    m = GraspNet()
    before = m.encode_text(["red sphere"]).detach()
    adapted, vocab = one_grasp_adapt(m, [], "apple", "red sphere", OneGraspConfig(steps=0))
    after = adapted.encode_text([named_query("apple", "red sphere")]).detach()
    assert torch.allclose(before, after, atol=1e-6)
    assert "apple" in vocab and "apple" not in m.vocab
    with pytest.raises(DuplicateToken):
        one_grasp_adapt(adapted, [], "apple", "red sphere", OneGraspConfig(steps=0))


def test_one_grasp_adapt_fits_training_poses():
    _, raw = _raw_sample(24)
    samples = one_grasp_aug(raw, 6)
    m = tiny_model()
    adapted, _ = one_grasp_adapt(m, samples, "brick", "red cuboid",
                                 OneGraspConfig(steps=60, optimizer="adam", lr=1e-3))
    recs = [s.record() for s in samples]
    named = [replace(r, t="brick, red cuboid") for r in recs]
    with torch.no_grad():
        assert float(grasp_loss(adapted, named)) < 0.5 * float(grasp_loss(m, recs))
    # the caller's vocabulary and weights are left alone
    assert "brick" not in m.vocab


# -- adversarial adaptation ---------------------------------------------------------

def _targets(n, seed):
    from attrgrasp.sim import Jitter
    j = Jitter(0.2, 0.01, True, seed=seed)
    return [render(sample_scene(2, "basic", rng_seed=seed * 1000 + i), j, 24)[0] for i in range(n)]


def _main_params(m):
    return {n: p.detach().clone() for n, p in m.named_parameters() if not n.startswith("domain.")}


def test_zero_reversal_matches_plain_finetuning(tiny_source):
    model, data, cfg = tiny_source
    ac = AdversarialConfig(steps=5, batch_size=4, lambda_r=0.0, optimizer="adam", lr=1e-3)
    a = adversarial_adapt(model, data, _targets(8, 1), cfg, ac)
    b = adversarial_adapt(model, data, [], cfg, ac)
    pa, pb = _main_params(a), _main_params(b)
    assert any(not torch.equal(pa[n], _main_params(model)[n]) for n in pa)
    for n in pa:
        assert torch.equal(pa[n], pb[n]), n


def test_reversal_changes_encoder_only_through_domain_loss(tiny_source):
    model, data, cfg = tiny_source
    ac = AdversarialConfig(steps=5, batch_size=4, lambda_r=1.0, optimizer="adam", lr=1e-3)
    a = adversarial_adapt(model, data, _targets(8, 1), cfg, ac)
    b = adversarial_adapt(model, data, [], cfg, ac)
    pa, pb = _main_params(a), _main_params(b)
    assert any(not torch.equal(pa[n], pb[n]) for n in pa if n.startswith("encoder."))
    # the caller's model is untouched
    assert all(torch.equal(p, q) for p, q in zip(_main_params(model).values(), _main_params(tiny_source[0]).values()))


def test_domain_accuracy_range(tiny_source):
    model, data, _ = tiny_source
    acc = domain_accuracy(model, [r.v_pre for r in data[:6]], _targets(6, 2))
    assert 0.0 <= acc <= 1.0
