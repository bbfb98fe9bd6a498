"""Acceptance criteria 1-10.

Criteria 1, 2 and 10 run here directly. Criteria 3-9 read the cached runs of
``attrgrasp.evalcli.experiments`` (computed on first use, several CPU hours;
``python -m attrgrasp.evalcli.experiments`` warms the cache).
"""
import json
import math
import time

import numpy as np
import pytest
import torch
import yaml
from conftest import CRITERIA

from attrgrasp.attributes import similarity, similarity_matrix
from attrgrasp.evalcli import cli, experiments
from attrgrasp.learn import (TrainConfig, adversarial_loss, attribute_loss, collect_and_train, domain_bce,
                             grasp_loss, grl, metric_loss, motion_loss_batch)
from attrgrasp.net import GraspNet, ModelConfig

N = 10_000
TOL = 1e-6


def report(k, ok, detail):
    CRITERIA[k] = (bool(ok), detail)
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def tiny_model(seed=0, dtype=torch.float32):
    torch.manual_seed(seed)
    m = GraspNet(ModelConfig(image_size=24, embed_dim=8, token_dim=8, enc_channels=(4, 4, 8), dec_channels=8,
                             res_blocks=1, domain_hidden=8))
    return m.to(dtype)


# -- 1: exact math against loop oracles ---------------------------------------------

def _loop_similarity(a, b):
    return sum(1 for x, y in zip(a, b) if x == y and x != 0) / len(a)


def _loop_sigmoid_bce(z, d):
    p = 1.0 / (1.0 + math.exp(-z))
    return -(d * math.log(p) + (1 - d) * math.log(1 - p))


def test_criterion_1_exact_math():
    rng = np.random.default_rng(0)
    t0 = time.time()
    errs = {}

    # similarity over labels with 0 as the null slot
    n = rng.integers(1, 5, N)
    a = [rng.integers(0, 4, k) for k in n]
    b = [rng.integers(0, 4, k) for k in n]
    errs["similarity"] = max(abs(similarity(x, y) - _loop_similarity(x, y)) for x, y in zip(a, b))
    la, lb = rng.integers(0, 4, (N, 3)), rng.integers(0, 4, (50, 3))
    sm = similarity_matrix(la, lb)
    errs["similarity_matrix"] = max(abs(sm[i, j] - _loop_similarity(la[i], lb[j]))
                                    for i in range(0, N, 97) for j in range(50))

    # motion loss on executed-angle maps
    q = rng.random((N, 5, 5))
    rows, cols = rng.integers(0, 5, N), rng.integers(0, 5, N)
    qb = rng.random(N)
    masks = rng.random((N, 5, 5)) < 0.4
    lam = 0.1
    got = motion_loss_batch(torch.from_numpy(q), rows, cols, qb, masks, lam).numpy()
    ref = np.empty(N)
    for i in range(N):
        bg = 0.0
        for r in range(5):
            for c in range(5):
                if masks[i, r, c]:
                    bg += q[i, r, c] ** 2
        ref[i] = (q[i, rows[i], cols[i]] - qb[i]) ** 2 + lam * bg
    errs["motion"] = float(np.abs(got - ref).max())

    # triplet hinge on squared distances
    A, P, Q = (rng.normal(size=(N, 6)) for _ in range(3))
    alpha = rng.random(N)
    worst = 0.0
    for i in range(N):
        dp = sum((A[i, j] - P[i, j]) ** 2 for j in range(6))
        dn = sum((A[i, j] - Q[i, j]) ** 2 for j in range(6))
        got = metric_loss(torch.from_numpy(A[i:i + 1]), torch.from_numpy(P[i:i + 1]), torch.from_numpy(Q[i:i + 1]),
                          float(alpha[i])).item()
        worst = max(worst, abs(got - max(dp - dn + alpha[i], 0.0)))
    errs["metric"] = worst

    # gated fusion: channelwise product broadcast over space
    pv = rng.normal(size=(N, 4, 2, 2))
    pt = rng.normal(size=(N, 4))
    f = GraspNet.fuse(torch.from_numpy(pv), torch.from_numpy(pt)).numpy()
    ref = np.empty_like(pv)
    for i in range(N):
        for c in range(4):
            for h in range(2):
                for w in range(2):
                    ref[i, c, h, w] = pv[i, c, h, w] * pt[i, c]
    errs["fusion"] = float(np.abs(f - ref).max())

    # global average pooling of the encoder features
    m = tiny_model(dtype=torch.float64)
    x = torch.from_numpy(rng.random((N, 4, 16, 16)))
    with torch.no_grad():
        phi = m.encode_image(x).numpy()
        v = m.visual_vector(x).numpy()
    ref = np.zeros(v.shape)
    for i in range(N):
        for c in range(phi.shape[1]):
            s = 0.0
            for h in range(phi.shape[2]):
                for w in range(phi.shape[3]):
                    s += phi[i, c, h, w]
            ref[i, c] = s / (phi.shape[2] * phi.shape[3])
    errs["gap"] = float(np.abs(v - ref).max())

    # gradient reversal: identity forward, -lambda * g backward
    xs = torch.from_numpy(rng.normal(size=(N, 3))).requires_grad_()
    lam_r = torch.from_numpy(rng.random(N) * 2)
    g = torch.from_numpy(rng.normal(size=(N, 3)))
    worst = 0.0
    ys = []
    for i in range(0, N, 100):
        y = grl(xs[i:i + 100], float(lam_r[i]))
        ys.append(y)
        worst = max(worst, float((y - xs[i:i + 100]).detach().abs().max()))
    torch.autograd.backward(ys, [g[i:i + 100] for i in range(0, N, 100)])
    for i in range(N):
        for j in range(3):
            worst = max(worst, abs(xs.grad[i, j].item() + lam_r[i - i % 100].item() * g[i, j].item()))
    errs["grl"] = worst

    # adversarial binary cross-entropy
    z = rng.normal(size=N) * 3
    d = rng.integers(0, 2, N).astype(np.float64)
    got = domain_bce(torch.from_numpy(z), torch.from_numpy(d), reduction="none").numpy()
    errs["bce"] = max(abs(got[i] - _loop_sigmoid_bce(z[i], d[i])) for i in range(N))
    total = domain_bce(torch.from_numpy(z), torch.from_numpy(d)).item()
    errs["bce_sum"] = abs(total - sum(_loop_sigmoid_bce(z[i], d[i]) for i in range(N))) / N

    elapsed = time.time() - t0
    worst_name = max(errs, key=errs.get)
    ok = all(e <= TOL for e in errs.values()) and elapsed < 60
    report(1, ok, f"max error {errs[worst_name]:.2e} ({worst_name}), {len(errs)} oracles x {N}, {elapsed:.1f}s")


# -- 2: finite-difference gradients through the full model ----------------------------

def _fd_check(loss_fn, params, rng, picks=6, h=1e-6):
    """Relative error between autograd and central differences over sampled entries of ``params``.

    Errors are pooled over the group: conv biases ahead of a group norm have an
    exactly zero gradient, so per-tensor ratios would only compare rounding noise.
    """
    for p in params:
        p.grad = None
    loss_fn().backward()
    got, ref = [], []
    for p in params:
        g = p.grad.detach().clone().reshape(-1)
        flat = p.data.reshape(-1)
        idx = rng.choice(flat.numel(), min(picks, flat.numel()), replace=False)
        fd = torch.zeros(len(idx), dtype=torch.float64)
        for n, i in enumerate(idx):
            old = flat[i].item()
            with torch.no_grad():
                flat[i] = old + h
                up = loss_fn().item()
                flat[i] = old - h
                dn = loss_fn().item()
                flat[i] = old
            fd[n] = (up - dn) / (2 * h)
        got.append(g[torch.as_tensor(idx)])
        ref.append(fd)
    got, ref = torch.cat(got), torch.cat(ref)
    return float((got - ref).norm() / ref.norm())


@pytest.fixture(scope="module")
def toy_records():
    cfg = TrainConfig(iterations=40, replay_epochs=0, batch_size=4, image_size=24, num_objects=3, optimizer="adam",
                      lr=1e-3, seed=4)
    torch.manual_seed(0)
    _, data, _ = collect_and_train(cfg, tiny_model())
    ok = [r for r in data if r.success][:4]
    bad = [r for r in data if not r.success][:4]
    assert len(ok) >= 2
    return ok + bad


def test_criterion_2_gradients(toy_records):
    t0 = time.time()
    rng = np.random.default_rng(0)
    m = tiny_model(1, torch.float64)
    recs = toy_records
    errs = {}
    groups = {"encoder": list(m.encoder.parameters()), "text": list(m.text.parameters()),
              "decoder": list(m.decoder.parameters()), "domain": list(m.domain.parameters())}

    def lg():
        return grasp_loss(m, recs, 0.1)

    def la():
        # a fresh fixed-seed generator keeps the mined triplets identical across evaluations
        return attribute_loss(m, recs, np.random.default_rng(7), 0.5, 16)[0]

    assert attribute_loss(m, recs, np.random.default_rng(7), 0.5, 16)[1] > 0
    errs["L_grasp"] = _fd_check(lg, groups["encoder"] + groups["text"] + groups["decoder"], rng)
    errs["L_attr"] = _fd_check(la, groups["encoder"] + groups["text"], rng)

    src = torch.from_numpy(np.random.default_rng(1).random((3, 4, 24, 24)))
    tgt = torch.from_numpy(np.random.default_rng(2).random((3, 4, 24, 24)))
    lam = 0.7
    labels = torch.tensor([0.0] * 3 + [1.0] * 3, dtype=torch.float64)

    def plain_bce():
        return domain_bce(m.classify_domain(m.visual_vector(torch.cat([src, tgt]))), labels)

    # autograd through the GRL against finite differences of the unreversed loss
    for p in m.parameters():
        p.grad = None
    adversarial_loss(m, src, tgt, lam)[0].backward()
    enc_rev = [p.grad.clone() for p in groups["encoder"]]
    dom_rev = [p.grad.clone() for p in groups["domain"]]
    errs["L_adv plain"] = _fd_check(plain_bce, groups["encoder"] + groups["domain"], rng)
    enc_plain = [p.grad.clone() for p in groups["encoder"]]
    dom_plain = [p.grad.clone() for p in groups["domain"]]
    enc_rev, enc_plain, dom_rev, dom_plain = (torch.cat([g.reshape(-1) for g in gs])
                                              for gs in (enc_rev, enc_plain, dom_rev, dom_plain))
    errs["GRL encoder"] = float((enc_rev + lam * enc_plain).norm() / enc_plain.norm())
    errs["GRL classifier"] = float((dom_rev - dom_plain).norm() / dom_plain.norm())

    elapsed = time.time() - t0
    worst = max(errs, key=errs.get)
    ok = all(e <= 1e-3 for e in errs.values()) and elapsed < 300
    report(2, ok, f"max relative error {errs[worst]:.1e} ({worst}), {elapsed:.0f}s")


# -- 3-9: scaled-down benchmarks (cached runs) --------------------------------------------

def test_criterion_3_generic_training():
    r = experiments.generic_results()
    ok = r["grasp_success"] >= 0.85 and r["recognition"] >= 0.90
    report(3, ok, f"success {r['grasp_success']:.3f} (>=0.85), recognition {r['recognition']:.3f} (>=0.90), "
                  f"{experiments.EVAL_CASES} basic scenes")


def test_criterion_4_attention():
    r = experiments.generic_results()
    report(4, r["attention"] >= 0.65, f"attention localization {r['attention']:.3f} (>=0.65)")


def test_criterion_5_nometric():
    r = experiments.nometric_results()
    gap = r["full"] - r["nometric"]
    report(5, gap >= 0.05, f"novel recognition full {r['full']:.3f} vs lambda_a=0 {r['nometric']:.3f}, "
                           f"gap {gap:+.3f} (>=+0.05)")


def test_criterion_6_adversarial():
    r = experiments.adversarial_results()
    acc = r["domain_accuracy"]
    gain = r["adapted_jitter"] - r["generic_jitter"]
    drop = r["generic_basic"] - r["adapted_basic"]
    ok = 0.40 <= acc <= 0.65 and gain >= 0.03 and drop <= 0.03
    report(6, ok, f"(a) domain acc {acc:.3f} in [0.40,0.65]; (b) jitter gain {gain:+.3f} (>=+0.03); "
                  f"(c) source drop {drop:+.3f} (<=0.03)")


def test_criterion_7_one_grasp():
    r = experiments.onegrasp_results()
    gains = {o: r["aug"][o] - r["generic"][o] for o in experiments.HELDOUT}
    ok = all(g >= 0.10 for g in gains.values())
    detail = ", ".join(f"{o} {r['generic'][o]:.2f}->{r['aug'][o]:.2f}" for o in experiments.HELDOUT)
    report(7, ok, f"per-object gain >=0.10: {detail}")


def test_criterion_8_augmentation_orderings():
    a = experiments.augmentation_results()
    og = experiments.onegrasp_results()
    aug = float(np.mean(list(og["aug"].values())))
    rpt = float(np.mean(list(og["rpt"].values())))
    ok = a["aug"] >= a["overlay"] >= a["objects"] and aug - rpt >= 0.03
    report(8, ok, f"ObjectAug {a['aug']:.3f} >= Overlay {a['overlay']:.3f} >= Objects {a['objects']:.3f}; "
                  f"OneGraspAug {aug:.3f} - Rpt {rpt:.3f} = {aug - rpt:+.3f} (>=+0.03)")


def test_criterion_9_stacked():
    r = experiments.stacked_results()
    s, adv, og = r["stacked"]["mean"], r["adversarial"]["mean"], r["onegrasp"]["mean"]
    report(9, s >= max(adv, og), f"novel_jitter success stacked {s:.3f} vs adversarial {adv:.3f}, "
                                 f"one-grasp {og:.3f}")


# -- 10: determinism of every CLI command ------------------------------------------------

TINY_CFG = {
    "model": {"image_size": 24, "embed_dim": 8, "token_dim": 8, "enc_channels": [4, 4, 8], "dec_channels": 8,
              "res_blocks": 1},
    "train": {"iterations": 12, "replay_epochs": 1, "batch_size": 4, "image_size": 24, "num_objects": 2,
              "optimizer": "adam", "lr": 1e-3},
    "augment": {"env": "basic_jitter", "mode": "aug", "count": 6, "views": 1, "size": 24, "objects_per_image": [1, 2]},
    "adversarial": {"steps": 3, "batch_size": 2, "target_batch_size": 2, "optimizer": "adam", "lr": 1e-4},
    "adversarial_eval": {"images": 4},
    "onegrasp": {"object": "apple", "max_trials": 3, "steps": 2, "optimizer": "adam", "lr": 1e-3},
    "eval": {"env": "basic", "cases": 4},
    "viz": {"env": "basic", "cases": 1},
    "benchmark": {"methods": {"generic": "train/checkpoint"}, "envs": ["basic", "novel"], "cases": 3,
                  "heatmaps": False},
    "paths": {"checkpoint": "train/checkpoint", "dataset": "train/dataset", "target": "aug/target",
              "sample": "gc/sample"},
}


def test_criterion_10_determinism(tmp_path):
    (tmp_path / "c.yaml").write_text(yaml.safe_dump(TINY_CFG))
    cfg = str(tmp_path / "c.yaml")
    same, verbs = [], []
    for verb, out in [("collect-train", "train"), ("augment-objects", "aug"), ("adapt-adversarial", "adv"),
                      ("grasp-collect", "gc"), ("adapt-onegrasp", "og"), ("eval", "ev"), ("benchmark", "bm"),
                      ("viz", "viz")]:
        codes = [cli.main([verb, cfg, "--seed", "3", "--out-dir", str(tmp_path / d)]) for d in (out, out + "_2")]
        if verb == "grasp-collect" and codes[0] != 0:
            # the tiny policy missed every trial: the failure itself must repeat
            same.append(codes == [2, 2])
            verbs.append(verb + " (no grasp)")
            _oracle_sample(tmp_path / "gc" / "sample")
            continue
        if verb == "adapt-onegrasp" and not (tmp_path / "gc" / "sample").exists():
            continue
        files = [tmp_path / out / "report.json", tmp_path / (out + "_2") / "report.json"]
        same.append(codes == [0, 0] and files[0].read_bytes() == files[1].read_bytes())
        verbs.append(verb)
    report(10, all(same), f"{sum(same)}/{len(same)} commands byte-identical on repeat: {', '.join(verbs)}")


def _oracle_sample(path):
    from attrgrasp.adapt import OneGraspSample
    from attrgrasp.io import save_dataset
    from attrgrasp.sim import GraspAction, Gripper, Scene, grasp_oracle, novel_object, render
    apple = novel_object("apple").at(0.5, 0.5, 0.0, uid=1)
    scene = Scene((apple,))
    hm, mask = render(scene, size=24)
    a = next(GraspAction(12, 12, k) for k in range(6) if grasp_oracle(scene, GraspAction(12, 12, k), Gripper(), 24).success)
    save_dataset([OneGraspSample(hm, apple.text, mask, a).record()], path)
