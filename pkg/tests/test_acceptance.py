"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line. Run with ``pytest tests/test_acceptance.py -v -s``."""

import itertools
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from animaxkit import pipeline
from animaxkit.camera import canonical_rig, framing_distance, project_points
from animaxkit.datakit import (
    MOTION_LABELS,
    SOURCES,
    SamplerConfig,
    build_toy_dataset,
    decode_pose_latents,
    filter_clip,
    synth_clip,
    synth_dataset,
    weighted_sampler,
    write_dataset,
)
from animaxkit.jointdit import (
    DenoiserConfig,
    JointDenoiser,
    LatentDims,
    RopeTable,
    TokenGrid,
    TrainConfig,
    sample,
    shared_rope,
    train_toy,
)
from animaxkit.kinematics import solve_frame
from animaxkit.posemap import Joints2D, make_palette
from animaxkit.reconstruct import (
    TriangulationProblem,
    initial_positions,
    pixels_per_unit,
    refine,
    triangulate_frame,
    _residuals_and_jacobian,
)
from animaxkit.skeleton import (
    bone_lengths,
    bounding_box_diagonal,
    forward_kinematics,
    rest_positions,
)
from conftest import branching_skeleton, chain_skeleton, random_pose

torch.set_num_threads(1)

SUITE_SEEDS = range(25)


def verdict(name: str, ok: bool, detail: str = "") -> bool:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" ({detail})" if detail else ""))
    return ok


@pytest.fixture(scope="module")
def suite_records():
    return [synth_dataset(1, seed=s)[0] for s in SUITE_SEEDS]


def exact_observations(positions, cameras, noise=0.0, rng=None):
    obs = []
    for cam in cameras:
        uv, depth = project_points(cam, positions)
        if noise > 0:
            uv = uv + rng.normal(0.0, noise, uv.shape)
        obs.append(Joints2D(coords=uv, valid=depth > 0))
    return obs


def test_end_to_end_round_trip(suite_records):
    """25 synthetic clips, 512^2 maps, 4 canonical views: mean joint error
    < 1% and max < 3% of the bounding-box diagonal, under 5 minutes."""
    from animaxkit.datakit import rig_for_records

    start = time.perf_counter()
    means, maxima = [], []
    for record in suite_records:
        cameras = rig_for_records([record], resolution=512, views=4)
        palette = make_palette(record.skeleton.joint_count, seed=0)
        _, metrics = pipeline.roundtrip(
            record.skeleton, record.clip, cameras, palette, tau_color=40.0
        )
        means.append(metrics.mean_error)
        maxima.append(metrics.max_error)
    elapsed = time.perf_counter() - start
    mean_err = float(np.mean(means))
    max_err = float(np.max(maxima))
    ok = mean_err < 0.01 and max_err < 0.03 and elapsed < 300.0
    assert verdict(
        "end-to-end round trip",
        ok,
        f"mean {mean_err:.4%}, max {max_err:.4%}, {elapsed:.0f}s",
    )


def test_triangulation_oracle():
    """Exact projections: DLT+LM within 1e-6 relative; LM cost never above
    the DLT initialization cost, 100/100 problems."""
    rig = canonical_rig(framing_distance(1.0, fill=0.75), 512)
    rng = np.random.default_rng(0)
    recovered = 0
    monotone = 0
    trials = 100
    for _ in range(trials):
        sk = chain_skeleton(4, rng)
        rest = rest_positions(sk).positions
        scale = 0.7 / max(np.linalg.norm(rest, axis=1).max(), 1e-9)
        from animaxkit.skeleton import JointDef, Skeleton

        sk = Skeleton(tuple(JointDef(j.name, j.parent, j.rest_offset * scale)
                            for j in sk.joints))
        gt = forward_kinematics(sk, random_pose(sk, rng, max_angle=0.5)).positions
        obs = exact_observations(gt, rig)
        problem = TriangulationProblem(observations=obs, cameras=rig, skeleton=sk)
        init = initial_positions(problem)
        scale_px = pixels_per_unit(rig, init.positions.mean(axis=0))
        res0, _ = _residuals_and_jacobian(problem, init.positions, scale_px,
                                          with_jacobian=False)
        result = refine(problem, init)
        rel = np.linalg.norm(result.positions.positions - gt, axis=1)
        rel /= np.maximum(np.linalg.norm(gt, axis=1), 1.0)
        if rel.max() < 1e-6:
            recovered += 1
        if result.final_cost <= float(res0 @ res0) + 1e-12:
            monotone += 1
    ok = recovered == trials and monotone == trials
    assert verdict(
        "triangulation oracle", ok, f"recovered {recovered}/100, monotone {monotone}/100"
    )


def test_bone_length_consistency(suite_records):
    """1 px observation noise: lambda=100 keeps >=95% of bones within 1% of
    rest length; lambda=0 does not."""
    from animaxkit.datakit import rig_for_records

    rng = np.random.default_rng(7)
    frames_per_clip = 8
    within = {0.0: 0, 100.0: 0}
    total = 0
    for record in suite_records:
        if record.skeleton.joint_count < 2:
            continue
        cameras = rig_for_records([record], resolution=512, views=4)
        rest = bone_lengths(record.skeleton)
        children = record.skeleton.non_root_indices()
        step = max(1, record.clip.frame_count // frames_per_clip)
        for pose in record.clip.frames[::step]:
            gt = forward_kinematics(record.skeleton, pose).positions
            obs = exact_observations(gt, cameras, noise=1.0, rng=rng)
            for lam in (0.0, 100.0):
                problem = TriangulationProblem(
                    observations=obs, cameras=cameras,
                    skeleton=record.skeleton, lambda_bone=lam,
                )
                recon = triangulate_frame(problem).positions.positions
                for b, j in enumerate(children):
                    p = record.skeleton.joints[j].parent
                    length = np.linalg.norm(recon[j] - recon[p])
                    if abs(length - rest[b]) / rest[b] < 0.01:
                        within[lam] += 1
            total += len(children)
    frac_on = within[100.0] / total
    frac_off = within[0.0] / total
    ok = frac_on >= 0.95 and frac_off < 0.95
    assert verdict(
        "bone-length consistency",
        ok,
        f"lambda=100: {frac_on:.1%} within 1%, lambda=0: {frac_off:.1%}",
    )


def test_ik_round_trip():
    """FK -> IK -> FK under 1000 random poses: < 1e-6 on chains, < 1e-3 of
    the bbox diagonal on branching skeletons."""
    rng = np.random.default_rng(3)
    chain_ok = True
    for _ in range(500):
        sk = chain_skeleton(int(rng.integers(2, 7)), rng)
        template = rest_positions(sk)
        target = forward_kinematics(sk, random_pose(sk, rng))
        fk = forward_kinematics(sk, solve_frame(sk, template, target).pose)
        if np.abs(fk.positions - target.positions).max() >= 1e-6:
            chain_ok = False
            break
    branch_ok = True
    for _ in range(500):
        sk = branching_skeleton(rng)
        template = rest_positions(sk)
        diag = bounding_box_diagonal(template.positions)
        target = forward_kinematics(sk, random_pose(sk, rng))
        fk = forward_kinematics(sk, solve_frame(sk, template, target).pose)
        if np.abs(fk.positions - target.positions).max() >= 1e-3 * diag:
            branch_ok = False
            break
    ok = chain_ok and branch_ok
    assert verdict("IK round trip", ok, f"chains {chain_ok}, branching {branch_ok}")


def test_shared_positional_encoding_equality():
    """Tokens at (i, j, k) and (i + f + 2, j, k) receive identical rotations,
    exactly, over a full f=3, h=w=6 table."""
    dims = LatentDims(f=3, h=6, w=6, c=12)
    table = RopeTable.for_dims(dims)
    rng = np.random.default_rng(0)
    half = rng.standard_normal((dims.f + 2, 6, 6, 12))
    values = np.concatenate([half, half], axis=0)
    rotated = shared_rope(TokenGrid(values=values, dims=dims), table)
    first, second = rotated.values[: dims.f + 2], rotated.values[dims.f + 2 :]
    ok = np.array_equal(first, second)
    # the rotation parameters themselves pair up exactly as well
    cos_a, sin_a = table.cos_sin(dims.pe_indices()[: dims.f + 2])
    cos_b, sin_b = table.cos_sin(dims.pe_indices()[dims.f + 2 :])
    ok = ok and np.array_equal(cos_a, cos_b) and np.array_equal(sin_a, sin_b)
    assert verdict("shared positional encoding equality", ok)


def test_gradient_check():
    """Analytic gradients match central finite differences (step 1e-4,
    float64) at relative error < 1e-4 for 100 random parameters."""
    torch.manual_seed(0)
    dims = LatentDims(f=2, h=4, w=4, c=4, n_views=2)
    config = DenoiserConfig(blocks=2, heads=4, width=32, label_vocab=8)
    model = JointDenoiser(config, dims).double()
    gen = torch.Generator().manual_seed(1)
    x = torch.randn(2, 2, dims.temporal, 4, 4, 4, generator=gen, dtype=torch.float64)
    t = torch.rand(2, generator=gen, dtype=torch.float64)
    label = torch.tensor([1, 3])
    rays = torch.randn(2, 4, 4, 6, generator=gen, dtype=torch.float64)
    target = torch.randn(x.shape, generator=gen, dtype=torch.float64)

    def loss_fn():
        return torch.mean((model(x, t, label, rays) - target) ** 2)

    loss_fn().backward()
    params = [p for p in model.parameters() if p.grad is not None]
    rng = np.random.default_rng(0)
    step = 1e-4
    worst = 0.0
    for _ in range(100):
        p = params[int(rng.integers(len(params)))]
        flat = p.data.view(-1)
        idx = int(rng.integers(flat.numel()))
        original = float(flat[idx])
        with torch.no_grad():
            flat[idx] = original + step
            up = float(loss_fn())
            flat[idx] = original - step
            down = float(loss_fn())
            flat[idx] = original
        fd = (up - down) / (2 * step)
        analytic = float(p.grad.view(-1)[idx])
        rel = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-8)
        worst = max(worst, rel)
    ok = worst < 1e-4
    assert verdict("gradient check", ok, f"worst relative error {worst:.2e}")


def test_view_permutation_equivariance():
    """Permuting views (with their ray maps) permutes the denoiser output,
    within 1e-6, over 20 random trials."""
    torch.manual_seed(4)
    dims = LatentDims(f=2, h=4, w=4, c=4, n_views=3)
    config = DenoiserConfig(blocks=2, heads=2, width=16, label_vocab=4)
    model = JointDenoiser(config, dims).double()
    gen = torch.Generator().manual_seed(2)
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(20):
        x = torch.randn(1, 3, dims.temporal, 4, 4, 4, generator=gen, dtype=torch.float64)
        rays = torch.randn(3, 4, 4, 6, generator=gen, dtype=torch.float64)
        t = torch.rand(1, generator=gen, dtype=torch.float64)
        label = torch.tensor([int(rng.integers(4))])
        perm = rng.permutation(3).tolist()
        with torch.no_grad():
            base = model(x, t, label, rays)
            permuted = model(x[:, perm], t, label, rays[perm])
        worst = max(worst, float((permuted - base[:, perm]).abs().max()))
    ok = worst < 1e-6
    assert verdict("view-permutation equivariance", ok, f"worst deviation {worst:.2e}")


def test_data_filters_and_sampler():
    """16-frame clip rejected, 17-frame moving clip accepted; sampler
    frequencies within +-0.01 of (0.25, 0.25, 0.5) over 1e5 draws."""
    short = synth_clip(seed=0, n_joints=4, frames=16)
    accepted_short, reason_short = filter_clip(short)
    moving = synth_clip(seed=1, n_joints=4, frames=17, label=MOTION_LABELS.index("walk"))
    accepted_moving, _ = filter_clip(moving)

    from animaxkit.datakit import ClipRecord

    records = []
    for i, source in enumerate(SOURCES):
        base = synth_clip(seed=20 + i, n_joints=3, frames=20)
        records.append(ClipRecord(name=source, skeleton=base.skeleton, clip=base.clip,
                                  source=source, label=base.label,
                                  motion_score=base.motion_score))
    config = SamplerConfig(
        probabilities={SOURCES[0]: 0.25, SOURCES[1]: 0.25, SOURCES[2]: 0.5}
    )
    n = 100_000
    counts = {s: 0 for s in SOURCES}
    for r in itertools.islice(weighted_sampler(records, config, seed=0), n):
        counts[r.source] += 1
    freq = [counts[s] / n for s in SOURCES]
    sampler_ok = (
        abs(freq[0] - 0.25) < 0.01 and abs(freq[1] - 0.25) < 0.01 and abs(freq[2] - 0.5) < 0.01
    )
    ok = (not accepted_short) and reason_short == "frame_count" and accepted_moving and sampler_ok
    assert verdict(
        "data filters and sampler",
        ok,
        f"16f rejected={not accepted_short}, 17f accepted={accepted_moving}, "
        f"freqs={[f'{f:.3f}' for f in freq]}",
    )


def test_cli_determinism(tmp_path):
    """Every CLI subcommand produces byte-identical artifacts across two runs
    with a fixed seed (reports carry timings and go to stdout, not compared)."""
    from animaxkit.cli import main
    from animaxkit.skeleton import save_clip, save_skeleton

    record = synth_dataset(1, seed=2, n_joints=(3, 3), frames=6)[0]
    sk = tmp_path / "s.json"
    cl = tmp_path / "c.json"
    save_skeleton(record.skeleton, sk)
    save_clip(record.clip, cl)
    manifest = write_dataset([record], tmp_path / "data")

    def artifacts(run_dir: Path) -> dict[str, bytes]:
        run_dir.mkdir(parents=True, exist_ok=True)
        maps = run_dir / "maps"
        commands = [
            ["rig", "--distance", "3.0", "--out", str(run_dir / "cameras.json")],
            ["render", "--skeleton", str(sk), "--clip", str(cl),
             "--out-dir", str(maps), "--resolution", "96"],
            ["reconstruct", "--maps", str(maps), "--skeleton", str(sk),
             "--out", str(run_dir / "recovered.json")],
            ["roundtrip", "--skeleton", str(sk), "--clip", str(cl),
             "--resolution", "96", "--out", str(run_dir / "roundtrip.json")],
            ["filter", "--manifest", str(manifest), "--out", str(run_dir / "filtered.json")],
            ["toy-train", "--count", "2", "--steps", "8", "--latent", "8", "--f", "1",
             "--joints", "2,3", "--width", "16", "--heads", "2", "--blocks", "1",
             "--out", str(run_dir / "model.ckpt"),
             "--loss-csv", str(run_dir / "loss.csv")],
            ["toy-sample", "--checkpoint", str(run_dir / "model.ckpt"),
             "--steps", "4", "--out-dir", str(run_dir / "samples")],
        ]
        for cmd in commands:
            assert main(cmd + ["--seed", "3"]) == 0, f"command failed: {cmd[0]}"
        return {
            str(p.relative_to(run_dir)): p.read_bytes()
            for p in sorted(run_dir.rglob("*"))
            if p.is_file()
        }

    a = artifacts(tmp_path / "run_a")
    b = artifacts(tmp_path / "run_b")
    same = a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    assert verdict("CLI determinism", same, f"{len(a)} artifacts compared")


def test_toy_overfit_and_memorization():
    """Training on 50 synthetic latent clips reaches < 10% of the initial
    loss within 2000 steps; sampling a training condition at guidance 3.0
    with 50 steps reconstructs the memorized clip within 10% of the
    bounding-box diagonal."""
    dims = LatentDims(f=2, h=8, w=8, c=4, n_views=2)
    config = DenoiserConfig(blocks=2, heads=4, width=64, label_vocab=len(MOTION_LABELS))
    records = synth_dataset(50, seed=0, n_joints=(2, 4), frames=32)
    toyset = build_toy_dataset(records, dims)
    start = time.perf_counter()
    model, losses = train_toy(
        toyset.train_samples(), config, dims,
        TrainConfig(steps=2000, batch_size=4, seed=0),
    )
    train_time = time.perf_counter() - start
    initial = losses[0]
    final = float(np.mean(losses[-50:]))
    loss_ok = final < 0.10 * initial

    example = toyset.examples[0]
    cond_rgb = example.latents[:, dims.cond_rgb_slot : dims.cond_rgb_slot + 1]
    cond_pose = example.latents[:, dims.cond_pose_slot : dims.cond_pose_slot + 1]
    rgb, pose = sample(
        model, cond_rgb, cond_pose, toyset.rays, example.record.label,
        config=config, seed=11,
    )
    target_lat = example.latents[:, dims.noisy_pose_slots]
    latent_rms = float(
        np.sqrt(np.mean((pose - target_lat) ** 2)) / np.sqrt(np.mean(target_lat**2))
    )
    observations = decode_pose_latents(pose, example.palette)
    output = pipeline.reconstruct_sequence(
        observations, toyset.cameras, example.record.skeleton, fps=4.0
    )
    gt = np.stack(
        [
            forward_kinematics(example.record.skeleton, example.record.clip.frames[i]).positions
            for i in example.frame_indices
        ]
    )
    rec = np.stack(
        [forward_kinematics(example.record.skeleton, p).positions for p in output.clip.frames]
    )
    diag = bounding_box_diagonal(gt)
    fk_err = float(np.mean(np.linalg.norm(gt - rec, axis=2))) / diag
    memorized_ok = fk_err < 0.10
    ok = loss_ok and memorized_ok and train_time < 600.0
    assert verdict(
        "toy overfit and memorization",
        ok,
        f"loss {initial:.3f}->{final:.4f} ({final/initial:.1%}), "
        f"FK error {fk_err:.2%}, latent RMS {latent_rms:.2f}, train {train_time:.0f}s",
    )
