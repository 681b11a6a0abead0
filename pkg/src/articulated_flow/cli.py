"""Command-line surface: generate-data, train, sample, simulate,
interpolate and evaluate."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
from filelock import FileLock

from . import checkpoint as ckpt
from . import dataset_io, metrics, ply, sampling
from .config import RunConfig, coerce_override, load_config
from .kinematics import CategorySpec, generate_dataset, posed_cloud
from .nets import FlowModel
from .training import Trainer


def _common(f):
    f = click.option("--config", "config_path", type=click.Path(exists=True),
                     default=None, help="TOML run configuration.")(f)
    f = click.option("-O", "--override", "overrides", multiple=True,
                     help="Config override, section.key=value.")(f)
    f = click.option("--seed", type=int, default=None,
                     help="Overrides every seed in the config.")(f)
    return f


def _load(config_path, overrides, seed) -> RunConfig:
    parsed = {}
    for item in overrides:
        key, _, value = item.partition("=")
        parsed[key] = coerce_override(value)
    cfg = load_config(config_path, parsed)
    if seed is not None:
        cfg.data.seed = seed
        cfg.nets.seed = seed
        cfg.train.seed = seed
    return cfg


def _build_model(cfg: RunConfig, point_dim: int, n_joints: int) -> FlowModel:
    n = cfg.nets
    return FlowModel(
        point_dim=point_dim, n_joints=n_joints, code_dim=n.code_dim,
        hidden=n.hidden, point_blocks=n.point_blocks,
        latent_blocks=n.latent_blocks, encoder_hidden=n.encoder_hidden,
        fourier_sigma=n.fourier_sigma, fourier_freqs=n.fourier_freqs,
        variant=cfg.train.variant, seed=n.seed)


def _parse_action(text: str, j_max: int) -> np.ndarray:
    vals = np.array([float(x) for x in text.split(",") if x.strip() != ""])
    if len(vals) != j_max:
        raise click.ClickException(
            f"action {text!r} has {len(vals)} entries, model expects {j_max}")
    return vals


@click.group()
def main():
    """Two-stage conditional flow matching for articulated point clouds."""


@main.command("generate-data")
@_common
@click.option("--out", "out_dir", type=click.Path(), required=True)
def cmd_generate_data(config_path, overrides, seed, out_dir):
    """Build a synthetic articulated dataset directory."""
    cfg = _load(config_path, overrides, seed)
    d = cfg.data
    spec = CategorySpec(d.category, n_instances=d.n_instances)
    ds = generate_dataset(spec, samples_per_instance=d.samples_per_instance,
                          n_points=d.n_points, seed=d.seed, colored=d.colored)
    dataset_io.save_dataset(ds, out_dir)
    n_train = sum(1 for s in ds.samples if s.split == "train")
    click.echo(f"wrote {len(ds.samples)} samples ({n_train} train / "
               f"{len(ds.samples) - n_train} test), J_max={ds.j_max} -> {out_dir}")


@main.command("train")
@_common
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True),
              required=True)
@click.option("--out", "run_dir", type=click.Path(), required=True)
@click.option("--steps", type=int, default=None, help="Total training steps.")
@click.option("--variant", type=click.Choice(["cond", "uncond", "adv"]),
              default=None)
@click.option("--resume", "resume_path", type=click.Path(exists=True),
              default=None, help="Checkpoint to resume from.")
def cmd_train(config_path, overrides, seed, dataset_dir, run_dir, steps,
              variant, resume_path):
    """Train both flows; writes periodic checkpoints and a metrics log."""
    cfg = _load(config_path, overrides, seed)
    if steps is not None:
        cfg.train.total_steps = steps
    if variant is not None:
        cfg.train.variant = variant
    data = dataset_io.load_dataset(dataset_dir)
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    with FileLock(run_dir / ".lock"):
        if resume_path is not None:
            model, run_config, _, training_state = ckpt.load_checkpoint(resume_path)
            cfg = RunConfig.from_dict(run_config)
            if training_state is None:
                raise click.ClickException(
                    f"{resume_path} has no optimizer state; cannot resume")
        else:
            model = _build_model(cfg, data.point_dim, data.j_max)
        train_pts, train_act, _ = data.split_arrays("train")
        trainer = Trainer(model, train_pts, train_act, cfg.train)
        if resume_path is not None:
            trainer.load_training_state(training_state)

        log_path = run_dir / "metrics.jsonl"
        log_fh = open(log_path, "a" if resume_path else "w")

        def on_step(result):
            log_fh.write(json.dumps(result.record(), sort_keys=True) + "\n")
            if (cfg.train.checkpoint_every > 0
                    and result.step % cfg.train.checkpoint_every == 0
                    and result.step < cfg.train.total_steps):
                ckpt.save_checkpoint(
                    run_dir / f"checkpoint_{result.step:06d}.ckpt", model,
                    cfg.to_dict(), result.step, trainer.training_state())
            if result.step % 500 == 0:
                click.echo(f"step {result.step}: loss={result.loss:.6f} "
                           f"point={result.point_loss:.6f} "
                           f"latent={result.latent_loss:.6f}")

        remaining = cfg.train.total_steps - trainer.step
        trainer.run(remaining, callback=on_step)
        log_fh.close()
        ckpt.save_checkpoint(run_dir / "final.ckpt", model, cfg.to_dict(),
                             trainer.step, trainer.training_state())
    click.echo(f"trained to step {trainer.step}; final checkpoint in {run_dir}")


def _load_model(checkpoint_path):
    model, run_config, step, _ = ckpt.load_checkpoint(checkpoint_path)
    return model, RunConfig.from_dict(run_config), step


@main.command("sample")
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True),
              required=True)
@click.option("--action", "actions", multiple=True, required=True,
              help="Comma-separated joint angles, padded length; repeatable.")
@click.option("--count", type=int, default=1, help="Samples per action.")
@click.option("--seed", type=int, default=0)
@click.option("--point-seed", type=int, default=None,
              help="Separate seed for the point-flow prior.")
@click.option("--integrator", type=click.Choice(["euler", "heun"]), default=None)
@click.option("--share-shape-code", is_flag=True,
              help="Sample one shape code and reuse it for every action.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
def cmd_sample(checkpoint_path, actions, count, seed, point_seed, integrator,
               share_shape_code, out_dir):
    """Generate point clouds for commanded actions; one PLY per sample."""
    model, cfg, _ = _load_model(checkpoint_path)
    integ = cfg.sampling
    if integrator is not None:
        integ.method = integrator
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_points = cfg.data.n_points

    shared_code = None
    for k in range(count):
        rng = np.random.default_rng(seed + k)
        rng_pt = (np.random.default_rng(point_seed + k)
                  if point_seed is not None else rng)
        for i, text in enumerate(actions):
            a = _parse_action(text, model.n_joints)
            z_a = sampling.encode_action(model, a)
            if share_shape_code:
                if shared_code is None:
                    shared_code = sampling.sample_shape_code(model, z_a, integ, rng)
                z_x = shared_code
            else:
                z_x = sampling.sample_shape_code(model, z_a, integ, rng)
            cloud = sampling.decode_points(model, z_x, z_a, n_points, integ,
                                           rng_pt)[0]
            path = out_dir / f"sample_s{seed + k}_a{i}.ply"
            ply.write_ply(path, cloud)
            click.echo(f"wrote {path}")


@main.command("simulate")
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True),
              required=True)
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True),
              required=True)
@click.option("--reference", "ref_index", type=int, default=0,
              help="Dataset sample index supplying the shape code.")
@click.option("--action", "actions", multiple=True, required=True)
@click.option("--seed", type=int, default=0)
@click.option("--extrapolate", is_flag=True,
              help="Allow actions outside joint limits (with a warning).")
@click.option("--out", "out_dir", type=click.Path(), required=True)
def cmd_simulate(checkpoint_path, dataset_dir, ref_index, actions, seed,
                 extrapolate, out_dir):
    """Neural-simulator mode: deform a dataset instance under new actions and
    report CD/EMD (x1e3) against forward-kinematics ground truth."""
    model, cfg, _ = _load_model(checkpoint_path)
    data = dataset_io.load_dataset(dataset_dir)
    templates, normalizers = data.rebuild_templates()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    reference = data.points[ref_index]
    instance = int(data.instances[ref_index])
    template = templates[instance]
    center, radius = normalizers[instance]
    report_path = out_dir / "report.jsonl"
    with open(report_path, "w") as fh:
        for i, text in enumerate(actions):
            a = _parse_action(text, data.j_max)
            raw = a[: template.dof]
            limits = np.array([j.limits for j in template.joints])
            outside = np.any((raw < limits[:, 0]) | (raw > limits[:, 1]))
            if outside and not extrapolate:
                raise click.ClickException(
                    f"action {text!r} outside joint limits; use --extrapolate")
            if outside:
                click.echo(f"warning: action {text!r} outside training range; "
                           "extrapolated pose may be unrealistic", err=True)
            rng = np.random.default_rng(seed + i)
            cloud = sampling.simulate(model, reference, a, data.n_points,
                                      cfg.sampling, rng)
            truth = posed_cloud(template, raw, data.n_points,
                                np.random.default_rng(seed + 1000 + i),
                                center, radius, colored=data.colored,
                                clamp=extrapolate)
            rep = metrics.evaluate_pair(cloud, truth)
            cd3, emd3 = rep.scaled()
            record = {"action": list(map(float, a)), "cd_x1e3": cd3,
                      "emd_x1e3": emd3}
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            path = out_dir / f"simulate_a{i}.ply"
            ply.write_ply(path, cloud)
            click.echo(f"{path}: CD={cd3:.4f} EMD={emd3:.4f} (x1e3)")


@main.command("interpolate")
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True),
              required=True)
@click.option("--seed-a", type=int, required=True)
@click.option("--seed-b", type=int, required=True)
@click.option("--steps", type=int, default=5, help="Number of frames.")
@click.option("--action", "action_text", required=True)
@click.option("--point-seed", type=int, default=0)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def cmd_interpolate(checkpoint_path, seed_a, seed_b, steps, action_text,
                    point_seed, out_dir):
    """Slerp between two sampled shape codes under a fixed action."""
    if steps < 2:
        raise click.ClickException("need at least 2 interpolation steps")
    model, cfg, _ = _load_model(checkpoint_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    a = _parse_action(action_text, model.n_joints)
    z_a = sampling.encode_action(model, a)
    code_a = sampling.sample_shape_code(model, z_a, cfg.sampling,
                                        np.random.default_rng(seed_a))[0]
    code_b = sampling.sample_shape_code(model, z_a, cfg.sampling,
                                        np.random.default_rng(seed_b))[0]
    for i in range(steps):
        alpha = i / (steps - 1)
        code = sampling.slerp(code_a, code_b, alpha)
        cloud = sampling.decode_points(
            model, code[None], z_a, cfg.data.n_points, cfg.sampling,
            np.random.default_rng(point_seed))[0]
        path = out_dir / f"interp_{i:03d}.ply"
        ply.write_ply(path, cloud)
        click.echo(f"wrote {path} (alpha={alpha:.3f})")


@main.command("evaluate")
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True),
              required=True)
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True),
              required=True)
@click.option("--split", type=click.Choice(["train", "test"]), default="test")
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write per-sample records here (JSONL).")
def cmd_evaluate(checkpoint_path, dataset_dir, split, seed, out_path):
    """Simulator-mode CD/EMD over a dataset split, per sample and aggregate."""
    model, cfg, _ = _load_model(checkpoint_path)
    data = dataset_io.load_dataset(dataset_dir)
    records = evaluate_split(model, cfg, data, split, seed)
    if out_path:
        with open(out_path, "w") as fh:
            for r in records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
    mean_cd = float(np.mean([r["cd_x1e3"] for r in records]))
    mean_emd = float(np.mean([r["emd_x1e3"] for r in records]))
    click.echo(f"{split} split, {len(records)} samples "
               f"(CD and EMD values x1e3):")
    click.echo(f"  CD  mean {mean_cd:.4f}")
    click.echo(f"  EMD mean {mean_emd:.4f}")


def evaluate_split(model, cfg, data, split, seed=0) -> list:
    """Per-sample simulator-mode metrics; the shape code of each instance is
    taken from its first train-split cloud."""
    idx = data.splits.get(split, [])
    if not idx:
        raise ValueError(f"split {split!r} is empty")
    ref_of_instance = {}
    for i in data.splits["train"]:
        inst = int(data.instances[i])
        ref_of_instance.setdefault(inst, i)
    records = []
    for i in idx:
        inst = int(data.instances[i])
        ref = data.points[ref_of_instance[inst]]
        rng = np.random.default_rng(seed + i)
        cloud = sampling.simulate(model, ref, data.actions[i], data.n_points,
                                  cfg.sampling, rng)
        rep = metrics.evaluate_pair(cloud, data.points[i])
        cd3, emd3 = rep.scaled()
        records.append({"sample": int(i), "instance": inst,
                        "cd_x1e3": cd3, "emd_x1e3": emd3})
    return records


if __name__ == "__main__":
    main()
