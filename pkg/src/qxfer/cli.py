"""Command-line entry point exposing the toolkit as subcommands.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
A ``--config`` file supplies ``key = value`` defaults (``#`` comments);
explicit flags override it. Commands that write into a directory also
drop a ``manifest.txt`` recording every numeric setting of the run.
"""

import argparse
import os
import sys

import numpy as np

from . import baseline, learn, patches, resample, shore, stats, synth
from .learn import TrainConfig
from .niftio import (ScalarVolume, VolumeHeader, read_dwi, read_mask,
                     read_scalar, require_binary_mask, scalar_like,
                     write_dwi, write_nifti_file, write_scalar)
from .scheme import read_fsl_gradients
from .shore import ShoreBasisSpec
from .synth import MEASURE_NAMES

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

CSF_ISO_THRESHOLD = 0.9

_ENV_THREADS = "QXFER_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _dims(text):
    parts = [int(p) for p in text.replace("x", ",").split(",") if p]
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3 or any(p < 1 for p in parts):
        raise argparse.ArgumentTypeError(f"bad dims {text!r}")
    return tuple(parts)


def _hidden(text):
    sizes = tuple(int(p) for p in text.split(",") if p)
    if any(s < 1 for s in sizes):
        raise argparse.ArgumentTypeError(f"bad hidden sizes {text!r}")
    return sizes


def _resolve_threads(value):
    if value is not None:
        return max(1, value)
    env = os.environ.get(_ENV_THREADS)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _add_shore_flags(p):
    p.add_argument("--radial-order", type=int, default=6)
    p.add_argument("--zeta", type=float, default=700.0)
    p.add_argument("--lambda-l", type=float, default=1e-8)
    p.add_argument("--lambda-n", type=float, default=1e-8)


def _add_dwi_inputs(p):
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--bvals", required=True)
    p.add_argument("--bvecs", required=True)
    p.add_argument("--mask", required=True)


def build_parser():
    parser = _Parser(prog="qxfer", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key = value defaults file")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands = {}

    p = sub.add_parser("synth", help="generate a phantom subject")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dims", type=_dims, default=(16, 16, 16))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--source-dirs", type=int, default=20,
                   help="directions per source shell")
    p.add_argument("--target-dirs", type=int, default=18,
                   help="directions per target shell")
    commands["synth"] = p

    p = sub.add_parser("fit-shore", help="fit basis coefficients per voxel")
    _add_dwi_inputs(p)
    p.add_argument("--out", required=True, help="coefficient NIfTI path")
    _add_shore_flags(p)
    p.add_argument("--threads", type=int, default=None)
    commands["fit-shore"] = p

    p = sub.add_parser("resample",
                       help="interpolate signals onto a target scheme")
    _add_dwi_inputs(p)
    p.add_argument("--target-bvals", required=True)
    p.add_argument("--target-bvecs", required=True)
    p.add_argument("--out", required=True, help="output NIfTI path")
    _add_shore_flags(p)
    p.add_argument("--clamp-max", type=float, default=None)
    p.add_argument("--threads", type=int, default=None)
    commands["resample"] = p

    p = sub.add_parser("downsample", help="block-mean spatial downsampling")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--gamma", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--binary-mask", action="store_true",
                   help="treat input as a mask (mean then threshold 0.5)")
    commands["downsample"] = p

    p = sub.add_parser("extract", help="extract training samples")
    _add_dwi_inputs(p)
    p.add_argument("--measures", nargs="+", required=True,
                   help="target measure NIfTIs (high resolution for srqdl)")
    p.add_argument("--mode", choices=("qdl", "srqdl"), default="qdl")
    p.add_argument("--gamma", type=int, default=2)
    p.add_argument("--in-size", type=int, default=None)
    p.add_argument("--out-size", type=int, default=None)
    p.add_argument("--out", required=True, help="sample-set path")
    commands["extract"] = p

    p = sub.add_parser("train", help="train the patch regressor")
    p.add_argument("--samples", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--hidden", type=_hidden, default=(150, 150, 150))
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    commands["train"] = p

    p = sub.add_parser("predict", help="estimate measure maps")
    _add_dwi_inputs(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="output directory")
    commands["predict"] = p

    p = sub.add_parser("evaluate", help="masked MAE against gold maps")
    p.add_argument("--est", nargs="+", required=True)
    p.add_argument("--gold", nargs="+", required=True)
    p.add_argument("--names", nargs="+", default=None)
    p.add_argument("--mask", required=True)
    p.add_argument("--csf-exclude", default=None,
                   help="gold isotropic-fraction map; voxels at or above "
                        f"{CSF_ISO_THRESHOLD} are dropped")
    p.add_argument("--out", required=True, help="output prefix")
    commands["evaluate"] = p

    p = sub.add_parser("pipeline",
                       help="end-to-end transfer experiment on phantoms")
    p.add_argument("--mode", choices=("qdl", "srqdl"), default="qdl")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dims", type=_dims, default=None)
    p.add_argument("--train-subjects", type=int, default=3)
    p.add_argument("--test-subjects", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sigma", type=float, default=0.02)
    p.add_argument("--gamma", type=int, default=2)
    p.add_argument("--hidden", type=_hidden, default=(150, 150, 150))
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--val-fraction", type=float, default=0.1)
    _add_shore_flags(p)
    p.add_argument("--threads", type=int, default=None)
    commands["pipeline"] = p

    return parser, commands


def _load_config(path):
    pairs = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            pairs[key.strip().replace("-", "_")] = value.strip()
    return pairs


def _apply_config(subparser, pairs):
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for dest, raw in pairs.items():
        if dest not in actions:
            raise UsageError(f"unknown config key {dest!r}")
        action = actions[dest]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = raw.lower() in ("1", "true", "yes", "on")
        elif action.nargs in ("+", "*"):
            conv = action.type or str
            defaults[dest] = [conv(tok) for tok in raw.split()]
        else:
            conv = action.type or str
            defaults[dest] = conv(raw)
    subparser.set_defaults(**defaults)


def _write_manifest(directory, settings):
    lines = [f"{k} = {settings[k]}" for k in sorted(settings)]
    with open(os.path.join(directory, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _spec_from_args(args):
    return ShoreBasisSpec(args.radial_order, args.zeta, args.lambda_l,
                          args.lambda_n)


def _and_masks(*vols):
    out = require_binary_mask(vols[0])
    header = vols[0].header
    for vol in vols[1:]:
        out = out & require_binary_mask(vol)
    return ScalarVolume(header.with_(datatype="uint8"), out.astype(float))


def _measure_names(count):
    if count == len(MEASURE_NAMES):
        return list(MEASURE_NAMES)
    return [f"measure_{i}" for i in range(count)]


# --------------------------------------------------------------------------
# commands

def _cmd_synth(args):
    os.makedirs(args.out, exist_ok=True)
    config = synth.default_phantom(args.dims, args.seed, args.noise_sigma)
    src_scheme = synth.source_scheme(args.source_dirs)
    tgt_scheme = synth.target_scheme(args.target_dirs)
    data = synth.generate(config, src_scheme, tgt_scheme)

    out = args.out
    write_dwi(os.path.join(out, "source.nii"), os.path.join(out, "source.bval"),
              os.path.join(out, "source.bvec"), data.dwi_source)
    write_dwi(os.path.join(out, "target.nii"), os.path.join(out, "target.bval"),
              os.path.join(out, "target.bvec"), data.dwi_target)
    for name, vol in zip(MEASURE_NAMES, data.measures):
        write_scalar(os.path.join(out, f"{name}.nii"), vol)
    write_scalar(os.path.join(out, "mask.nii"), data.mask)
    with open(os.path.join(out, "phantom.txt"), "w") as fh:
        fh.write(synth.format_manifest(config, src_scheme, tgt_scheme))
    _write_manifest(out, {
        "command": "synth", "dims": "x".join(map(str, args.dims)),
        "seed": args.seed, "noise_sigma": args.noise_sigma,
        "source_dirs": args.source_dirs, "target_dirs": args.target_dirs,
    })
    print(f"wrote phantom subject to {out}")
    return EXIT_OK


def _fit_masked(dwi, mask, spec):
    norm, b0_map, valid = resample.normalize_b0(dwi)
    fit_mask = _and_masks(mask, valid)
    design = shore.design_matrix(norm.scheme, spec)
    reg = shore.regularizer(design.index_set)
    solver = shore.CoefficientSolver(design, reg, spec.lambda_l,
                                     spec.lambda_n)
    mask_arr = require_binary_mask(fit_mask)
    coeffs = np.zeros(norm.spatial_dims + (design.n_coefficients,))
    coeffs[mask_arr] = solver.fit(norm.data[mask_arr])
    return coeffs, design, norm, fit_mask


def _cmd_fit_shore(args):
    dwi = read_dwi(args.in_path, args.bvals, args.bvecs)
    mask = read_mask(args.mask)
    spec = _spec_from_args(args)
    coeffs, design, _, _ = _fit_masked(dwi, mask, spec)
    header = dwi.header.with_(dims=coeffs.shape)
    write_nifti_file(args.out, header, coeffs)
    stem = args.out[:-4] if args.out.endswith(".nii") else args.out
    with open(stem + ".indices.txt", "w") as fh:
        fh.write(shore.format_index_sidecar(design.index_set))
    print(f"wrote {design.n_coefficients} coefficient volumes to {args.out}")
    return EXIT_OK


def _cmd_resample(args):
    dwi = read_dwi(args.in_path, args.bvals, args.bvecs)
    mask = read_mask(args.mask)
    target = read_fsl_gradients(args.target_bvals, args.target_bvecs)
    spec = _spec_from_args(args)

    norm, _, valid = resample.normalize_b0(dwi)
    fit_mask = _and_masks(mask, valid)
    out_dwi = resample.resample_qspace(norm, fit_mask, spec, target,
                                       _resolve_threads(args.threads),
                                       args.clamp_max)
    stem = args.out[:-4] if args.out.endswith(".nii") else args.out
    write_dwi(args.out if args.out.endswith(".nii") else args.out + ".nii",
              stem + ".bval", stem + ".bvec", out_dwi)
    print(f"wrote interpolated series ({len(out_dwi.scheme)} gradients) "
          f"to {args.out}")
    return EXIT_OK


def _cmd_downsample(args):
    from .niftio import read_nifti_file

    if args.binary_mask:
        vol = read_mask(args.in_path)
        out_vol = resample.downsample_mask(vol, args.gamma)
        write_scalar(args.out, out_vol)
    else:
        header, data = read_nifti_file(args.in_path)
        down = resample.block_mean_downsample(data, args.gamma)
        out_header = VolumeHeader(
            down.shape,
            tuple(v * args.gamma for v in header.voxel_size),
            header.datatype,
            header.affine @ np.diag([args.gamma] * 3 + [1.0]))
        write_nifti_file(args.out, out_header, down)
    print(f"wrote downsampled volume to {args.out}")
    return EXIT_OK


def _cmd_extract(args):
    dwi = read_dwi(args.in_path, args.bvals, args.bvecs)
    mask = read_mask(args.mask)
    measures = [read_scalar(p) for p in args.measures]
    if args.mode == "qdl":
        in_size = args.in_size or 3
        sample_set = patches.extract_qdl(dwi, measures, mask, in_size)
    else:
        in_size = args.in_size or 5
        out_size = args.out_size or args.gamma
        sample_set = patches.extract_sr(dwi, measures, mask, args.gamma,
                                        in_size, out_size)
    patches.save_samples(args.out, sample_set)
    print(f"wrote {len(sample_set)} samples to {args.out}")
    return EXIT_OK


def _cmd_train(args):
    sample_set = patches.load_samples(args.samples)
    geo = sample_set.geometry
    cfg = TrainConfig(args.epochs, args.batch_size, args.learning_rate,
                      args.momentum, args.val_fraction, args.seed)
    model = learn.init_model(
        [geo.input_len, *args.hidden, geo.target_len], args.seed)
    model, history = learn.train(model, sample_set, cfg)
    learn.save_model(args.out, model, cfg, geo)
    best = min(h[1] for h in history)
    print(f"trained {len(history)} epochs on {len(sample_set)} samples; "
          f"best validation mse {best:.6g}; saved to {args.out}")
    return EXIT_OK


def _cmd_predict(args):
    model, _, geometry = learn.load_model(args.model)
    dwi = read_dwi(args.in_path, args.bvals, args.bvecs)
    mask = read_mask(args.mask)
    norm, _, valid = resample.normalize_b0(dwi)
    pred_mask = _and_masks(mask, valid)
    if norm.data.shape[3] != geometry.n_signals:
        raise ValueError(
            f"series has {norm.data.shape[3]} diffusion-weighted volumes "
            f"but the model was trained for {geometry.n_signals}")
    maps = learn.predict_volume(model, norm, pred_mask, geometry)
    os.makedirs(args.out, exist_ok=True)
    for name, vol in zip(_measure_names(geometry.n_measures), maps):
        write_scalar(os.path.join(args.out, f"{name}.nii"), vol)
    print(f"wrote {geometry.n_measures} measure maps to {args.out}")
    return EXIT_OK


def _cmd_evaluate(args):
    if len(args.est) != len(args.gold):
        raise ValueError("--est and --gold need the same number of maps")
    names = args.names or _measure_names(len(args.est))
    if len(names) != len(args.est):
        raise ValueError("--names length does not match maps")
    mask = read_mask(args.mask)
    if args.csf_exclude:
        iso = read_scalar(args.csf_exclude)
        keep = iso.data < CSF_ISO_THRESHOLD
        mask = ScalarVolume(mask.header,
                            (require_binary_mask(mask) & keep).astype(float))
    rows = []
    summary = {}
    for name, est_path, gold_path in zip(names, args.est, args.gold):
        est = read_scalar(est_path)
        gold = read_scalar(gold_path)
        mae = stats.mean_abs_error(est, gold, mask)
        rows.append((name, mae))
        summary[f"mae_{name}"] = mae
    stats.write_table(args.out + ".tsv", ("measure", "mae"), rows)
    stats.write_summary(args.out + ".kv", summary)
    for name, mae in rows:
        print(f"{name}: mae {mae:.6g}")
    return EXIT_OK


# --------------------------------------------------------------------------
# end-to-end experiment

def _subject(seed, dims, sigma, schemes):
    config = synth.default_phantom(dims, seed, sigma)
    return config, synth.generate(config, *schemes)


def _training_samples(mode, data, spec, gamma, threads):
    tgt_scheme = data.dwi_target.scheme
    if mode == "srqdl":
        lr_dwi = resample.downsample_dwi(data.dwi_source, gamma)
        lr_mask = resample.downsample_mask(data.mask, gamma)
        norm, _, valid = resample.normalize_b0(lr_dwi)
        fit_mask = _and_masks(lr_mask, valid)
        interp = resample.resample_qspace(norm, fit_mask, spec, tgt_scheme,
                                          threads)
        return patches.extract_sr(interp, data.measures, fit_mask, gamma,
                                  in_size=5, out_size=gamma)
    norm, _, valid = resample.normalize_b0(data.dwi_source)
    fit_mask = _and_masks(data.mask, valid)
    interp = resample.resample_qspace(norm, fit_mask, spec, tgt_scheme,
                                      threads)
    return patches.extract_qdl(interp, data.measures, fit_mask)


def _coverage(centers, geometry, in_dims, out_dims):
    grid = np.zeros(in_dims, dtype=bool)
    if centers.shape[0]:
        grid[centers[:, 0], centers[:, 1], centers[:, 2]] = True
    if geometry.mode == "sr":
        grid = resample.block_replicate_upsample(grid.astype(float),
                                                 geometry.gamma) > 0
    # out_dims can exceed the covered grid when cropping preceded a
    # downsample; pad with uncovered voxels.
    out = np.zeros(out_dims, dtype=bool)
    out[:grid.shape[0], :grid.shape[1], :grid.shape[2]] = grid
    return out


def _test_subject_maps(mode, data, model, geometry, gamma):
    """Predictions, baseline maps and the evaluation mask for one subject."""
    if mode == "srqdl":
        lr_tgt = resample.downsample_dwi(data.dwi_target, gamma)
        lr_mask = resample.downsample_mask(data.mask, gamma)
        norm, _, valid = resample.normalize_b0(lr_tgt)
        pred_mask = _and_masks(lr_mask, valid)
        est_maps = learn.predict_volume(model, norm, pred_mask, geometry)
        base_lr = baseline.estimate_measures(norm, pred_mask)
        base_maps = [scalar_like(
            resample.block_replicate_upsample(v.data, gamma),
            est_maps[0].header) for v in base_lr]
    else:
        norm, _, valid = resample.normalize_b0(data.dwi_target)
        pred_mask = _and_masks(data.mask, valid)
        est_maps = learn.predict_volume(model, norm, pred_mask, geometry)
        base_maps = baseline.estimate_measures(norm, pred_mask)

    centers, _ = patches.extract_inputs(norm, pred_mask, geometry)
    covered = _coverage(centers, geometry, norm.spatial_dims,
                        data.mask.data.shape)
    gt_iso = data.measures[1].data
    eval_arr = (require_binary_mask(data.mask) & covered
                & (gt_iso < CSF_ISO_THRESHOLD))
    eval_mask = ScalarVolume(data.mask.header.with_(datatype="uint8"),
                             eval_arr.astype(float))
    return est_maps, base_maps, eval_mask


def run_pipeline(args):
    mode = args.mode
    dims = args.dims or ((16, 16, 16) if mode == "qdl" else (20, 20, 20))
    threads = _resolve_threads(args.threads)
    spec = _spec_from_args(args)
    schemes = (synth.source_scheme(), synth.target_scheme())
    os.makedirs(args.out, exist_ok=True)

    sample_sets = []
    for i in range(args.train_subjects):
        _, data = _subject(args.seed + i, dims, args.noise_sigma, schemes)
        sample_sets.append(_training_samples(mode, data, spec, args.gamma,
                                             threads))
    merged = patches.concat_sample_sets(sample_sets)
    geometry = merged.geometry

    cfg = TrainConfig(args.epochs, args.batch_size, args.learning_rate,
                      args.momentum, args.val_fraction, args.seed)
    model = learn.init_model(
        [geometry.input_len, *args.hidden, geometry.target_len], args.seed)
    model, history = learn.train(model, merged, cfg)
    learn.save_model(os.path.join(args.out, "model.bin"), model, cfg,
                     geometry)

    errors = {name: {"net": [], "base": []} for name in MEASURE_NAMES}
    rows = []
    for j in range(args.test_subjects):
        _, data = _subject(args.seed + 1000 + j, dims, args.noise_sigma,
                           schemes)
        est_maps, base_maps, eval_mask = _test_subject_maps(
            mode, data, model, geometry, args.gamma)
        for name, est, base, gold in zip(MEASURE_NAMES, est_maps, base_maps,
                                         data.measures):
            mae_net = stats.mean_abs_error(est, gold, eval_mask)
            mae_base = stats.mean_abs_error(base, gold, eval_mask)
            errors[name]["net"].append(mae_net)
            errors[name]["base"].append(mae_base)
            rows.append((j, name, mae_net, mae_base))
        if j == 0:
            for name, est, base, gold in zip(MEASURE_NAMES, est_maps,
                                             base_maps, data.measures):
                write_scalar(os.path.join(args.out, f"est_{name}.nii"), est)
                write_scalar(os.path.join(args.out, f"base_{name}.nii"), base)
                write_scalar(os.path.join(args.out, f"gold_{name}.nii"), gold)
            write_scalar(os.path.join(args.out, "eval_mask.nii"), eval_mask)

    summary = {"mode": mode, "subjects": args.test_subjects,
               "train_samples": len(merged),
               "best_val_mse": min(h[1] for h in history)}
    agg = stats.summarize({(name, kind): errors[name][kind]
                           for name in MEASURE_NAMES
                           for kind in ("net", "base")})
    for (name, kind), (mean, sd) in agg.items():
        summary[f"mae_{name}_{kind}_mean"] = mean
        summary[f"mae_{name}_{kind}_sd"] = sd
    for name in MEASURE_NAMES:
        t, p = stats.paired_t_test(errors[name]["base"], errors[name]["net"])
        summary[f"t_{name}"] = t
        summary[f"p_{name}"] = p

    stats.write_table(os.path.join(args.out, "metrics.tsv"),
                      ("subject", "measure", "mae_net", "mae_base"), rows)
    stats.write_summary(os.path.join(args.out, "summary.txt"), summary)
    _write_manifest(args.out, {
        "command": "pipeline", "mode": mode,
        "dims": "x".join(map(str, dims)),
        "train_subjects": args.train_subjects,
        "test_subjects": args.test_subjects,
        "seed": args.seed, "noise_sigma": args.noise_sigma,
        "gamma": args.gamma, "epochs": args.epochs,
        "batch_size": args.batch_size,
        "learning_rate": args.learning_rate,
        "hidden": ",".join(map(str, args.hidden)),
        "radial_order": args.radial_order, "zeta": args.zeta,
        "lambda_l": args.lambda_l, "lambda_n": args.lambda_n,
        "threads": threads,
    })
    for name in MEASURE_NAMES:
        print(f"{name}: net mae {summary[f'mae_{name}_net_mean']:.5f} "
              f"vs baseline {summary[f'mae_{name}_base_mean']:.5f} "
              f"(p = {summary[f'p_{name}']:.4g})")
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "fit-shore": _cmd_fit_shore,
    "resample": _cmd_resample,
    "downsample": _cmd_downsample,
    "extract": _cmd_extract,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "pipeline": run_pipeline,
}


def run(argv=None):
    """Parse arguments and dispatch; returns the process exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, commands = build_parser()
    try:
        if "--config" in argv:
            at = argv.index("--config")
            if at + 1 >= len(argv):
                raise UsageError("--config needs a path")
            command = next((a for i, a in enumerate(argv)
                            if not a.startswith("-") and i != at + 1), None)
            if command not in commands:
                raise UsageError(f"unknown or missing command {command!r}")
            _apply_config(commands[command], _load_config(argv[at + 1]))
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("a command is required")
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"qxfer: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse -h
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    try:
        return _COMMANDS[args.command](args)
    except shore.NumericalError as exc:
        print(f"qxfer: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        print(f"qxfer: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
