"""Command line interface.

Subcommands: phantom-gen, ingest, build-dataset, train, eval, experiment,
inspect. Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric
failure (non-finite loss).

Heavy imports happen inside main() after threading environment defaults
are pinned, so runs are reproducible and small kernels are not
oversubscribed.
"""

import argparse
import os
import sys


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; this CLI reserves 2 for data errors.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(f"error: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="admri", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (default from config)")
        p.add_argument("--balanced", action="store_true", default=None,
                       help="also run class-balanced training")
        p.add_argument("--variant", type=int, choices=(0, 2, 3, 4),
                       help="restrict to one smoothing variant")
        p.add_argument("--subject-level-split", action="store_true", default=None,
                       help="split train/test by subject instead of by slice")
        return p

    common(sub.add_parser("phantom-gen", help="write synthetic phantom volumes as .nii.gz"))
    p = common(sub.add_parser("ingest", help="parse a directory of NIfTI volumes and list them"))
    p.add_argument("directory")
    p = common(sub.add_parser("build-dataset", help="NIfTI directory -> slice dataset per variant"))
    p.add_argument("directory")
    common(sub.add_parser("train", help="train one model on one variant dataset"))
    p = common(sub.add_parser("eval", help="evaluate a checkpoint on a dataset"))
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    common(sub.add_parser("experiment", help="run the full repeated-training matrix"))
    p = common(sub.add_parser("inspect", help="dump a dataset file's manifest and records"))
    p.add_argument("dataset")
    p.add_argument("--records", type=int, default=0, help="also show the first N records")
    return parser


def _load_config(args):
    from .config import ExperimentConfig, apply_overrides, load_config

    config = load_config(args.config) if args.config else ExperimentConfig()
    return apply_overrides(
        config,
        seed=args.seed,
        out_dir=args.out,
        balanced=args.balanced,
        subject_level_split=args.subject_level_split,
        variants=(args.variant,) if args.variant is not None else None,
    )


def _iter_nifti_files(directory):
    """Yield (path, label) pairs; labels come from AD/NC subdirectories or
    from an ad_/nc_ filename prefix."""
    from .errors import DataError
    from .volume import LABEL_AD, LABEL_NC

    paths = []
    for root, _, names in os.walk(directory):
        for name in sorted(names):
            if name.endswith(".nii") or name.endswith(".nii.gz"):
                paths.append(os.path.join(root, name))
    if not paths:
        raise DataError(f"no .nii or .nii.gz files under {directory}")
    out = []
    for path in sorted(paths):
        parts = [p.upper() for p in path.split(os.sep)]
        name = os.path.basename(path).lower()
        if "AD" in parts[:-1] or name.startswith("ad_"):
            label = LABEL_AD
        elif "NC" in parts[:-1] or name.startswith("nc_"):
            label = LABEL_NC
        else:
            raise DataError(
                f"cannot infer class for {path}; place it under AD/ or NC/ "
                "or prefix the file name with ad_ or nc_"
            )
        out.append((path, label))
    return out


def _cmd_phantom_gen(args) -> int:
    from .phantom import PhantomConfig, generate_phantoms
    from .volume import LABEL_NAMES, write_nifti

    config = _load_config(args)
    phantom_config = PhantomConfig(
        nc_subjects=config.phantom_nc,
        ad_subjects=config.phantom_ad,
        dims=(config.phantom_dim,) * 3,
        voxel_mm=config.phantom_voxel_mm,
        effect_size=config.phantom_effect,
        noise_sigma=config.phantom_noise,
        seed=config.seed,
    )
    out_dir = os.path.join(config.out_dir, "phantoms")
    for volume in generate_phantoms(phantom_config):
        class_dir = os.path.join(out_dir, LABEL_NAMES[volume.class_label])
        os.makedirs(class_dir, exist_ok=True)
        path = os.path.join(class_dir, f"subj{volume.subject_id:04d}.nii.gz")
        write_nifti(volume, path)
        print(f"wrote {path}")
    print(f"{phantom_config.nc_subjects} NC + {phantom_config.ad_subjects} AD phantoms in {out_dir}")
    return 0


def _load_volumes(directory):
    from .volume import read_volume

    volumes = []
    for subject_id, (path, label) in enumerate(_iter_nifti_files(directory)):
        volumes.append(read_volume(path, subject_id=subject_id, class_label=label))
    return volumes


def _cmd_ingest(args) -> int:
    from .volume import LABEL_NAMES

    files = _iter_nifti_files(args.directory)
    volumes = _load_volumes(args.directory)
    print(f"{'id':<6}{'class':<7}{'shape':<16}{'voxel mm':<18}file")
    for (path, _), volume in zip(files, volumes):
        shape = "x".join(str(s) for s in volume.shape)
        dims = "x".join(f"{d:g}" for d in volume.voxel_dims_mm)
        print(f"{volume.subject_id:<6}{LABEL_NAMES[volume.class_label]:<7}"
              f"{shape:<16}{dims:<18}{path}")
    print(f"{len(volumes)} volumes parsed")
    return 0


def _cmd_build_dataset(args) -> int:
    from .dataset import write_dataset
    from .harness import build_dataset_from_volumes

    config = _load_config(args)
    volumes = _load_volumes(args.directory)
    os.makedirs(config.out_dir, exist_ok=True)
    for variant in config.variants:
        dataset = build_dataset_from_volumes(
            volumes, variant, drop_last=config.drop_last,
            extra_manifest={"seed": str(config.seed), "source": args.directory},
        )
        path = os.path.join(config.out_dir, f"mri{variant}.smrd")
        write_dataset(dataset.records, dataset.manifest, path)
        nc, ad = dataset.class_counts()
        print(f"wrote {path}: {len(dataset)} slices (NC {nc}, AD {ad})")
    return 0


def _cmd_train(args) -> int:
    from .dataset import balance_dataset, read_dataset, split_dataset
    from .harness import STREAM_BALANCE, STREAM_SPLIT, report_metrics, train
    from .hashing import mix64
    from .nn import network

    config = _load_config(args)
    if len(config.variants) != 1:
        raise SystemExit("error: train needs exactly one variant (use --variant)")
    variant = config.variants[0]
    dataset = read_dataset(config.dataset_path(variant))
    if config.balanced:
        nc, ad = dataset.class_counts()
        target = config.balance_target or min(nc, ad)
        dataset = balance_dataset(dataset, target, seed=mix64(config.seed, STREAM_BALANCE))
    train_set, test_set = split_dataset(
        dataset, test_fraction=config.test_fraction,
        seed=mix64(config.seed, STREAM_SPLIT), subject_level=config.subject_level_split,
    )
    params, history = train(config, train_set, test_set)
    os.makedirs(config.out_dir, exist_ok=True)
    tag = f"mri{variant}_bal" if config.balanced else f"mri{variant}"
    metrics_path = os.path.join(config.out_dir, f"metrics_{tag}.csv")
    model_path = os.path.join(config.out_dir, f"model_{tag}.ckpt")
    report_metrics(history, metrics_path)
    network.save_checkpoint(params, model_path)
    print(f"wrote {metrics_path} and {model_path}")
    print(f"final test accuracy {history.final_accuracy:.6f} "
          f"(train {len(train_set)}, test {len(test_set)} slices)")
    return 0


def _cmd_eval(args) -> int:
    from .dataset import read_dataset
    from .harness import evaluate, subject_vote_accuracy
    from .nn import network

    params = network.load_checkpoint(args.checkpoint)
    dataset = read_dataset(args.dataset)
    accuracy, loss = evaluate(params, dataset)
    subject_accuracy = subject_vote_accuracy(params, dataset)
    print(f"slices {len(dataset)}  accuracy {accuracy:.6f}  mean_loss {loss:.6f}  "
          f"subject_vote_accuracy {subject_accuracy:.6f}")
    return 0


def _cmd_experiment(args) -> int:
    from .harness import format_report, report_metrics, run_experiment
    from .nn import network

    config = _load_config(args)
    report, artifacts = run_experiment(config)
    os.makedirs(config.out_dir, exist_ok=True)
    for name, payload in sorted(artifacts.items()):
        path = os.path.join(config.out_dir, name)
        if name.endswith(".csv"):
            report_metrics(payload, path)
        else:
            network.save_checkpoint(payload, path)
    report_path = os.path.join(config.out_dir, "report.txt")
    text = format_report(report)
    with open(report_path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(text)
    print(text, end="")
    print(f"report written to {report_path}")
    return 0


def _cmd_inspect(args) -> int:
    from .dataset import read_dataset

    dataset = read_dataset(args.dataset)
    for key in sorted(dataset.manifest):
        print(f"{key}={dataset.manifest[key]}")
    print(f"records={len(dataset)}")
    for record in dataset.records[: args.records]:
        print(f"label={record.label} subject={record.subject_id} "
              f"axial={record.axial_index} variant={record.variant} "
              f"pixel_range=[{record.pixels.min()},{record.pixels.max()}]")
    return 0


_COMMANDS = {
    "phantom-gen": _cmd_phantom_gen,
    "ingest": _cmd_ingest,
    "build-dataset": _cmd_build_dataset,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "experiment": _cmd_experiment,
    "inspect": _cmd_inspect,
}


def main(argv=None) -> int:
    # Pin BLAS/OpenMP threading before numpy loads: keeps runs deterministic
    # and avoids oversubscription on the small per-sample kernels.
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1")

    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return 1
        return 0 if not exc.code else 1

    from .errors import DataError, NumericError, UsageError

    try:
        return _COMMANDS[args.command](args)
    except SystemExit as exc:  # _Parser.error inside a command
        print(exc.code, file=sys.stderr)
        return 1
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
