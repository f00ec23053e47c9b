"""Pipeline orchestration: simulate, morozov, train, image, report.

Stages communicate through files in the output directory:

    simulate -> operator_clean.rnop, operator_noisy.rnop,
                library.rrhs, svd.rsvd
    morozov  -> morozov_dense_eta<tag>.csv, morozov_train_eta<tag>.csv
    train    -> trace.csv, net_step1.rnck, net_final.rnck,
                stop_summary.txt
    image    -> image_<tag>.pgm/.csv, contrast.csv, masks.pbm,
                misfit_<a>_vs_<b>.csv, image_scale.txt
    report   -> picard.csv, report.txt

Exit codes: 0 success, 1 usage/config error, 2 numerical failure,
3 missing input.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import containers, imaging, morozov, spectral, training
from .config import ConfigError, RunConfig, load_config, parse_config
from .errors import MissingInput, NoRoot, NumericalFailure
from .forward import add_noise, build_operator, build_rhs_library
from .morozov import regmap_from_csv, regmap_to_csv
from .network import init as net_init

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_MISSING_INPUT = 3


def _eta_tag(eta: float) -> str:
    return format(eta, "g")


def _out_dir(cfg: RunConfig) -> Path:
    path = Path(cfg.output.directory)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingInput(f"missing artifact {path}; run the earlier pipeline stage first")
    return path


def _load_stage_inputs(cfg: RunConfig, out: Path):
    lib = containers.read_library(_require(out / "library.rrhs"))
    svd = containers.read_svd(_require(out / "svd.rsvd"))
    return lib, svd


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------
def cmd_simulate(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    clean = build_operator(cfg.scene)
    noisy = add_noise(clean, cfg.scene.noise_delta, cfg.noise_seed)
    lib = build_rhs_library(cfg.scene, cfg.grid.nx, cfg.grid.ny, cfg.grid.n_orientations)
    svd = spectral.decompose(noisy)
    containers.write_operator(clean, out / "operator_clean.rnop")
    containers.write_operator(noisy, out / "operator_noisy.rnop")
    containers.write_library(lib, out / "library.rrhs")
    containers.write_svd(svd, out / "svd.rsvd")
    print(f"simulate: wrote operator ({clean.size}x{clean.size}), "
          f"{lib.n_patterns} patterns, SVD cache -> {out}")
    return EXIT_OK


def cmd_morozov(cfg: RunConfig, etas: list[float]) -> int:
    out = _out_dir(cfg)
    lib, svd = _load_stage_inputs(cfg, out)
    for eta in etas:
        regmap = morozov.build_regmap(eta, svd, lib, tol=cfg.morozov.tol)
        tag = _eta_tag(eta)
        regmap_to_csv(regmap, out / f"morozov_dense_eta{tag}.csv")
        dataset = training.build_dataset(lib, regmap, svd, cfg.train_m)
        reduced = regmap.pattern_indices[dataset.train_indices]
        train_map = morozov.build_regmap(eta, svd, lib, subset=reduced, tol=cfg.morozov.tol)
        regmap_to_csv(train_map, out / f"morozov_train_eta{tag}.csv")
        print(f"morozov: eta={tag} -> dense map ({regmap.size} patterns), "
              f"training map ({train_map.size} patterns)")
    return EXIT_OK


def _read_dense_map(cfg: RunConfig, out: Path, eta: float, lib):
    path = _require(out / f"morozov_dense_eta{_eta_tag(eta)}.csv")
    return regmap_from_csv(path, lib.grid_shape, lib.n_orientations, eta=eta, source="morozov")


def cmd_train(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    lib, svd = _load_stage_inputs(cfg, out)
    regmap = _read_dense_map(cfg, out, cfg.morozov.eta0, lib)
    dataset = training.build_dataset(lib, regmap, svd, cfg.train_m)
    alpha_scale = float(np.max(dataset.labels_train))
    if alpha_scale <= 0:
        raise NumericalFailure("all training labels are zero; cannot scale the network head")
    net = net_init(
        input_dim=svd.size,
        hidden=(cfg.net.hidden1, cfg.net.hidden2),
        alpha_scale=alpha_scale,
        seed=cfg.net_seed,
        u_scale=dataset.u_scale,
    )
    result = training.train(net, dataset, cfg.train)
    result.trace.to_csv(out / "trace.csv")
    containers.write_checkpoint(result.step1_net, out / "net_step1.rnck")
    containers.write_checkpoint(result.net, out / "net_final.rnck")
    stop_line = (
        f"mode={cfg.train.mode} epoch1={cfg.train.resolved_epoch1()} "
        f"stop_epoch={result.stop_epoch} reason={result.stop_reason}\n"
    )
    (out / "stop_summary.txt").write_text(stop_line)
    print("train: " + stop_line.strip())
    return EXIT_OK


def _emit_images(cfg: RunConfig, out: Path, images: list[imaging.IndicatorImage]) -> None:
    vmin = min(float(np.min(im.values)) for im in images)
    vmax = max(float(np.max(im.values)) for im in images)
    (out / "image_scale.txt").write_text(f"min={vmin!r} max={vmax!r}\n")
    for im in images:
        containers.write_pgm(im.values, out / f"image_{im.provenance}.pgm", vmin=vmin, vmax=vmax)
        containers.write_values_csv(im.values, out / f"image_{im.provenance}.csv")


def cmd_image(cfg: RunConfig, source: str, eta: float | None) -> int:
    out = _out_dir(cfg)
    lib, svd = _load_stage_inputs(cfg, out)
    eta = cfg.morozov.eta0 if eta is None else eta

    maps = []
    if source == "morozov":
        maps.append(_read_dense_map(cfg, out, eta, lib))
    elif source == "net":
        step1_path = _require(out / "net_step1.rnck")
        net1, _ = containers.read_checkpoint(step1_path)
        maps.append(training.predict_map(net1, svd, lib, source="net_step1"))
        final_path = out / "net_final.rnck"
        if final_path.exists():
            net2, _ = containers.read_checkpoint(final_path)
            maps.append(training.predict_map(net2, svd, lib, source="net_step2"))
    else:
        raise ConfigError(f"unknown image source {source!r}")

    images = [imaging.lsm_image(svd, lib, m) for m in maps]
    _emit_images(cfg, out, images)

    masks = imaging.build_masks(cfg.scene, lib.grid, lib.grid_shape, cfg.mask_radius())
    if cfg.output.emit_masks:
        containers.write_pbm(masks.defect, out / "masks.pbm")
    reports = [(im.provenance, imaging.contrast(im, masks)) for im in images]
    imaging.contrast_to_csv(reports, out / "contrast.csv")

    # misfit grids for every available map pair
    available = {m.source: m for m in maps}
    dense_path = out / f"morozov_dense_eta{_eta_tag(cfg.morozov.eta0)}.csv"
    if source == "net" and dense_path.exists():
        available["morozov"] = regmap_from_csv(
            dense_path, lib.grid_shape, lib.n_orientations, eta=cfg.morozov.eta0
        )
    tags = sorted(available)
    for i, tag_a in enumerate(tags):
        for tag_b in tags[i + 1:]:
            misfit = imaging.map_misfit(available[tag_a], available[tag_b])
            containers.write_values_csv(
                misfit.reshape(1, -1), out / f"misfit_{tag_a}_vs_{tag_b}.csv"
            )
    for tag, rep in reports:
        print(f"image: {tag} C_mn={rep.c_mean:.4g} C_mx={rep.c_max:.4g}")
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    lib, svd = _load_stage_inputs(cfg, out)
    lines = [f"artifacts in {out}:"]
    if cfg.output.emit_picard:
        subset = np.unique(np.linspace(0, lib.n_patterns - 1, 4).astype(int))
        spectral.export_picard(svd, lib, out / "picard.csv", pattern_indices=subset)
        lines.append(f"picard.csv: spectrum vs projections for patterns {subset.tolist()}")
    for name in ("trace.csv", "contrast.csv", "stop_summary.txt"):
        if (out / name).exists():
            lines.append(f"{name}: present")
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------
def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lsmreg",
        description="Sampling-method imaging with learned per-pattern regularization",
    )
    parser.add_argument("--config", type=str, default=None, help="flat-text config file")
    parser.add_argument("--seed", type=int, default=None, help="override scene.seed")
    parser.add_argument("--out", type=str, default=None, help="override output.directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", help="synthesize operator, noise, patterns, SVD")

    p_mor = sub.add_parser("morozov", help="solve discrepancy maps")
    p_mor.add_argument("--eta", type=float, default=None, help="single threshold (default eta0)")
    p_mor.add_argument("--eta-sweep", nargs=3, type=float, metavar=("START", "STOP", "STEP"),
                       default=None, help="inclusive threshold sweep")

    sub.add_parser("train", help="two-step network training")

    p_img = sub.add_parser("image", help="indicator images and contrast")
    p_img.add_argument("--source", choices=("morozov", "net"), default="morozov")
    p_img.add_argument("--eta", type=float, default=None,
                       help="map threshold for --source morozov (default eta0)")

    sub.add_parser("report", help="bundle Picard data and run summaries")
    return parser


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else parse_config("")
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        cfg = cfg.with_out_dir(args.out)
    return cfg


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        cfg = _resolve_config(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "morozov":
            if args.eta_sweep is not None:
                start, stop, step = args.eta_sweep
                count = int(round((stop - start) / step)) + 1
                etas = [start + i * step for i in range(count) if start + i * step <= stop + 1e-12]
            elif args.eta is not None:
                etas = [args.eta]
            else:
                etas = [cfg.morozov.eta0]
            return cmd_morozov(cfg, etas)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "image":
            return cmd_image(cfg, args.source, args.eta)
        if args.command == "report":
            return cmd_report(cfg)
        parser.error(f"unknown command {args.command!r}")
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MissingInput as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (NumericalFailure, NoRoot) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
