"""``hpbrdf`` command line: one subcommand per pipeline stage.

Data goes to files, progress to stderr.  Each run writes a JSON report
next to its primary output.  Failures print a single line
``error[<category>] <message>`` on stderr and exit with status 1; usage
errors exit with status 2.
"""

import argparse
import glob
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .errors import ConfigError, HpbrdfError

EXIT_FAILURE = 1


def _progress(msg):
    print(msg, file=sys.stderr, flush=True)


def _write_report(path, report):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj).__name__)


def _parse_dims(text, n, name):
    parts = text.lower().replace(",", "x").split("x")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"--{name}: cannot parse {text!r}") from None
    if len(vals) != n:
        raise ConfigError(f"--{name} needs {n} values, got {len(vals)}")
    return vals


def _config(args):
    from .config import PipelineConfig

    return PipelineConfig.load(args.config)


def _seed(args, cfg):
    return cfg.seed if args.seed is None else args.seed


def _mueller_paths(paths):
    out = []
    for p in paths:
        out.extend(sorted(glob.glob(os.path.join(p, "*.hpmi"))) if os.path.isdir(p) else [p])
    if not out:
        raise ConfigError("no Mueller image files given")
    return out


# -- subcommands -------------------------------------------------------------


def cmd_simulate(args):
    from .ellipsometer import simulate_sphere_capture, write_capture

    cfg = _config(args)
    acq = cfg.acquisition(seed=_seed(args, cfg))
    scene = cfg.scene()
    material = cfg.material()
    t0 = time.perf_counter()
    nb = acq.wavelength_grid.count

    def tick(arm, band):
        if band == nb - 1:
            _progress(f"simulate: arm {arm + 1}/{len(acq.light_arm_angles)}")

    data = simulate_sphere_capture(material, scene, acq, progress=tick)
    write_capture(args.out, data, acq)
    return args.out, {
        "shape": list(data.shape),
        "material": material.name,
        "seed": acq.seed,
        "seconds": time.perf_counter() - t0,
    }


def cmd_reconstruct(args):
    from .ellipsometer import read_capture
    from .reconstruction import reconstruct_image, write_mueller_image

    cfg = _config(args)
    acq = cfg.acquisition(seed=_seed(args, cfg))
    scene = cfg.scene()
    archive = read_capture(args.capture)
    archive.check_config(acq)
    os.makedirs(args.out_dir, exist_ok=True)
    t0 = time.perf_counter()
    arms = []
    for k in range(len(acq.light_arm_angles)):
        img = reconstruct_image(archive.data, scene, acq, k)
        path = os.path.join(args.out_dir, f"arm_{k:03d}.hpmi")
        write_mueller_image(path, img)
        arms.append(
            {
                "file": os.path.basename(path),
                "arm_deg": float(np.degrees(img.arm_angle)),
                "valid_pixels": int(img.valid.sum()),
                "physical_fraction": img.physical_fraction(),
                "median_residual": float(np.nanmedian(img.residual)) if img.valid.any() else None,
            }
        )
        _progress(f"reconstruct: arm {k + 1}/{len(acq.light_arm_angles)}")
    return os.path.join(args.out_dir, "reconstruct"), {"arms": arms, "seconds": time.perf_counter() - t0}


def cmd_validate(args):
    from .reconstruction import read_mueller_image

    n_valid = n_phys = 0
    for path in _mueller_paths(args.images):
        img = read_mueller_image(path)
        n_valid += int(img.valid.sum())
        n_phys += int((img.valid & img.physical).sum())
    pct = 100.0 * n_phys / n_valid if n_valid else 0.0
    print(f"physically valid: {pct:.2f}% ({n_phys}/{n_valid})")
    return None, {"valid_pixels": n_valid, "physical_pixels": n_phys, "physical_percent": pct}


def cmd_tabulate(args):
    from .mueller import WavelengthGrid
    from .reconstruction import read_mueller_image
    from .table import TableBuilder, splat_image, tabulate_analytic, write_table

    cfg = _config(args)
    dims = tuple(int(d) for d in _parse_dims(args.bins, 4, "bins")) if args.bins else cfg.table_dims()
    t0 = time.perf_counter()
    if args.analytic:
        table = tabulate_analytic(cfg.material(), dims)
        stats = {"source": "analytic"}
    else:
        acq = cfg.acquisition()
        scene = cfg.scene()
        grid = acq.wavelength_grid
        if dims[0] != grid.count:
            raise ConfigError(f"--bins wavelength count {dims[0]} != capture bands {grid.count}")
        builder = TableBuilder(dims, WavelengthGrid(grid.start_nm, grid.step_nm, dims[0]))
        for path in _mueller_paths(args.images):
            img = read_mueller_image(path)
            k = int(np.argmin(np.abs(acq.light_arm_angles - img.arm_angle)))
            splat_image(builder, img, scene, acq, k)
            _progress(f"tabulate: {os.path.basename(path)}")
        table = builder.finalize()
        stats = {"source": "images", "accepted": builder.accepted, "skipped": builder.skipped}
    write_table(args.out, table)
    stats.update(dims=list(dims), occupied_fraction=float(table.mask.mean()), seconds=time.perf_counter() - t0)
    return args.out, stats


def cmd_inpaint(args):
    from .table import inpaint, read_table, write_table

    cfg = _config(args)
    opts = cfg.inpaint_args()
    if args.sigma:
        opts["sigma_bins"] = tuple(_parse_dims(args.sigma, 3, "sigma"))
    table = read_table(args.table)
    before = float(table.mask.mean())
    t0 = time.perf_counter()
    out = inpaint(table, **opts)
    write_table(args.out, out)
    return args.out, {
        "occupied_before": before,
        "sigma_bins": list(opts["sigma_bins"]),
        "seconds": time.perf_counter() - t0,
    }


def _write_grid(stem, arr, meta):
    arr = np.asarray(arr, dtype="<f4")
    with open(stem + ".f32", "wb") as fh:
        fh.write(np.ascontiguousarray(arr).tobytes())
    meta = dict(meta, shape=list(arr.shape), dtype="float32", byte_order="little")
    with open(stem + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_decompose(args):
    from .analysis import scalar_maps
    from .reconstruction import read_mueller_image

    img = read_mueller_image(args.image)
    os.makedirs(args.out_dir, exist_ok=True)
    maps = scalar_maps(img.data.astype(float), img.valid)
    wl = img.wavelength_grid.wavelengths.tolist()
    summary = {}
    for name, plane in maps.items():
        _write_grid(
            os.path.join(args.out_dir, name),
            plane,
            {"quantity": name, "axes": ["band", "row", "col"], "wavelengths_nm": wl, "invalid": "NaN"},
        )
        summary[name] = float(np.nanmedian(plane)) if np.isfinite(plane).any() else None
    return os.path.join(args.out_dir, "decompose"), {"median": summary}


def cmd_pca(args):
    from .analysis import TABLE_AXES, pca_table
    from .table import read_table

    axes = tuple(a.strip() for a in args.slice.split(","))
    if len(axes) != 2 or any(a not in TABLE_AXES[:4] for a in axes):
        raise ConfigError(f"--slice needs two of {', '.join(TABLE_AXES[:4])}")
    table = read_table(args.table)
    res = pca_table(table, axes, args.components)
    os.makedirs(args.out_dir, exist_ok=True)
    tag = "_".join(axes)
    _write_grid(
        os.path.join(args.out_dir, f"components_{tag}"),
        res.component_images(),
        {"axes": ["component"] + list(axes), "normalization": "m00 kept, other entries divided by m00"},
    )
    csv = os.path.join(args.out_dir, f"variance_{tag}.csv")
    ratio = res.explained_ratio
    with open(csv, "w") as fh:
        fh.write("component,explained_variance,explained_ratio,cumulative_ratio\n")
        for k, (v, r, c) in enumerate(zip(res.explained_variance, ratio, np.cumsum(ratio))):
            fh.write(f"{k},{v:.9e},{r:.9e},{c:.9e}\n")
    return csv, {"slice": list(axes), "explained_ratio": ratio.tolist()}


def _render_material(spec, wavelengths):
    from .analytic import load_material, material_from_dict
    from .table import read_table

    if spec.endswith(".hpbt"):
        return read_table(spec)
    if spec in ("dielectric", "metal"):
        return material_from_dict({"preset": spec})
    return load_material(spec)


def cmd_render(args):
    from .config import load_render_scene
    from .render import (
        TableMaterial,
        aolp_map,
        dop_map,
        nir_channels,
        render_direct,
        to_srgb,
        visible_bands,
        write_pfm,
        write_png,
    )
    from .table import HpbrdfTable

    material = _render_material(args.material, None)
    default_wl = material.grid.wavelengths.tolist()
    scene, mode = load_render_scene(args.scene, default_wl)
    if isinstance(material, HpbrdfTable):
        material = TableMaterial(material, mode)
    t0 = time.perf_counter()
    img = render_direct(scene, material)
    os.makedirs(args.out_dir, exist_ok=True)
    for b, lam in enumerate(img.wavelengths_nm):
        for c in range(4):
            write_pfm(os.path.join(args.out_dir, f"s{c}_{lam:.0f}nm.pfm"), img.data[b, ..., c])
    if len(visible_bands(img.wavelengths_nm)):
        write_png(os.path.join(args.out_dir, "srgb.png"), to_srgb(img, exposure=args.exposure))
    write_png(os.path.join(args.out_dir, "dop.png"), np.clip(dop_map(img), 0, 1))
    write_png(os.path.join(args.out_dir, "aolp.png"), aolp_map(img) / np.pi)
    for lam, plane in nir_channels(img).items():
        peak = plane.max()
        write_png(os.path.join(args.out_dir, f"nir_{lam:.0f}nm.png"), plane / peak if peak > 0 else plane)
    return os.path.join(args.out_dir, "render"), {
        "bands": len(img.wavelengths_nm),
        "hit_pixels": int(img.mask.sum()),
        "seconds": time.perf_counter() - t0,
    }


def cmd_fit_mlp(args):
    from .mueller import physical_mask
    from .neural import (
        default_input_box,
        evaluate_mse,
        fit_output_scale,
        forward,
        init_mlp,
        serialized_size,
        table_samples,
        train,
        write_model,
    )
    from .table import FULL_DIMS, data_payload_bytes, read_table

    cfg = _config(args)
    seed = _seed(args, cfg)
    n_layers, width = (int(v) for v in _parse_dims(args.layers, 2, "layers"))
    table = read_table(args.table)
    tcfg = cfg.train_config(seed)
    if args.steps is not None:
        tcfg.steps = args.steps
    t = cfg.data["train"]
    low, high = default_input_box(table.grid)
    model = init_mlp((width,) * n_layers, low, high, int(t["n_frequencies"]), t["activation"], seed)
    model = fit_output_scale(model, table)
    t0 = time.perf_counter()
    every = max(tcfg.steps // 20, 1)

    def tick(step, loss):
        if step % every == 0:
            _progress(f"fit-mlp: step {step}/{tcfg.steps} loss {loss:.6g}")

    model, history = train(model, table, tcfg, progress=tick)
    write_model(args.out, model)
    x, _ = table_samples(table)
    pick = np.random.default_rng(seed).choice(len(x), min(len(x), 20000), replace=False)
    phys = float(physical_mask(forward(model, x[pick]).astype(float).reshape(-1, 4, 4)).mean())
    size = serialized_size(model)
    return args.out, {
        "layers": [n_layers, width],
        "params": model.n_params,
        "steps": tcfg.steps,
        "final_loss": float(history[-1]),
        "table_mse": evaluate_mse(model, table),
        "physical_fraction": phys,
        "model_bytes": size,
        "compression_vs_full_table": data_payload_bytes(FULL_DIMS) / size,
        "seconds": time.perf_counter() - t0,
    }


def cmd_info(args):
    with open(args.file, "rb") as fh:
        magic = fh.read(4)
    info = {"file": args.file, "bytes": os.path.getsize(args.file)}
    if magic == b"HPBT":
        from .table import read_table_header

        h = read_table_header(args.file)
        info.update(kind="table", format_version=h.version, dims=list(h.dims), start_nm=h.start_nm,
                    step_nm=h.step_nm, payload_bytes=h.payload_bytes, expected_file_bytes=h.file_bytes)
        print(f"hpBRDF table {'x'.join(map(str, h.dims))}: payload {h.payload_bytes:,} bytes")
    elif magic == b"HPNN":
        from .neural import read_model, serialized_size

        m = read_model(args.file)
        info.update(kind="mlp", layer_sizes=m.layer_sizes, params=m.n_params, model_bytes=serialized_size(m))
        print(f"MLP {m.layer_sizes}: {m.n_params:,} parameters")
    elif magic == b"HPMI":
        from .reconstruction import read_mueller_image

        img = read_mueller_image(args.file)
        info.update(kind="mueller-image", shape=list(img.valid.shape), arm_deg=float(np.degrees(img.arm_angle)))
        print(f"Mueller image {img.valid.shape}: {img.valid.mean() * 100:.2f}% valid")
    elif magic == b"HPMS":
        from .ellipsometer import read_capture

        cap = read_capture(args.file)
        info.update(kind="capture", shape=list(cap.data.shape))
        print(f"capture {cap.data.shape}")
    else:
        from .errors import BadMagic

        raise BadMagic(f"{args.file}: unrecognized magic {magic!r}")
    return None, info


# -- entry point ---------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="hpbrdf", description="Hyperspectral polarimetric BRDF toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON (default: $HPBRDF_CONFIG or built-ins)")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--threads", type=int, default=None, help="worker threads for numeric libraries")
    common.add_argument("--report", help="JSON report path (default: next to the main output)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate a sphere capture")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("reconstruct", parents=[common], help="solve Mueller images from a capture")
    s.add_argument("capture")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("validate", parents=[common], help="physically valid percentage of Mueller images")
    s.add_argument("images", nargs="+")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("tabulate", parents=[common], help="splat Mueller images into a table")
    s.add_argument("images", nargs="*")
    s.add_argument("--bins", help="LxPxDxH, e.g. 68x361x91x91")
    s.add_argument("--analytic", action="store_true", help="sample the configured analytic material instead")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_tabulate)

    s = sub.add_parser("inpaint", parents=[common], help="fill empty table bins")
    s.add_argument("table")
    s.add_argument("--sigma", help="phi_d,theta_d,theta_h kernel widths in bins")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_inpaint)

    s = sub.add_parser("decompose", parents=[common], help="Lu-Chipman scalar maps of a Mueller image")
    s.add_argument("image")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_decompose)

    s = sub.add_parser("pca", parents=[common], help="PCA over two-axis table slices")
    s.add_argument("table")
    s.add_argument("--slice", default="theta_d,theta_h")
    s.add_argument("--components", type=int, default=8)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_pca)

    s = sub.add_parser("render", parents=[common], help="direct-lighting polarimetric render")
    s.add_argument("--scene", required=True, help="scene JSON")
    s.add_argument("--material", default="dielectric", help="preset name, material JSON or .hpbt table")
    s.add_argument("--exposure", type=float, default=1.0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("fit-mlp", parents=[common], help="fit the neural hpBRDF to a table")
    s.add_argument("table")
    s.add_argument("--layers", default="4x256", help="hidden layers x width")
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_mlp)

    s = sub.add_parser("info", parents=[common], help="describe a file by its header")
    s.add_argument("file")
    s.set_defaults(func=cmd_info)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    from threadpoolctl import threadpool_limits

    limit = args.threads if args.threads else None
    try:
        with threadpool_limits(limit):
            primary, report = args.func(args)
    except HpbrdfError as exc:
        print(f"error[{exc.category}] {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (OSError, ValueError) as exc:
        kind = "io" if isinstance(exc, OSError) else "invalid-value"
        print(f"error[{kind}] {exc}", file=sys.stderr)
        return EXIT_FAILURE
    report = dict(report, command=args.command, version=__version__)
    path = args.report or (primary + ".report.json" if primary else None)
    if path:
        _write_report(path, report)
    else:
        json.dump(report, sys.stdout, sort_keys=True, default=_json_default)
        sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
