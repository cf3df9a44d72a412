"""Command-line interface: ``freqtune <subcommand> [options]``.

Every subcommand accepts ``--config FILE`` with flat ``key = value`` lines whose
keys are the long option names (dashes or underscores). Flags given on the
command line override the file. Each subcommand that writes files also writes
``<output>.resolved.cfg`` holding every effective option, so a run can be
reproduced with ``--config <output>.resolved.cfg``.

Exit codes: 0 success, 1 domain error (bad file, shape mismatch, ...), 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import io, plotting
from .attack import AttackConfig, Variant, apply_perturbation, run_attack
from .evaluate import (
    AttackReport,
    Rate,
    ablation_grid,
    constraint_for,
    cross_model_matrix,
    data_size_sweep,
    evaluate,
    fooling_rate_images,
    psnr,
    write_ablation_csv,
    write_cross_csv,
    write_csv,
    write_curve_csv,
    write_report_csv,
    write_sweep_csv,
)
from .perception import PRESETS, DisplayModel, GainSchedule, effective_thresholds, format_table, jnd_matrix, to_csv
from .texclass import LabeledSet, SynthSpec, TexModel, split_dataset, synth_dataset, train_classifier

log = logging.getLogger("freqtune")

REFERENCE_GAIN = GainSchedule(0.0, 3.0, 4.0)


class UsageError(Exception):
    pass


# -- argument groups ----------------------------------------------------------


def _add_display(p):
    g = p.add_argument_group("display model")
    g.add_argument("--l-min", type=float, default=0.0, help="minimum display luminance (cd/m^2)")
    g.add_argument("--l-max", type=float, default=175.0, help="maximum display luminance (cd/m^2)")
    g.add_argument("--levels", type=float, default=255.0, help="number of grey levels minus one")
    g.add_argument("--wx", type=float, default=0.0303, help="horizontal pixel size (degrees)")
    g.add_argument("--wy", type=float, default=0.0303, help="vertical pixel size (degrees)")


def _add_gain(p):
    g = p.add_argument_group("gain schedule")
    g.add_argument("--preset", choices=sorted(PRESETS), help="named (lambda_l, lambda_h, f_c) triple")
    g.add_argument("--lambda-l", type=float, help="low-frequency gain (default 0, or from --preset)")
    g.add_argument("--lambda-h", type=float, help="high-frequency gain (default 3, or from --preset)")
    g.add_argument("--fc", type=float, help="sigmoid centre frequency in cycles/degree (default 4)")


def _add_attack(p, variant=True):
    g = p.add_argument_group("attack")
    if variant:
        g.add_argument("--variant", choices=[v.value for v in Variant], default=Variant.FT_SPGD.value)
    d = AttackConfig()
    g.add_argument("--eps", type=float, default=d.eps, help="l-infinity radius of spatial variants")
    g.add_argument("--step", type=float, default=d.step, help="sign step of spatial variants (code values)")
    g.add_argument("--momentum", type=float, default=d.momentum)
    g.add_argument("--decay-every", type=int, default=d.decay_every, help="halve the momentum-variant step every N epochs")
    g.add_argument("--batch-size", type=int, default=d.batch_size)
    g.add_argument("--max-epochs", type=int, default=d.max_epochs)
    g.add_argument("--patience", type=int, default=d.patience)
    g.add_argument("--min-gain", type=float, default=d.min_gain)
    g.add_argument("--ft-optimizer", choices=["adam", "sign"], default=d.ft_optimizer)
    g.add_argument("--ft-lr", type=float, default=d.ft_lr, help="Adam step on normalised band coefficients")
    g.add_argument("--ft-step", type=float, default=d.ft_step, help="sign step when --ft-optimizer sign")
    g.add_argument("--reparam", choices=["clamp", "tanh"], default=d.reparam)
    g.add_argument("--loss", choices=["tar", "llc"], default=d.loss)


def _add_seed(p):
    p.add_argument("--seed", type=int, required=True, help="seed for every random choice of this run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="freqtune", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", help="flat key = value file; command-line flags take precedence")
        return p

    p = cmd("jnd-table", "print the 8x8 JND threshold table (or the gain-scaled table with --effective)")
    _add_display(p)
    _add_gain(p)
    p.add_argument("--effective", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--digits", type=int, default=2)
    p.add_argument("--csv", help="also write the table as CSV (and a heatmap PNG next to it)")

    p = cmd("synth", "write a procedural texture dataset split into train/attack/test")
    d = SynthSpec()
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--num-classes", type=int, default=d.num_classes)
    p.add_argument("--images-per-class", type=int, default=d.images_per_class)
    p.add_argument("--image-size", type=int, default=d.image_size)
    p.add_argument("--noise-level", type=float, default=d.noise_level)
    p.add_argument("--channels", type=int, default=d.channels, choices=[1, 3])
    p.add_argument("--contrast", type=float, default=d.contrast)
    p.add_argument("--background", type=float, default=d.background)
    _add_seed(p)

    p = cmd("train", "train the texture classifier on <data>/train")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="model checkpoint (.fttx)")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=0.2)
    p.add_argument("--schedule", choices=["cosine", "constant"], default="cosine")
    _add_seed(p)

    p = cmd("attack", "compute a universal perturbation on <data>/attack")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="perturbation file (.ftup)")
    p.add_argument("--augment", action=argparse.BooleanOptionalAction, default=False)
    _add_attack(p)
    _add_gain(p)
    _add_display(p)
    _add_seed(p)

    p = cmd("apply", "add a perturbation to an image or a directory of images")
    p.add_argument("--pert", required=True)
    p.add_argument("--in", dest="input", required=True, help="image file or directory")
    p.add_argument("--out", required=True, help="output image file or directory")

    p = cmd("eval", "score perturbations on <data>/test, or compare clean and perturbed images")
    p.add_argument("--model", nargs="+", required=True, help="one or more checkpoints (several give a cross-model table)")
    p.add_argument("--data", help="dataset root (its test split is used)")
    p.add_argument("--pert", nargs="+", default=[], help="perturbation files")
    p.add_argument("--clean", help="clean image file or directory (with --adv)")
    p.add_argument("--adv", help="perturbed image file or directory (with --clean)")
    p.add_argument("--out", required=True, help="report CSV")

    p = cmd("sweep", "fooling rate against attack-set fraction")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="sweep CSV")
    p.add_argument("--fractions", type=float, nargs="+", default=[1.0, 0.5, 0.2, 0.1, 0.05])
    p.add_argument("--augment", choices=["on", "off", "both"], default="both")
    _add_attack(p)
    _add_gain(p)
    _add_display(p)
    _add_seed(p)

    p = cmd("ablate", "fooling rate and PSNR over a (lambda_l, lambda_h, f_c) grid")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="ablation CSV")
    p.add_argument("--lambda-l-list", type=float, nargs="+", default=[0.0])
    p.add_argument("--lambda-h-list", type=float, nargs="+", default=[1.0, 2.0, 3.0])
    p.add_argument("--fc-list", type=float, nargs="+", default=[4.0])
    _add_attack(p, variant=False)
    p.add_argument("--variant", choices=[Variant.FT_SPGD.value, Variant.FT_UPGD.value], default=Variant.FT_SPGD.value)
    _add_display(p)
    _add_seed(p)
    return parser


# -- config files --------------------------------------------------------------------


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _option_table(sub) -> dict:
    """Map config keys (underscored long option names) to argparse actions."""
    table = {}
    for a in sub._actions:
        longs = [s for s in a.option_strings if s.startswith("--")]
        if longs and a.dest not in ("help", "config"):
            table[longs[0][2:].replace("-", "_")] = a
    return table


def read_config(path) -> list[tuple[str, str]]:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise UsageError(f"{path}: cannot read config ({e.strerror})") from None
    pairs = []
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value', got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        pairs.append((k.replace("-", "_"), v))
    return pairs


def _config_argv(sub, pairs, path) -> list[str]:
    table = _option_table(sub)
    argv = []
    for key, value in pairs:
        if key not in table:
            raise UsageError(f"{path}: unknown key {key!r} for this subcommand")
        a = table[key]
        flag = a.option_strings[0] if a.option_strings[0].startswith("--") else a.option_strings[-1]
        if isinstance(a, argparse.BooleanOptionalAction):
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise UsageError(f"{path}: {key} must be true or false, got {value!r}")
            argv.append(flag if low in ("true", "1", "yes") else "--no-" + flag[2:])
        elif value.lower() == "none":
            continue
        elif a.nargs in ("+", "*"):
            argv += [flag, *value.replace(",", " ").split()]
        else:
            argv += [flag, value]
    return argv


def _find_config(argv: list[str]) -> tuple[int, str | None]:
    """Index of the subcommand token and the --config value, without full parsing."""
    idx = next((i for i, a in enumerate(argv) if a in COMMANDS), -1)
    cfg = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            cfg = argv[i + 1]
        elif a.startswith("--config="):
            cfg = a.split("=", 1)[1]
    return idx, cfg


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    idx, cfg = _find_config(argv)
    if idx >= 0 and cfg:
        sub = _subparser(parser, argv[idx])
        # file values go first so command-line flags override them
        argv = argv[: idx + 1] + _config_argv(sub, read_config(cfg), cfg) + argv[idx + 1 :]
    return parser.parse_args(argv)


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return " ".join(_fmt_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return "none" if v is None else str(v)


def resolved_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.name.rstrip("/") + ".resolved.cfg") if out.suffix == "" else out.with_suffix(".resolved.cfg")


def write_resolved(ns: argparse.Namespace, out, extra: dict | None = None) -> Path:
    """Write every effective option (after preset resolution) next to ``out``."""
    sub = _subparser(build_parser(), ns.command)
    values = {k: getattr(ns, a.dest) for k, a in _option_table(sub).items()}
    values.update(extra or {})
    path = resolved_path(out)
    lines = [f"# freqtune {ns.command}"] + [f"{k} = {_fmt_value(values[k])}" for k in sorted(values)]
    path.write_text("\n".join(lines) + "\n")
    return path


# -- helpers -----------------------------------------------------------------------------


def _display(ns) -> DisplayModel:
    try:
        return DisplayModel(l_min=ns.l_min, l_max=ns.l_max, m=ns.levels, w_x=ns.wx, w_y=ns.wy)
    except ValueError as e:
        raise UsageError(f"invalid display flags: {e}") from None


def _gain(ns) -> GainSchedule:
    base = PRESETS[ns.preset] if ns.preset else REFERENCE_GAIN
    try:
        g = GainSchedule(
            base.lambda_l if ns.lambda_l is None else ns.lambda_l,
            base.lambda_h if ns.lambda_h is None else ns.lambda_h,
            base.f_c if ns.fc is None else ns.fc,
        )
    except ValueError as e:
        raise UsageError(f"invalid gain flags: {e}") from None
    # record the resolved triple so the .resolved.cfg is self-contained
    ns.lambda_l, ns.lambda_h, ns.fc, ns.preset = g.lambda_l, g.lambda_h, g.f_c, None
    return g


def _attack_config(ns, gain: GainSchedule | None, augment: bool = False) -> AttackConfig:
    try:
        return _make_attack_config(ns, gain, augment)
    except ValueError as e:
        raise UsageError(f"invalid attack flags: {e}") from None


def _make_attack_config(ns, gain, augment) -> AttackConfig:
    return AttackConfig(
        variant=ns.variant,
        batch_size=ns.batch_size,
        max_epochs=ns.max_epochs,
        patience=ns.patience,
        min_gain=ns.min_gain,
        eps=ns.eps,
        step=ns.step,
        momentum=ns.momentum,
        decay_every=ns.decay_every,
        gain=gain or REFERENCE_GAIN,
        ft_optimizer=ns.ft_optimizer,
        ft_lr=ns.ft_lr,
        ft_step=ns.ft_step,
        reparam=ns.reparam,
        loss=ns.loss,
        augment=augment,
        seed=ns.seed,
    )


def _ensure_parent(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _image_files(path: Path) -> list[Path]:
    if path.is_dir():
        return sorted(p for p in path.rglob("*") if p.suffix.lower() in io.IMAGE_SUFFIXES)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file or directory")
    return [path]


def _check_model_data(model: TexModel, data, path) -> None:
    if data.images.shape[1] != model.channels:
        raise ValueError(f"{path}: images have {data.images.shape[1]} channels but the model expects {model.channels}")
    if data.labels.max() >= model.num_classes:
        raise ValueError(f"{path}: {data.num_classes} classes but the model has {model.num_classes} outputs")


# -- subcommands --------------------------------------------------------------------------


def cmd_jnd_table(ns) -> int:
    disp = _display(ns)
    if ns.effective:
        t = np.array(effective_thresholds(_gain(ns), disp))
    else:
        t = np.array(jnd_matrix(disp))
    print(format_table(t, ns.digits))
    if ns.csv:
        out = _ensure_parent(ns.csv)
        out.write_text(to_csv(t))
        plotting.plot_thresholds(t, out.with_suffix(".png"), "effective threshold" if ns.effective else "JND threshold")
        write_resolved(ns, out)
    return 0


def cmd_synth(ns) -> int:
    spec = SynthSpec(
        num_classes=ns.num_classes,
        images_per_class=ns.images_per_class,
        image_size=ns.image_size,
        noise_level=ns.noise_level,
        seed=ns.seed,
        channels=ns.channels,
        contrast=ns.contrast,
        background=ns.background,
    )
    data = synth_dataset(spec)
    out = Path(ns.out)
    for name, part in zip(io.SPLITS, split_dataset(data, seed=ns.seed)):
        io.write_dataset(part, out / name)
    write_resolved(ns, out)
    print(f"wrote {len(data)} images in {spec.num_classes} classes to {out}")
    return 0


def cmd_train(ns) -> int:
    train = io.dataset_split(ns.data, "train")
    try:
        heldout = io.dataset_split(ns.data, "test", channels=train.images.shape[1])
    except FileNotFoundError:
        heldout = train
    m = TexModel(train.images.shape[1], max(train.num_classes, 2), seed=ns.seed)
    history = train_classifier(
        m, train, epochs=ns.epochs, batch_size=ns.batch_size, lr=ns.lr, seed=ns.seed, heldout=heldout, schedule=ns.schedule
    )
    out = _ensure_parent(ns.out)
    io.save_model(m, out)
    hist = out.with_suffix(".history.csv")
    write_csv(hist, ["epoch", "heldout_top1"], ([i + 1, a] for i, a in enumerate(history)))
    write_resolved(ns, out)
    if history:
        print(f"held-out top-1 after {len(history)} epochs: {history[-1]:.4f}")
    return 0


def cmd_attack(ns) -> int:
    variant = Variant(ns.variant)
    gain = _gain(ns) if variant.frequency_tuned else None
    cfg = _attack_config(ns, gain, augment=ns.augment)
    thresholds, eps = constraint_for(cfg, _display(ns), gain)
    model = io.load_model(ns.model)
    data = io.dataset_split(ns.data, "attack", channels=model.channels)
    _check_model_data(model, data, ns.data)
    res = run_attack(model, data, cfg, thresholds=thresholds, eps=eps)
    out = _ensure_parent(ns.out)
    io.save_perturbation(res.perturbation, out)
    curve = out.with_suffix(".curve.csv")
    write_curve_csv(curve, res.curve)
    plotting.plot_curve(res.curve, curve.with_suffix(".png"), variant.value)
    plotting.plot_perturbation(res.perturbation.spatial, out.with_suffix(".png"), data.images[:2])
    write_resolved(ns, out)
    print(f"{variant.value}: attack-set fooling rate {res.best_fooling_rate:.4f} (epoch {res.best_epoch} of {res.epochs_run})")
    return 0


def cmd_apply(ns) -> int:
    p = io.load_perturbation(ns.pert)
    src, dst = Path(ns.input), Path(ns.out)
    files = _image_files(src)
    if not files:
        raise FileNotFoundError(f"{src}: no images found")
    for f in files:
        img = io.read_image(f, channels=p.shape[0])
        if img.shape != p.shape:
            raise ValueError(f"{f}: image shape {img.shape} does not match perturbation {p.shape}")
        target = dst / f.relative_to(src) if src.is_dir() else dst
        _ensure_parent(target)
        io.write_image(apply_perturbation(img, p), target)
    write_resolved(ns, dst)
    return 0


def _read_images(path: Path, channels: int) -> np.ndarray:
    files = _image_files(path)
    if not files:
        raise FileNotFoundError(f"{path}: no images found")
    return np.stack([io.read_image(f, channels) for f in files])


def _pert_meta(path: Path) -> tuple[str, int]:
    """Variant and seed recorded in a perturbation's resolved config, if present."""
    cfg = resolved_path(path)
    meta = dict(read_config(cfg)) if cfg.exists() else {}
    try:
        seed = int(meta.get("seed", -1))
    except ValueError:
        seed = -1
    return meta.get("variant", path.stem), seed


def cmd_eval(ns) -> int:
    models = [io.load_model(p) for p in ns.model]
    out = _ensure_parent(ns.out)
    if ns.clean or ns.adv:
        if not (ns.clean and ns.adv):
            raise UsageError("--clean and --adv must be given together")
        clean = _read_images(Path(ns.clean), models[0].channels)
        adv = _read_images(Path(ns.adv), models[0].channels)
        fr = fooling_rate_images(models[0], clean, adv)
        ps = float(np.mean([psnr(c, a) for c, a in zip(clean, adv)]))
        diff = float(np.max(np.abs(adv - clean)))
        unknown = Rate(0, len(clean))
        rep = AttackReport("images", -1, fr, unknown, unknown, diff, ps)
        write_report_csv(out, [rep])
        print(f"fooling rate {fr.value:.4f} ({fr.k}/{fr.n}), mean PSNR {ps:.2f} dB")
        write_resolved(ns, out)
        return 0
    if not ns.data or not ns.pert:
        raise UsageError("eval needs --data and --pert (or --clean and --adv)")
    data = io.dataset_split(ns.data, "test", channels=models[0].channels)
    for m in models:
        _check_model_data(m, data, ns.data)
    perts = [io.load_perturbation(p) for p in ns.pert]
    reports = []
    for path, p in zip(ns.pert, perts):
        variant, seed = _pert_meta(Path(path))
        reports.append(evaluate(models[0], data, p, variant=variant, seed=seed))
    write_report_csv(out, reports)
    plotting.plot_report(reports, out.with_suffix(".png"))
    for r in reports:
        ps = "inf" if math.isinf(r.psnr_db) else f"{r.psnr_db:.2f}"
        print(f"{r.variant}: fooling rate {r.fr:.4f} ({r.fooling_rate.k}/{r.fooling_rate.n}), PSNR {ps} dB")
    if len(models) > 1:
        mat, _, _ = cross_model_matrix(models, data, perts)
        cross = out.with_name(out.stem + ".cross.csv")
        write_cross_csv(cross, [Path(p).stem for p in ns.pert], [Path(p).stem for p in ns.model], mat)
        plotting.plot_cross(mat, [Path(p).stem for p in ns.pert], [Path(p).stem for p in ns.model], cross.with_suffix(".png"))
    write_resolved(ns, out)
    return 0


def _load_attack_and_test(ns) -> tuple[TexModel, LabeledSet, LabeledSet]:
    model = io.load_model(ns.model)
    attack_set = io.dataset_split(ns.data, "attack", channels=model.channels)
    test_set = io.dataset_split(ns.data, "test", channels=model.channels)
    _check_model_data(model, attack_set, ns.data)
    return model, attack_set, test_set


def cmd_sweep(ns) -> int:
    variant = Variant(ns.variant)
    gain = _gain(ns) if variant.frequency_tuned else None
    cfg = _attack_config(ns, gain)
    display = _display(ns)
    if any(not 0 < f <= 1 for f in ns.fractions):
        raise UsageError("--fractions must lie in (0, 1]")
    model, attack_set, test_set = _load_attack_and_test(ns)
    modes = {"on": [True], "off": [False], "both": [True, False]}[ns.augment]
    rows = []
    for aug in modes:
        rows += data_size_sweep(model, attack_set, test_set, ns.fractions, aug, cfg, display)
    out = _ensure_parent(ns.out)
    write_sweep_csv(out, rows)
    plotting.plot_sweep(rows, out.with_suffix(".png"))
    write_resolved(ns, out)
    return 0


def cmd_ablate(ns) -> int:
    cfg = _attack_config(ns, None)
    display = _display(ns)
    for ll in ns.lambda_l_list:
        for lh in ns.lambda_h_list:
            for fc in ns.fc_list:
                try:
                    GainSchedule(ll, lh, fc)
                except ValueError as e:
                    raise UsageError(f"invalid grid value: {e}") from None
    model, attack_set, test_set = _load_attack_and_test(ns)
    rows = ablation_grid(model, attack_set, test_set, ns.lambda_l_list, ns.lambda_h_list, ns.fc_list, cfg, display)
    out = _ensure_parent(ns.out)
    write_ablation_csv(out, rows)
    plotting.plot_ablation(rows, out.with_suffix(".png"))
    write_resolved(ns, out)
    return 0


COMMANDS = {
    "jnd-table": cmd_jnd_table,
    "synth": cmd_synth,
    "train": cmd_train,
    "attack": cmd_attack,
    "apply": cmd_apply,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    try:
        ns = parse_args(argv)
    except UsageError as e:
        print(f"freqtune: error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(ns.verbose, 2), format="freqtune: %(levelname)s: %(message)s", force=True
    )
    try:
        return COMMANDS[ns.command](ns)
    except UsageError as e:
        print(f"freqtune: error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        msg = f"{e.filename}: {e.strerror}" if e.filename and e.strerror else str(e)
        print(f"freqtune: error: {msg}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"freqtune: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
