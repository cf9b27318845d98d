"""Command line workflow: gen-data, train-uni, distill, eval, analyze, ablate,
export-features.

Exit codes: 0 success, 1 usage or configuration error, 2 data/parse error,
3 numeric failure. Every error prints a single machine-parsable line with the
prefix ``error:<category>:``. A plain ``key = value`` config file can preseed
any subcommand's flags; values given on the command line win.
"""

from __future__ import annotations

import json
from pathlib import Path

import click
import numpy as np

from . import analysis as analysis_mod
from . import data as data_mod
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DimensionError,
    FreqkdError,
    LabelError,
    NumericError,
    ParseError,
    SpectrumError,
)
from .frequency import BandSplit, decompose
from .losses import FeatureBatch
from .models import ModelBundle
from .train import ExperimentConfig, distill, evaluate, train_unimodal, write_json


def _parse_config_file(path):
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise click.UsageError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise click.UsageError(
                f"{path}:{lineno}: expected 'key = value', got '{raw.strip()}'"
            )
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value.strip("\"'")
    return values


_TRUTHY = ("1", "true", "yes", "on")


def _apply_config_file(ctx, values):
    """Fill in defaults from the config file; explicit flags keep priority.

    Keys mirror the long flag names, so ``batch = 32`` feeds ``--batch`` and
    ``no-scale = true`` acts like passing ``--no-scale``.
    """
    cfg_path = values.pop("config", None)
    if not cfg_path:
        return values
    lookup = {}
    for param in ctx.command.params:
        for opt in list(param.opts) + list(param.secondary_opts):
            if opt.startswith("--"):
                lookup[opt[2:].replace("-", "_")] = param
    for key, raw in _parse_config_file(cfg_path).items():
        name = key.replace("-", "_")
        param = lookup.get(name)
        if param is None or param.name == "config":
            raise click.UsageError(f"unknown config key '{key}' in {cfg_path}")
        if ctx.get_parameter_source(param.name) == \
                click.core.ParameterSource.COMMANDLINE:
            continue
        if getattr(param, "is_flag", False):
            if raw.lower() in _TRUTHY:
                values[param.name] = param.flag_value
        else:
            values[param.name] = param.type.convert(raw, param, ctx)
    return values


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def config_option(f):
    return click.option("--config", type=click.Path(), default=None,
                        help="key = value file preseeding these flags.")(f)


def common_train_options(f):
    for opt in reversed([
        click.option("--epochs", type=int, default=50, show_default=True,
                     help="Training epochs."),
        click.option("--batch", "batch_size", type=int, default=64,
                     show_default=True, help="Batch size."),
        click.option("--lr", type=float, default=1e-2, show_default=True,
                     help="Base learning rate (poly decay, power 0.9)."),
        click.option("--momentum", type=float, default=0.9, show_default=True,
                     help="SGD momentum coefficient."),
        click.option("--feature-dim", type=int, default=64, show_default=True,
                     help="Encoder output dimension."),
    ]):
        f = opt(f)
    return f


def distill_toggle_options(f):
    for opt in reversed([
        click.option("--lambda1", type=float, default=1.0, show_default=True,
                     help="Weight of the low-band distillation loss."),
        click.option("--lambda2", type=float, default=1.0, show_default=True,
                     help="Weight of the high-band distillation loss."),
        click.option("--threshold", type=float, default=0.5, show_default=True,
                     help="Band split threshold over the half spectrum."),
        click.option("--no-freq", "freq", flag_value=False, default=True,
                     help="Disable band decomposition (and band losses)."),
        click.option("--no-align", "align", flag_value=False, default=True,
                     help="Disable shared-classifier alignment."),
        click.option("--no-scale", "scale", flag_value=False, default=True,
                     help="Disable band standardization."),
        click.option("--no-log", "log", flag_value=False, default=True,
                     help="Use plain MSE instead of logMSE on the high band."),
        click.option("--low-loss", type=click.Choice(["mse", "logmse"]),
                     default=None, help="Override the low-band loss kind."),
        click.option("--high-loss", type=click.Choice(["mse", "logmse"]),
                     default=None, help="Override the high-band loss kind."),
        click.option("--align-standardized", is_flag=True, default=False,
                     help="Feed standardized bands to the shared classifiers."),
        click.option("--dedup-student-band-ce", is_flag=True, default=False,
                     help="Count the student band CE terms once when alignment "
                          "already includes them."),
    ]):
        f = opt(f)
    return f


@click.group()
def cli():
    """Frequency-decoupled cross-modal knowledge distillation workbench."""


@cli.command("gen-data")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True,
              help="Output directory for train.csv/test.csv.")
@click.option("--dim", type=int, default=64, show_default=True,
              help="Input feature dimension per modality.")
@click.option("--classes", type=int, default=6, show_default=True)
@click.option("--semantic-dim", type=int, default=16, show_default=True)
@click.option("--train-size", type=int, default=2000, show_default=True)
@click.option("--test-size", type=int, default=500, show_default=True)
@click.option("--semantic-noise", type=float, default=4.5, show_default=True)
@click.option("--high-signal", type=float, default=0.7, show_default=True,
              help="Strength of modality-specific class content in high bins.")
@click.option("--high-noise", type=float, default=0.9, show_default=True)
@click.option("--low-perturb", type=float, default=0.5, show_default=True,
              help="Per-modality perturbation of the shared low-bin content.")
@click.option("--scale-a", type=float, default=1.6, show_default=True)
@click.option("--offset-a", type=float, default=0.4, show_default=True)
@click.option("--scale-b", type=float, default=1.0, show_default=True)
@click.option("--offset-b", type=float, default=0.0, show_default=True)
@click.option("--threshold", type=float, default=0.5, show_default=True,
              help="Band threshold used to place semantic/specific content.")
@config_option
@click.pass_context
def gen_data(ctx, **kwargs):
    """Generate a synthetic paired-modality dataset."""
    v = _apply_config_file(ctx, kwargs)
    config = data_mod.SyntheticConfig(
        num_classes=v["classes"],
        input_dim=v["dim"],
        semantic_dim=v["semantic_dim"],
        train_size=v["train_size"],
        test_size=v["test_size"],
        semantic_noise=v["semantic_noise"],
        high_band_signal=v["high_signal"],
        high_band_noise=v["high_noise"],
        low_band_perturb=v["low_perturb"],
        scale_a=v["scale_a"],
        offset_a=v["offset_a"],
        scale_b=v["scale_b"],
        offset_b=v["offset_b"],
        band_threshold=v["threshold"],
        seed=v["seed"],
    ).validate()
    splits = data_mod.generate(config)
    out = _out_dir(v["out"])
    data_mod.save_dataset(splits, out)
    click.echo(f"wrote {out / 'train.csv'} ({splits.train.n} samples) and "
               f"{out / 'test.csv'} ({splits.test.n} samples)")


def _experiment_config(v, student_modality, teacher_checkpoint=None,
                       toggles=True) -> ExperimentConfig:
    kwargs = dict(
        student_modality=student_modality,
        teacher_checkpoint=teacher_checkpoint,
        epochs=v["epochs"],
        batch_size=v["batch_size"],
        lr=v["lr"],
        momentum=v["momentum"],
        feature_dim=v["feature_dim"],
        seed=v["seed"],
    )
    if toggles:
        kwargs.update(
            lambda1=v["lambda1"],
            lambda2=v["lambda2"],
            threshold=v["threshold"],
            freq=v["freq"],
            align=v["align"],
            scale=v["scale"],
            log=v["log"],
            low_loss=v["low_loss"],
            high_loss=v["high_loss"],
            align_standardized=v["align_standardized"],
            dedup_student_band_ce=v["dedup_student_band_ce"],
        )
    return ExperimentConfig(**kwargs).validate()


def _maybe_curves(report, out, prefix, render):
    if not render:
        return
    from . import figures

    figures.training_curves(report.to_dict(), out / f"{prefix}.curves.png")


@cli.command("train-uni")
@click.option("--data", type=click.Path(), required=True,
              help="Dataset directory from gen-data.")
@click.option("--student-modality", type=click.Choice(["a", "b"]), required=True,
              help="Modality to train.")
@common_train_options
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--no-figures", "render_figures", flag_value=False, default=True,
              help="Skip PNG rendering.")
@config_option
@click.pass_context
def train_uni(ctx, **kwargs):
    """Train one modality's encoder and head without distillation."""
    v = _apply_config_file(ctx, kwargs)
    splits = data_mod.load_dataset(v["data"])
    config = _experiment_config(v, v["student_modality"], toggles=False)
    bundle, report = train_unimodal(splits, v["student_modality"], config)
    out = _out_dir(v["out"])
    prefix = f"uni_{bundle.modality}"
    bundle.save(out / f"{prefix}.ckpt")
    write_json(report.to_dict(), out / f"{prefix}.report.json")
    _maybe_curves(report, out, prefix, v["render_figures"])
    click.echo(f"{prefix}: test accuracy {report.final_accuracy:.4f} "
               f"-> {out / (prefix + '.ckpt')}")


@cli.command("distill")
@click.option("--data", type=click.Path(), required=True)
@click.option("--teacher", type=click.Path(), required=True,
              help="Teacher checkpoint (from train-uni).")
@click.option("--student-modality", type=click.Choice(["a", "b"]), default=None,
              help="Defaults to the modality opposite the teacher's.")
@common_train_options
@distill_toggle_options
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--no-figures", "render_figures", flag_value=False, default=True)
@config_option
@click.pass_context
def distill_cmd(ctx, **kwargs):
    """Distill a frozen teacher into a fresh student of the other modality."""
    v = _apply_config_file(ctx, kwargs)
    splits = data_mod.load_dataset(v["data"])
    teacher = ModelBundle.load(v["teacher"])
    student = v["student_modality"] or ("b" if teacher.modality == "a" else "a")
    config = _experiment_config(v, student, teacher_checkpoint=str(v["teacher"]))
    bundle, report = distill(splits, config, teacher)
    out = _out_dir(v["out"])
    prefix = f"distill_{bundle.modality}"
    bundle.save(out / f"{prefix}.ckpt")
    write_json(report.to_dict(), out / f"{prefix}.report.json")
    _maybe_curves(report, out, prefix, v["render_figures"])
    click.echo(f"{prefix}: test accuracy {report.final_accuracy:.4f} "
               f"(teacher {teacher.modality}) -> {out / (prefix + '.ckpt')}")


@cli.command("eval")
@click.option("--data", type=click.Path(), required=True)
@click.option("--checkpoint", type=click.Path(), required=True)
@click.option("--split", type=click.Choice(["train", "test"]), default="test",
              show_default=True)
@click.option("--out", type=click.Path(), required=True)
@config_option
@click.pass_context
def eval_cmd(ctx, **kwargs):
    """Evaluate a checkpoint's private head on one split."""
    v = _apply_config_file(ctx, kwargs)
    splits = data_mod.load_dataset(v["data"])
    dataset = splits.train if v["split"] == "train" else splits.test
    bundle = ModelBundle.load(v["checkpoint"])
    result = evaluate(bundle, dataset)
    out = _out_dir(v["out"])
    prefix = f"eval_{bundle.modality}_{v['split']}"
    write_json(
        {
            "accuracy": result.accuracy,
            "per_class_accuracy": result.per_class,
            "config_echo": {
                "checkpoint": str(v["checkpoint"]),
                "data": str(v["data"]),
                "split": v["split"],
            },
        },
        out / f"{prefix}.json",
    )
    classes = result.logits.shape[1]
    header = "id,label,prediction," + ",".join(f"logit{c}" for c in range(classes))
    lines = [header]
    for i in range(dataset.n):
        logits = ",".join(f"{x:.17g}" for x in result.logits[i])
        lines.append(f"{dataset.ids[i]},{dataset.labels[i]},"
                     f"{result.predictions[i]},{logits}")
    (out / f"{prefix}_logits.csv").write_text("\n".join(lines) + "\n",
                                              encoding="utf-8", newline="\n")
    click.echo(f"{prefix}: accuracy {result.accuracy:.4f}")


def _feature_pair(v, dataset):
    """Raw generator inputs, or trained encoder features when both are given."""
    enc_a, enc_b = v.get("encoder_a"), v.get("encoder_b")
    if (enc_a is None) != (enc_b is None):
        raise click.UsageError("--encoder-a and --encoder-b must be given together")
    if enc_a is None:
        fa = FeatureBatch(rows=dataset.modality("a"), modality="a",
                          labels=dataset.labels)
        fb = FeatureBatch(rows=dataset.modality("b"), modality="b",
                          labels=dataset.labels)
        return fa, fb, "generator-inputs"
    bundles = {}
    for m, path in (("a", enc_a), ("b", enc_b)):
        bundle = ModelBundle.load(path)
        if bundle.modality != m:
            raise DataError(f"checkpoint {path} holds modality "
                            f"'{bundle.modality}', expected '{m}'")
        bundles[m] = bundle
    fa = analysis_mod.encoder_features(bundles["a"], dataset)
    fb = analysis_mod.encoder_features(bundles["b"], dataset)
    return fa, fb, "encoder-features"


@cli.command("analyze")
@click.option("--data", type=click.Path(), required=True)
@click.option("--split", type=click.Choice(["train", "test"]), default="train",
              show_default=True)
@click.option("--threshold", type=float, default=0.5, show_default=True)
@click.option("--encoder-a", type=click.Path(), default=None,
              help="Modality-a checkpoint; analyze trained features.")
@click.option("--encoder-b", type=click.Path(), default=None)
@click.option("--out", type=click.Path(), required=True)
@click.option("--no-figures", "render_figures", flag_value=False, default=True)
@config_option
@click.pass_context
def analyze_cmd(ctx, **kwargs):
    """Cross-modal similarity report and per-dimension mean profile."""
    v = _apply_config_file(ctx, kwargs)
    splits = data_mod.load_dataset(v["data"])
    dataset = splits.train if v["split"] == "train" else splits.test
    fa, fb, source = _feature_pair(v, dataset)
    band = BandSplit.for_dim(fa.rows.shape[1], v["threshold"])
    report = analysis_mod.similarity_report(fa, fb, band, source=source)
    out = _out_dir(v["out"])
    write_json(
        {
            "similarity": report.to_dict(),
            "config_echo": {
                "data": str(v["data"]),
                "split": v["split"],
                "threshold": v["threshold"],
                "encoder_a": v["encoder_a"] and str(v["encoder_a"]),
                "encoder_b": v["encoder_b"] and str(v["encoder_b"]),
            },
        },
        out / "similarity.json",
    )

    bands_a = decompose(fa.rows, band)
    bands_b = decompose(fb.rows, band)
    lines = ["id,label,cos_raw,cos_low,cos_high"]
    for i in range(dataset.n):
        cells = [str(dataset.ids[i]), str(dataset.labels[i])]
        for va, vb in ((fa.rows, fb.rows), (bands_a.low, bands_b.low),
                       (bands_a.high, bands_b.high)):
            values, bad = analysis_mod._paired_cosines(va[i : i + 1], vb[i : i + 1])
            cells.append("" if bad else f"{values[0]:.17g}")
        lines.append(",".join(cells))
    (out / "similarity.csv").write_text("\n".join(lines) + "\n",
                                        encoding="utf-8", newline="\n")

    means = {m: analysis_mod.mean_profile(f) for m, f in (("a", fa), ("b", fb))}
    profile_lines = ["dim,mean_a,mean_b"]
    for j in range(fa.rows.shape[1]):
        profile_lines.append(f"{j},{means['a'][j]:.17g},{means['b'][j]:.17g}")
    (out / "mean_profile.csv").write_text("\n".join(profile_lines) + "\n",
                                          encoding="utf-8", newline="\n")

    if v["render_figures"]:
        from . import figures

        figures.similarity_figure(report.to_dict(), out / "similarity.png")
        figures.mean_profile_figure(means, out / "mean_profile.png")
    click.echo(f"similarity ({source}): raw={report.mean_raw:.4f} "
               f"low={report.mean_low:.4f} high={report.mean_high:.4f}")


@cli.command("ablate")
@click.option("--data", type=click.Path(), required=True)
@click.option("--suite", type=click.Choice(list(analysis_mod.SUITES)),
              required=True)
@click.option("--seeds", type=int, default=1, show_default=True,
              help="Number of seeds per cell, starting at --seed.")
@click.option("--jobs", type=int, default=1, show_default=True,
              help="Worker processes for grid cells.")
@common_train_options
@distill_toggle_options
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--no-figures", "render_figures", flag_value=False, default=True)
@config_option
@click.pass_context
def ablate_cmd(ctx, **kwargs):
    """Run an ablation suite in both distillation directions."""
    v = _apply_config_file(ctx, kwargs)
    if v["seeds"] < 1 or v["jobs"] < 1:
        raise click.UsageError("--seeds and --jobs must be >= 1")
    base = _experiment_config(v, "b")
    out = _out_dir(v["out"])
    grid = analysis_mod.run_ablation(
        v["data"], base, v["suite"],
        seeds=[v["seed"] + i for i in range(v["seeds"])],
        out_dir=out, jobs=v["jobs"],
    )
    analysis_mod.validate_grid(grid)
    prefix = f"ablation_{v['suite']}"
    write_json(grid, out / f"{prefix}.json")
    analysis_mod.grid_to_csv(grid, out / f"{prefix}.csv")
    if v["render_figures"]:
        from . import figures

        figures.grid_figure(grid, out / f"{prefix}.png")
    for row in grid["rows"]:
        acc = row["mean_accuracy"]
        click.echo(f"{row['label']:<28} a={acc['a']:.4f} b={acc['b']:.4f}")


@cli.command("export-features")
@click.option("--data", type=click.Path(), required=True)
@click.option("--split", type=click.Choice(["train", "test"]), default="test",
              show_default=True)
@click.option("--threshold", type=float, default=0.5, show_default=True)
@click.option("--encoder-a", type=click.Path(), default=None)
@click.option("--encoder-b", type=click.Path(), default=None)
@click.option("--out", type=click.Path(), required=True)
@config_option
@click.pass_context
def export_features_cmd(ctx, **kwargs):
    """Export raw and band features to CSV for external embedding tools."""
    v = _apply_config_file(ctx, kwargs)
    splits = data_mod.load_dataset(v["data"])
    dataset = splits.train if v["split"] == "train" else splits.test
    fa, fb, source = _feature_pair(v, dataset)
    band = BandSplit.for_dim(fa.rows.shape[1], v["threshold"])
    out = _out_dir(v["out"])
    dim = fa.rows.shape[1]
    header = "id,label,m,band," + ",".join(f"f{j}" for j in range(dim))
    lines = [header]
    for m, batch in (("a", fa), ("b", fb)):
        bands = decompose(batch.rows, band)
        for name, rows in (("raw", batch.rows), ("low", bands.low),
                           ("high", bands.high)):
            for i in range(dataset.n):
                values = ",".join(f"{x:.17g}" for x in rows[i])
                lines.append(f"{dataset.ids[i]},{dataset.labels[i]},{m},"
                             f"{name},{values}")
    path = out / f"features_{v['split']}.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    write_json(
        {
            "data": str(v["data"]),
            "split": v["split"],
            "threshold": v["threshold"],
            "source": source,
            "encoder_a": v["encoder_a"] and str(v["encoder_a"]),
            "encoder_b": v["encoder_b"] and str(v["encoder_b"]),
        },
        out / "export_features.config.json",
    )
    click.echo(f"wrote {path} ({source}, {dataset.n} samples x 3 bands x 2 "
               f"modalities)")


def main(argv=None) -> int:
    """Entry point with the documented exit-code mapping."""
    try:
        rv = cli.main(args=argv, prog_name="freqkd", standalone_mode=False)
        return int(rv) if isinstance(rv, int) else 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        click.echo(f"error:usage:{exc.format_message()}", err=True)
        if exc.ctx is not None:
            click.echo(exc.ctx.get_usage(), err=True)
        return 1
    except ConfigError as exc:
        click.echo(f"error:config:{exc}", err=True)
        return 1
    except NumericError as exc:
        click.echo(f"error:numeric:{exc}", err=True)
        return 3
    except (ParseError, DataError, CheckpointError, LabelError,
            DimensionError, SpectrumError) as exc:
        click.echo(f"error:data:{exc}", err=True)
        return 2
    except FreqkdError as exc:
        click.echo(f"error:data:{exc}", err=True)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
