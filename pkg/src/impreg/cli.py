"""Command-line pipeline: generate data, train, evaluate, estimate, inspect.

Exit codes: 0 success, 1 internal/numerical error, 2 usage or input error.
A config file given with --config holds ``key=value`` lines (keys are flag
names with dashes replaced by underscores); explicit flags override it.
"""

import functools
import json
import os
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from . import dataset as ds_mod
from . import gpreg, metrics, neural, regls, sysgen
from .errors import (ChecksumMismatch, DegenerateSequence, EmptyDataset,
                     FormatVersionMismatch, ImpregError, SequenceTooShort)

_INPUT_ERRORS = (DegenerateSequence, SequenceTooShort, EmptyDataset,
                 FormatVersionMismatch, ChecksumMismatch)


class _InputError(click.ClickException):
    exit_code = 2


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _INPUT_ERRORS as err:
            raise _InputError(str(err))
        except ImpregError as err:
            raise click.ClickException(str(err))
    return wrapper


def _parse_config_file(path):
    overrides = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise _InputError("%s:%d: expected key=value, got %r" % (path, lineno, raw))
        key, value = line.split("=", 1)
        overrides[key.strip().replace("-", "_")] = value.strip()
    return overrides


@click.group()
@click.option("--seed", type=int, default=0, show_default=True,
              help="Base seed for every random draw in the subcommand.")
@click.option("--threads", type=int, default=None,
              help="Worker process cap (default: IMPREG_THREADS or 1).")
@click.option("--deterministic/--no-deterministic", default=True,
              show_default=True, help="Require bit-reproducible execution.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="key=value defaults file; flags override it.")
@click.pass_context
def main(ctx, seed, threads, deterministic, config_path):
    """FIR impulse-response estimation with learned regularization."""
    if threads is None:
        env = os.environ.get("IMPREG_THREADS", "")
        threads = int(env) if env.isdigit() and int(env) > 0 else 1
    ctx.obj = {"seed": seed, "threads": threads, "deterministic": deterministic}
    if config_path is not None:
        overrides = _parse_config_file(config_path)
        ctx.default_map = {name: dict(overrides) for name in
                           ("gen-data", "train", "evaluate", "estimate", "inspect")}


def _derived_seed(seed, stream):
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
                                spawn_key=(stream,))
    return int(ss.generate_state(1, np.uint64)[0])


@main.command("gen-data")
@click.option("--train-m", type=int, default=0, show_default=True,
              help="Training examples to generate.")
@click.option("--val-m", type=int, default=0, show_default=True,
              help="Validation examples to generate.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="data",
              show_default=True)
@click.option("--order", type=int, default=30, show_default=True)
@click.option("--n-samples", type=int, default=125, show_default=True,
              help="Record length N.")
@click.option("--n-taps", type=int, default=50, show_default=True,
              help="FIR length n.")
@click.option("--snr-min", type=float, default=1.0, show_default=True)
@click.option("--snr-max", type=float, default=10.0, show_default=True)
@click.pass_obj
@_guarded
def gen_data(obj, train_m, val_m, out_dir, order, n_samples, n_taps, snr_min, snr_max):
    """Generate training/validation dataset files with disjoint derived seeds."""
    if train_m <= 0 and val_m <= 0:
        raise click.UsageError("nothing to generate: pass --train-m and/or --val-m")
    if not n_samples > n_taps:
        raise click.UsageError("--n-samples must exceed --n-taps")
    config = ds_mod.DatasetConfig(order=order, n_samples=n_samples, n_taps=n_taps,
                                  snr_lo=snr_min, snr_hi=snr_max)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for stream, (name, count) in enumerate((("train", train_m), ("val", val_m))):
        if count <= 0:
            continue
        ds = ds_mod.generate_dataset(count, config, seed=_derived_seed(obj["seed"], stream),
                                     workers=obj["threads"])
        path = out / ("%s.irds" % name)
        ds_mod.save_dataset(ds, path)
        snrs = np.array([ex.snr for ex in ds.examples])
        low = int((snrs < metrics.SNR_SPLIT).sum())
        click.echo("%s: %d examples -> %s" % (name, count, path))
        click.echo("  SNR split at %.1f: %d below, %d above"
                   % (metrics.SNR_SPLIT, low, count - low))
        deciles = np.percentile(snrs, np.arange(10, 100, 10))
        click.echo("  SNR deciles: " + " ".join("%.2f" % d for d in deciles))


def _parse_hidden(text):
    try:
        dims = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise click.UsageError("--hidden expects comma-separated integers")
    if not dims or any(d <= 0 for d in dims):
        raise click.UsageError("--hidden expects positive layer sizes")
    return dims


@main.command("train")
@click.option("--train", "train_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Training dataset file.")
@click.option("--val", "val_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Validation dataset file (early stopping).")
@click.option("--model-out", type=click.Path(dir_okay=False), default="model.irnn",
              show_default=True)
@click.option("--log-out", type=click.Path(dir_okay=False), default=None,
              help="JSON training log path.")
@click.option("--stats-out", type=click.Path(dir_okay=False), default=None,
              help="Optional standalone response-statistics file.")
@click.option("--epochs", type=int, default=50, show_default=True)
@click.option("--batch-size", type=int, default=64, show_default=True)
@click.option("--learning-rate", type=float, default=1e-4, show_default=True)
@click.option("--dropout", type=float, default=0.3, show_default=True)
@click.option("--patience", type=int, default=5, show_default=True)
@click.option("--hidden", default="600,300,200", show_default=True,
              help="Comma-separated hidden layer sizes.")
@click.option("--n-matrices", type=int, default=500, show_default=True,
              help="Size of the candidate-direction bank.")
@click.option("--resume", "resume_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Continue training from an existing model "
              "(weights only; the optimizer state restarts).")
@click.option("--quiet", is_flag=True, help="Suppress per-epoch progress lines.")
@click.pass_obj
@_guarded
def train_cmd(obj, train_path, val_path, model_out, log_out, stats_out, epochs,
              batch_size, learning_rate, dropout, patience, hidden, n_matrices,
              resume_path, quiet):
    """Train the regularization network and write a model file."""
    train_raw = ds_mod.load_dataset(train_path)
    val_raw = ds_mod.load_dataset(val_path)
    if train_raw.count == 0 or val_raw.count == 0:
        raise EmptyDataset("training and validation sets must be non-empty")
    train_norm, _ = ds_mod.normalize_dataset(train_raw)
    val_norm, _ = ds_mod.normalize_dataset(val_raw)

    warm = neural.load_model(resume_path) if resume_path else None
    cfg = neural.TrainConfig(
        learning_rate=learning_rate, batch_size=batch_size, max_epochs=epochs,
        dropout=dropout, patience=patience, seed=obj["seed"],
        hidden=_parse_hidden(hidden), n_matrices=n_matrices,
        deterministic=obj["deterministic"])

    def progress(rec):
        if not quiet:
            click.echo("epoch %3d  train %.6f  val %.6f"
                       % (rec.epoch, rec.train_loss, rec.val_loss))

    params, stats, log = neural.train(train_norm, val_norm, cfg,
                                      warm_start=warm, progress=progress)
    neural.save_model(params, stats, model_out)
    click.echo("model -> %s (best epoch %d, val loss %.6f)"
               % (model_out, log.best_epoch, log.best_val_loss))
    if stats_out:
        ds_mod.save_theta_stats(stats, stats_out)
    if log_out:
        _write_train_log(log_out, cfg, log, resume_path)


def _write_train_log(path, cfg, log, resume_path):
    epochs = [asdict(rec) for rec in log.epochs]
    offset = 0
    if resume_path and Path(path).exists():
        # Log continuity across --resume: keep earlier epochs, renumber new ones.
        previous = json.loads(Path(path).read_text())
        offset = max((rec["epoch"] for rec in previous.get("epochs", [])), default=0)
        for rec in epochs:
            rec["epoch"] += offset
        epochs = previous.get("epochs", []) + epochs
    payload = {
        "epochs": epochs,
        "best_epoch": log.best_epoch + offset if log.best_epoch > 0 else log.best_epoch,
        "best_val_loss": log.best_val_loss if np.isfinite(log.best_val_loss) else None,
        "stopped_early": log.stopped_early,
        "wall_time_s": log.wall_time_s,
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in asdict(cfg).items()},
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


_METHOD_LABELS = {
    "ls": "least squares",
    "or": "oracle (lower bound)",
    "gp": "empirical Bayes",
    "dl": "learned",
}


@main.command("evaluate")
@click.option("--dataset", "dataset_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Model file (required for the dl method).")
@click.option("--methods", default="ls,or,gp,dl", show_default=True,
              help="Comma-separated subset of ls,or,gp,dl.")
@click.option("--report-dir", type=click.Path(file_okay=False), default="reports",
              show_default=True)
@click.option("--csv", "write_csv", is_flag=True,
              help="Also write per-example CSV records.")
@click.pass_obj
@_guarded
def evaluate_cmd(obj, dataset_path, model_path, methods, report_dir, write_csv):
    """Score estimation methods on a validation dataset (split at SNR 5.5)."""
    wanted = [m.strip().lower() for m in methods.split(",") if m.strip()]
    unknown = sorted(set(wanted) - set(_METHOD_LABELS))
    if unknown:
        raise click.UsageError("unknown methods: %s" % ",".join(unknown))
    if not wanted:
        raise click.UsageError("--methods selected nothing")
    if "dl" in wanted and not model_path:
        raise click.UsageError("method dl requires --model")

    raw = ds_mod.load_dataset(dataset_path)
    if raw.count == 0:
        raise EmptyDataset("dataset %s holds no examples" % dataset_path)
    norm, _ = ds_mod.normalize_dataset(raw)
    n = norm.n_taps

    model = neural.load_model(model_path) if model_path else None
    if model is not None and model[0].input_dim != 2 * norm.n_samples + n:
        raise _InputError(
            "model expects records of length %d, dataset has %d"
            % ((model[0].input_dim - model[0].n_taps) // 2, norm.n_samples))

    def run_ls(ex, rd, theta_ls):
        return theta_ls

    def run_or(ex, rd, theta_ls):
        return regls.estimate(regls.optimal_regularizer(ex.theta0, ex.sigma2), rd)

    def run_gp(ex, rd, theta_ls):
        phi = regls.regressor_matrix(ex.u, n)
        P, _ = gpreg.fit_empirical_bayes(phi, ex.y[n:])
        return regls.estimate(P, rd)

    def run_dl(ex, rd, theta_ls):
        params, stats = model
        P = neural.regularizer_for_example(params, stats, ex, rd=rd)
        return regls.estimate(P, rd)

    runners = {"ls": run_ls, "or": run_or, "gp": run_gp, "dl": run_dl}
    out = Path(report_dir)
    out.mkdir(parents=True, exist_ok=True)

    header = "%-22s %12s %12s %12s" % ("method", "ratio(low)", "ratio(high)", "ratio(all)")
    click.echo(header)
    click.echo("-" * len(header))
    for name in wanted:
        report = metrics.evaluate_method(runners[name], norm, name)
        json_path = out / ("eval_%s.json" % name)
        json_path.write_text(report.to_json() + "\n")
        if write_csv:
            report.write_csv(out / ("eval_%s.csv" % name))
        click.echo("%-22s %12.6f %12.6f %12.6f"
                   % (_METHOD_LABELS[name], report.s_low, report.s_high, report.s_all))
    click.echo("reports -> %s" % out)


def _read_two_column_file(path):
    u_vals, y_vals = [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p for p in line.replace(",", " ").split() if p]
        if len(parts) != 2:
            raise _InputError("%s:%d: expected two columns, got %d"
                              % (path, lineno, len(parts)))
        try:
            u_vals.append(float(parts[0]))
            y_vals.append(float(parts[1]))
        except ValueError:
            raise _InputError("%s:%d: non-numeric value in %r" % (path, lineno, line))
    if not u_vals:
        raise _InputError("%s: no data rows" % path)
    return np.array(u_vals), np.array(y_vals)


@main.command("estimate")
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Two-column (u, y) text file.")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--gp", "with_gp", is_flag=True, help="Add an empirical-Bayes column.")
@click.option("--output", "output_path", type=click.Path(dir_okay=False), default=None,
              help="CSV output path (default: stdout).")
@_guarded
def estimate_cmd(input_path, model_path, with_gp, output_path):
    """Estimate an impulse response from a user-supplied record.

    The least-squares column is computed on the raw record; the learned
    (and optional empirical-Bayes) columns run on the normalized record and
    are mapped back to raw units with the record's scale factors.
    """
    u, y = _read_two_column_file(input_path)
    params, stats = neural.load_model(model_path)
    n = params.n_taps
    expected = (params.input_dim - n) // 2
    if u.shape[0] != expected:
        raise _InputError(
            "input has %d rows but the model was trained on records of "
            "length %d; the learned estimator needs exactly that length"
            % (u.shape[0], expected))

    theta_ls_raw = regls.least_squares(regls.build_regression(u, y, n))

    probe = ds_mod.Example(u=u, y=y, theta0=np.zeros(n), sigma2=1.0, snr=1.0)
    ex, scale = ds_mod.normalize_example(probe)
    rd = regls.build_regression(ex.u, ex.y, n)
    P_dl = neural.regularizer_for_example(params, stats, ex, rd=rd)
    theta_dl = ds_mod.denormalize_theta(regls.estimate(P_dl, rd), scale)

    columns = {"theta_ls": theta_ls_raw, "theta_dl": theta_dl}
    if with_gp:
        P_gp, _ = gpreg.fit_empirical_bayes(regls.regressor_matrix(ex.u, n), ex.y[n:])
        columns["theta_gp"] = ds_mod.denormalize_theta(regls.estimate(P_gp, rd), scale)

    lines = ["index," + ",".join(columns)]
    for k in range(n):
        lines.append("%d," % (k + 1) + ",".join("%.17g" % columns[c][k] for c in columns))
    text = "\n".join(lines) + "\n"
    if output_path:
        Path(output_path).write_text(text)
        click.echo("estimates -> %s" % output_path)
    else:
        click.echo(text, nl=False)


def _write_matrix_csv(path, matrix):
    np.savetxt(path, np.asarray(matrix), delimiter=",", fmt="%.17g")


def _rescale_unit(matrix):
    peak = float(np.max(np.abs(matrix)))
    return matrix / peak if peak > 0 else matrix


@main.group("inspect", invoke_without_command=True)
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False),
              default=None)
@click.option("--dataset", "dataset_path", type=click.Path(exists=True, dir_okay=False),
              default=None)
@click.option("--top", type=int, default=None,
              help="Dump the top-k candidate matrices (matrices mode).")
@click.option("--out", "out_dir", type=click.Path(file_okay=False),
              default="inspect_out", show_default=True)
@click.pass_context
def inspect_cmd(ctx, model_path, dataset_path, top, out_dir):
    """Dump matrices and curves for offline plotting (CSV only)."""
    if ctx.invoked_subcommand is not None:
        return
    if top is None:
        raise click.UsageError(
            "choose a mode: 'inspect system', 'inspect matrices', "
            "'inspect example', or pass --top for the matrices mode")
    _run_matrices(model_path, dataset_path, top, out_dir)


@inspect_cmd.command("system")
@click.option("--order", type=int, default=30, show_default=True)
@click.option("--n-taps", type=int, default=50, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False),
              default="inspect_out", show_default=True)
@click.pass_obj
@_guarded
def inspect_system(obj, order, n_taps, out_dir):
    """Draw one random system; dump its matrices and impulse response."""
    rng = np.random.default_rng(np.random.SeedSequence(obj["seed"]))
    dsys, theta0 = sysgen.draw_fir_system(order, n_taps, rng)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_matrix_csv(out / "A.csv", dsys.A)
    _write_matrix_csv(out / "B.csv", dsys.B[:, None])
    _write_matrix_csv(out / "C.csv", dsys.C[None, :])
    _write_matrix_csv(out / "D.csv", np.array([[dsys.D]]))
    _write_matrix_csv(out / "impulse_response.csv", theta0[:, None])
    click.echo("system order %d, sample time %.6g s -> %s"
               % (order, dsys.sample_time, out))


@inspect_cmd.command("matrices")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--dataset", "dataset_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Reference dataset for weight ranking.")
@click.option("--top", type=int, default=21, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False),
              default="inspect_out", show_default=True)
@_guarded
def inspect_matrices(model_path, dataset_path, top, out_dir):
    """Dump the top-k candidate outer products, ranked by average weight."""
    _run_matrices(model_path, dataset_path, top, out_dir)


@_guarded
def _run_matrices(model_path, dataset_path, top, out_dir):
    if not model_path or not dataset_path:
        raise click.UsageError("matrices mode needs --model and --dataset")
    if top <= 0:
        raise click.UsageError("--top must be positive")
    params, stats = neural.load_model(model_path)
    raw = ds_mod.load_dataset(dataset_path)
    if raw.count == 0:
        raise EmptyDataset("dataset %s holds no examples" % dataset_path)
    norm, _ = ds_mod.normalize_dataset(raw)
    top = min(top, params.n_matrices)

    weight_sum = np.zeros(params.n_matrices)
    for ex in norm.examples:
        rd = regls.build_regression(ex.u, ex.y, params.n_taps)
        theta_ls = regls.least_squares(rd)
        trace = neural.forward(params, ex, (theta_ls - stats.mean) / stats.std,
                               mode="eval", rd=rd)
        weight_sum += trace.w
    order = np.argsort(-weight_sum)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rank, col in enumerate(order[:top], start=1):
        s = params.S[:, col]
        _write_matrix_csv(out / ("matrix_%02d_col%03d.csv" % (rank, col)),
                          _rescale_unit(np.outer(s, s)))
    click.echo("wrote %d matrices -> %s" % (top, out))


@inspect_cmd.command("example")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--dataset", "dataset_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--id", "example_id", type=int, required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False),
              default="inspect_out", show_default=True)
@_guarded
def inspect_example(model_path, dataset_path, example_id, out_dir):
    """Dump the three regularization matrices and estimate curves for one example."""
    params, stats = neural.load_model(model_path)
    raw = ds_mod.load_dataset(dataset_path)
    if not (0 <= example_id < raw.count):
        raise click.UsageError("--id %d out of range [0, %d)" % (example_id, raw.count))
    norm, scales = ds_mod.normalize_dataset(raw)
    ex, scale = norm.examples[example_id], scales[example_id]
    n = norm.n_taps

    rd = regls.build_regression(ex.u, ex.y, n)
    theta_ls = regls.least_squares(rd)
    P_or = regls.optimal_regularizer(ex.theta0, ex.sigma2)
    P_dl = neural.regularizer_for_example(params, stats, ex, rd=rd)
    P_gp, _ = gpreg.fit_empirical_bayes(regls.regressor_matrix(ex.u, n), ex.y[n:])

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_matrix_csv(out / "P_or.csv", _rescale_unit(P_or))
    _write_matrix_csv(out / "P_dl.csv", _rescale_unit(P_dl))
    _write_matrix_csv(out / "P_gp.csv", _rescale_unit(P_gp))

    curves = {
        "gp": ds_mod.denormalize_theta(regls.estimate(P_gp, rd), scale),
        "dl": ds_mod.denormalize_theta(regls.estimate(P_dl, rd), scale),
        "ls": ds_mod.denormalize_theta(theta_ls, scale),
        "true": raw.examples[example_id].theta0,
    }
    lines = ["index,gp,dl,ls,true"]
    for k in range(n):
        lines.append("%d," % (k + 1)
                     + ",".join("%.17g" % curves[c][k] for c in ("gp", "dl", "ls", "true")))
    (out / "curves.csv").write_text("\n".join(lines) + "\n")
    click.echo("example %d dumps -> %s" % (example_id, out))


if __name__ == "__main__":
    main()
