"""Command-line front end: CSV ingestion, fitting, clustering output,
density/moment utilities, and benchmark data emission.

Exit codes: 0 converged, 1 input error, 2 non-convergence.  All outputs are
deterministic for fixed flags and seeds; floats are written with 17
significant digits so they round-trip exactly.
"""
from __future__ import annotations

import csv
import json
import os
import sys

import click
import numpy as np

from .mc_estep import benchmark_estep
from .mixture import (EmptyComponentError, FitConfig, SkewTMixtureModel,
                      error_rate, fit_fm_mst)
from .skewt import SkewTParams, mst_logpdf
from .tdist import MvtParams
from .truncmoments import (TruncatedTSpec, trunc_t_mean, trunc_t_prob,
                           trunc_t_second_moment)

SCHEMA_VERSION = 1


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _default_threads() -> int:
    env = os.environ.get("SKEWTMIX_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.replace(";", ",").split(",") if v != ""])
    except ValueError as exc:
        raise click.ClickException(f"cannot parse vector '{text}': {exc}")


def _parse_matrix(text: str) -> np.ndarray:
    try:
        rows = [[float(v) for v in row.split(",") if v != ""]
                for row in text.split(";") if row != ""]
        mat = np.array(rows)
    except ValueError as exc:
        raise click.ClickException(f"cannot parse matrix '{text}': {exc}")
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise click.ClickException(f"matrix '{text}' is not square")
    return mat


# ---------------------------------------------------------------------------
# dataset / model files
# ---------------------------------------------------------------------------

def load_dataset(path, columns=None, label_column=None):
    """Read a numeric CSV with a header row.

    Returns (rows, column_names, labels).  Rows with missing or non-numeric
    cells are rejected with their 1-based row numbers in the message.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise click.ClickException(f"cannot read {path}: {exc}")
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise click.ClickException(f"{path} is empty")
        header = [h.strip() for h in header]
        if columns:
            missing = [c for c in columns if c not in header]
            if missing:
                raise click.ClickException(f"columns not found: {missing}")
            use = [header.index(c) for c in columns]
            names = list(columns)
        else:
            use = None
            names = header
        lab_idx = None
        if label_column is not None:
            if label_column not in header:
                raise click.ClickException(f"label column '{label_column}' not found")
            lab_idx = header.index(label_column)
            if use is None:
                use = [i for i in range(len(header)) if i != lab_idx]
                names = [header[i] for i in use]
        rows, labels, bad = [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(cell.strip() == "" for cell in rec):
                continue
            take = use if use is not None else range(len(header))
            try:
                vals = [float(rec[i]) for i in take]
                if any(np.isnan(v) for v in vals):
                    raise ValueError("missing value")
            except (ValueError, IndexError):
                bad.append(lineno)
                continue
            rows.append(vals)
            if lab_idx is not None:
                labels.append(rec[lab_idx].strip())
        if bad:
            raise click.ClickException(
                f"{path}: rows with missing or non-numeric cells: {bad}")
        if not rows:
            raise click.ClickException(f"{path}: no data rows")
    data = np.asarray(rows, dtype=float)
    lab = None
    if lab_idx is not None:
        _, lab = np.unique(labels, return_inverse=True)
    return data, names, lab


def model_to_dict(model: SkewTMixtureModel, meta: dict) -> dict:
    p = model.dim
    tril = [(r, s) for r in range(p) for s in range(r + 1)]
    comps = []
    for w, c in zip(model.weights, model.components):
        comps.append({
            "pi": float(w),
            "mu": [float(v) for v in c.mu],
            "sigma_tril": [float(c.sigma[r, s]) for r, s in tril],
            "delta": [float(v) for v in c.delta],
            "nu": float(c.nu),
        })
    return {"schema_version": SCHEMA_VERSION, "g": model.n_components,
            "p": p, "components": comps, "fit": meta}


def model_from_dict(doc: dict) -> tuple[SkewTMixtureModel, dict]:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise click.ClickException(f"unsupported schema_version {doc.get('schema_version')}")
    p = doc["p"]
    tril = [(r, s) for r in range(p) for s in range(r + 1)]
    weights, comps = [], []
    for c in doc["components"]:
        sigma = np.zeros((p, p))
        for (r, s), v in zip(tril, c["sigma_tril"]):
            sigma[r, s] = sigma[s, r] = v
        weights.append(c["pi"])
        comps.append(SkewTParams(np.array(c["mu"]), sigma,
                                 np.array(c["delta"]), c["nu"]))
    return SkewTMixtureModel(np.array(weights), comps), doc.get("fit", {})


def save_model(path, model, meta):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model, meta), fh, indent=2)
        fh.write("\n")


def load_model(path):
    try:
        with open(path) as fh:
            return model_from_dict(json.load(fh))
    except OSError as exc:
        raise click.ClickException(f"cannot read {path}: {exc}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

@click.group()
def main():
    """Skew-t mixture modelling tools."""


@main.command("fit")
@click.argument("csv_path", type=click.Path())
@click.option("--g", type=int, required=True, help="Number of components.")
@click.option("--tol", type=float, default=1e-6, show_default=True)
@click.option("--max-iter", type=int, default=1000, show_default=True)
@click.option("--nu-init", type=float, default=40.0, show_default=True)
@click.option("--equal-nu", is_flag=True, help="Single shared dof.")
@click.option("--e1-mode", type=click.Choice(["osl", "exact"]), default="osl",
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--restarts", type=int, default=1, show_default=True,
              help="Re-seeded k-means starts; best log-likelihood wins.")
@click.option("--columns", type=str, default=None,
              help="Comma-separated column names to model.")
@click.option("--label-column", type=str, default=None,
              help="Column with reference class labels (for the error rate).")
@click.option("--qmc-tol", type=float, default=1e-6, show_default=True)
@click.option("--threads", type=int, default=None,
              help="Worker threads (default: SKEWTMIX_THREADS or all cores).")
@click.option("--out", "out_prefix", type=str, default=None,
              help="Output prefix (default: input path without extension).")
def cmd_fit(csv_path, g, tol, max_iter, nu_init, equal_nu, e1_mode, seed,
            restarts, columns, label_column, qmc_tol, threads, out_prefix):
    """Fit a skew-t mixture to CSV data; write model, labels, trace files."""
    if g < 1:
        raise click.ClickException("--g must be >= 1")
    cols = [c.strip() for c in columns.split(",")] if columns else None
    data, names, truth = load_dataset(csv_path, cols, label_column)
    threads = threads or _default_threads()
    best = None
    failures = []
    for r in range(max(1, restarts)):
        cfg = FitConfig(g=g, tol=tol, max_iter=max_iter, nu_init=nu_init,
                        equal_nu=equal_nu, e1_mode=e1_mode, seed=seed + r,
                        qmc_tol=qmc_tol, qmc_seed=seed, threads=threads)
        try:
            result = fit_fm_mst(data, cfg)
        except EmptyComponentError as exc:
            failures.append(f"seed {seed + r}: {exc}")
            continue
        if best is None or result.loglik > best.loglik:
            best = result
    if best is None:
        click.echo("all restarts failed with empty components; "
                   "try more restarts or a smaller g:", err=True)
        for f in failures:
            click.echo("  " + f, err=True)
        sys.exit(2)
    prefix = out_prefix or os.path.splitext(csv_path)[0]
    meta = {
        "loglik": best.loglik, "aic": best.aic, "bic": best.bic,
        "iterations": best.iterations, "converged": best.converged,
        "columns": names,
        "config": {"g": g, "tol": tol, "max_iter": max_iter,
                   "nu_init": nu_init, "equal_nu": equal_nu,
                   "e1_mode": e1_mode, "seed": seed, "restarts": restarts,
                   "qmc_tol": qmc_tol},
    }
    save_model(prefix + ".model.json", best.model, meta)
    with open(prefix + ".labels.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["row", "label"] + [f"tau_{h + 1}" for h in range(best.tau.shape[1])])
        for j in range(best.tau.shape[0]):
            wr.writerow([j + 1, best.labels[j] + 1]
                        + [_fmt(v) for v in best.tau[j]])
    with open(prefix + ".trace.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iteration", "loglik"])
        for i, v in enumerate(best.loglik_trace, start=1):
            wr.writerow([i, _fmt(v)])
    click.echo(f"log-likelihood {best.loglik:.6f}  AIC {best.aic:.3f}  "
               f"BIC {best.bic:.3f}  iterations {best.iterations}  "
               f"converged {best.converged}")
    if truth is not None:
        rate = error_rate(best.labels, truth)
        click.echo(f"classification error rate {rate:.6f}")
    if not best.converged:
        sys.exit(2)


@main.command("density")
@click.argument("model_path", type=click.Path())
@click.option("--point", "points", type=str, multiple=True,
              help="Comma-separated coordinates; repeatable.")
@click.option("--grid-min", type=str, default=None)
@click.option("--grid-max", type=str, default=None)
@click.option("--grid-size", type=int, default=50, show_default=True)
@click.option("--qmc-tol", type=float, default=1e-6, show_default=True)
@click.option("--out", "out_path", type=str, default=None,
              help="Output CSV (default: stdout).")
def cmd_density(model_path, points, grid_min, grid_max, grid_size, qmc_tol,
                out_path):
    """Evaluate mixture and per-component densities on points or a grid."""
    model, _ = load_model(model_path)
    p = model.dim
    if points:
        pts = np.array([_parse_vector(t) for t in points])
    elif grid_min and grid_max:
        lo = _parse_vector(grid_min)
        hi = _parse_vector(grid_max)
        if lo.shape != (p,) or hi.shape != (p,):
            raise click.ClickException(f"grid bounds must have length {p}")
        axes = [np.linspace(lo[i], hi[i], grid_size) for i in range(p)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
    else:
        raise click.ClickException("provide --point or --grid-min/--grid-max")
    if pts.shape[1] != p:
        raise click.ClickException(f"points have dimension {pts.shape[1]}, model has {p}")
    comp_log = np.stack([mst_logpdf(pts, c, qmc_tol) for c in model.components],
                        axis=1)
    mix = np.exp(comp_log) @ model.weights
    fh = open(out_path, "w", newline="") if out_path else sys.stdout
    try:
        wr = csv.writer(fh)
        wr.writerow([f"x{i + 1}" for i in range(p)] + ["mixture"]
                    + [f"comp_{h + 1}" for h in range(model.n_components)])
        for j in range(pts.shape[0]):
            wr.writerow([_fmt(v) for v in pts[j]] + [_fmt(mix[j])]
                        + [_fmt(np.exp(comp_log[j, h]))
                           for h in range(model.n_components)])
    finally:
        if out_path:
            fh.close()


@main.command("moments")
@click.option("--q", "q_text", type=str, required=True,
              help="Location vector of the t variate.")
@click.option("--scale", "scale_text", type=str, required=True,
              help="Scale matrix, rows separated by ';'.")
@click.option("--nu", type=float, required=True)
@click.option("--region", type=click.Choice(["upper", "lower"]),
              default="lower", show_default=True)
@click.option("--bound", "bound_text", type=str, default=None,
              help="Region boundary (default: zero vector).")
@click.option("--qmc-tol", type=float, default=1e-6, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def cmd_moments(q_text, scale_text, nu, region, bound_text, qmc_tol, seed):
    """Truncated-t moments as JSON: prob, mean, second, PSD check."""
    q = _parse_vector(q_text)
    scale = _parse_matrix(scale_text)
    if scale.shape[0] != q.shape[0]:
        raise click.ClickException("scale and q dimensions differ")
    bound = _parse_vector(bound_text) if bound_text else np.zeros_like(q)
    try:
        spec = TruncatedTSpec(MvtParams(q, scale, nu), bound, region)
        prob = trunc_t_prob(spec, qmc_tol, seed)
        mean = trunc_t_mean(spec, qmc_tol, seed)
        second = trunc_t_second_moment(spec, qmc_tol, seed)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    cov = second - np.outer(mean, mean)
    psd_ok = bool(np.linalg.eigvalsh(cov).min() >= -1e-8 * max(np.trace(cov), 1e-30))
    doc = {"prob": prob, "mean": [float(v) for v in mean],
           "second": [[float(v) for v in row] for row in second],
           "psd_ok": psd_ok}
    click.echo(json.dumps(doc, indent=2))


@main.command("benchmark")
@click.option("--dims", type=str, default="2,3,4", show_default=True)
@click.option("--n", type=int, default=100, show_default=True)
@click.option("--draws", type=str, default="50,100,500", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=str, default=None)
def cmd_benchmark(dims, n, draws, seed, out_path):
    """Exact vs Monte Carlo E-step timing and accuracy table (CSV)."""
    dim_list = [int(v) for v in dims.split(",") if v]
    draw_list = [int(v) for v in draws.split(",") if v]
    rows = benchmark_estep(dim_list, n, draw_list, seed)
    fh = open(out_path, "w", newline="") if out_path else sys.stdout
    try:
        wr = csv.writer(fh)
        wr.writerow(["p", "method", "mean_time_sec", "total_abs_error"])
        for row in rows:
            wr.writerow([row["p"], row["method"], _fmt(row["mean_time_sec"]),
                         _fmt(row["total_abs_error"])])
    finally:
        if out_path:
            fh.close()


if __name__ == "__main__":
    main()
