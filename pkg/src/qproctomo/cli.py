"""Command-line front end: reproducible simulation, fitting and reporting runs.

Every command writes a ``manifest.json`` next to its outputs recording the
exact arguments; ``qproc rerun manifest.json`` replays it and reproduces the
outputs byte-for-byte. Per-wavelength chains are independent jobs with seeds
derived from (base seed, wavelength index), so results do not depend on the
worker count, and outputs are always written in canonical wavelength order.

Exit codes: 0 success, 2 bad input, 3 success with non-convergence warnings.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import BadSpec, EmptyData, TomographyError, WindowEmpty
from .metrics import (CapacityOptConfig, bloch_vector, channel_capacity,
                      max_fidelity_over_local_unitaries,
                      mixing_probability_from_counts, process_fidelity,
                      _psd_sqrt, _fidelity_with_sqrt, inunitarity_curve,
                      rotated_model, unitarity)
from .models import MODEL_FAMILIES, parse_model_spec
from .operators import complex_matrix_to_pairs, to_choi
from .qst import run_qst, save_state_posterior
from .sampler import (ChainConfig, convergence_doubling, load_posterior,
                      run_chain, save_posterior)
from .tomography import (read_datasets_csv, read_noise_csv, simulate_counts,
                         write_datasets_csv)

log = logging.getLogger("qproctomo")


def _derived_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index])
               .generate_state(1, np.uint64)[0])


def _parse_wavelengths(spec):
    if spec is None:
        return None
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise BadSpec(f"wavelength range must be start:stop:step, got {spec!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise BadSpec(f"bad wavelength range {spec!r}")
        n = int(round((stop - start) / step)) + 1
        return [start + i * step for i in range(n)]
    return [float(tok) for tok in spec.split(",") if tok]


def _parse_window(spec):
    lo, _, hi = spec.partition(":")
    try:
        lo, hi = float(lo), float(hi)
    except ValueError:
        raise BadSpec(f"window must be lo:hi in nm, got {spec!r}") from None
    if hi < lo:
        raise BadSpec(f"window upper edge below lower edge: {spec!r}")
    return lo, hi


def _parse_grid(spec):
    parts = spec.split(":")
    if len(parts) != 3:
        raise BadSpec(f"grid must be start:stop:step, got {spec!r}")
    start, stop, step = (float(p) for p in parts)
    n = int(round((stop - start) / step)) + 1
    return np.linspace(start, stop, n)


def _write_manifest(out_dir: Path, command: str, argv, outputs):
    manifest = {
        "tool": "qproctomo",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "outputs": sorted(outputs),
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v
                             for v in row])


def _chain_config(args) -> ChainConfig:
    return ChainConfig(
        beta=args.beta, retained_samples=args.samples, thinning=args.thin,
        burn_in=args.burn_in, seed=args.seed, engine=args.engine,
        flux_log_scale=args.flux_log_scale)


def _add_chain_args(parser):
    parser.add_argument("--samples", type=int, default=1024,
                        help="retained posterior samples R (default 1024)")
    parser.add_argument("--thin", type=int, default=2048,
                        help="thinning factor T (default 2048)")
    parser.add_argument("--burn-in", type=int, default=None,
                        help="burn-in steps (default: 10%% of R*T)")
    parser.add_argument("--beta", type=float, default=0.3,
                        help="initial pCN proposal scale")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1,
                        help="parallel per-wavelength chains")
    parser.add_argument("--flux-log-scale", type=float, default=0.1)
    parser.add_argument("--engine", choices=("auto", "numba", "numpy"),
                        default="auto")


# -- simulate ----------------------------------------------------------------

def cmd_simulate(args, argv) -> int:
    channel = parse_model_spec(args.model)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    flux = args.counts / args.integration_s
    wavelengths = _parse_wavelengths(args.wavelengths)
    datasets = []
    if wavelengths is None:
        datasets.append(simulate_counts(
            channel, flux, args.integration_s, mode=args.mode, seed=args.seed))
    else:
        for i, w in enumerate(wavelengths):
            datasets.append(simulate_counts(
                channel, flux, args.integration_s, mode=args.mode,
                seed=_derived_seed(args.seed, i), wavelength_nm=w))
    write_datasets_csv(out_dir / "dataset.csv", datasets)
    _write_manifest(out_dir, "simulate", argv, ["dataset.csv"])
    log.info("wrote %d dataset(s) to %s", len(datasets), out_dir)
    return 0


# -- fit-process ---------------------------------------------------------------

def _per_sample_capacity(samples) -> np.ndarray:
    """Capacity for each retained sample, warm-started along the chain."""
    values = np.empty(len(samples))
    warm = None
    for i, kraus in enumerate(samples.kraus_sets()):
        if warm is None:
            cfg = CapacityOptConfig()
        else:
            cfg = CapacityOptConfig(include_standard_starts=False,
                                    n_random_starts=0,
                                    extra_starts=(warm, np.zeros(3)),
                                    max_iterations=80)
        result = channel_capacity(kraus, cfg)
        values[i] = result.capacity
        warm = bloch_vector(result.argmax_state)
    return values


def _fit_process_job(payload):
    dataset, config = payload
    samples = run_chain(dataset, config)
    unit_values = np.array([unitarity(k) for k in samples.kraus_sets()])
    cap_values = _per_sample_capacity(samples)
    return samples, unit_values, cap_values


def cmd_fit_process(args, argv) -> int:
    datasets = read_datasets_csv(args.dataset)
    if not datasets:
        raise EmptyData(f"{args.dataset}: no datasets")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = _chain_config(args)
    jobs = [(data, replace(base, seed=_derived_seed(args.seed, i)))
            for i, data in enumerate(datasets)]

    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_fit_process_job, jobs))
    else:
        results = [_fit_process_job(job) for job in jobs]

    outputs = []
    metric_rows = []
    chois = []
    for i, (data, (samples, unit_values, cap_values)) in enumerate(
            zip(datasets, results)):
        name = f"posterior_{i:03d}.json"
        save_posterior(out_dir / name, samples,
                       extra={"wavelength_nm": data.wavelength_nm})
        outputs.append(name)
        sample_rows = [(s, float(unit_values[s]), float(cap_values[s]))
                       for s in range(len(samples))]
        sname = f"samples_{i:03d}.csv"
        _write_csv(out_dir / sname, ["sample_index", "unitarity",
                                     "capacity_qubits"], sample_rows)
        outputs.append(sname)
        chois.append([to_choi(k) for k in samples.kraus_sets()])
        w = data.wavelength_nm if data.wavelength_nm is not None else float("nan")
        metric_rows.append((w, "unitarity", float(unit_values.mean()),
                            float(unit_values.std(ddof=1))))
        metric_rows.append((w, "capacity_qubits", float(cap_values.mean()),
                            float(cap_values.std(ddof=1))))

    reference = np.mean(chois[0], axis=0)
    sqrt_ref = _psd_sqrt(reference)
    for i, data in enumerate(datasets):
        w = data.wavelength_nm if data.wavelength_nm is not None else float("nan")
        mean_f = process_fidelity(np.mean(chois[i], axis=0), reference)
        per_sample = np.array([_fidelity_with_sqrt(sqrt_ref, c)
                               for c in chois[i]])
        metric_rows.append((w, "relative_process_fidelity", float(mean_f),
                            float(per_sample.std(ddof=1))))

    metric_rows.sort(key=lambda r: (r[1], r[0]))
    _write_csv(out_dir / "metrics.csv",
               ["wavelength_nm", "metric", "mean", "std"], metric_rows)
    outputs.append("metrics.csv")
    _write_manifest(out_dir, "fit-process", argv, outputs)
    log.info("fit %d wavelength(s); report in %s", len(datasets), out_dir)
    return 0


# -- fit-state ---------------------------------------------------------------

def _fit_state_job(payload):
    dataset, config = payload
    return run_qst(dataset, config)


def cmd_fit_state(args, argv) -> int:
    datasets = read_noise_csv(args.dataset)
    if not datasets:
        raise EmptyData(f"{args.dataset}: no datasets")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = _chain_config(args)
    jobs = [(data, replace(base, seed=_derived_seed(args.seed, i)))
            for i, data in enumerate(datasets)]

    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_fit_state_job, jobs))
    else:
        results = [_fit_state_job(job) for job in jobs]

    outputs = []
    metric_rows = []
    for i, (data, posterior) in enumerate(zip(datasets, results)):
        name = f"posterior_{i:03d}.json"
        save_state_posterior(out_dir / name, posterior,
                             extra={"wavelength_nm": data.wavelength_nm})
        outputs.append(name)
        mean, std = posterior.purity_summary()
        w = data.wavelength_nm if data.wavelength_nm is not None else float("nan")
        metric_rows.append((w, "purity", mean, std))

    _write_csv(out_dir / "metrics.csv",
               ["wavelength_nm", "metric", "mean", "std"], metric_rows)
    outputs.append("metrics.csv")
    _write_manifest(out_dir, "fit-state", argv, outputs)
    return 0


# -- compare-models ------------------------------------------------------------

def _load_window_posteriors(posterior_dir: Path, window):
    lo, hi = window
    entries = []
    for path in sorted(posterior_dir.glob("posterior_*.json")):
        samples, bundle = load_posterior(path)
        w = bundle.get("wavelength_nm")
        if w is None or not (lo <= w <= hi):
            continue
        entries.append((w, samples))
    if not entries:
        raise WindowEmpty(f"no posteriors in window [{lo}, {hi}] nm under "
                          f"{posterior_dir}")
    return entries


def _window_average_p_m(signal_sets, noise_sets, window):
    lo, hi = window
    sig = {d.wavelength_nm: d for d in signal_sets
           if d.wavelength_nm is not None and lo <= d.wavelength_nm <= hi}
    noi = {d.wavelength_nm: d for d in noise_sets
           if d.wavelength_nm is not None and lo <= d.wavelength_nm <= hi}
    common = sorted(set(sig) & set(noi))
    if not common:
        raise WindowEmpty(f"signal and noise data share no wavelengths in "
                          f"[{lo}, {hi}] nm")
    values = [mixing_probability_from_counts(sig[w], noi[w]) for w in common]
    p = float(np.mean([v[0] for v in values]))
    std = float(np.sqrt(np.sum([v[1] ** 2 for v in values])) / len(values))
    return p, std, common


def cmd_compare_models(args, argv) -> int:
    window = _parse_window(args.window)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    entries = _load_window_posteriors(Path(args.posterior), window)
    signal_sets = read_datasets_csv(args.signal)
    noise_sets = read_noise_csv(args.noise)
    p_m, p_m_std, used = _window_average_p_m(signal_sets, noise_sets, window)
    log.info("mixing probability %.4f +- %.4f from %d wavelength(s)",
             p_m, p_m_std, len(used))

    sample_chois = []
    for _, samples in entries:
        sample_chois.extend(to_choi(k) for k in samples.kraus_sets())
    measured = np.mean(sample_chois, axis=0)

    rows = []
    for name in args.models.split(","):
        name = name.strip().lower()
        if name not in MODEL_FAMILIES:
            raise BadSpec(f"unknown model family {name!r}")
        model = MODEL_FAMILIES[name](p_m)
        fit = max_fidelity_over_local_unitaries(
            measured, model, model_name=name, mixing_probability=p_m,
            seed=args.seed)
        fitted_choi = to_choi(rotated_model(model, fit.pre_rotation,
                                            fit.post_rotation))
        sqrt_fitted = _psd_sqrt(fitted_choi)
        per_sample = np.array([_fidelity_with_sqrt(sqrt_fitted, c)
                               for c in sample_chois])
        rows.append({
            "model": name,
            "p_M": p_m,
            "p_M_std": p_m_std,
            "fidelity_mean": float(per_sample.mean()),
            "fidelity_std": float(per_sample.std(ddof=1)),
            "fidelity_at_mean_choi": fit.fidelity,
            "U_pre": complex_matrix_to_pairs(fit.pre_rotation),
            "V_post": complex_matrix_to_pairs(fit.post_rotation),
        })

    with open(out_dir / "comparison.json", "w") as fh:
        json.dump({"window_nm": list(window),
                   "wavelengths_used": used,
                   "results": rows}, fh, indent=2)
    _write_manifest(out_dir, "compare-models", argv, ["comparison.json"])
    return 0


# -- unitarity-curve -----------------------------------------------------------

def cmd_unitarity_curve(args, argv) -> int:
    name = args.model.strip().lower()
    if name not in MODEL_FAMILIES:
        raise BadSpec(f"unknown model family {args.model!r}")
    grid = _parse_grid(args.grid)
    table = inunitarity_curve(MODEL_FAMILIES[name], grid)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "curve.csv", ["p_mixing", "inunitarity"],
               [(float(p), float(v)) for p, v in table])
    _write_manifest(out_dir, "unitarity-curve", argv, ["curve.csv"])
    return 0


# -- convergence-probe ---------------------------------------------------------

def cmd_convergence_probe(args, argv) -> int:
    datasets = read_datasets_csv(args.dataset)
    data = datasets[0]
    if args.wavelength is not None:
        matches = [d for d in datasets if d.wavelength_nm == args.wavelength]
        if not matches:
            raise EmptyData(f"no dataset at wavelength {args.wavelength}")
        data = matches[0]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = _chain_config(args)
    result = convergence_doubling(
        data, base, unitarity, t_min=args.t_min, t_max=args.t_max,
        mean_tol=args.mean_tol, std_tol=args.std_tol)
    _write_csv(out_dir / "probe.csv", ["thinning", "mean", "std"],
               [(t, m, s) for t, m, s in result.trace])
    with open(out_dir / "summary.json", "w") as fh:
        json.dump({"chosen_thinning": result.chosen_thinning,
                   "converged": result.converged}, fh, indent=2)
    _write_manifest(out_dir, "convergence-probe", argv,
                    ["probe.csv", "summary.json"])
    if not result.converged:
        log.warning("no convergence up to thinning ceiling %d", args.t_max)
        return 3
    return 0


# -- rerun ---------------------------------------------------------------------

def cmd_rerun(args, _argv) -> int:
    with open(args.manifest) as fh:
        manifest = json.load(fh)
    return main(manifest["argv"])


# -- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qproc",
        description="Bayesian quantum process tomography toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate synthetic count data")
    p.add_argument("model", help="model spec, e.g. depolarizing:p=0.3")
    p.add_argument("--counts", type=float, default=1e5,
                   help="mean counts per unit-probability setting (flux*tau)")
    p.add_argument("--integration-s", type=float, default=1.0)
    p.add_argument("--mode", choices=("noiseless", "poisson"),
                   default="noiseless")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--wavelengths", default=None,
                   help="single value, comma list, or start:stop:step (nm)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit-process", help="reconstruct channels per wavelength")
    p.add_argument("dataset")
    p.add_argument("--out", required=True)
    _add_chain_args(p)
    p.set_defaults(func=cmd_fit_process)

    p = sub.add_parser("fit-state", help="noise-state tomography per wavelength")
    p.add_argument("dataset")
    p.add_argument("--out", required=True)
    _add_chain_args(p)
    p.set_defaults(func=cmd_fit_state)

    p = sub.add_parser("compare-models",
                       help="fit canonical models to a posterior bundle")
    p.add_argument("--posterior", required=True,
                   help="directory written by fit-process")
    p.add_argument("--signal", required=True, help="signal-only dataset CSV")
    p.add_argument("--noise", required=True, help="noise-only dataset CSV")
    p.add_argument("--models", default="depolarizing,dephasing")
    p.add_argument("--window", default="1555:1560",
                   help="wavelength window lo:hi in nm")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare_models)

    p = sub.add_parser("unitarity-curve",
                       help="tabulate inunitarity over mixing probability")
    p.add_argument("model", help="model family name, e.g. depolarizing")
    p.add_argument("--grid", default="0:1:0.01", help="start:stop:step")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_unitarity_curve)

    p = sub.add_parser("convergence-probe",
                       help="choose a thinning factor by successive doubling")
    p.add_argument("dataset")
    p.add_argument("--wavelength", type=float, default=None)
    p.add_argument("--t-min", type=int, default=4)
    p.add_argument("--t-max", type=int, default=2 ** 18)
    p.add_argument("--mean-tol", type=float, default=1e-3)
    p.add_argument("--std-tol", type=float, default=1e-3)
    p.add_argument("--out", required=True)
    _add_chain_args(p)
    p.set_defaults(func=cmd_convergence_probe)

    p = sub.add_parser("rerun", help="replay a run from its manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_rerun)

    return parser


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    argv = list(argv)
    logging.basicConfig(
        level=os.environ.get("QPROC_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, argv)
    except (TomographyError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
