"""File formats: long-format data CSV, chain draw tables, manifests, summaries.

All numeric output is written at 17 significant digits so repeated runs with
the same seed produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .model import FunctionalDataset, ModelDims, ModelState
from .posterior import ICTable, PosteriorSummary
from .priors import PriorConfig
from .sampler import ChainOutput, SamplerConfig
from .simulate import GroundTruth
from .basis import BasisSystem

LONG_HEADER = ["subject", "channel", "group", "t", "y"]


def fmt(x: float) -> str:
    return format(float(x), ".17g")


class DataFormatError(ValueError):
    """Raised for malformed long-format input files."""


def load_long_table(path: str | Path) -> FunctionalDataset:
    """Read a long-format CSV (subject,channel,group,t,y) into a dataset.

    Channels are ordered lexicographically and grids sorted ascending.  All
    of a subject's channels must share one grid; duplicates, non-numeric
    values and grid mismatches raise DataFormatError with the offending
    location.
    """
    path = Path(path)
    records: dict[str, dict[str, list[tuple[float, float]]]] = {}
    groups: dict[str, str | None] = {}
    seen: set[tuple[str, str, float]] = set()
    subject_order: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != LONG_HEADER:
            raise DataFormatError(
                f"{path}: expected header {','.join(LONG_HEADER)!r}, got {header!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise DataFormatError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            subj, chan, group, t_raw, y_raw = (c.strip() for c in row)
            try:
                t = float(t_raw)
                y = float(y_raw)
            except ValueError:
                raise DataFormatError(
                    f"{path}:{lineno}: non-numeric t/y values ({t_raw!r}, {y_raw!r})"
                ) from None
            key = (subj, chan, t)
            if key in seen:
                raise DataFormatError(
                    f"{path}:{lineno}: duplicate record for subject={subj} "
                    f"channel={chan} t={t_raw}"
                )
            seen.add(key)
            if subj not in records:
                records[subj] = {}
                subject_order.append(subj)
                groups[subj] = group or None
            elif (group or None) != groups[subj]:
                raise DataFormatError(
                    f"{path}:{lineno}: subject {subj} has conflicting group labels"
                )
            records[subj].setdefault(chan, []).append((t, y))

    if not records:
        raise DataFormatError(f"{path}: no data rows")
    channel_labels = sorted({c for chans in records.values() for c in chans})
    grids, values = [], []
    for subj in subject_order:
        chans = records[subj]
        missing = [c for c in channel_labels if c not in chans]
        if missing:
            raise DataFormatError(f"subject {subj} is missing channels {missing}")
        ref_grid = None
        ref_chan = None
        cols = []
        for chan in channel_labels:
            pts = sorted(chans[chan])
            t = np.array([p[0] for p in pts])
            if ref_grid is None:
                ref_grid, ref_chan = t, chan
            elif t.size != ref_grid.size or not np.array_equal(t, ref_grid):
                raise DataFormatError(
                    f"subject {subj}: grid mismatch between channels "
                    f"{ref_chan} and {chan}"
                )
            cols.append(np.array([p[1] for p in pts]))
        grids.append(ref_grid)
        values.append(np.column_stack(cols))
    return FunctionalDataset(
        grids=grids,
        values=values,
        subject_ids=subject_order,
        channel_labels=channel_labels,
        groups=[groups[s] for s in subject_order],
    )


def write_long_table(path: str | Path, data: FunctionalDataset) -> None:
    """Write a dataset in the long format read by load_long_table."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LONG_HEADER)
        for i, subj in enumerate(data.subject_ids):
            group = "" if data.groups is None else (data.groups[i] or "")
            for j, chan in enumerate(data.channel_labels):
                for t, y in zip(data.grids[i], data.values[i][:, j]):
                    writer.writerow([subj, chan, group, fmt(t), fmt(y)])


def _flat_header(name: str, shape: tuple[int, ...], index_names: str) -> list[str]:
    """Column names like name[k=1,p=3] for a flattened array, 1-based."""
    names = index_names.split(",")
    cols = []
    for idx in np.ndindex(*shape):
        tag = ",".join(f"{n}={i + 1}" for n, i in zip(names, idx))
        cols.append(f"{name}[{tag}]")
    return cols


_BLOCKS = [
    ("nu", "k,p"), ("phi", "k,m,p"), ("chi", "i,j,m"), ("Z", "i,j,k"),
    ("pi", "i,k"), ("sigma2", "j"), ("gamma", "k,p,m"), ("delta", "m,k"),
    ("a1", "k"), ("a2", "k"),
]


def _prior_cfg_dict(cfg: PriorConfig) -> dict:
    d = dict(cfg.__dict__)
    d["alpha_dir"] = [float(v) for v in cfg.alpha_dir]
    return d


def save_chain(out_dir: str | Path, chain: ChainOutput) -> None:
    """Serialize a chain to a directory: one CSV per parameter block + manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    draws = chain.draws
    first = draws[0]
    N, J, K, M, P = first.dims

    for block, idx_names in _BLOCKS:
        arrs = [np.atleast_1d(getattr(s, block)) for s in draws]
        shape = arrs[0].shape
        with open(out / f"{block}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["draw"] + _flat_header(block, shape, idx_names))
            for d, arr in enumerate(arrs, start=1):
                writer.writerow([d] + [fmt(v) for v in arr.ravel()])
    with open(out / "eta.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["draw", "eta"])
        for d, s in enumerate(draws, start=1):
            writer.writerow([d, fmt(s.eta)])
    with open(out / "log_posterior.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["draw", "log_posterior"])
        for d, lp in enumerate(chain.log_posterior_trace, start=1):
            writer.writerow([d, fmt(lp)])

    manifest = {
        "seed": chain.seed,
        "sampler_config": asdict(chain.config),
        "prior_config": _prior_cfg_dict(chain.prior_cfg),
        "data_hash": chain.data_hash,
        "accept_rates": {
            k: (float(v) if np.isfinite(v) else None)
            for k, v in sorted(chain.accept_rates.items())
        },
        "dims": {"N": N, "J": J, "K": K, "M": M, "P": P},
        "n_draws": len(draws),
        "lambda_nu": first.lambda_nu,
        "lambda_phi": first.lambda_phi,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_chain(chain_dir: str | Path) -> ChainOutput:
    """Reconstruct a ChainOutput from a directory written by save_chain."""
    d = Path(chain_dir)
    with open(d / "manifest.json") as fh:
        manifest = json.load(fh)
    dims = manifest["dims"]
    N, J, K, M, P = (dims[k] for k in ("N", "J", "K", "M", "P"))
    shapes = {
        "nu": (K, P), "phi": (K, M, P), "chi": (N, J, M), "Z": (N, J, K),
        "pi": (N, K), "sigma2": (J,), "gamma": (K, P, M), "delta": (M, K),
        "a1": (K,), "a2": (K,),
    }
    blocks: dict[str, np.ndarray] = {}
    for block, _ in _BLOCKS:
        rows = np.loadtxt(d / f"{block}.csv", delimiter=",", skiprows=1, ndmin=2)
        blocks[block] = rows[:, 1:]
    eta = np.loadtxt(d / "eta.csv", delimiter=",", skiprows=1, ndmin=2)[:, 1]
    lp = np.loadtxt(d / "log_posterior.csv", delimiter=",", skiprows=1, ndmin=2)[:, 1]
    n_draws = manifest["n_draws"]
    draws = []
    for r in range(n_draws):
        draws.append(ModelState(
            nu=blocks["nu"][r].reshape(shapes["nu"]),
            phi=blocks["phi"][r].reshape(shapes["phi"]),
            chi=blocks["chi"][r].reshape(shapes["chi"]),
            Z=blocks["Z"][r].reshape(shapes["Z"]),
            pi=blocks["pi"][r].reshape(shapes["pi"]),
            eta=float(eta[r]),
            sigma2=blocks["sigma2"][r].reshape(shapes["sigma2"]),
            gamma=blocks["gamma"][r].reshape(shapes["gamma"]),
            delta=blocks["delta"][r].reshape(shapes["delta"]),
            a1=blocks["a1"][r].reshape(shapes["a1"]),
            a2=blocks["a2"][r].reshape(shapes["a2"]),
            lambda_nu=manifest["lambda_nu"],
            lambda_phi=manifest["lambda_phi"],
        ))
    prior_kwargs = dict(manifest["prior_config"])
    prior_kwargs["alpha_dir"] = np.asarray(prior_kwargs["alpha_dir"])
    return ChainOutput(
        draws=draws,
        accept_rates=manifest["accept_rates"],
        log_posterior_trace=lp,
        seed=manifest["seed"],
        config=SamplerConfig(**manifest["sampler_config"]),
        prior_cfg=PriorConfig(**prior_kwargs),
        data_hash=manifest["data_hash"],
    )


def save_truth(path: str | Path, truth: GroundTruth) -> None:
    """Serialize a GroundTruth to JSON (state, basis settings, dims)."""
    s = truth.state
    payload = {
        "dims": {"N": truth.dims.N, "J": truth.dims.J, "K": truth.dims.K,
                 "M": truth.dims.M, "P": truth.dims.P, "n": list(truth.dims.n)},
        "basis": {
            "degree": truth.basis.degree,
            "interior_knots": truth.basis.interior_knots.tolist(),
            "boundary": list(truth.basis.boundary),
        },
        "state": {
            "nu": s.nu.tolist(), "phi": s.phi.tolist(), "chi": s.chi.tolist(),
            "Z": s.Z.tolist(), "pi": s.pi.tolist(), "eta": s.eta,
            "sigma2": s.sigma2.tolist(), "gamma": s.gamma.tolist(),
            "delta": s.delta.tolist(), "a1": s.a1.tolist(), "a2": s.a2.tolist(),
            "lambda_nu": s.lambda_nu, "lambda_phi": s.lambda_phi,
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_truth(path: str | Path) -> GroundTruth:
    with open(path) as fh:
        payload = json.load(fh)
    d = payload["dims"]
    dims = ModelDims(N=d["N"], J=d["J"], K=d["K"], M=d["M"], P=d["P"], n=tuple(d["n"]))
    b = payload["basis"]
    basis = BasisSystem(
        degree=b["degree"],
        interior_knots=np.asarray(b["interior_knots"]),
        boundary=tuple(b["boundary"]),
    )
    st = payload["state"]
    state = ModelState(
        nu=np.asarray(st["nu"]), phi=np.asarray(st["phi"]), chi=np.asarray(st["chi"]),
        Z=np.asarray(st["Z"]), pi=np.asarray(st["pi"]), eta=float(st["eta"]),
        sigma2=np.asarray(st["sigma2"]), gamma=np.asarray(st["gamma"]),
        delta=np.asarray(st["delta"]), a1=np.asarray(st["a1"]), a2=np.asarray(st["a2"]),
        lambda_nu=float(st["lambda_nu"]), lambda_phi=float(st["lambda_phi"]),
    )
    return GroundTruth(state=state, basis=basis, dims=dims)


def write_summary(out_dir: str | Path, summary: PosteriorSummary,
                  subject_ids: list[str], channel_labels: list[str]) -> None:
    """Write plot-ready summary tables to a directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    K = summary.feature_median.shape[0]
    with open(out / "feature_means.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "t", "median", "lo", "hi"])
        for k in range(K):
            for g in range(summary.grid.size):
                writer.writerow([
                    k + 1, fmt(summary.grid[g]), fmt(summary.feature_median[k, g]),
                    fmt(summary.feature_lo[k, g]), fmt(summary.feature_hi[k, g]),
                ])
    for k in range(K):
        np.savetxt(out / f"cov_surface_feature{k + 1}.csv",
                   summary.cov_surfaces[k], delimiter=",", fmt="%.17g")
        vals = summary.eigenvalues[k]
        funcs = summary.eigenfunctions[k]
        with open(out / f"eigen_feature{k + 1}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"eigenfunction_{r + 1}" for r in range(funcs.shape[1])])
            writer.writerow(["eigenvalue"] + [fmt(v) for v in vals])
            for g in range(summary.grid.size):
                writer.writerow([fmt(summary.grid[g])] + [fmt(v) for v in funcs[g]])
    with open(out / "membership_subject.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject"] + [f"pi[k={k + 1}]" for k in range(K)])
        for i, sid in enumerate(subject_ids):
            writer.writerow([sid] + [fmt(v) for v in summary.membership_subject[i]])
    with open(out / "membership_channel.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", "channel"] + [f"z[k={k + 1}]" for k in range(K)])
        for i, sid in enumerate(subject_ids):
            for j, ch in enumerate(channel_labels):
                writer.writerow([sid, ch] + [fmt(v) for v in summary.membership_channel[i, j]])
    if summary.group_contrast is not None:
        gc = summary.group_contrast
        with open(out / "group_contrast.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["channel", "draw_then_subject", "subject_then_draw",
                             "group_a", "group_b", "feature"])
            for j, ch in enumerate(channel_labels):
                writer.writerow([
                    ch, fmt(gc["draw_then_subject"][j]), fmt(gc["subject_then_draw"][j]),
                    gc["groups"][0], gc["groups"][1], gc["feature"] + 1,
                ])


def write_ic_table(path: str | Path, ic: ICTable, elbow_choice: int | None,
                   elbow_message: str | None = None) -> None:
    """Write the information-criterion table plus the elbow selection."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["K", "loglik", "n_params", "aic", "bic", "mean_deviance"])
        for r in range(len(ic.K)):
            writer.writerow([
                ic.K[r], fmt(ic.loglik[r]), ic.n_params[r],
                fmt(ic.aic[r]), fmt(ic.bic[r]), fmt(ic.mean_deviance[r]),
            ])
    side = path.with_name(path.stem + "_selection.json")
    payload = {"elbow_K": elbow_choice}
    if elbow_message:
        payload["note"] = elbow_message
    aic_K = ic.K[int(np.argmin(ic.aic))]
    bic_K = ic.K[int(np.argmin(ic.bic))]
    payload["aic_K"] = aic_K
    payload["bic_K"] = bic_K
    with open(side, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
