"""Command-line entry point: simulate, fit, summarize, select-k, validate.

Every command takes --config pointing at one INI file (see print-config for
all defaults); numeric outputs are deterministic given the configured seed.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, default_config_text, load_config
from .io import (
    load_chain,
    load_long_table,
    save_chain,
    save_truth,
    write_ic_table,
    write_long_table,
    write_summary,
)
from .model import ModelDims
from .posterior import elbow_select, information_criteria, summarize
from .sampler import ChainOutput, SamplerError, run_chain
from .simulate import default_truth, simulate_dataset
from .validate import run_fast_suite


def _chain_dirs(output_dir: str | Path) -> list[Path]:
    return sorted(Path(output_dir).glob("chain*"))


def cmd_simulate(cfg: RunConfig, seed: int | None = None) -> int:
    """Generate a synthetic dataset plus its ground truth per the config."""
    basis = cfg.basis()
    dims = ModelDims(
        N=cfg.sim_n_subjects, J=cfg.sim_n_channels, K=cfg.K, M=cfg.M, P=basis.P,
        n=(cfg.sim_n_points,) * cfg.sim_n_subjects,
    )
    truth = default_truth(dims, basis, eta=cfg.sim_eta, sigma2=cfg.sim_sigma2,
                          seed=cfg.sim_truth_seed)
    use_seed = cfg.sampler.seed if seed is None else seed
    data, truth = simulate_dataset(dims, truth, seed=use_seed, prior_cfg=cfg.prior)
    write_long_table(cfg.data_path, data)
    save_truth(cfg.truth_path, truth)
    print(f"wrote {cfg.data_path} ({dims.N} subjects x {dims.J} channels x "
          f"{cfg.sim_n_points} points) and {cfg.truth_path}")
    return 0


def cmd_fit(cfg: RunConfig, seed: int | None = None, chains: int = 1) -> int:
    """Fit the model by MCMC; one output directory per chain."""
    if cfg.K == 1:
        print("warning: K = 1 makes mixed membership vacuous; "
              "fitting a single-feature model", file=sys.stderr)
    data = load_long_table(cfg.data_path)
    basis = cfg.basis()
    base_seed = cfg.sampler.seed if seed is None else seed
    out_root = Path(cfg.output_dir)
    for c in range(chains):
        sampler_cfg = replace(cfg.sampler, seed=base_seed + c)
        chain = run_chain(data, basis, cfg.prior, sampler_cfg, K=cfg.K, M=cfg.M)
        chain_dir = out_root / f"chain{c + 1:02d}"
        save_chain(chain_dir, chain)
        rates = ", ".join(f"{k}={v:.3f}" for k, v in sorted(chain.accept_rates.items()))
        print(f"chain {c + 1}: {len(chain.draws)} draws -> {chain_dir} ({rates})")
    return 0


def _load_all_chains(cfg: RunConfig) -> list[ChainOutput]:
    dirs = _chain_dirs(cfg.output_dir)
    if not dirs:
        raise FileNotFoundError(f"no chain directories under {cfg.output_dir!r}; run fit first")
    return [load_chain(d) for d in dirs]


def cmd_summarize(cfg: RunConfig) -> int:
    """Summarize fitted chains into plot-ready tables."""
    data = load_long_table(cfg.data_path)
    basis = cfg.basis()
    chains = _load_all_chains(cfg)
    merged = chains[0]
    for extra in chains[1:]:
        if extra.data_hash != merged.data_hash:
            raise ValueError("chains in the output directory were fitted on different data")
        merged.draws.extend(extra.draws)
    grid = np.linspace(*cfg.domain, cfg.summary_points)
    labels = data.groups
    if labels is not None and len({g for g in labels if g is not None}) != 2:
        labels = None
    summary = summarize(merged, basis, grid, labels=labels,
                        contrast_feature=min(1, cfg.K - 1))
    out = Path(cfg.output_dir) / "summary"
    write_summary(out, summary, data.subject_ids, data.channel_labels)
    print(f"wrote summary tables to {out}")
    return 0


def cmd_select_k(cfg: RunConfig, k_list: list[int], seed: int | None = None) -> int:
    """Fit each candidate K on the configured data and tabulate AIC/BIC/elbow."""
    data = load_long_table(cfg.data_path)
    basis = cfg.basis()
    base_seed = cfg.sampler.seed if seed is None else seed
    chains = []
    for K in k_list:
        sampler_cfg = replace(cfg.sampler, seed=base_seed)
        chain = run_chain(data, basis, cfg.prior, sampler_cfg, K=K, M=cfg.M)
        chains.append(chain)
        print(f"fitted K={K}: {len(chain.draws)} draws")
    ic = information_criteria(data, basis, chains)
    choice = None
    message = None
    if len(k_list) >= 3:
        choice = elbow_select(ic)
    else:
        message = "elbow selection needs at least 3 candidate K values"
        print(message, file=sys.stderr)
    path = Path(cfg.output_dir) / "ic_table.csv"
    write_ic_table(path, ic, choice, message)
    for r in range(len(ic.K)):
        print(f"K={ic.K[r]}: loglik={ic.loglik[r]:.3f} p={ic.n_params[r]} "
              f"aic={ic.aic[r]:.3f} bic={ic.bic[r]:.3f} dev={ic.mean_deviance[r]:.3f}")
    if choice is not None:
        print(f"elbow choice: K={choice}")
    return 0


def cmd_validate(cfg: RunConfig, seed: int | None = None) -> int:
    """Run the fast oracle suite; nonzero exit if any check fails."""
    use_seed = cfg.sampler.seed if seed is None else seed
    results = run_fast_suite(seed=use_seed)
    all_ok = True
    for res in results:
        tag = "PASS" if res.passed else "FAIL"
        print(f"[{tag}] {res.name}: {res.detail}")
        all_ok &= res.passed
    return 0 if all_ok else 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="funmix",
        description="Multilevel functional mixed-membership model: "
                    "simulate, fit, summarize, select-k, validate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, needs_config=True):
        p = sub.add_parser(name, help=help_text)
        if needs_config:
            p.add_argument("--config", required=True, help="path to the INI config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        return p

    add("simulate", "generate synthetic data with ground truth")
    fit = add("fit", "run MCMC on the configured dataset")
    fit.add_argument("--chains", type=int, default=1, help="number of chains (seeds seed+c)")
    add("summarize", "summarize fitted chains into tables")
    sel = add("select-k", "fit candidate K values and tabulate information criteria")
    sel.add_argument("--k-list", required=True,
                     help="comma-separated candidate K values, e.g. 1,2,3,4")
    add("validate", "run the fast correctness suite")
    sub.add_parser("print-config", help="print the default config file")

    args = parser.parse_args(argv)
    if args.command == "print-config":
        print(default_config_text())
        return 0
    try:
        cfg = load_config(args.config)
        if args.command == "simulate":
            return cmd_simulate(cfg, seed=args.seed)
        if args.command == "fit":
            return cmd_fit(cfg, seed=args.seed, chains=args.chains)
        if args.command == "summarize":
            return cmd_summarize(cfg)
        if args.command == "select-k":
            k_list = [int(v) for v in args.k_list.split(",") if v.strip()]
            if not k_list:
                raise ConfigError("--k-list must contain at least one K")
            return cmd_select_k(cfg, k_list, seed=args.seed)
        if args.command == "validate":
            return cmd_validate(cfg, seed=args.seed)
    except (ConfigError, FileNotFoundError, ValueError, SamplerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
