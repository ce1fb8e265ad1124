"""Command-line entry point.

    stcos prepare --config run.toml     # supports and estimates -> model.npz
    stcos fit --config run.toml         # model.npz -> draws.npz, chain.csv, mle.json
    stcos report --config run.toml      # -> targets.csv, targets.geojson, run.json, ...
    stcos run --config run.toml         # all three
    stcos simulate --config run.toml    # synthetic estimates for the configured sources

Every artifact lives in `paths.output_dir` of the config. `--seed` overrides the
config seed.
"""

import hashlib
import json
import logging
import pathlib
import sys
import time
import typing as tp

import numpy as np
import tyro

import stcos.util
from stcos import cov, errors, geom, inference
from stcos.pipeline import assemble, ingest, simulate, summarize
from stcos.pipeline import config as pipeline_config

PREPARED_FILE = "model.npz"
DRAWS_FILE = "draws.npz"
MLE_FILE = "mle.json"
CHAIN_FILE = "chain.csv"
TARGETS_FILE = "targets.csv"
TARGETS_GEOJSON_FILE = "targets.geojson"
TARGETS_MLE_FILE = "targets_mle.csv"
SOURCES_FITTED_FILE = "sources_fitted.csv"
RUN_FILE = "run.json"
TIMINGS_FILE = "timings.json"
TRUTH_FILE = "truth.json"
GIBBS_RATE_KEY = "gibbs_iterations_per_second"
DRAW_FIELDS = (
    "mu_b_hist",
    "eta_hist",
    "sig2mu_hist",
    "sig2K_hist",
    "sig2xi_hist",
    "loglik",
    "xi_mean",
)


def _write_json(payload: dict[str, tp.Any], path: pathlib.Path) -> None:
    path.parent.mkdir(exist_ok=True, parents=True)
    with path.open("w") as f:
        json.dump(payload, f, indent=2, separators=(",", ": "))
    logging.info("Wrote %s", path)


class Timings:
    """Wall time per stage and sampler throughput, merged into any timings already on disk."""

    def __init__(self, output_dir: pathlib.Path):
        self.path = output_dir / TIMINGS_FILE
        self.entries: dict[str, float] = {}
        if self.path.exists():
            try:
                with self.path.open() as f:
                    self.entries = json.load(f)
            except json.JSONDecodeError:
                logging.warning("Discarding unreadable %s", self.path)

    def record(self, stage: str, start: float) -> None:
        self.entries[stage] = time.perf_counter() - start
        logging.info("Stage %s took %.2f s", stage, self.entries[stage])
        _write_json(self.entries, self.path)

    def record_rate(self, out: inference.GibbsOutput) -> None:
        self.entries[GIBBS_RATE_KEY] = out.iterations_per_second
        _write_json(self.entries, self.path)


def _sha256(path: pathlib.Path) -> str:
    return hashlib.sha256(pathlib.Path(path).read_bytes()).hexdigest()


def input_hashes(cfg: pipeline_config.PipelineConfig) -> dict[str, str]:
    """Content hashes of every input file, keyed by file name."""
    paths = [cfg.paths.fine, cfg.paths.target]
    for source in cfg.sources:
        paths += [source.geojson, source.estimates, source.census_est, source.census_moe]
    return {p.name: _sha256(p) for p in paths if p is not None}


def save_draws(out: inference.GibbsOutput, path: pathlib.Path) -> None:
    arrays = {name: getattr(out, name) for name in DRAW_FIELDS}
    if out.xi_hist is not None:
        arrays["xi_hist"] = out.xi_hist
    np.savez(
        path, elapsed=np.array(out.elapsed), iterations=np.array(out.iterations), **arrays
    )
    logging.info("Wrote %s", path)


def load_draws(path: pathlib.Path) -> inference.GibbsOutput:
    try:
        archive = np.load(path, allow_pickle=False)
    except FileNotFoundError as e:
        raise errors.ConfigError(f"{path} does not exist; run `fit` first") from e
    with archive:
        return inference.GibbsOutput(
            xi_hist=archive["xi_hist"] if "xi_hist" in archive.files else None,
            elapsed=float(archive["elapsed"]),
            iterations=int(archive["iterations"]),
            **{name: archive[name] for name in DRAW_FIELDS},
        )


def save_mle(result: inference.MleResult, path: pathlib.Path) -> None:
    _write_json(
        {
            "sig2K_hat": result.sig2K_hat,
            "sig2xi_hat": result.sig2xi_hat,
            "loglik": result.loglik,
            "converged": result.converged,
            "n_iter": result.n_iter,
            "mu_hat": result.mu_hat.tolist(),
        },
        path,
    )


def load_mle(path: pathlib.Path) -> inference.MleResult | None:
    if not path.exists():
        return None
    with path.open() as f:
        raw = json.load(f)
    raw["mu_hat"] = np.asarray(raw["mu_hat"], dtype=np.float64)
    return inference.MleResult(**raw)


def _load_config(config_path: pathlib.Path, seed: int | None) -> pipeline_config.PipelineConfig:
    cfg = pipeline_config.load_config(config_path).with_seed(seed)
    cfg.paths.output_dir.mkdir(parents=True, exist_ok=True)
    logging.info("Loaded %s with seed %d", config_path, cfg.seed)
    return cfg


def _read_fine(cfg: pipeline_config.PipelineConfig) -> geom.Domain:
    return geom.read_geojson(cfg.paths.fine, id_key=cfg.paths.id_key, label="fine")


def prepare_stage(cfg: pipeline_config.PipelineConfig) -> assemble.Assembled:
    fine = _read_fine(cfg)
    sources = [
        ingest.drop_missing(ingest.load_source(source, cfg.paths.id_key))
        for source in cfg.sources
    ]
    fine = assemble.filter_fine_support(fine, sources, cfg.model.min_overlap_m2)
    knots = assemble.place_knots(fine, cfg)
    prepared = assemble.assemble(fine, sources, knots, cfg, show_progress=True)
    prepared.save(cfg.paths.output_dir / PREPARED_FILE)
    return prepared


def fit_stage(
    cfg: pipeline_config.PipelineConfig, prepared: assemble.Assembled
) -> tuple[inference.GibbsOutput, inference.MleResult | None]:
    output_dir = cfg.paths.output_dir
    mle = None
    if cfg.model.mle or cfg.gibbs.init_from_mle:
        mle = inference.mle_stcos(prepared.data)
        save_mle(mle, output_dir / MLE_FILE)
    init = inference.GibbsInit.from_mle(mle) if cfg.gibbs.init_from_mle else None

    chains = []
    for chain in range(cfg.model.chains):
        logging.info("Chain %d of %d", chain + 1, cfg.model.chains)
        seed = stcos.util.seeded_int(cfg.seed, assemble.Stream.gibbs, chain)
        chains.append(
            inference.gibbs_stcos(prepared.data, cfg.hyper, cfg.gibbs.sampler_config(seed, init))
        )
    out = chains[0] if len(chains) == 1 else inference.GibbsOutput.concatenate(chains)
    logging.info("Variance components:\n%s", out.summary().to_string())

    save_draws(out, output_dir / DRAWS_FILE)
    chain_table = out.variances()
    chain_table["loglik"] = out.loglik
    chain_table.to_csv(output_dir / CHAIN_FILE, index_label="draw")
    logging.info("Wrote %s", output_dir / CHAIN_FILE)
    return out, mle


def report_stage(
    cfg: pipeline_config.PipelineConfig,
    prepared: assemble.Assembled,
    out: inference.GibbsOutput,
    mle: inference.MleResult | None,
) -> summarize.TargetSummary:
    output_dir = cfg.paths.output_dir
    fine = prepared.fine_support(_read_fine(cfg))
    targets = geom.read_geojson(cfg.paths.target, id_key=cfg.paths.id_key, label="target")
    period = cfg.target_period
    logging.info("Summarizing %d targets over %s", len(targets), list(period.years))
    design = summarize.target_design(
        targets,
        fine,
        prepared.knots,
        prepared.projection,
        period,
        cfg.basis_config(show_progress=True),
        stcos.util.seeded_rng(cfg.seed, assemble.Stream.targets),
    )
    summary = summarize.summarize_design(out, design, prepared.standardizer, cfg.model.alpha)
    summary.to_csv(output_dir / TARGETS_FILE)
    geom.write_geojson(
        targets,
        output_dir / TARGETS_GEOJSON_FILE,
        summarize.merge_properties(summary),
        id_key=cfg.paths.id_key,
    )
    sources = summarize.summarize_sources(out, prepared, cfg.model.alpha)
    sources.to_csv(output_dir / SOURCES_FITTED_FILE, index=False)
    logging.info("Wrote %s", output_dir / SOURCES_FITTED_FILE)
    if mle is not None:
        summarize.summarize_mle(mle, design, prepared.standardizer).to_csv(
            output_dir / TARGETS_MLE_FILE
        )
        logging.info("Wrote %s", output_dir / TARGETS_MLE_FILE)

    variance_summary = out.summary()
    _write_json(
        {
            "seed": cfg.seed,
            "config": pipeline_config.echo(cfg),
            "inputs": input_hashes(cfg),
            "N": prepared.data.n,
            "n_B": prepared.data.n_b,
            "r": prepared.data.r,
            "r_full": prepared.projection.r_full,
            "pca_explained": prepared.projection.explained,
            "K_structure": str(prepared.structure),
            "target_years": list(period.years),
            "n_saved": out.n_saved,
            "dic": inference.dic(out, prepared.data),
            "variance_components": {
                name: {column: float(value) for column, value in row.items()}
                for name, row in variance_summary.iterrows()
            },
            "mle": None
            if mle is None
            else {
                "sig2K_hat": mle.sig2K_hat,
                "sig2xi_hat": mle.sig2xi_hat,
                "loglik": mle.loglik,
                "converged": mle.converged,
            },
        },
        output_dir / RUN_FILE,
    )
    return summary


def simulate_stage(cfg: pipeline_config.PipelineConfig) -> simulate.SimulationRecord:
    """Overwrites the estimate files of the configured sources with simulated estimates."""
    if any(source.format != pipeline_config.EstimateFormat.csv for source in cfg.sources):
        raise errors.ConfigError("simulate writes CSV estimates; every source needs `estimates`")
    sim = cfg.simulate
    rng = stcos.util.seeded_rng(cfg.seed, assemble.Stream.simulate)
    fine = _read_fine(cfg)
    layout = [
        simulate.SourceLayout(
            source.name,
            geom.read_geojson(source.geojson, id_key=cfg.paths.id_key, label=source.name),
            source.period,
        )
        for source in cfg.sources
    ]
    knots = assemble.place_knots(fine, cfg)
    truth = simulate.Truth(
        mu_b=sim.mu_level + sim.mu_sd * rng.standard_normal(len(fine)),
        sig2K=sim.sig2K,
        sig2xi=sim.sig2xi,
    )
    sources, record = simulate.simulate(
        fine,
        truth,
        knots,
        layout,
        rng,
        direct_sd=sim.direct_sd,
        k=cov.identity_k(knots.r),
        basis_cfg=cfg.basis_config(show_progress=True),
    )
    by_path: dict[pathlib.Path, list[ingest.SourceSupport]] = {}
    for source_cfg, source in zip(cfg.sources, sources):
        by_path.setdefault(source_cfg.estimates, []).append(source)
    for path, group in by_path.items():
        simulate.write_estimates(group, path)
    record.to_json(cfg.paths.output_dir / TRUTH_FILE)
    return record


def simulate_command(config: pathlib.Path, seed: int | None = None) -> None:
    """Simulate direct estimates for the configured sources from known parameters."""
    cfg = _load_config(config, seed)
    timings = Timings(cfg.paths.output_dir)
    start = time.perf_counter()
    simulate_stage(cfg)
    timings.record("simulate", start)


def prepare_command(config: pathlib.Path, seed: int | None = None) -> None:
    """Read supports and estimates; build H, the reduced basis and K."""
    cfg = _load_config(config, seed)
    timings = Timings(cfg.paths.output_dir)
    start = time.perf_counter()
    prepare_stage(cfg)
    timings.record("prepare", start)


def fit_command(config: pathlib.Path, seed: int | None = None) -> None:
    """Run the Gibbs sampler (and the MLE) on a prepared model."""
    cfg = _load_config(config, seed)
    timings = Timings(cfg.paths.output_dir)
    prepared = assemble.Assembled.load(cfg.paths.output_dir / PREPARED_FILE)
    start = time.perf_counter()
    out, _ = fit_stage(cfg, prepared)
    timings.record("fit", start)
    timings.record_rate(out)


def report_command(config: pathlib.Path, seed: int | None = None) -> None:
    """Summarize the fit on the target support."""
    cfg = _load_config(config, seed)
    timings = Timings(cfg.paths.output_dir)
    output_dir = cfg.paths.output_dir
    prepared = assemble.Assembled.load(output_dir / PREPARED_FILE)
    out = load_draws(output_dir / DRAWS_FILE)
    start = time.perf_counter()
    report_stage(cfg, prepared, out, load_mle(output_dir / MLE_FILE) if cfg.model.mle else None)
    timings.record("report", start)


def run_command(config: pathlib.Path, seed: int | None = None) -> None:
    """prepare, fit and report in one go."""
    cfg = _load_config(config, seed)
    timings = Timings(cfg.paths.output_dir)
    start = time.perf_counter()
    prepared = prepare_stage(cfg)
    timings.record("prepare", start)
    start = time.perf_counter()
    out, mle = fit_stage(cfg, prepared)
    timings.record("fit", start)
    timings.record_rate(out)
    start = time.perf_counter()
    report_stage(cfg, prepared, out, mle if cfg.model.mle else None)
    timings.record("report", start)


COMMANDS = {
    "simulate": simulate_command,
    "prepare": prepare_command,
    "fit": fit_command,
    "report": report_command,
    "run": run_command,
}


def main(args: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(message)s")
    try:
        tyro.extras.subcommand_cli_from_dict(COMMANDS, args=args)
    except errors.StcosError as e:
        logging.error("error=%s message=%s", type(e).__name__, e)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
