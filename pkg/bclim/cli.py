import dataclasses
import os
from contextlib import contextmanager
from pathlib import Path
from typing import IO, Iterator

import click
import pandas as pd

import bclim
from bclim import engine, icecore, logger, mixtures, posterior, validate
from bclim.logger import log
from bclim.model import (
    ChainWriter,
    ChronologySet,
    MDPSampleSet,
    RunConfig,
    SeriesData,
    read_chain,
)


def _config_keys() -> str:
    lines = ["Config keys (key=value lines in --config, or --set key=value):", ""]
    for f in dataclasses.fields(RunConfig):
        lines.append(f"  {f.name} = {f.default!r}")
    return "\b\n" + "\n".join(lines)


@contextmanager
def output(path: str | Path) -> Iterator[IO]:
    """Write to `path.partial` and rename on success; a failed stage leaves
    the partial file behind."""
    path = Path(path)
    partial = path.with_name(path.name + ".partial")
    with open(partial, "w", newline="", encoding="utf-8") as fp:
        yield fp
    os.replace(partial, path)
    log.info(f"wrote {path}")


@contextmanager
def stage(name: str):
    """Run a pipeline stage, turning its failures into a clean exit code."""
    with log.contextualize(process=name):
        try:
            yield
        except (ValueError, OSError, AssertionError) as e:
            log.error(f"{name} failed: {e}")
            raise click.ClickException(str(e)) from e


def required(config: RunConfig, key: str) -> str:
    value = getattr(config, key)
    if value is None:
        raise ValueError(f"config key `{key}` is required for this stage")
    return value


def read_chronologies(config: RunConfig) -> ChronologySet:
    chronologies = ChronologySet.read(Path(required(config, "chronologies")))
    match config.chronology_mode:
        case "sample":
            return chronologies
        case "mean":
            log.info(f"ages fixed at the mean of {chronologies.R} chronologies")
            return chronologies.mean()
        case mode:
            raise ValueError(f"chronology_mode should be 'sample' or 'mean', got {mode!r}")


def write_frame(path, frame: pd.DataFrame, header: str):
    with output(path) as fp:
        print(header, file=fp)
        frame.to_csv(fp, index=False, lineterminator="\n")


@click.group(epilog=_config_keys())
@click.option(
    "-v",
    "--verbose",
    count=True,
    help="sets the verbosity of the program, more means more information",
)
@click.option(
    "--config",
    "config_file",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="a file of key=value lines, one config key each.",
)
@click.option("--seed", type=int, help="the master seed of every random stream.")
@click.option("--threads", type=int, help="worker processes for EM, interpolation and validation.")
@click.option(
    "--set",
    "assignments",
    multiple=True,
    metavar="KEY=VALUE",
    help="override one config key; may be repeated.",
)
@click.pass_context
def cli(ctx, verbose, config_file, seed, threads, assignments):
    """Bayesian reconstruction of latent climate series from marginal data
    posteriors under a Normal-Inverse-Gaussian process prior."""
    logger.initialize(verbose)
    try:
        config = RunConfig.from_file(config_file) if config_file else RunConfig()
        for a in assignments:
            config = config.assign(a)
        if seed is not None:
            config = config.update({"seed": seed})
        if threads is not None:
            config = config.update({"threads": threads})
    except (ValueError, TypeError) as e:
        raise click.BadParameter(str(e)) from e
    log.debug(f"config {config.digest()}: {config}")
    ctx.obj = config


@cli.command("fit-mix")
@click.pass_obj
def fit_mix(config: RunConfig):
    """Approximate every layer's MDP samples by a Gaussian mixture."""
    with stage("fit-mix"):
        seed = config.require_seed()
        samples = MDPSampleSet.read(Path(required(config, "mdp_samples")))
        log.info(f"fitting {samples.n_layers} layers, m={samples.m}, G={config.G}")
        em = mixtures.EMConfig(config.restarts, config.tol, config.max_em_iter, config.min_weight)
        layers = mixtures.fit_layers(samples, config.G, em, seed, config.threads)
        with output(config.mixture_out) as fp:
            mixtures.write_mixtures(fp, layers)
        log.info(f"mixtures from {config.header()[2:]}")
        log.success(f"fitted {len(layers)} layers")


@cli.command()
@click.pass_obj
def run(config: RunConfig):
    """Sample volatilities, indicators and chronologies."""
    with stage("run"):
        table = mixtures.MixtureTable.from_layers(mixtures.read_mixtures(Path(config.mixture_out)))
        chronologies = read_chronologies(config)
        settings = engine.EngineConfig.from_run_config(config, table.m)
        state = engine.init_state(table, chronologies, settings)
        log.info(
            f"n={table.n} m={table.m} G={table.G} R={chronologies.R}, "
            f"{settings.iters} iterations keeping {settings.mcmc.retained}"
        )
        with output(config.chain_out) as fp:
            write = ChainWriter(fp, table.n, table.m, config.header())
            for record in engine.iterate(state, settings):
                write(record)
        log.success(f"done: {state.acceptance}")


@cli.command()
@click.pass_obj
def interp(config: RunConfig):
    """Draw climates for the retained states and bridge them onto the grid."""
    with stage("interp"):
        seed = config.require_seed()
        table = mixtures.MixtureTable.from_layers(mixtures.read_mixtures(Path(config.mixture_out)))
        chronologies = read_chronologies(config)
        records = read_chain(Path(config.chain_out))
        grid = posterior.GridSpec(config.grid_start, config.grid_end, config.grid_step)
        draws = posterior.draw_climates(records, table, seed)
        result = posterior.interpolate(
            draws, chronologies, grid, seed, config.threads, config.evolution
        )
        write_frame(config.grid_out, result.frame(), config.header())
        write_frame(config.summary_out, posterior.summarize(result), config.header())
        log.success(f"interpolated {len(records)} states onto {len(result.points)} grid points")


@cli.command("icecore")
@click.pass_obj
def icecore_(config: RunConfig):
    """Gibbs sampling for a directly observed series."""
    with stage("icecore"):
        seed = config.require_seed()
        data = SeriesData.read(Path(required(config, "series")), config.standardize)
        mcmc = icecore.settings_from_config(config)
        rng = bclim.rng(seed, 5)
        states = icecore.run_icecore(
            data, icecore.IceHyper.from_config(config), mcmc, rng, psi_form=config.psi_form
        )
        write_frame(config.icecore_out, icecore.chain_frame(states, mcmc), config.header())
        if config.icecore_grid_out:
            grid = posterior.GridSpec(config.grid_start, config.grid_end, config.grid_step)
            write_frame(
                config.icecore_grid_out,
                icecore.volatility_grid(states, data, grid, bclim.rng(seed, 5, 1)),
                config.header(),
            )
        summary = icecore.summarize(states)
        for row in summary.itertuples():
            log.info(f"{row.param}: mean {row.mean:.4g} sd {row.sd:.4g}")
        log.success(f"{len(states)} states from n={data.n} observations")


@cli.command("validate")
@click.pass_obj
def validate_(config: RunConfig):
    """Coverage of the climate posterior on simulated scenarios."""
    with stage("validate"):
        seed = config.require_seed()
        scenarios = [validate.scenario(s) for s in config.scenario.split(",")]
        settings = validate.ValidationConfig.from_run_config(config)
        reports = []
        for sc in scenarios:
            log.info(f"scenario {sc.id}: {config.replicates} replicates")
            report = validate.coverage_report(sc, config.replicates, settings, seed, config.threads)
            if report.failed:
                log.warning(f"scenario {sc.id}: replicates {list(report.failed)} failed")
            log.info(f"scenario {sc.id}: 90% coverage {report.cov90:.3f}, 50% coverage {report.cov50:.3f}")
            reports.append(report)
        with output(config.report_out) as fp:
            validate.CoverageReport.write(fp, reports, config.header())
        log.success(f"validated {len(reports)} scenarios")


@cli.command()
@click.pass_obj
def simulate(config: RunConfig):
    """Write a synthetic MDP-sample file and chronology file."""
    with stage("simulate"):
        seed = config.require_seed()
        sc = validate.scenario(config.scenario)
        samples, chronologies = validate.simulate_fixture(
            sc,
            bclim.rng(seed, 7),
            config.fixture_chronologies,
            span=config.grid_end - config.grid_start,
            samples=config.importance_samples,
            delta_reading=config.delta_reading,
        )
        with output(required(config, "mdp_samples")) as fp:
            samples.write(fp, config.header())
        with output(required(config, "chronologies")) as fp:
            chronologies.write(fp, config.header())
        log.success(f"simulated scenario {sc.id}: n={samples.n_layers}, R={chronologies.R}")


@cli.command("all")
@click.pass_context
def all_(ctx):
    """fit-mix, run and interp in sequence."""
    ctx.invoke(fit_mix)
    ctx.invoke(run)
    ctx.invoke(interp)
