"""Command-line harness for single runs and the two profiling sweeps."""

from __future__ import annotations

import math
import sys

import click

from .experiments import (
    RA_FOR_N_SWEEP,
    RA_TABLE,
    ExperimentConfig,
    run_n_sweep,
    run_ra_sweep,
    run_single,
)
from .fabric import default_fabric_config, load_fabric_config
from .reports import FORMATS, emit_report


def _parse_floats(text: str) -> tuple:
    values = []
    for part in text.split(","):
        part = part.strip().lower()
        if not part:
            continue
        values.append(math.inf if part in ("inf", "infinity") else float(part))
    return tuple(values)


def _parse_ints(text: str) -> tuple:
    return tuple(int(part) for part in text.split(",") if part.strip())


@click.command()
@click.option(
    "--mode",
    type=click.Choice(["single", "ra-sweep", "n-sweep"]),
    default="single",
    show_default=True,
    help="One run, the threshold sweep, or the particle-count sweep.",
)
@click.option(
    "--ra",
    "ra_text",
    default=None,
    help="Comma-separated switching thresholds; 'inf' keeps the direct "
    "solver for the whole run. Defaults: the seven-row table for "
    "ra-sweep, sqrt(0.3) otherwise.",
)
@click.option(
    "--n",
    "n_text",
    default="2048",
    show_default=True,
    help="Comma-separated star counts (split into two equal galaxies).",
)
@click.option("--seed", default=1, show_default=True, help="IC random seed.")
@click.option(
    "--fabric",
    "fabric_path",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Fabric topology JSON; defaults to the built-in two-site setup.",
)
@click.option("--t-end", default=20.0, show_default=True, help="Run length, N-body units.")
@click.option("--dt", default=1.0 / 64.0, show_default=True, help="Tree step and check interval.")
@click.option("--theta", default=0.7, show_default=True, help="Tree opening angle.")
@click.option("--eta", default=0.02, show_default=True, help="Direct-solver step parameter.")
@click.option("--softening", default=0.01, show_default=True, help="Plummer softening length.")
@click.option(
    "--timing",
    type=click.Choice(["modeled", "measured"]),
    default="modeled",
    show_default=True,
    help="'modeled' predicts solver seconds (byte-reproducible); "
    "'measured' books real kernel wall-clock.",
)
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False),
    default="nomadsim-out",
    show_default=True,
    help="Directory for the report and per-run event logs.",
)
@click.option(
    "--format",
    "fmt",
    type=click.Choice(list(FORMATS)),
    default="aligned-text",
    show_default=True,
)
def main(mode, ra_text, n_text, seed, fabric_path, t_end, dt, theta, eta,
         softening, timing, out_dir, fmt):
    """Run the self-migrating merger simulation on the simulated grid."""
    if ra_text is not None:
        ra_values = _parse_floats(ra_text)
    elif mode == "ra-sweep":
        ra_values = RA_TABLE
    else:
        ra_values = (RA_FOR_N_SWEEP,)
    fabric_config = (
        load_fabric_config(fabric_path) if fabric_path else default_fabric_config()
    )
    cfg = ExperimentConfig(
        mode=mode,
        r_a_values=ra_values,
        n_values=_parse_ints(n_text),
        seed=seed,
        fabric_config=fabric_config,
        t_end=t_end,
        tree_dt=dt,
        theta=theta,
        eta=eta,
        softening=softening,
        timing=timing,
        out_dir=out_dir,
    )
    runner = {"single": run_single, "ra-sweep": run_ra_sweep, "n-sweep": run_n_sweep}[mode]
    reports = runner(cfg)
    event_files = {rep.label: f"events-{rep.label}.jsonl" for rep in reports}
    path = emit_report(reports, fmt, out_dir, mode=mode, event_files=event_files)
    click.echo(path.read_text(), nl=False)
    click.echo(f"report written to {path}")
    if any(not rep.ok for rep in reports):
        sys.exit(1)


if __name__ == "__main__":
    main()
