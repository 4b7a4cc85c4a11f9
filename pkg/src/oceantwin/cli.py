"""Command line interface: scenario runs and the live basestation server."""

from __future__ import annotations

import sys
from dataclasses import replace
from pathlib import Path

import click

from .mission import MissionConfig, default_mission_path, packaged_shadow_path
from .scenarios import SCENARIOS


def _load_config(config_path, seed, duration, mode) -> MissionConfig:
    if config_path:
        config = MissionConfig.from_toml(config_path)
    else:
        config = MissionConfig.default()
    if seed is not None:
        config = replace(config, seed=seed, channel=replace(config.channel, seed=seed))
    if duration is not None:
        config = replace(config, duration=duration)
    if mode is not None:
        config = replace(config, mode=mode)
    return config


@click.group()
def main():
    """Digital-twin mission simulator for an underwater observation network."""


@main.command()
@click.option("--scenario", type=click.Choice(sorted(SCENARIOS)), required=True,
              help="Which field-experiment scenario to execute.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help=f"Mission TOML (default: packaged {default_mission_path().name}).")
@click.option("--seed", type=int, default=None, help="Override the mission seed.")
@click.option("--duration", type=float, default=None, help="Override run duration [s].")
@click.option("--mode", type=click.Choice(["virtual", "realtime"]), default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Directory for report.json/.txt, log, trace, CSV, and figures.")
@click.option("--figures/--no-figures", default=True, show_default=True)
def run(scenario, config_path, seed, duration, mode, out_dir, figures):
    """Run one scenario; exit code 0 iff all assertions pass."""
    config = _load_config(config_path, seed, duration, mode)
    report = SCENARIOS[scenario](config, out_dir=out_dir, figures=figures and out_dir is not None)
    click.echo(report.to_text(), nl=False)
    if out_dir:
        click.echo(f"artifacts written to {out_dir}/")
    sys.exit(0 if report.passed else 1)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--console-dir", type=click.Path(exists=True), default=None,
              help="Built console assets to serve (default: ./frontend/dist if present).")
@click.option("--mansio-cap/--no-mansio-cap", default=False, show_default=True,
              help="Run MANSIO on the synthesized protective-cap recording.")
def serve(config_path, seed, host, port, console_dir, mansio_cap):
    """Run the mission in realtime and serve the basestation API + console."""
    import uvicorn

    from .api import BasestationService, RealtimeRunner, RunnerExecutor, create_app
    from .mission import MissionRuntime

    config = _load_config(config_path, seed, None, "realtime")
    if mansio_cap:
        platforms = [
            replace(p, shadow_recording=str(packaged_shadow_path()), shadow_loop=True)
            if p.name == "MANSIO" else p
            for p in config.platforms
        ]
        config = replace(config, platforms=platforms)
    runtime = MissionRuntime(config)
    runner = RealtimeRunner(runtime).start()
    service = BasestationService(runtime, RunnerExecutor(runner))

    if console_dir is None:
        candidate = Path("frontend/dist")
        console_dir = str(candidate) if candidate.is_dir() else None
    app = create_app(service, console_dir=console_dir)
    if console_dir:
        click.echo(f"console: http://{host}:{port}/console/")
    click.echo(f"API: http://{host}:{port}/twins")
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        runner.stop()


if __name__ == "__main__":
    main()
