"""Command-line client for the simulator.

By default each command dispatches in process through the same handlers
the HTTP service exposes; pass ``--server URL`` to send the request to a
running instance instead.  Exit codes: 0 success, 1 runtime failure,
2 invalid configuration.
"""

from __future__ import annotations

import json
import sys

import click
import pydantic

from .config import SimulationConfig, load_config
from .errors import FrequencyRangeError, SceneFormatError, SceneValidationError
from .simulation import write_outputs

_CONFIG_ERRORS = (pydantic.ValidationError, SceneFormatError,
                  SceneValidationError, FrequencyRangeError,
                  json.JSONDecodeError, FileNotFoundError)  # -> exit code 2


def _load(config_path: str, **overrides) -> SimulationConfig:
    cfg = load_config(config_path)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return cfg.model_copy(update=overrides) if overrides else cfg


class _RemoteConfigError(Exception):
    pass


def _remote(server: str, endpoint: str, cfg: SimulationConfig) -> dict:
    import httpx

    resp = httpx.post(server.rstrip("/") + endpoint,
                      json=cfg.model_dump(), timeout=3600.0)
    if resp.status_code in (400, 422):
        raise _RemoteConfigError(resp.text)
    resp.raise_for_status()
    return resp.json()


def _finish(files: dict[str, str], out_dir: str) -> None:
    written = write_outputs(files, out_dir)
    for path in written:
        click.echo(path)


def _run(command):
    try:
        command()
    except (*_CONFIG_ERRORS, _RemoteConfigError) as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(2)
    except Exception as exc:  # noqa: BLE001 - map everything else to exit 1
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


@click.group()
def main():
    """Ray-traced radio channels: simulate, sweep, serve."""


@main.command()
@click.argument("config_path", type=click.Path())
@click.option("--out", "out_dir", default=None, help="Output directory.")
@click.option("--workers", type=int, default=None, help="Worker process count.")
@click.option("--dump-paths", is_flag=True, default=None,
              help="Also write paths.jsonl.")
@click.option("--server", default=None, help="POST to a running service instead.")
def simulate(config_path, out_dir, workers, dump_paths, server):
    """Run one simulation from a JSON config."""

    def command():
        cfg = _load(config_path, workers=workers, dump_paths=dump_paths)
        if server:
            payload = _remote(server, "/simulate", cfg)
        else:
            from .service import handle_simulate

            payload = handle_simulate(cfg).model_dump()
        _finish(payload["files"], out_dir or cfg.output_dir)

    _run(command)


@main.command("sweep-gas")
@click.argument("config_path", type=click.Path())
@click.option("--out", "out_dir", default=None, help="Output directory.")
@click.option("--server", default=None, help="POST to a running service instead.")
def sweep_gas_cmd(config_path, out_dir, server):
    """Tabulate gas attenuation and dispersion over the configured band."""

    def command():
        cfg = _load(config_path)
        if server:
            payload = _remote(server, "/sweep/gas", cfg)
        else:
            from .service import handle_sweep_gas

            payload = handle_sweep_gas(cfg).model_dump()
        _finish(payload["files"], out_dir or cfg.output_dir)

    _run(command)


@main.command("sweep-array")
@click.argument("config_path", type=click.Path())
@click.option("--out", "out_dir", default=None, help="Output directory.")
@click.option("--workers", type=int, default=None, help="Worker process count.")
@click.option("--server", default=None, help="POST to a running service instead.")
def sweep_array_cmd(config_path, out_dir, workers, server):
    """Capacity and per-port power across MIMO array sizes."""

    def command():
        cfg = _load(config_path, workers=workers)
        if server:
            payload = _remote(server, "/sweep/array", cfg)
        else:
            from .service import handle_sweep_array

            payload = handle_sweep_array(cfg).model_dump()
        _finish(payload["files"], out_dir or cfg.output_dir)

    _run(command)


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
