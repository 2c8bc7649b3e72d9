"""HTTP service exposing the simulator.

Request bodies are the same ``SimulationConfig`` documents the CLI reads
from disk, so a config file can be POSTed unchanged.  Responses carry the
channel report plus every output file rendered as text; clients (the CLI
included) decide where to persist them.
"""

from __future__ import annotations

import json

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import __version__
from .config import SimulationConfig
from .errors import ThzrayError
from .simulation import run_simulation, sweep_array, sweep_gas


class SimulateResponse(BaseModel):
    report: dict
    files: dict[str, str]


class SweepResponse(BaseModel):
    files: dict[str, str]


class HealthResponse(BaseModel):
    status: str
    version: str


def handle_simulate(cfg: SimulationConfig) -> SimulateResponse:
    result = run_simulation(cfg)
    report = json.loads(result.files["channel_report.json"])
    return SimulateResponse(report=report, files=result.files)


def handle_sweep_gas(cfg: SimulationConfig) -> SweepResponse:
    return SweepResponse(files=sweep_gas(cfg))


def handle_sweep_array(cfg: SimulationConfig) -> SweepResponse:
    return SweepResponse(files=sweep_array(cfg))


app = FastAPI(title="thzray", version=__version__,
              description="Ray-traced indoor radio channels with THz "
                          "corrections and massive-MIMO capacity")


@app.exception_handler(ThzrayError)
async def _domain_error(_: Request, exc: ThzrayError):
    return JSONResponse(status_code=400, content={"detail": str(exc)})


@app.exception_handler(FileNotFoundError)
async def _missing_file(_: Request, exc: FileNotFoundError):
    return JSONResponse(status_code=400, content={"detail": str(exc)})


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


@app.post("/simulate", response_model=SimulateResponse)
def simulate(cfg: SimulationConfig) -> SimulateResponse:
    return handle_simulate(cfg)


@app.post("/sweep/gas", response_model=SweepResponse)
def gas(cfg: SimulationConfig) -> SweepResponse:
    return handle_sweep_gas(cfg)


@app.post("/sweep/array", response_model=SweepResponse)
def array(cfg: SimulationConfig) -> SweepResponse:
    return handle_sweep_array(cfg)
