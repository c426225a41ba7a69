"""HTTP facade over the pipeline.

Error contract: invalid configs, shapes, or inputs come back as 400 with
body {"kind": "config", "message": ...}; numerical failures (for example
a Cholesky breakdown inside weight rounding) come back as 500 with
{"kind": "numerical", "message": ...}.  Success bodies follow the
response models in schemas.py.
"""

from __future__ import annotations

import functools
from pathlib import Path

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from ..config import RunConfig
from ..errors import NumericalError
from ..judge import compare_score_files
from ..pipeline import SWEEP_FILE, run_calibrate, run_eval, run_quantize, run_sweep
from . import schemas


def _config_from(data: dict) -> RunConfig:
    return RunConfig.from_json_dict(data or {})


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NumericalError as exc:
            return JSONResponse(status_code=500,
                                content={"kind": "numerical", "message": str(exc)})
        except (ValueError, FileNotFoundError) as exc:
            # ConfigError and ShapeError are ValueError subclasses
            return JSONResponse(status_code=400,
                                content={"kind": "config", "message": str(exc)})
    return wrapper


def create_app() -> FastAPI:
    app = FastAPI(title="dirotq", version=__version__)

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/calibrate", response_model=schemas.CalibrateResponse,
              responses={400: {"model": schemas.ErrorBody}})
    @_guarded
    def calibrate(req: schemas.RunRequest):
        summary = run_calibrate(_config_from(req.config))
        return schemas.CalibrateResponse(**summary)

    @app.post("/quantize", response_model=schemas.QuantizeResponse,
              responses={400: {"model": schemas.ErrorBody},
                         500: {"model": schemas.ErrorBody}})
    @_guarded
    def quantize(req: schemas.RunRequest):
        summary = run_quantize(_config_from(req.config))
        return schemas.QuantizeResponse(**summary)

    @app.post("/eval", response_model=schemas.EvalResponse,
              responses={400: {"model": schemas.ErrorBody}})
    @_guarded
    def evaluate(req: schemas.RunRequest):
        return schemas.EvalResponse(**run_eval(_config_from(req.config)))

    @app.post("/sweep", response_model=schemas.SweepResponse,
              responses={400: {"model": schemas.ErrorBody}})
    @_guarded
    def sweep(req: schemas.SweepRequest):
        cfg = _config_from(req.config)
        rows = run_sweep(cfg, req.r_values)
        return schemas.SweepResponse(
            rows=[schemas.SweepRow(r=r, qsnr_db=db) for r, db in rows],
            path=str(Path(cfg.output_dir) / SWEEP_FILE))

    @app.post("/judge", response_model=schemas.JudgeResponse,
              responses={400: {"model": schemas.ErrorBody}})
    @_guarded
    def judge(req: schemas.JudgeRequest):
        result = compare_score_files(req.a_file, req.b_file, metric=req.metric,
                                     tie_eps=req.tie_eps, order=req.order)
        return schemas.JudgeResponse(**result.to_json_dict())

    return app
