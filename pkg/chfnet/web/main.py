from __future__ import annotations

import logging
from dataclasses import replace
from functools import lru_cache
from pathlib import Path
from typing import Optional

from fastapi import Depends, FastAPI, HTTPException, Query, Request
from fastapi.responses import HTMLResponse
from fastapi.templating import Jinja2Templates

from chfnet.config import Settings, get_settings
from chfnet.data.lut import REFERENCE_DIAMETER_MM, LutGrid, QueryPoint, correct_diameter, load_lut, lookup
from chfnet.errors import ChfError, ValidationError
from chfnet.services.experiment import compare_variants, load_run_report
from chfnet.services.predictor import Predictor

logger = logging.getLogger(__name__)

app = FastAPI(title="CHF surrogate")

templates = Jinja2Templates(directory=str(Path(__file__).parent / "templates"))


@lru_cache()
def _get_settings() -> Settings:
    return get_settings()


@lru_cache()
def get_lut() -> LutGrid:
    return load_lut(_get_settings().lut_path, require_full_coverage=False)


@lru_cache()
def _load_predictor(path: str) -> Predictor:
    return Predictor.load(Path(path))


def get_optional_predictor() -> Optional[Predictor]:
    path = _get_settings().served_model_path
    if not path.exists():
        logger.warning("No trained model at %s; serving LUT values only", path)
        return None
    return _load_predictor(str(path))


@app.get("/health")
async def health(predictor: Optional[Predictor] = Depends(get_optional_predictor)) -> dict:
    return {"status": "ok", "model": predictor.variant if predictor else None}


@app.get("/predict")
async def predict(
    p: float = Query(..., description="Pressure [MPa]"),
    g: float = Query(..., description="Mass flux [kg/m2s]"),
    x: float = Query(..., description="Thermodynamic quality [-]"),
    d: float = Query(8.0, gt=0, description="Tube diameter [mm]"),
    grid: LutGrid = Depends(get_lut),
    predictor: Optional[Predictor] = Depends(get_optional_predictor),
) -> dict:
    try:
        query = QueryPoint(pressure=p, mass_flux=g, quality=x, diameter=d)
        lut_8mm = lookup(grid, replace(query, diameter=REFERENCE_DIAMETER_MM))
        lut_chf = lookup(grid, query)
    except ValidationError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    payload = {
        "query": {"pressure_mpa": p, "mass_flux_kg_m2s": g, "quality": x, "diameter_mm": d},
        "lut": {"chf_8mm": lut_8mm, "chf": lut_chf},
        "model": None,
    }
    if predictor is not None:
        model_chf = predictor.predict_one(p, g, x)
        payload["model"] = {
            "variant": predictor.variant,
            "chf_8mm": model_chf,
            "chf": correct_diameter(max(model_chf, 0.0), d),
        }
    return payload


@app.get("/", response_class=HTMLResponse)
async def report(request: Request) -> HTMLResponse:
    output_dir = _get_settings().output_dir
    context = {"request": request, "output_dir": str(output_dir), "table": None, "ranking": None, "error": None}
    try:
        run = load_run_report(output_dir)
        context["table"] = run.table()
        if len(run.variants) >= 2:
            context["ranking"] = compare_variants(run).render()
    except ChfError as exc:
        context["error"] = str(exc)
    return templates.TemplateResponse(request, "report.html", context)
