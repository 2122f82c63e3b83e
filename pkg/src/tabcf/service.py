"""Local HTTP inference service.

One loaded model bundle, shared read-only: GET /healthz and /schema, POST
/predict (full prediction + local linear explanation + all alternative-class
counterfactuals) and POST /counterfactual (a single targeted what-if). All
bodies are snake_case JSON; errors are ``{code, message, field?}``. The
service never trains; it only reads .hcx bundles.
"""

from __future__ import annotations

import math

import numpy as np
from fastapi import Body, FastAPI
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import counterfact
from .persist import hash_model
from .training import ModelBundle


class ServiceError(Exception):
    def __init__(self, status: int, message: str, field: str | None = None):
        super().__init__(message)
        self.status = status
        self.message = message
        self.field = field


def _error_body(status: int, message: str, field: str | None = None) -> JSONResponse:
    body: dict = {"code": status, "message": message}
    if field is not None:
        body["field"] = field
    return JSONResponse(body, status_code=status)


def _validate_features(bundle: ModelBundle, features) -> np.ndarray:
    """Field-level validation, then encoding; returns a (1, D) design row."""
    if not isinstance(features, dict):
        raise ServiceError(400, "features must be an object keyed by column "
                           "name", "features")
    for col in bundle.schema.columns:
        if col.name not in features:
            raise ServiceError(400, f"missing column {col.name!r}", col.name)
        v = features[col.name]
        if col.kind == "numeric":
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ServiceError(400, f"column {col.name!r} expects a "
                                   f"number, got {v!r}", col.name)
            if not math.isfinite(float(v)):
                raise ServiceError(400, f"column {col.name!r} must be finite",
                                   col.name)
        else:
            if not isinstance(v, str):
                raise ServiceError(400, f"column {col.name!r} expects a "
                                   f"category string, got {v!r}", col.name)
            if v not in col.categories:
                raise ServiceError(422, f"unseen category {v!r} for column "
                                   f"{col.name!r}", col.name)
    row = {c.name: features[c.name] for c in bundle.schema.columns}
    return bundle.prep.transform_rows([row])


def _counterfactual_entry(bundle: ModelBundle, alt: counterfact.Alternative
                          ) -> dict:
    classes = bundle.schema.classes
    return {
        "target_index": alt.target,
        "target_class": classes[alt.target],
        "features": alt.x_raw,
        "diffs": alt.diffs,
        "valid": alt.predicted == alt.target,
        "predicted_class": classes[alt.predicted],
        "log_density": alt.log_density,
        # the badge comparison happens server-side so clients can render the
        # flag verbatim instead of re-deriving it
        "plausible": bool(alt.log_density
                          > bundle.thresholds.global_threshold),
    }


def _explain_payload(bundle: ModelBundle, X: np.ndarray) -> dict:
    s = counterfact.explain(bundle, X)[0]
    classes = bundle.schema.classes
    row = s.weights[s.predicted]  # (bias, weights...) of the predicted class
    per_column: dict[str, float] = {}
    for col, g in zip(bundle.schema.columns, bundle.prep.groups):
        if col.kind == "numeric":
            per_column[col.name] = float(row[1 + g.start])
        else:
            active = int(X[0, g.start:g.stop].argmax())
            per_column[col.name] = float(row[1 + g.start + active])
    return {
        "predicted_index": s.predicted,
        "predicted_class": classes[s.predicted],
        "classes": list(classes),
        "probabilities": [float(p) for p in s.probabilities],
        "feature_importance": {"bias": float(row[0]),
                               "per_column": per_column},
        "input": s.x_raw,
        "counterfactuals": [_counterfactual_entry(bundle, a)
                            for a in s.alternatives],
    }


def _resolve_target(bundle: ModelBundle, target) -> int:
    classes = bundle.schema.classes
    if isinstance(target, str):
        if target not in classes:
            raise ServiceError(400, f"unknown target class {target!r}; "
                               f"expected one of {list(classes)}", "target")
        return classes.index(target)
    if isinstance(target, bool) or not isinstance(target, int):
        raise ServiceError(400, f"target must be a class label or index, "
                           f"got {target!r}", "target")
    if not 0 <= target < len(classes):
        raise ServiceError(400, f"target index {target} outside "
                           f"[0, {len(classes)})", "target")
    return target


def create_app(bundle: ModelBundle | None = None) -> FastAPI:
    app = FastAPI(title="tabcf")
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    model_hash = hash_model(bundle) if bundle is not None else None

    @app.exception_handler(ServiceError)
    async def _on_service_error(request, exc: ServiceError):
        return _error_body(exc.status, exc.message, exc.field)

    @app.exception_handler(RequestValidationError)
    async def _on_validation_error(request, exc: RequestValidationError):
        return _error_body(422, "malformed request body")

    def need_bundle() -> ModelBundle:
        if bundle is None:
            raise ServiceError(503, "no model loaded")
        return bundle

    @app.get("/healthz")
    def healthz():
        need_bundle()
        return {"status": "ok", "model_hash": model_hash}

    @app.get("/schema")
    def schema():
        b = need_bundle()
        cols = []
        for c in b.schema.columns:
            entry: dict = {"name": c.name, "kind": c.kind}
            if c.kind == "numeric":
                entry["min"] = b.prep.mins[c.name]
                entry["max"] = b.prep.maxs[c.name]
            else:
                entry["categories"] = list(c.categories)
            cols.append(entry)
        return {"columns": cols, "classes": list(b.schema.classes),
                "target": b.schema.target, "model_hash": model_hash,
                "density_threshold": float(b.thresholds.global_threshold)}

    @app.post("/predict")
    def predict(payload: dict = Body(...)):
        b = need_bundle()
        X = _validate_features(b, payload.get("features"))
        return _explain_payload(b, X)

    @app.post("/counterfactual")
    def counterfactual(payload: dict = Body(...)):
        b = need_bundle()
        X = _validate_features(b, payload.get("features"))
        target = _resolve_target(b, payload.get("target"))
        s = counterfact.explain(b, X)[0]
        classes = b.schema.classes
        if target == s.predicted:
            # degenerate what-if: already the target class
            zero_diffs = {c.name: (0.0 if c.kind == "numeric" else False)
                          for c in b.schema.columns}
            lp = float(b.flow.log_prob(X, np.array([target]))[0])
            return {"target_index": target,
                    "target_class": classes[target],
                    "features": s.x_raw,
                    "diffs": zero_diffs,
                    "valid": True,
                    "predicted_class": classes[s.predicted],
                    "log_density": lp,
                    "plausible": bool(lp > b.thresholds.global_threshold),
                    "echo": True}
        entry = next(a for a in s.alternatives if a.target == target)
        out = _counterfactual_entry(bundle, entry)
        out["echo"] = False
        return out

    return app


def serve(bundle: ModelBundle, host: str = "127.0.0.1",
          port: int = 8787) -> None:  # pragma: no cover - blocking server
    import uvicorn

    uvicorn.run(create_app(bundle), host=host, port=port, log_level="warning")
