"""HTTP service exposing subject/body generation.

POST /v1/generate with {"kind", "prompt", "context", "max_tokens",
"seed"} returns {"text": ...}. Malformed requests get a 400 with an
error body; generation failures a 500. Requests are stateless: the same
request with the same seed always yields the same text.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field
from typing import Literal

from .model import TextModel


@dataclass
class ProviderConfig:
    subject_dir: str
    body_dir: str
    host: str = "127.0.0.1"
    port: int = 8081
    temperature: float | None = None
    top_k: int | None = None
    max_length: int | None = None

    def __post_init__(self):
        for name, path in (("subject", self.subject_dir),
                           ("body", self.body_dir)):
            if not os.path.isdir(path):
                raise FileNotFoundError(
                    "%s model dir not found: %s" % (name, path))


class GenerateRequest(BaseModel):
    kind: Literal["subject", "body"]
    prompt: str
    context: list[str] = Field(default_factory=list)
    max_tokens: int = Field(default=30, ge=1)
    seed: int = 0


def build_app(config: ProviderConfig) -> FastAPI:
    models = {"subject": TextModel.load(config.subject_dir),
              "body": TextModel.load(config.body_dir)}
    for model in models.values():
        if config.temperature is not None:
            model.temperature = config.temperature
        if config.top_k is not None:
            model.top_k = config.top_k
        if config.max_length is not None:
            model.max_length = config.max_length

    app = FastAPI(title="lm-provider")

    @app.exception_handler(RequestValidationError)
    async def bad_request(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content={"error": str(exc.errors()[:1])})

    @app.post("/v1/generate")
    def generate(req: GenerateRequest):
        try:
            text = models[req.kind].generate(
                req.prompt, context=req.context,
                max_tokens=req.max_tokens, seed=req.seed)
        except Exception as exc:
            return JSONResponse(status_code=500,
                                content={"error": str(exc)})
        return {"text": text}

    @app.get("/health")
    def health():
        return {"status": "ok"}

    return app


def serve(config: ProviderConfig):
    import uvicorn
    uvicorn.run(build_app(config), host=config.host, port=config.port)
