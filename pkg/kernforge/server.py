"""
kernforge - FastAPI Server

Exposes validation, normalization, masking and scoring over HTTP, plus a
websocket that keeps one decode state per connection so an external decoder
can stream token ids and receive masks back.
"""

import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect

from . import __version__
from .bpe import EOS_ID, BpeVocab
from .config import Config
from .constraints import ConstraintEngine, IllegalAdvance, init_state, state_after
from .filters import filter_text
from .kern import KernError, parse_document, serialize_document
from .metrics import EmptyReference, score_texts
from .normalizer import normalize_document
from .schemas import (
    FilterLine,
    MaskLine,
    MaskRequest,
    NormalizeResponse,
    ScoreLine,
    ScoreRequest,
    TextRequest,
)

logger = logging.getLogger(__name__)

# Global engine, loaded at startup when a vocabulary is configured
engine: ConstraintEngine | None = None
vocab_path: str | None = None


def load_engine(path: str | None) -> ConstraintEngine | None:
    global engine, vocab_path
    vocab_path = path
    engine = ConstraintEngine(BpeVocab.load(path)) if path else None
    return engine


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Load the vocabulary on startup"""
    if engine is None:
        path = vocab_path or Config.from_env().vocab_path
        if path:
            load_engine(path)
            logger.info(f"Constraint engine ready ({len(engine)} tokens from {path})")
        else:
            logger.warning("No vocabulary configured - /api/mask and /ws/decode are disabled")
    yield
    logger.info("kernforge server shutting down")


app = FastAPI(
    title="kernforge",
    description="Deterministic **kern data engine for OMR training targets",
    version=__version__,
    lifespan=lifespan,
)


def _require_engine() -> ConstraintEngine:
    if engine is None:
        raise HTTPException(status_code=400, detail="No vocabulary loaded")
    return engine


def _mask_line(current: ConstraintEngine, state, prefix_bytes: int) -> MaskLine:
    allowed = current.mask(state)
    return MaskLine(
        prefix_bytes=prefix_bytes,
        allowed=current.allowed_ids(state),
        eos_allowed=bool(allowed[EOS_ID]),
        terminated=state.terminated,
    )


@app.get("/api/status")
async def status():
    return {
        "app": "kernforge",
        "version": __version__,
        "vocab_loaded": engine is not None,
        "vocab_size": len(engine) if engine else 0,
    }


@app.post("/api/validate", response_model=FilterLine)
async def validate(request: TextRequest):
    return FilterLine.from_report(filter_text(request.text))


@app.post("/api/normalize", response_model=NormalizeResponse)
async def normalize(request: TextRequest):
    try:
        doc, trace = normalize_document(parse_document(request.text))
    except KernError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return NormalizeResponse(
        text=serialize_document(doc), edits=trace.total, passes=dict(trace.counts)
    )


@app.post("/api/mask", response_model=MaskLine)
async def mask(request: MaskRequest):
    current = _require_engine()
    prefix = request.prefix.encode("utf-8")
    try:
        state = state_after(prefix)
    except IllegalAdvance as e:
        raise HTTPException(status_code=400, detail=str(e))
    return _mask_line(current, state, len(prefix))


@app.post("/api/score", response_model=ScoreLine)
async def score(request: ScoreRequest):
    try:
        report = score_texts(request.reference, request.prediction)
    except (KernError, EmptyReference) as e:
        raise HTTPException(status_code=400, detail=str(e))
    return ScoreLine.from_report("request", report)


@app.websocket("/ws/decode")
async def websocket_decode(websocket: WebSocket):
    """
    One decode stream per connection. Send {"token": id} to advance or
    {"reset": true} to start over; every reply carries the next mask.
    """
    await websocket.accept()
    if engine is None:
        await websocket.send_json({"error": "No vocabulary loaded"})
        await websocket.close()
        return

    state = init_state()
    emitted = 0
    await websocket.send_json(_mask_line(engine, state, 0).model_dump())
    try:
        while True:
            msg = await websocket.receive_json()
            if not isinstance(msg, dict):
                await websocket.send_json({"error": "expected a JSON object"})
                continue
            if msg.get("reset"):
                state, emitted = init_state(), 0
            elif "token" in msg:
                try:
                    token_id = int(msg["token"])
                except (TypeError, ValueError):
                    error = f"token ids are integers, got {msg['token']!r}"
                    await websocket.send_json({"error": error})
                    continue
                try:
                    state = engine.advance(state, token_id)
                except IllegalAdvance as e:
                    await websocket.send_json({"error": str(e)})
                    continue
                emitted += len(engine.tokens[token_id])
                if token_id == EOS_ID:
                    await websocket.send_json({"done": True})
                    await websocket.close()
                    return
            else:
                await websocket.send_json({"error": "expected 'token' or 'reset'"})
                continue
            await websocket.send_json(_mask_line(engine, state, emitted).model_dump())
    except WebSocketDisconnect:
        pass


def run_standalone(host: str = "0.0.0.0", port: int = 5173, vocab_path: str | None = None):
    """Run the server standalone"""
    import uvicorn

    if vocab_path:
        load_engine(vocab_path)
    logger.info(f"kernforge server starting on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    from dotenv import load_dotenv

    load_dotenv()
    logging.basicConfig(level=logging.INFO)
    config = Config.from_env()
    run_standalone(config.host, config.port, config.vocab_path)
