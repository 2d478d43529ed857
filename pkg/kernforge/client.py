"""
HTTP client for a running kernforge server
"""

import logging

import httpx

from .schemas import FilterLine, MaskLine, NormalizeResponse, ScoreLine

logger = logging.getLogger(__name__)


class KernforgeClient:
    """
    Thin wrapper over the server's JSON API. Pass `client` to reuse an
    existing httpx.Client (a FastAPI TestClient works too).
    """

    def __init__(self, base_url: str = "http://localhost:5173", client: httpx.Client | None = None):
        self.base_url = base_url.rstrip("/")
        self._owns_client = client is None
        self.client = client or httpx.Client(base_url=self.base_url, timeout=30.0)

    def __enter__(self) -> "KernforgeClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        if self._owns_client:
            self.client.close()

    def _post(self, path: str, payload: dict) -> dict:
        response = self.client.post(path, json=payload)
        if response.status_code == 400:
            raise ValueError(response.json().get("detail", "bad request"))
        response.raise_for_status()
        return response.json()

    def status(self) -> dict:
        response = self.client.get("/api/status")
        response.raise_for_status()
        return response.json()

    def validate(self, text: str) -> FilterLine:
        return FilterLine(**self._post("/api/validate", {"text": text}))

    def normalize(self, text: str) -> NormalizeResponse:
        return NormalizeResponse(**self._post("/api/normalize", {"text": text}))

    def mask(self, prefix: str) -> MaskLine:
        return MaskLine(**self._post("/api/mask", {"prefix": prefix}))

    def score(self, reference: str, prediction: str) -> ScoreLine:
        payload = {"reference": reference, "prediction": prediction}
        return ScoreLine(**self._post("/api/score", payload))
