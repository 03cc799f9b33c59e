"""HTTP service: /v1/predict_noise and /v1/health.

Fake mode answers every well-formed request with hash-seeded pseudo-noise of
the right shape; it exists so the training engine's remote path can be
integration-tested without any model weights.  Model mode wraps a real
skeleton-conditioned denoiser when the ML stack is installed.

Bad input never takes the service down: requests that fail to parse get a
status-1 response, and a backend failure gets status 2.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .noise import fake_noise
from .protocol import (
    PROTOCOL_VERSION,
    STATUS_BAD_REQUEST,
    STATUS_MODEL_ERROR,
    ProtocolError,
    decode_request,
    encode_response,
)

logger = logging.getLogger(__name__)

MAX_REQUEST_BYTES = 256 * 1024 * 1024


class ServerError(RuntimeError):
    """Service cannot start or the model backend cannot answer."""


@dataclass(frozen=True)
class ServerConfig:
    """Service settings; exactly one of fake/model mode.

    model_id and device only matter in model mode. guidance_scale is the
    default applied when a model ignores the per-request value.
    """

    host: str = "127.0.0.1"
    port: int = 8022
    mode: str = "fake"
    model_id: str = ""
    device: str = "cpu"
    guidance_scale: float = 7.5

    def __post_init__(self):
        if self.mode not in ("fake", "model"):
            raise ServerError(f"mode must be 'fake' or 'model', got {self.mode!r}")
        if self.mode == "model" and not self.model_id:
            raise ServerError("model mode needs a model identifier")


class FakeBackend:
    """Deterministic stand-in: noise is a pure function of the request bytes."""

    mode = "fake"

    def predict(self, request: dict, raw: bytes) -> np.ndarray:
        h, w, c = request["z_t"].shape
        flat = fake_noise(raw, c * h * w)
        return flat.reshape(c, h, w).transpose(1, 2, 0)


class ModelBackend:
    """Adapter for a skeleton-conditioned latent-diffusion denoiser.

    The conditioning map is resized to the model's native resolution and the
    prediction is center-cropped back, a documented lossy step.  Loading is
    lazy and failures surface as ServerError so the CLI can report them
    cleanly; this path needs torch + diffusers installed and is best-effort.
    """

    mode = "model"

    def __init__(self, model_id: str, device: str, guidance_scale: float):
        try:
            import torch  # noqa: F401
            from diffusers import ControlNetModel, UNet2DConditionModel  # noqa: F401
        except ImportError as exc:
            raise ServerError(
                f"model mode needs torch and diffusers installed: {exc}"
            ) from exc
        self.model_id = model_id
        self.device = device
        self.guidance_scale = guidance_scale
        self._pipe = self._load()

    def _load(self):
        import torch
        from diffusers import StableDiffusionControlNetPipeline

        pipe = StableDiffusionControlNetPipeline.from_pretrained(self.model_id)
        pipe.to(self.device)
        pipe.unet.eval()
        torch.set_grad_enabled(False)
        return pipe

    def predict(self, request: dict, raw: bytes) -> np.ndarray:
        import torch

        pipe = self._pipe
        z = request["z_t"]
        h, w, c = z.shape
        native = pipe.unet.config.sample_size * pipe.vae_scale_factor
        cond = _resize_u8(request["conditioning"], native, native)
        control = torch.from_numpy(cond.transpose(2, 0, 1)[None] / 255.0).float()
        latents = torch.from_numpy(
            _resize_f32(z, native // pipe.vae_scale_factor,
                        native // pipe.vae_scale_factor).transpose(2, 0, 1)[None]
        ).float()
        embeds = pipe._encode_prompt(
            request["prompt"], self.device, 1, False, None)
        t = torch.tensor([int(request["timestep"])])
        down, mid = pipe.controlnet(
            latents, t, encoder_hidden_states=embeds,
            controlnet_cond=control, return_dict=False)
        eps = pipe.unet(latents, t, encoder_hidden_states=embeds,
                        down_block_additional_residuals=down,
                        mid_block_additional_residual=mid).sample
        eps = eps[0].cpu().numpy().transpose(1, 2, 0)
        return _center_crop(_resize_f32(eps, h, w), h, w)[:, :, :c]


def _resize_u8(img: np.ndarray, h: int, w: int) -> np.ndarray:
    ys = (np.arange(h) * img.shape[0] / h).astype(int)
    xs = (np.arange(w) * img.shape[1] / w).astype(int)
    return img[ys][:, xs]


def _resize_f32(img: np.ndarray, h: int, w: int) -> np.ndarray:
    ys = (np.arange(h) * img.shape[0] / h).astype(int)
    xs = (np.arange(w) * img.shape[1] / w).astype(int)
    return img[ys][:, xs]


def _center_crop(img: np.ndarray, h: int, w: int) -> np.ndarray:
    y0 = max(0, (img.shape[0] - h) // 2)
    x0 = max(0, (img.shape[1] - w) // 2)
    return img[y0 : y0 + h, x0 : x0 + w]


def make_backend(config: ServerConfig):
    if config.mode == "fake":
        return FakeBackend()
    return ModelBackend(config.model_id, config.device, config.guidance_scale)


class _Handler(BaseHTTPRequestHandler):
    backend = None  # set by make_server
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        logger.debug("%s " + fmt, self.client_address[0], *args)

    def _send(self, code: int, body: bytes, content_type: str):
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path != "/v1/health":
            self._send(404, b"not found", "text/plain")
            return
        body = json.dumps(
            {"protocol": PROTOCOL_VERSION, "mode": self.backend.mode}
        ).encode()
        self._send(200, body, "application/json")

    def do_POST(self):
        if self.path != "/v1/predict_noise":
            self._send(404, b"not found", "text/plain")
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
        except ValueError:
            length = -1
        if not 0 <= length <= MAX_REQUEST_BYTES:
            body = encode_response(status=STATUS_BAD_REQUEST,
                                   message="bad content length")
            self._send(200, body, "application/octet-stream")
            return
        raw = self.rfile.read(length)
        try:
            request = decode_request(raw)
            eps_hat = self.backend.predict(request, raw)
            body = encode_response(eps_hat)
        except ProtocolError as exc:
            body = encode_response(status=STATUS_BAD_REQUEST, message=str(exc))
        except Exception as exc:  # model failures must not kill the service
            logger.exception("backend failure")
            body = encode_response(status=STATUS_MODEL_ERROR, message=str(exc))
        self._send(200, body, "application/octet-stream")


def make_server(config: ServerConfig) -> ThreadingHTTPServer:
    """Bind the service; port 0 picks a free port (see server_address)."""
    backend = make_backend(config)
    handler = type("BoundHandler", (_Handler,), {"backend": backend})
    try:
        return ThreadingHTTPServer((config.host, config.port), handler)
    except OSError as exc:
        raise ServerError(f"cannot bind {config.host}:{config.port}: {exc}") from exc


def serve(config: ServerConfig) -> None:
    """Run until interrupted."""
    server = make_server(config)
    host, port = server.server_address[:2]
    logger.info("listening on %s:%d (%s mode)", host, port, config.mode)
    try:
        server.serve_forever()
    finally:
        server.server_close()
