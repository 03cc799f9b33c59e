"""Score distillation guidance.

A frozen denoiser (remote service, or a local stand-in for tests) judges
renders: the render is noised to a random diffusion timestep, the denoiser
predicts that noise given the skeleton conditioning image, and the prediction
error becomes a per-pixel gradient on the render. No pixel-space loss is ever
formed; the gradient is injected directly into the renderer's backward pass.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import requests

WIRE_MAGIC = b"SKLF-SDS1"
PROTOCOL_VERSION = 1

STATUS_OK = 0
STATUS_BAD_REQUEST = 1
STATUS_MODEL_ERROR = 2

_STATUS_NAMES = {STATUS_BAD_REQUEST: "bad request", STATUS_MODEL_ERROR: "model error"}


class ScheduleError(ValueError):
    """Invalid diffusion schedule parameters."""


class GuidanceError(RuntimeError):
    """Base for guidance backend failures."""


class GuidanceConnectionError(GuidanceError):
    """Could not reach the denoiser service."""


class GuidanceTimeoutError(GuidanceError):
    """Denoiser service did not answer in time."""


class GuidanceProtocolError(GuidanceError):
    """Response bytes do not parse as the wire protocol."""


class GuidanceVersionError(GuidanceError):
    """Service speaks a different protocol version."""


class GuidanceServerError(GuidanceError):
    """Service answered with an error status."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule: betas per step, alphas, and cumulative products."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def num_steps(self) -> int:
        return self.betas.shape[0]


def make_schedule(
    num_steps: int, beta_start: float = 8.5e-4, beta_end: float = 0.012
) -> NoiseSchedule:
    """Linear beta schedule, endpoints included.

    alpha_bars[0] equals 1 - beta_start exactly (cumprod of one term), and
    alpha_bars decreases strictly.
    """
    if num_steps < 1:
        raise ScheduleError(f"num_steps must be >= 1, got {num_steps}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ScheduleError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    betas = np.linspace(beta_start, beta_end, num_steps)
    alphas = 1.0 - betas
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def add_noise(x: np.ndarray, eps: np.ndarray, t: int, schedule: NoiseSchedule):
    """Forward noising to (1-based) timestep t.

    z_t = sqrt(alpha_bar_t) x + sqrt(1 - alpha_bar_t) eps; variance is
    preserved for unit-variance inputs.
    """
    if not 1 <= t <= schedule.num_steps:
        raise ScheduleError(f"timestep {t} outside [1, {schedule.num_steps}]")
    bar = schedule.alpha_bars[t - 1]
    return np.sqrt(bar) * x + np.sqrt(1.0 - bar) * eps


def sample_timestep(
    rng: np.random.Generator,
    schedule: NoiseSchedule,
    frac_range: tuple[float, float] = (0.02, 0.98),
) -> int:
    """Uniform integer timestep, keeping clear of both schedule ends."""
    lo = max(1, int(np.ceil(frac_range[0] * schedule.num_steps)))
    hi = min(schedule.num_steps, int(np.floor(frac_range[1] * schedule.num_steps)))
    if lo > hi:
        raise ScheduleError(f"empty timestep range [{lo}, {hi}]")
    return int(rng.integers(lo, hi + 1))


@dataclass
class SDSGradient:
    per_pixel: np.ndarray  # same shape as the render
    timestep: int
    weight: float


def sds_gradient(
    eps_hat: np.ndarray,
    eps: np.ndarray,
    t: int,
    schedule: NoiseSchedule,
    weight_mode: str = "constant",
) -> SDSGradient:
    """Distillation gradient on the render.

    The noising map contributes its own sqrt(alpha_bar_t) factor, folded in
    here so callers apply the result directly to the rendered pixels.
    weight_mode 'constant' uses w(t) = 1; 'sigma2' uses w(t) = 1 - alpha_bar_t.
    """
    if eps_hat.shape != eps.shape:
        raise ValueError(f"shape mismatch {eps_hat.shape} vs {eps.shape}")
    bar = schedule.alpha_bars[t - 1]
    if weight_mode == "constant":
        w = 1.0
    elif weight_mode == "sigma2":
        w = float(1.0 - bar)
    else:
        raise ValueError(f"unknown weight_mode {weight_mode!r}")
    grad = (w * np.sqrt(bar)) * (eps_hat - eps)
    return SDSGradient(per_pixel=grad, timestep=t, weight=w)


# ---------------------------------------------------------------------------
# backends

class MockBackend:
    """Denoiser stand-in that pulls renders toward a fixed target image.

    Predicting eps + sqrt(bar)/sqrt(1-bar) * (x - target) makes the SDS
    gradient exactly proportional to (x - target), so optimization against
    this backend is plain (weighted) regression to the target: convergence is
    measurable without any real diffusion model.
    """

    def __init__(self, target: np.ndarray, schedule: NoiseSchedule):
        target = np.asarray(target, dtype=np.float64)
        if target.ndim != 3:
            raise ValueError(f"target must be (H, W, C), got {target.shape}")
        if target.min() < 0.0 or target.max() > 1.0:
            raise ValueError("target values must lie in [0, 1]")
        self.target = target
        self.schedule = schedule

    @classmethod
    def from_npy(cls, path, schedule: NoiseSchedule) -> "MockBackend":
        return cls(np.load(path), schedule)

    def predict_noise(self, z_t, t, conditioning=None, x=None, eps=None):
        if x is None or eps is None:
            raise ValueError("mock backend needs the clean render and its noise")
        bar = self.schedule.alpha_bars[t - 1]
        k = np.sqrt(bar) / np.sqrt(1.0 - bar)
        return eps + k * (x - self.target)


class EchoBackend:
    """Returns the injected noise unchanged: the SDS gradient is exactly zero.

    Test instrument for fixed-point behaviour of the optimization loop.
    """

    def predict_noise(self, z_t, t, conditioning=None, x=None, eps=None):
        if eps is None:
            raise ValueError("echo backend needs the injected noise")
        return eps


class RemoteBackend:
    """Client for a denoiser service speaking the binary wire protocol."""

    def __init__(self, endpoint: str, prompt: str, guidance_scale: float = 7.5,
                 timeout: float = 30.0, session=None):
        self.endpoint = endpoint.rstrip("/")
        self.prompt = prompt
        self.guidance_scale = float(guidance_scale)
        self.timeout = timeout
        self.session = session or requests.Session()

    def check_health(self) -> dict:
        """GET /v1/health; raises GuidanceVersionError on version mismatch."""
        try:
            resp = self.session.get(f"{self.endpoint}/v1/health", timeout=self.timeout)
        except requests.exceptions.Timeout as exc:
            raise GuidanceTimeoutError(str(exc)) from exc
        except requests.exceptions.ConnectionError as exc:
            raise GuidanceConnectionError(str(exc)) from exc
        try:
            info = resp.json()
        except ValueError as exc:
            raise GuidanceProtocolError(f"health endpoint returned non-JSON: {exc}") from exc
        if info.get("protocol") != PROTOCOL_VERSION:
            raise GuidanceVersionError(
                f"service speaks protocol {info.get('protocol')}, need {PROTOCOL_VERSION}"
            )
        return info

    def predict_noise(self, z_t, t, conditioning, x=None, eps=None):
        payload = encode_request(
            timestep=t,
            guidance_scale=self.guidance_scale,
            prompt=self.prompt,
            z_t=z_t,
            conditioning=conditioning,
        )
        try:
            resp = self.session.post(
                f"{self.endpoint}/v1/predict_noise",
                data=payload,
                timeout=self.timeout,
                headers={"Content-Type": "application/octet-stream"},
            )
        except requests.exceptions.Timeout as exc:
            raise GuidanceTimeoutError(str(exc)) from exc
        except requests.exceptions.ConnectionError as exc:
            raise GuidanceConnectionError(str(exc)) from exc
        return decode_response(resp.content, z_t.shape)


# ---------------------------------------------------------------------------
# wire protocol

_REQ_HEAD = struct.Struct("<HIfHHHH")  # version, timestep, scale, C, H, W, prompt_len
_RESP_HEAD = struct.Struct("<H")  # status


def encode_request(timestep, guidance_scale, prompt, z_t, conditioning,
                   version: int = PROTOCOL_VERSION) -> bytes:
    """Serialize one denoising request.

    z_t is (H, W, C) float; conditioning is (H, W, 3) uint8. Both go over the
    wire channel-major.
    """
    z = np.asarray(z_t)
    cond = np.asarray(conditioning)
    if z.ndim != 3:
        raise ValueError(f"z_t must be (H, W, C), got {z.shape}")
    h, w, c = z.shape
    if cond.shape != (h, w, 3) or cond.dtype != np.uint8:
        raise ValueError(
            f"conditioning must be ({h}, {w}, 3) uint8, got {cond.dtype} {cond.shape}"
        )
    prompt_bytes = prompt.encode("utf-8")
    if max(h, w, c) > 0xFFFF or len(prompt_bytes) > 0xFFFF:
        raise ValueError("field exceeds u16 range")
    if not 0 <= int(timestep) <= 0xFFFFFFFF:
        raise ValueError(f"timestep {timestep} outside u32 range")
    head = _REQ_HEAD.pack(version, int(timestep), float(guidance_scale),
                          c, h, w, len(prompt_bytes))
    z_wire = np.ascontiguousarray(z.transpose(2, 0, 1), dtype="<f4").tobytes()
    cond_wire = np.ascontiguousarray(cond.transpose(2, 0, 1)).tobytes()
    return WIRE_MAGIC + head + prompt_bytes + z_wire + cond_wire


def decode_request(data: bytes) -> dict:
    """Parse request bytes; raises GuidanceProtocolError on malformed input."""
    if not data.startswith(WIRE_MAGIC):
        raise GuidanceProtocolError(f"bad request magic {data[:9]!r}")
    off = len(WIRE_MAGIC)
    if len(data) < off + _REQ_HEAD.size:
        raise GuidanceProtocolError("truncated request header")
    version, timestep, scale, c, h, w, plen = _REQ_HEAD.unpack_from(data, off)
    off += _REQ_HEAD.size
    prompt = data[off : off + plen]
    if len(prompt) != plen:
        raise GuidanceProtocolError("truncated prompt")
    off += plen
    z_bytes = c * h * w * 4
    cond_bytes = 3 * h * w
    if len(data) != off + z_bytes + cond_bytes:
        raise GuidanceProtocolError(
            f"payload size {len(data) - off} != expected {z_bytes + cond_bytes}"
        )
    z = np.frombuffer(data, dtype="<f4", count=c * h * w, offset=off)
    z = z.reshape(c, h, w).transpose(1, 2, 0).astype(np.float64)
    off += z_bytes
    cond = np.frombuffer(data, dtype=np.uint8, count=cond_bytes, offset=off)
    cond = cond.reshape(3, h, w).transpose(1, 2, 0).copy()
    return {
        "version": version,
        "timestep": timestep,
        "guidance_scale": scale,
        "prompt": prompt.decode("utf-8"),
        "z_t": z,
        "conditioning": cond,
    }


def encode_response(eps_hat=None, status: int = STATUS_OK, message: str = "") -> bytes:
    if status == STATUS_OK:
        arr = np.ascontiguousarray(
            np.asarray(eps_hat).transpose(2, 0, 1), dtype="<f4"
        )
        return WIRE_MAGIC + _RESP_HEAD.pack(STATUS_OK) + arr.tobytes()
    msg = message.encode("utf-8")
    return WIRE_MAGIC + _RESP_HEAD.pack(status) + struct.pack("<H", len(msg)) + msg


def decode_response(data: bytes, shape) -> np.ndarray:
    """Parse a response for a (H, W, C) request; returns eps_hat (H, W, C)."""
    h, w, c = shape
    if not data.startswith(WIRE_MAGIC):
        raise GuidanceProtocolError(f"bad response magic {data[:9]!r}")
    off = len(WIRE_MAGIC)
    if len(data) < off + _RESP_HEAD.size:
        raise GuidanceProtocolError("truncated response status")
    (status,) = _RESP_HEAD.unpack_from(data, off)
    off += _RESP_HEAD.size
    if status != STATUS_OK:
        if len(data) >= off + 2:
            (mlen,) = struct.unpack_from("<H", data, off)
            message = data[off + 2 : off + 2 + mlen].decode("utf-8", "replace")
        else:
            message = ""
        name = _STATUS_NAMES.get(status, f"status {status}")
        raise GuidanceServerError(f"{name}: {message}" if message else name)
    need = c * h * w * 4
    if len(data) != off + need:
        raise GuidanceProtocolError(
            f"noise payload {len(data) - off} bytes, expected {need}"
        )
    arr = np.frombuffer(data, dtype="<f4", count=c * h * w, offset=off)
    return arr.reshape(c, h, w).transpose(1, 2, 0).astype(np.float64)
