"""Consistency function over complex spectrograms.

The predictor is f(x_t, y, t) = c_skip(t) * x_t + c_out(t) * net(x_t, y, t)
where net is a small time-conditioned encoder-decoder whose inputs and
outputs have the same (2, F, L) shape. The scaling pair satisfies
c_skip(t_min) = 1 and c_out(t_min) = 0 exactly, so the function is the
identity at the minimum process time regardless of the weights.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

CHECKPOINT_MAGIC = b"SEBR"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    """Raised for unreadable, mismatched, or corrupt checkpoint files."""


@dataclass(frozen=True)
class ModelConfig:
    base_width: int = 16
    time_embed_dim: int = 64
    sigma_data: float = 0.5
    t_min: float = 1e-3
    t_max: float = 0.999

    def __post_init__(self):
        if self.base_width < 1:
            raise ValueError(f"base_width must be >= 1, got {self.base_width}")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2:
            raise ValueError(
                f"time_embed_dim must be a positive even number, got {self.time_embed_dim}"
            )
        if self.sigma_data <= 0:
            raise ValueError(f"sigma_data must be > 0, got {self.sigma_data}")
        if not 0.0 < self.t_min < self.t_max < 1.0:
            raise ValueError(
                f"need 0 < t_min < t_max < 1, got ({self.t_min}, {self.t_max})"
            )


def scaling(t, sigma_data: float, t_min: float):
    """Skip/output scaling pair (c_skip, c_out) at process time t.

    c_skip(t) = sd^2 / ((t - t_min)^2 + sd^2)
    c_out(t)  = sd * (t - t_min) / sqrt(sd^2 + t^2)

    Both are smooth on [t_min, 1); at t = t_min they evaluate to exactly
    (1, 0). Accepts floats, numpy arrays, or torch tensors.
    """
    lo = t_min - 1e-12
    if isinstance(t, torch.Tensor):
        bad = (t < lo).any() or (t >= 1.0).any()
    else:
        t = np.asarray(t, dtype=np.float64) if np.ndim(t) else float(t)
        bad = np.any(np.asarray(t) < lo) or np.any(np.asarray(t) >= 1.0)
    if bad:
        raise ValueError(f"t outside [t_min, 1) = [{t_min}, 1): {t}")
    dt = t - t_min
    sd2 = sigma_data * sigma_data
    c_skip = sd2 / (dt * dt + sd2)
    c_out = sigma_data * dt / (sd2 + t * t) ** 0.5
    return c_skip, c_out


class SinusoidalTimeEmbedding(nn.Module):
    """Fixed sinusoidal features of the (scaled) process time."""

    def __init__(self, dim: int, scale: float = 1000.0):
        super().__init__()
        self.dim = dim
        self.scale = scale

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(
            -math.log(10000.0)
            * torch.arange(half, device=t.device, dtype=t.dtype)
            / half
        )
        ang = t[:, None] * self.scale * freqs[None, :]
        return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


class _CondBlock(nn.Module):
    """Two 3x3 convs with an additive per-channel time bias after the first."""

    def __init__(self, c_in: int, c_out: int, emb_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.time_proj = nn.Linear(emb_dim, c_out)

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(x) + self.time_proj(emb)[:, :, None, None]
        h = F.silu(h)
        return F.silu(self.conv2(h))


class TimeCondUNet(nn.Module):
    """3-level encoder-decoder with skip connections and time conditioning.

    Input is the current state stacked with its conditioning spectrogram
    along the channel axis (4 planes); output has the state's 2 planes.
    Spatial dims are padded to a multiple of 4 internally and cropped back,
    so any (F, L) is supported. All nonlinearities are smooth.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        base, emb = cfg.base_width, cfg.time_embed_dim
        self.embed = SinusoidalTimeEmbedding(emb)
        self.time_mlp = nn.Sequential(
            nn.Linear(emb, emb), nn.SiLU(), nn.Linear(emb, emb)
        )
        self.stem = nn.Conv2d(4, base, 3, padding=1)
        self.enc0 = _CondBlock(base, base, emb)
        self.down0 = nn.Conv2d(base, 2 * base, 3, stride=2, padding=1)
        self.enc1 = _CondBlock(2 * base, 2 * base, emb)
        self.down1 = nn.Conv2d(2 * base, 4 * base, 3, stride=2, padding=1)
        self.mid = _CondBlock(4 * base, 4 * base, emb)
        self.up1 = nn.ConvTranspose2d(4 * base, 2 * base, 2, stride=2)
        self.dec1 = _CondBlock(4 * base, 2 * base, emb)
        self.up0 = nn.ConvTranspose2d(2 * base, base, 2, stride=2)
        self.dec0 = _CondBlock(2 * base, base, emb)
        self.head = nn.Conv2d(base, 2, 1)

    def forward(
        self, x_t: torch.Tensor, y: torch.Tensor, t: torch.Tensor
    ) -> torch.Tensor:
        if x_t.shape != y.shape:
            raise ValueError(f"state/conditioning shapes differ: {x_t.shape} vs {y.shape}")
        h = torch.cat([x_t, y], dim=1)
        n_f, n_l = h.shape[2], h.shape[3]
        pad_f, pad_l = (-n_f) % 4, (-n_l) % 4
        if pad_f or pad_l:
            h = F.pad(h, (0, pad_l, 0, pad_f), mode="replicate")

        emb = self.time_mlp(self.embed(t))
        h = self.stem(h)
        s0 = self.enc0(h, emb)
        s1 = self.enc1(self.down0(s0), emb)
        m = self.mid(self.down1(s1), emb)
        h = self.dec1(torch.cat([self.up1(m), s1], dim=1), emb)
        h = self.dec0(torch.cat([self.up0(h), s0], dim=1), emb)
        out = self.head(h)
        return out[:, :, :n_f, :n_l]


class ConsistencyModel(nn.Module):
    """Wraps the network with the boundary-exact skip parameterization.

    `net_calls` counts network evaluations; the one-step sampler asserts
    it advances by exactly one per enhancement.
    """

    def __init__(self, cfg: ModelConfig, net: TimeCondUNet | None = None):
        super().__init__()
        self.cfg = cfg
        self.net = net if net is not None else TimeCondUNet(cfg)
        self.net_calls = 0

    def forward(
        self, x_t: torch.Tensor, y: torch.Tensor, t: torch.Tensor | float
    ) -> torch.Tensor:
        squeeze = x_t.dim() == 3
        if squeeze:
            x_t, y = x_t[None], y[None]
        if not isinstance(t, torch.Tensor):
            t = torch.full((x_t.shape[0],), float(t), dtype=x_t.dtype, device=x_t.device)
        if t.dim() == 0:
            t = t.expand(x_t.shape[0])
        c_skip, c_out = scaling(t, self.cfg.sigma_data, self.cfg.t_min)
        self.net_calls += 1
        out = self.net(x_t, y, t)
        res = c_skip[:, None, None, None] * x_t + c_out[:, None, None, None] * out
        return res[0] if squeeze else res


def init_model(
    cfg: ModelConfig, seed: int = 0, dtype: torch.dtype = torch.float32
) -> ConsistencyModel:
    """Deterministic initialization: fan-in-scaled uniform weights, zero head.

    With the head zeroed the untrained predictor is c_skip(t) * x_t.
    """
    model = ConsistencyModel(cfg).to(dtype)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in model.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
                if isinstance(m, nn.Linear):
                    fan_in = m.in_features
                else:
                    fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                bound = 1.0 / math.sqrt(fan_in)
                init = torch.empty(m.weight.shape, dtype=torch.float32).uniform_(
                    -bound, bound, generator=gen
                )
                m.weight.copy_(init)
                if m.bias is not None:
                    init_b = torch.empty(m.bias.shape, dtype=torch.float32).uniform_(
                        -bound, bound, generator=gen
                    )
                    m.bias.copy_(init_b)
        model.net.head.weight.zero_()
        model.net.head.bias.zero_()
    model.init_seed = seed
    return model


def shape_manifest(model: nn.Module) -> dict[str, tuple[int, ...]]:
    """Name -> dims for every tensor in the model's state dict."""
    return {name: tuple(t.shape) for name, t in model.state_dict().items()}


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def _write_tensor(f, name: str, arr: np.ndarray) -> None:
    data = np.ascontiguousarray(arr, dtype="<f4")
    name_b = name.encode("utf-8")
    f.write(struct.pack("<I", len(name_b)))
    f.write(name_b)
    f.write(struct.pack("<I", data.ndim))
    f.write(struct.pack(f"<{data.ndim}I", *data.shape))
    f.write(data.tobytes())


def _read_exact(f, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise CheckpointError("truncated checkpoint file")
    return b


def _read_tensor(f) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<I", _read_exact(f, 4))
    name = _read_exact(f, name_len).decode("utf-8")
    (rank,) = struct.unpack("<I", _read_exact(f, 4))
    dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank)) if rank else ()
    count = int(np.prod(dims)) if dims else 1
    arr = np.frombuffer(_read_exact(f, 4 * count), dtype="<f4").reshape(dims)
    return name, arr


def save_checkpoint(
    path,
    model: ConsistencyModel,
    target_model: ConsistencyModel,
    meta: dict | None = None,
    extra_tensors: dict[str, torch.Tensor] | None = None,
) -> None:
    """Write model + EMA weights (and optional extras) in the binary format.

    Layout: magic "SEBR", u32 version, length-prefixed JSON config document,
    u32 tensor count, then per-tensor records (name, rank, dims, f32 LE).
    """
    doc = {"model": asdict(model.cfg), "meta": meta or {}}
    doc_b = json.dumps(doc, sort_keys=True).encode("utf-8")

    records: dict[str, np.ndarray] = {}
    for name, t in model.state_dict().items():
        records[f"theta/{name}"] = t.detach().cpu().numpy()
    for name, t in target_model.state_dict().items():
        records[f"ema/{name}"] = t.detach().cpu().numpy()
    for name, t in (extra_tensors or {}).items():
        records[name] = t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)

    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(struct.pack("<I", len(doc_b)))
    buf.write(doc_b)
    buf.write(struct.pack("<I", len(records)))
    for name in records:
        _write_tensor(buf, name, records[name])
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(
    path, dtype: torch.dtype = torch.float32
) -> tuple[ConsistencyModel, ConsistencyModel, dict, dict[str, np.ndarray]]:
    """Read a checkpoint; returns (model, ema_model, meta, extra_tensors).

    The stored tensor manifest must match the manifest of a model freshly
    built from the stored config, otherwise CheckpointError is raised.
    """
    try:
        f = open(path, "rb")
    except OSError as e:
        raise CheckpointError(f"cannot open checkpoint {path}: {e}") from e
    with f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported format version {version} "
                f"(expected {CHECKPOINT_VERSION})"
            )
        (doc_len,) = struct.unpack("<I", _read_exact(f, 4))
        try:
            doc = json.loads(_read_exact(f, doc_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"{path}: corrupt config document ({e})") from e
        (n_tensors,) = struct.unpack("<I", _read_exact(f, 4))
        records = dict(_read_tensor(f) for _ in range(n_tensors))

    cfg = ModelConfig(**doc["model"])
    model = ConsistencyModel(cfg).to(dtype)
    target = ConsistencyModel(cfg).to(dtype)

    expected = shape_manifest(model)
    for prefix, mod in (("theta/", model), ("ema/", target)):
        stored = {
            name[len(prefix):]: arr
            for name, arr in records.items()
            if name.startswith(prefix)
        }
        got_manifest = {n: tuple(a.shape) for n, a in stored.items()}
        if got_manifest != expected:
            raise CheckpointError(
                f"{path}: tensor manifest under {prefix!r} does not match the "
                f"model built from the stored config"
            )
        mod.load_state_dict(
            {n: torch.from_numpy(a.copy()).to(dtype) for n, a in stored.items()}
        )
    extras = {
        n: a for n, a in records.items()
        if not (n.startswith("theta/") or n.startswith("ema/"))
    }
    return model, target, doc.get("meta", {}), extras
