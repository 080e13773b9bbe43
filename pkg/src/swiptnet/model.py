"""SWIPTNet: graph attention layers, fully-connected layers and the layer stack.

Variants share one implementation:

* ``swiptnet`` -- Laplacian encoding, GALs with layer-connection FLs, decoder FLs.
* ``gat``      -- SWIPTNet without the Laplacian encoding and layer-connection FLs.
* ``gcn``      -- SWIPTNet with attention replaced by uniform neighbour averaging.
* ``mlp``      -- every GAL replaced by an FL over the flattened CSI of all UEs.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from . import objective
from .channels import SystemConfig
from .graph import enhance_features
from .numerics import CDTYPE, RDTYPE, leaky_relu, selu, xavier_init

VARIANTS = ("swiptnet", "gat", "gcn", "mlp")

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
RATIO_EPS = 1e-9


@dataclass(frozen=True)
class Widths:
    """Hidden sizes of the stack; ``reference`` is the full-size stack."""

    heads: int = 20
    gal: tuple = (32, 64, 128, 256)
    connection: tuple = (64, 128)
    decoder: tuple = (1024, 512)

    @classmethod
    def reference(cls) -> "Widths":
        return cls()

    @classmethod
    def desk(cls) -> "Widths":
        return cls(heads=4, gal=(16, 32, 32, 64), connection=(32, 32), decoder=(128, 64))

    @classmethod
    def tiny(cls, width=8, heads=2) -> "Widths":
        w = width
        return cls(heads=heads, gal=(w, w, w, w), connection=(w, w), decoder=(w, w))


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "gal" or "fl"
    in_features: int
    out_features: int
    heads: int = 1
    activation: bool = True
    batch_norm: bool = False
    attention: bool = True

    @property
    def out_width(self) -> int:
        return self.heads * self.out_features if self.kind == "gal" else self.out_features


def layer_specs(variant, n_tx, l_pe, widths: Widths, *, n_ue=None, laplace=True,
                layer_connection=True, single_output=True) -> list[LayerSpec]:
    if variant not in VARIANTS:
        raise ValueError(f"unknown model variant {variant!r}; expected one of {VARIANTS}")
    S, (g0, g1, g2, g3), (c0, c1), (d0, d1) = widths.heads, widths.gal, widths.connection, widths.decoder
    out_extra = 0 if single_output else 1
    if variant == "mlp":
        if n_ue is None:
            raise ValueError("the mlp variant needs a fixed n_ue")
        dims = [n_ue * n_tx, g0 * S, g1 * S, c0, g2 * S, c1, g3 * S, d0, d1]
        specs = [LayerSpec("fl", a, b) for a, b in zip(dims[:-1], dims[1:])]
        specs[-2:] = [LayerSpec("fl", g3 * S, d0, batch_norm=True), LayerSpec("fl", d0, d1, batch_norm=True)]
        specs.append(LayerSpec("fl", d1, n_ue * (n_tx + out_extra), activation=False))
        return specs
    attention = variant != "gcn"
    in0 = n_tx + (l_pe if laplace else 0)

    def gal(i, o):
        return LayerSpec("gal", i, o, heads=S, attention=attention)

    specs = [gal(in0, g0), gal(g0 * S, g1)]
    if layer_connection:
        specs += [LayerSpec("fl", g1 * S, c0), gal(c0, g2), LayerSpec("fl", g2 * S, c1), gal(c1, g3)]
    else:
        specs += [gal(g1 * S, g2), gal(g2 * S, g3)]
    specs += [LayerSpec("fl", g3 * S, d0, batch_norm=True),
              LayerSpec("fl", d0, d1, batch_norm=True),
              LayerSpec("fl", d1, n_tx + out_extra, activation=False)]
    return specs


# ---------------------------------------------------------------- layers

def attention_weights(X, a, W_dir, W_ner):
    """Per-head attention coefficients ``[b, n, j, s]`` (zero on the diagonal)."""
    n = X.shape[-2]
    if n < 2:
        raise ValueError("no neighbors to attend over (N=1)")
    dx = torch.einsum("...nl,sol->...nso", X, W_dir)
    nx = torch.einsum("...nl,sol->...nso", X, W_ner)
    z = dx.unsqueeze(-3) + nx.unsqueeze(-4)  # [..., n, j, s, o]
    f1 = leaky_relu(z)
    logits = (f1.real * a.real - f1.imag * a.imag).sum(-1)
    mask = torch.eye(n, dtype=torch.bool).unsqueeze(-1)
    logits = logits.masked_fill(mask, float("-inf"))
    return torch.softmax(logits, dim=-2), nx


def gal_forward(X, a, W_dir, W_ner, attention=True, activation=True):
    """Graph attention layer; ``X`` is (..., N, l_in), output (..., N, S*l_out)."""
    n = X.shape[-2]
    if attention:
        alpha, nx = attention_weights(X, a, W_dir, W_ner)
    else:
        if n < 2:
            raise ValueError("no neighbors to attend over (N=1)")
        nx = torch.einsum("...nl,sol->...nso", X, W_ner)
        alpha = ((1.0 - torch.eye(n, dtype=RDTYPE)) / (n - 1)).unsqueeze(-1).expand(n, n, nx.shape[-2])
    beta = torch.einsum("...njs,...jso->...nso", alpha.to(CDTYPE), nx)
    out = beta.reshape(*beta.shape[:-2], -1)
    return selu(out) if activation else out


class ComplexBatchNorm(nn.Module):
    """Batch norm applied separately to real and imaginary channels per feature."""

    def __init__(self, features):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(2, features, dtype=RDTYPE))
        self.bias = nn.Parameter(torch.zeros(2, features, dtype=RDTYPE))
        self.register_buffer("running_mean", torch.zeros(2, features, dtype=RDTYPE))
        self.register_buffer("running_var", torch.ones(2, features, dtype=RDTYPE))
        self.register_buffer("batches_tracked", torch.zeros((), dtype=torch.int64))

    def normalize(self, Y):
        """Return the standardised (pre scale/shift) stacked channels ``[2, rows, f]``."""
        flat = Y.reshape(-1, Y.shape[-1])
        parts = torch.stack([flat.real, flat.imag])
        if self.training:
            mean = parts.mean(1)
            var = parts.var(1, unbiased=False)
            with torch.no_grad():
                rows = parts.shape[1]
                unbiased = var * rows / max(rows - 1, 1)
                self.running_mean.mul_(1 - BN_MOMENTUM).add_(BN_MOMENTUM * mean)
                self.running_var.mul_(1 - BN_MOMENTUM).add_(BN_MOMENTUM * unbiased)
                self.batches_tracked += 1
        else:
            if int(self.batches_tracked) == 0:
                raise RuntimeError("batch norm has no running statistics; train the model first")
            mean, var = self.running_mean, self.running_var
        return (parts - mean[:, None]) / torch.sqrt(var[:, None] + BN_EPS)

    def forward(self, Y):
        z = self.normalize(Y) * self.weight[:, None] + self.bias[:, None]
        return torch.complex(z[0], z[1]).reshape(Y.shape)


def fl_forward(X, Q, bn: ComplexBatchNorm | None = None, activation=True):
    """Fully-connected layer ``AC(BN(Q x))`` applied to every node row."""
    if X.shape[-1] != Q.shape[1]:
        raise ValueError(f"FL shape mismatch: input {tuple(X.shape)}, weight {tuple(Q.shape)}")
    Y = X @ Q.transpose(0, 1)
    if bn is not None:
        Y = bn(Y)
    return selu(Y) if activation else Y


# ---------------------------------------------------------------- model

@dataclass
class ModelConfig:
    variant: str = "swiptnet"
    n_tx: int = 16
    l_pe: int = 12
    n_ue: int | None = None
    laplace: bool = True
    layer_connection: bool = True
    single_output: bool = True
    widths: Widths = field(default_factory=Widths.reference)
    input_scale: float = 1.0
    seed: int = 0

    def to_json(self) -> dict:
        d = asdict(self)
        d["widths"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["widths"].items()}
        return d

    @classmethod
    def from_json(cls, d) -> "ModelConfig":
        d = dict(d)
        w = d.pop("widths")
        widths = Widths(heads=w["heads"], gal=tuple(w["gal"]),
                        connection=tuple(w["connection"]), decoder=tuple(w["decoder"]))
        return cls(widths=widths, **d)


class SWIPTNet(nn.Module):
    def __init__(self, mcfg: ModelConfig):
        super().__init__()
        self.mcfg = mcfg
        self.specs = layer_specs(mcfg.variant, mcfg.n_tx, mcfg.l_pe, mcfg.widths, n_ue=mcfg.n_ue,
                                 laplace=mcfg.laplace, layer_connection=mcfg.layer_connection,
                                 single_output=mcfg.single_output)
        rng = np.random.default_rng(mcfg.seed)
        self.layers = nn.ModuleList()
        for spec in self.specs:
            layer = nn.Module()
            if spec.kind == "gal":
                S, o, i = spec.heads, spec.out_features, spec.in_features
                layer.W_ner = nn.Parameter(xavier_init((S, o, i), i, o, rng))
                if spec.attention:
                    layer.W_dir = nn.Parameter(xavier_init((S, o, i), i, o, rng))
                    layer.a = nn.Parameter(xavier_init((S, o), o, 1, rng))
            else:
                layer.Q = nn.Parameter(xavier_init((spec.out_features, spec.in_features),
                                                   spec.in_features, spec.out_features, rng))
                if spec.batch_norm:
                    layer.bn = ComplexBatchNorm(spec.out_features)
            self.layers.append(layer)

    @property
    def variant(self):
        return self.mcfg.variant

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def features(self, H):
        X = H * self.mcfg.input_scale
        if self.variant == "mlp":
            if self.mcfg.n_ue != H.shape[-2]:
                raise ValueError(f"mlp built for N={self.mcfg.n_ue} cannot take N={H.shape[-2]}")
            return X.reshape(*X.shape[:-2], -1)
        if self.mcfg.laplace:
            X = enhance_features(X, self.mcfg.l_pe)
        return X

    def raw_output(self, H):
        """Network output before the power projection: (beams, ratios-or-None)."""
        H = torch.as_tensor(H).to(CDTYPE)
        X = self.features(H)
        for spec, layer in zip(self.specs, self.layers):
            if spec.kind == "gal":
                X = gal_forward(X, getattr(layer, "a", None), getattr(layer, "W_dir", None), layer.W_ner,
                                attention=spec.attention, activation=spec.activation)
            else:
                X = fl_forward(X, layer.Q, getattr(layer, "bn", None), spec.activation)
        n_ue, n_tx = H.shape[-2], H.shape[-1]
        if self.variant == "mlp":
            X = X.reshape(*X.shape[:-1], n_ue, -1)
        if self.mcfg.single_output:
            return X, None
        ratios = torch.sigmoid(X[..., n_tx].real).clamp(RATIO_EPS, 1.0 - RATIO_EPS)
        return X[..., :n_tx], ratios

    def forward(self, H, cfg: SystemConfig):
        W, ratios = self.raw_output(H)
        return objective.scale_power(W, cfg.p_max_w), ratios


def build_model(variant="swiptnet", n_tx=16, l_pe=12, *, n_ue=None, laplace=None,
                layer_connection=None, single_output=True, widths: Widths | None = None,
                input_scale=1.0, seed=0) -> SWIPTNet:
    """Construct a Xavier-initialised model; ``laplace``/``layer_connection`` default per variant."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown model variant {variant!r}; expected one of {VARIANTS}")
    if laplace is None:
        laplace = variant in ("swiptnet", "gcn")
    if layer_connection is None:
        layer_connection = variant in ("swiptnet", "gcn", "mlp")
    mcfg = ModelConfig(variant=variant, n_tx=n_tx, l_pe=l_pe, n_ue=n_ue, laplace=laplace,
                       layer_connection=layer_connection, single_output=single_output,
                       widths=widths or Widths.reference(), input_scale=input_scale, seed=seed)
    return SWIPTNet(mcfg)


def forward(model: SWIPTNet, H, cfg: SystemConfig):
    """Power-projected beams for one sample (N, N_T) or a batch (B, N, N_T)."""
    return model(H, cfg)[0]


# ---------------------------------------------------------------- checkpoints
#
# Layout (little endian):
#   b"SWCK" | u32 version | u32 meta_len | meta (UTF-8 JSON) | u32 n_tensors |
#   per tensor: u16 name_len | name | u8 dtype (0 real f64, 1 complex f64, 2 int64) |
#               u8 ndim | u32 dims... | payload |
#   32-byte SHA-256 of everything before it.
# Complex payloads are (re f64, im f64) pairs, row-major, as in dataset files.

CKPT_MAGIC = b"SWCK"
CKPT_VERSION = 1
_DTYPES = {RDTYPE: (0, "<f8"), CDTYPE: (1, "<c16"), torch.int64: (2, "<i8")}
_DTYPE_CODES = {0: (RDTYPE, "<f8"), 1: (CDTYPE, "<c16"), 2: (torch.int64, "<i8")}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: SWIPTNet
    receiver: str
    system: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)

    @property
    def config_fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.system, sort_keys=True).encode()).hexdigest()[:16]


def _meta(ckpt: Checkpoint) -> dict:
    return {
        "model": ckpt.model.mcfg.to_json(),
        "specs": [asdict(s) for s in ckpt.model.specs],
        "receiver": ckpt.receiver,
        "system": ckpt.system,
        "config_fingerprint": ckpt.config_fingerprint,
        "history": ckpt.history,
    }


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    meta = json.dumps(_meta(ckpt), sort_keys=True).encode()
    buf.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(meta)) + meta)
    state = ckpt.model.state_dict()
    buf.write(struct.pack("<I", len(state)))
    for name, t in state.items():
        code, np_dtype = _DTYPES[t.dtype]
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)) + raw + struct.pack("<BB", code, t.ndim))
        buf.write(struct.pack(f"<{t.ndim}I", *t.shape))
        buf.write(np.ascontiguousarray(t.detach().numpy(), dtype=np_dtype).tobytes())
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    data = checkpoint_bytes(ckpt)
    with open(path, "wb") as f:
        f.write(data)


def load_checkpoint(path, expect_system: dict | None = None) -> Checkpoint:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 44 or data[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (corrupted or truncated)")
    version, meta_len = struct.unpack_from("<II", body, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    meta = json.loads(body[off:off + meta_len].decode())
    off += meta_len
    if expect_system is not None and expect_system != meta["system"]:
        raise CheckpointError(f"{path}: system configuration mismatch")
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off:off + nlen].decode()
        off += nlen
        code, ndim = struct.unpack_from("<BB", body, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", body, off)
        off += 4 * ndim
        dtype, np_dtype = _DTYPE_CODES[code]
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(body, dtype=np_dtype, count=n, offset=off).reshape(shape).copy()
        off += n * np.dtype(np_dtype).itemsize
        tensors[name] = torch.as_tensor(arr, dtype=dtype)
    if off != len(body):
        raise CheckpointError(f"{path}: trailing bytes after tensor table")
    model = SWIPTNet(ModelConfig.from_json(meta["model"]))
    if [asdict(s) for s in model.specs] != meta["specs"]:
        raise CheckpointError(f"{path}: layer spec table does not match model config")
    try:
        model.load_state_dict(tensors, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: tensor table mismatch: {exc}") from exc
    model.eval()
    return Checkpoint(model, meta["receiver"], meta["system"], meta["history"])
