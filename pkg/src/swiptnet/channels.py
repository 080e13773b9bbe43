"""System configuration, Rayleigh channel generation and the dataset file format."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

MAGIC = b"SWPT"
VERSION = 1
_HEADER = struct.Struct("<4sIIIQBB")
_LABEL_HEAD = struct.Struct("<dBI")

RECEIVERS = ("ps", "ts")
_RECEIVER_CODE = {None: 0, "ps": 1, "ts": 2}
_CODE_RECEIVER = {v: k for k, v in _RECEIVER_CODE.items()}


class DatasetFormatError(ValueError):
    pass


def dbm_to_watt(x_dbm: float) -> float:
    return 10.0 ** ((x_dbm - 30.0) / 10.0)


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    """Physical constants, all in SI units (watts, bit/s/Hz)."""

    n_tx: int = 16
    n_ue: int = 12
    p_max_w: float = dbm_to_watt(30.0)
    r_req: float = 0.1
    gamma_req_w: float = dbm_to_watt(-30.0)
    sigma_s2_w: float = dbm_to_watt(-30.0)
    pl_db: float = 40.0

    def __post_init__(self):
        if self.n_tx < 1 or self.n_ue < 1:
            raise ValueError("n_tx and n_ue must be >= 1")
        if min(self.p_max_w, self.gamma_req_w, self.sigma_s2_w) <= 0:
            raise ValueError("powers must be positive")
        if self.r_req < 0:
            raise ValueError("r_req must be >= 0")

    @classmethod
    def from_dbm(cls, n_tx=16, n_ue=12, p_max_dbm=30.0, r_req=0.1,
                 gamma_req_dbm=-30.0, sigma_s2_dbm=-30.0, pl_db=40.0) -> "SystemConfig":
        return cls(n_tx=n_tx, n_ue=n_ue, p_max_w=dbm_to_watt(p_max_dbm), r_req=r_req,
                   gamma_req_w=dbm_to_watt(gamma_req_dbm),
                   sigma_s2_w=dbm_to_watt(sigma_s2_dbm), pl_db=pl_db)

    @property
    def channel_variance(self) -> float:
        return 10.0 ** (-self.pl_db / 10.0)

    def with_n_ue(self, n_ue: int) -> "SystemConfig":
        d = asdict(self)
        d["n_ue"] = n_ue
        return SystemConfig(**d)

    def fingerprint(self) -> str:
        return hashlib.sha256(repr(sorted(asdict(self).items())).encode()).hexdigest()[:16]


def generate_sample(cfg: SystemConfig, seed: int, index: int) -> np.ndarray:
    """One (n_ue, n_tx) CSCG channel matrix with per-entry variance 10^(-PL/10).

    Row n holds h_n. The result depends only on (cfg, seed, index).
    """
    rng = np.random.default_rng([seed, index])
    scale = np.sqrt(cfg.channel_variance / 2.0)
    g = rng.standard_normal((cfg.n_ue, cfg.n_tx, 2))
    return scale * (g[..., 0] + 1j * g[..., 1])


def generate_channels(cfg: SystemConfig, count: int, seed: int, start: int = 0) -> np.ndarray:
    return np.stack([generate_sample(cfg, seed, start + i) for i in range(count)])


@dataclass
class Label:
    sum_rate: float
    W: np.ndarray
    ratios: np.ndarray
    converged: bool = True
    restarts: int = 0


@dataclass
class Dataset:
    H: np.ndarray  # (count, n_ue, n_tx) complex128
    receiver: str | None = None
    labels: list[Label] | None = None
    version: int = VERSION

    def __post_init__(self):
        self.H = np.ascontiguousarray(self.H, dtype=np.complex128)
        if self.H.ndim != 3:
            raise ValueError(f"H must be (count, n_ue, n_tx), got {self.H.shape}")
        if self.labels is not None and len(self.labels) != len(self.H):
            raise ValueError("labels must align 1:1 with samples")
        if self.receiver not in _RECEIVER_CODE:
            raise ValueError(f"unknown receiver tag {self.receiver!r}")

    def __len__(self):
        return self.H.shape[0]

    @property
    def n_ue(self) -> int:
        return self.H.shape[1]

    @property
    def n_tx(self) -> int:
        return self.H.shape[2]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        labels = None if self.labels is None else [self.labels[i] for i in idx]
        return Dataset(self.H[idx], self.receiver, labels)

    def fingerprint(self) -> str:
        h = hashlib.sha256(self.H.tobytes())
        if self.labels is not None:
            for lab in self.labels:
                h.update(struct.pack("<d", lab.sum_rate))
        return h.hexdigest()[:16]


def make_dataset(cfg: SystemConfig, count: int, seed: int) -> Dataset:
    return Dataset(generate_channels(cfg, count, seed))


def _complex_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<c16").tobytes()


def write_dataset(path, ds: Dataset) -> None:
    count, n_ue, n_tx = ds.H.shape
    flag = 0 if ds.labels is None else 1
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, n_tx, n_ue, count, flag,
                             _RECEIVER_CODE[ds.receiver]))
        f.write(_complex_bytes(ds.H))
        if ds.labels is not None:
            for lab in ds.labels:
                f.write(_LABEL_HEAD.pack(float(lab.sum_rate), int(lab.converged), int(lab.restarts)))
                f.write(_complex_bytes(np.asarray(lab.W).reshape(n_ue, n_tx)))
                f.write(_complex_bytes(np.asarray(lab.ratios, dtype=np.complex128).reshape(n_ue)))


def read_dataset(path) -> Dataset:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DatasetFormatError(f"{path}: truncated header")
    magic, version, n_tx, n_ue, count, flag, rcode = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    if flag not in (0, 1) or rcode not in _CODE_RECEIVER:
        raise DatasetFormatError(f"{path}: corrupt header flags")
    sample_bytes = 16 * n_ue * n_tx
    label_bytes = _LABEL_HEAD.size + 16 * (n_ue * n_tx + n_ue)
    expected = _HEADER.size + count * sample_bytes + flag * count * label_bytes
    if len(data) != expected:
        raise DatasetFormatError(
            f"{path}: payload is {len(data)} bytes, header (n_tx={n_tx}, n_ue={n_ue}, "
            f"count={count}, labels={flag}) implies {expected}")
    off = _HEADER.size
    H = np.frombuffer(data, dtype="<c16", count=count * n_ue * n_tx, offset=off)
    H = H.reshape(count, n_ue, n_tx).astype(np.complex128)
    off += count * sample_bytes
    labels = None
    if flag:
        labels = []
        for _ in range(count):
            sr, conv, restarts = _LABEL_HEAD.unpack_from(data, off)
            off += _LABEL_HEAD.size
            W = np.frombuffer(data, dtype="<c16", count=n_ue * n_tx, offset=off)
            off += 16 * n_ue * n_tx
            r = np.frombuffer(data, dtype="<c16", count=n_ue, offset=off)
            off += 16 * n_ue
            labels.append(Label(sr, W.reshape(n_ue, n_tx).astype(np.complex128),
                                r.real.copy(), bool(conv), restarts))
    return Dataset(H, _CODE_RECEIVER[rcode], labels, version)


def split_dataset(ds: Dataset, ratio: float = 1.0 / 3.0) -> tuple[Dataset, Dataset]:
    """Index-prefix split: the first floor(ratio*count) samples form the test set."""
    if len(ds) == 0:
        raise ValueError("cannot split an empty dataset")
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    k = int(np.floor(ratio * len(ds) + 1e-9))
    idx = np.arange(len(ds))
    return ds.subset(idx[:k]), ds.subset(idx[k:])
