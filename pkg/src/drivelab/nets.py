"""Policy and value networks.

The actor is a two-layer conv encoder over stacked grayscale frames, a
spatial-grid tokenization with fixed sinusoidal position encodings, one
multi-head self-attention block with a residual feedforward, and a small MLP
decoder squashed by tanh. The twin critics share the encoder shape (never
the weights), mean-pool the feature map, and append the action scalar before
a three-layer MLP.

All parameters live in a named registry with a fixed order; checkpoints are
a JSON manifest followed by contiguous little-endian float32 blobs in
registry order.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import rng as rngmod
from . import tensor as T
from .optim import Adam

CHECKPOINT_MAGIC = b"DLCK"
CHECKPOINT_VERSION = 1


class ConfigMismatch(RuntimeError):
    """Checkpoint was produced under a different architecture config."""


class LoadError(RuntimeError):
    """Checkpoint file is malformed or truncated."""


@dataclass(frozen=True)
class ArchConfig:
    frames: int = 2
    height: int = 80
    width: int = 45
    conv1_filters: int = 8
    conv1_kernel: int = 7
    conv1_stride: int = 4
    conv2_filters: int = 16
    conv2_kernel: int = 3
    conv2_stride: int = 2
    heads: int = 4
    use_transformer: bool = True
    layer_norm: bool = False
    block_hidden: int = 32
    decoder_hidden: int = 64
    critic_hidden: int = 64
    dtype: str = "float32"

    def conv_out(self):
        h1 = (self.height - self.conv1_kernel) // self.conv1_stride + 1
        w1 = (self.width - self.conv1_kernel) // self.conv1_stride + 1
        h2 = (h1 - self.conv2_kernel) // self.conv2_stride + 1
        w2 = (w1 - self.conv2_kernel) // self.conv2_stride + 1
        return h2, w2

    @property
    def tokens(self) -> int:
        h2, w2 = self.conv_out()
        return h2 * w2

    @property
    def feat_dim(self) -> int:
        return self.conv2_filters

    @property
    def head_dim(self) -> int:
        if self.feat_dim % self.heads != 0:
            raise ValueError(
                f"head count {self.heads} must divide feature dim {self.feat_dim}"
            )
        return self.feat_dim // self.heads

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


def config_hash(arch: ArchConfig) -> str:
    d = asdict(arch)
    d.pop("dtype")  # precision does not change the architecture
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def sinusoidal_encoding(n_tokens: int, dim: int, dtype) -> np.ndarray:
    pe = np.zeros((n_tokens, dim), dtype=np.float64)
    pos = np.arange(n_tokens)[:, None]
    i = np.arange(0, dim, 2)[None, :]
    angle = pos / np.power(10000.0, i / dim)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe.astype(dtype)


def _he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class _Net:
    """Base: ordered parameter registry."""

    def __init__(self):
        self._registry: list[tuple[str, T.Tensor]] = []

    def _param(self, name: str, array: np.ndarray) -> T.Tensor:
        t = T.Tensor(array, requires_grad=True)
        self._registry.append((name, t))
        return t

    def params(self) -> list[T.Tensor]:
        return [t for _, t in self._registry]

    def named_params(self) -> list[tuple[str, T.Tensor]]:
        return list(self._registry)

    def zero_grads(self):
        for _, t in self._registry:
            t.zero_grad()

    def copy_from(self, other: "_Net"):
        for (_, a), (_, b) in zip(self._registry, other._registry):
            a.data[...] = b.data


class ActorNet(_Net):
    def __init__(self, arch: ArchConfig, rng: np.random.Generator):
        super().__init__()
        self.arch = arch
        dt = arch.np_dtype
        a = arch

        c1_fan = a.frames * a.conv1_kernel ** 2
        self.c1w = self._param("conv1.w", _he_uniform(
            rng, (a.conv1_filters, a.frames, a.conv1_kernel, a.conv1_kernel), c1_fan, dt))
        self.c1b = self._param("conv1.b", np.zeros(a.conv1_filters, dtype=dt))
        c2_fan = a.conv1_filters * a.conv2_kernel ** 2
        self.c2w = self._param("conv2.w", _he_uniform(
            rng, (a.conv2_filters, a.conv1_filters, a.conv2_kernel, a.conv2_kernel), c2_fan, dt))
        self.c2b = self._param("conv2.b", np.zeros(a.conv2_filters, dtype=dt))

        d = a.feat_dim
        if a.use_transformer:
            dk = a.head_dim
            self.wq, self.wk, self.wv = [], [], []
            for h in range(a.heads):
                self.wq.append(self._param(f"attn.h{h}.wq", _he_uniform(rng, (d, dk), d, dt)))
                self.wk.append(self._param(f"attn.h{h}.wk", _he_uniform(rng, (d, dk), d, dt)))
                self.wv.append(self._param(f"attn.h{h}.wv", _he_uniform(rng, (d, dk), d, dt)))
            self.wo = self._param("attn.wo", _he_uniform(rng, (d, d), d, dt))
            self.bw1 = self._param("block.w1", _he_uniform(rng, (d, a.block_hidden), d, dt))
            self.bb1 = self._param("block.b1", np.zeros(a.block_hidden, dtype=dt))
            self.bw2 = self._param("block.w2", _he_uniform(rng, (a.block_hidden, d), a.block_hidden, dt))
            self.bb2 = self._param("block.b2", np.zeros(d, dtype=dt))
            self.pos = sinusoidal_encoding(a.tokens, d, dt)

        self.dw1 = self._param("dec.w1", _he_uniform(rng, (d, a.decoder_hidden), d, dt))
        self.db1 = self._param("dec.b1", np.zeros(a.decoder_hidden, dtype=dt))
        self.dw2 = self._param("dec.w2", _he_uniform(rng, (a.decoder_hidden, 1), a.decoder_hidden, dt))
        self.db2 = self._param("dec.b2", np.zeros(1, dtype=dt))

    # -- forward pieces, exposed for testing -------------------------------

    def encode(self, obs: T.Tensor) -> T.Tensor:
        """Conv encoder to a (N, M, D) token sequence."""
        a = self.arch
        h1 = T.relu(T.conv2d(obs, self.c1w, self.c1b, a.conv1_stride))
        h2 = T.relu(T.conv2d(h1, self.c2w, self.c2b, a.conv2_stride))
        n = h2.shape[0]
        flat = T.reshape(h2, (n, a.feat_dim, a.tokens))
        return T.swap_last_axes(flat)

    def attention_block(self, tokens: T.Tensor) -> T.Tensor:
        """Multi-head self-attention plus feedforward, one residual around both."""
        a = self.arch
        scale = 1.0 / np.sqrt(a.head_dim)
        heads = []
        for h in range(a.heads):
            q = T.matmul(tokens, self.wq[h])
            k = T.matmul(tokens, self.wk[h])
            v = T.matmul(tokens, self.wv[h])
            scores = T.mul(T.matmul(q, T.swap_last_axes(k)), T.Tensor(np.asarray(scale, dtype=tokens.dtype)))
            attn = T.softmax_rows(scores)
            heads.append(T.matmul(attn, v))
        mh = T.matmul(T.concat(heads, axis=-1), self.wo)
        ff = T.add(T.matmul(T.relu(T.add(T.matmul(mh, self.bw1), self.bb1)), self.bw2), self.bb2)
        out = T.add(ff, tokens)
        if a.layer_norm:
            mu = T.mean(out, axis=-1, keepdims=True)
            centered = T.sub(out, mu)
            var = T.mean(T.square(centered), axis=-1, keepdims=True)
            out = T.mul(centered, T.pow_scalar(T.add(var, T.Tensor(np.asarray(1e-5, dtype=out.dtype))), -0.5))
        return out

    def forward(self, obs) -> T.Tensor:
        """(N, frames, H, W) pixels in [0,1] to (N, 1) actions in [-1, 1]."""
        a = self.arch
        if not isinstance(obs, T.Tensor):
            obs = T.Tensor(np.asarray(obs, dtype=a.np_dtype))
        if obs.ndim == 3:
            obs = T.reshape(obs, (1,) + obs.shape)
        if obs.shape[1:] != (a.frames, a.height, a.width):
            raise T.DimensionError(
                f"observation shape {obs.shape[1:]} != {(a.frames, a.height, a.width)}"
            )
        tokens = self.encode(obs)
        if a.use_transformer:
            tokens = self.attention_block(T.add(tokens, T.Tensor(self.pos)))
        pooled = T.mean(tokens, axis=1)
        hidden = T.relu(T.add(T.matmul(pooled, self.dw1), self.db1))
        return T.tanh(T.add(T.matmul(hidden, self.dw2), self.db2))

    def act(self, obs: np.ndarray) -> float:
        with T.no_grad():
            return float(self.forward(obs).data[0, 0])


class CriticNet(_Net):
    def __init__(self, arch: ArchConfig, rng: np.random.Generator):
        super().__init__()
        self.arch = arch
        dt = arch.np_dtype
        a = arch
        c1_fan = a.frames * a.conv1_kernel ** 2
        self.c1w = self._param("conv1.w", _he_uniform(
            rng, (a.conv1_filters, a.frames, a.conv1_kernel, a.conv1_kernel), c1_fan, dt))
        self.c1b = self._param("conv1.b", np.zeros(a.conv1_filters, dtype=dt))
        c2_fan = a.conv1_filters * a.conv2_kernel ** 2
        self.c2w = self._param("conv2.w", _he_uniform(
            rng, (a.conv2_filters, a.conv1_filters, a.conv2_kernel, a.conv2_kernel), c2_fan, dt))
        self.c2b = self._param("conv2.b", np.zeros(a.conv2_filters, dtype=dt))
        in_dim = a.feat_dim + 1
        self.w1 = self._param("mlp.w1", _he_uniform(rng, (in_dim, a.critic_hidden), in_dim, dt))
        self.b1 = self._param("mlp.b1", np.zeros(a.critic_hidden, dtype=dt))
        self.w2 = self._param("mlp.w2", _he_uniform(rng, (a.critic_hidden, a.critic_hidden), a.critic_hidden, dt))
        self.b2 = self._param("mlp.b2", np.zeros(a.critic_hidden, dtype=dt))
        self.w3 = self._param("mlp.w3", _he_uniform(rng, (a.critic_hidden, 1), a.critic_hidden, dt))
        self.b3 = self._param("mlp.b3", np.zeros(1, dtype=dt))

    def forward(self, obs, action) -> T.Tensor:
        a = self.arch
        if not isinstance(obs, T.Tensor):
            obs = T.Tensor(np.asarray(obs, dtype=a.np_dtype))
        if obs.ndim == 3:
            obs = T.reshape(obs, (1,) + obs.shape)
        if not isinstance(action, T.Tensor):
            action = T.Tensor(np.asarray(action, dtype=a.np_dtype).reshape(-1, 1))
        h1 = T.relu(T.conv2d(obs, self.c1w, self.c1b, a.conv1_stride))
        h2 = T.relu(T.conv2d(h1, self.c2w, self.c2b, a.conv2_stride))
        pooled = T.mean(h2, axis=(2, 3))
        z = T.concat([pooled, action], axis=-1)
        k = T.relu(T.add(T.matmul(z, self.w1), self.b1))
        k = T.relu(T.add(T.matmul(k, self.w2), self.b2))
        return T.add(T.matmul(k, self.w3), self.b3)


@dataclass
class PolicySnapshot:
    """Everything a trainer owns: online nets, targets, optimizer states."""

    arch: ArchConfig
    actor: ActorNet
    critic1: CriticNet
    critic2: CriticNet
    target_actor: ActorNet
    target_critic1: CriticNet
    target_critic2: CriticNet
    opt_actor: Adam
    opt_critic1: Adam
    opt_critic2: Adam
    step: int = 0
    episode: int = 0

    @property
    def hash(self) -> str:
        return config_hash(self.arch)

    def sync_targets(self):
        self.target_actor.copy_from(self.actor)
        self.target_critic1.copy_from(self.critic1)
        self.target_critic2.copy_from(self.critic2)


def init_snapshot(seed: int, arch: ArchConfig,
                  actor_lr: float = 2e-4, critic_lr: float = 5e-4,
                  lr_decay: float = 0.996) -> PolicySnapshot:
    """Fresh networks, targets as exact copies, zeroed optimizer state."""
    actor = ActorNet(arch, rngmod.stream(seed, "init", "actor"))
    c1 = CriticNet(arch, rngmod.stream(seed, "init", "critic1"))
    c2 = CriticNet(arch, rngmod.stream(seed, "init", "critic2"))
    ta = ActorNet(arch, rngmod.stream(seed, "init", "actor"))
    tc1 = CriticNet(arch, rngmod.stream(seed, "init", "critic1"))
    tc2 = CriticNet(arch, rngmod.stream(seed, "init", "critic2"))
    ta.copy_from(actor)
    tc1.copy_from(c1)
    tc2.copy_from(c2)
    return PolicySnapshot(
        arch=arch, actor=actor, critic1=c1, critic2=c2,
        target_actor=ta, target_critic1=tc1, target_critic2=tc2,
        opt_actor=Adam(actor.params(), actor_lr, lr_decay=lr_decay),
        opt_critic1=Adam(c1.params(), critic_lr, lr_decay=lr_decay),
        opt_critic2=Adam(c2.params(), critic_lr, lr_decay=lr_decay),
    )


# -- checkpoint io -----------------------------------------------------------


def _snapshot_entries(snap: PolicySnapshot):
    """Canonical (name, array) list; defines blob order."""
    entries = []
    for prefix, net in (
        ("actor", snap.actor), ("critic1", snap.critic1), ("critic2", snap.critic2),
        ("target_actor", snap.target_actor),
        ("target_critic1", snap.target_critic1), ("target_critic2", snap.target_critic2),
    ):
        for name, t in net.named_params():
            entries.append((f"{prefix}.{name}", t.data))
    for oname, opt in (("actor", snap.opt_actor), ("critic1", snap.opt_critic1),
                       ("critic2", snap.opt_critic2)):
        net = {"actor": snap.actor, "critic1": snap.critic1, "critic2": snap.critic2}[oname]
        for (pname, _), m, v in zip(net.named_params(), opt.m, opt.v):
            entries.append((f"opt.{oname}.m.{pname}", m))
            entries.append((f"opt.{oname}.v.{pname}", v))
    return entries


def save_snapshot(snap: PolicySnapshot, path: str):
    entries = _snapshot_entries(snap)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "config_hash": snap.hash,
        "arch": asdict(snap.arch),
        "step": snap.step,
        "episode": snap.episode,
        "opt": {
            name: {"t": opt.t, "lr": opt.lr, "base_lr": opt.base_lr, "lr_decay": opt.lr_decay}
            for name, opt in (("actor", snap.opt_actor), ("critic1", snap.opt_critic1),
                              ("critic2", snap.opt_critic2))
        },
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in entries],
    }
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(mbytes)))
        f.write(mbytes)
        for _, a in entries:
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_snapshot(path: str, expect_hash: str | None = None) -> PolicySnapshot:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise LoadError(f"{path}: not a checkpoint (bad magic)")
    (mlen,) = struct.unpack("<I", raw[4:8])
    try:
        manifest = json.loads(raw[8 : 8 + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise LoadError(f"{path}: corrupt manifest ({e})") from e
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise LoadError(f"{path}: format version {manifest.get('format_version')} "
                        f"!= {CHECKPOINT_VERSION}")
    arch = ArchConfig(**manifest["arch"])
    stored_hash = manifest["config_hash"]
    if stored_hash != config_hash(arch):
        raise LoadError(f"{path}: manifest hash {stored_hash} does not match its own "
                        f"arch ({config_hash(arch)})")
    if expect_hash is not None and expect_hash != stored_hash:
        raise ConfigMismatch(
            f"checkpoint config hash {stored_hash} != expected {expect_hash}")

    snap = init_snapshot(0, arch)
    opt = manifest["opt"]
    for name, o in (("actor", snap.opt_actor), ("critic1", snap.opt_critic1),
                    ("critic2", snap.opt_critic2)):
        o.t = int(opt[name]["t"])
        o.lr = float(opt[name]["lr"])
        o.base_lr = float(opt[name]["base_lr"])
        o.lr_decay = float(opt[name]["lr_decay"])
    snap.step = int(manifest["step"])
    snap.episode = int(manifest["episode"])

    entries = _snapshot_entries(snap)
    names = [n for n, _ in entries]
    stored = [t["name"] for t in manifest["tensors"]]
    if names != stored:
        raise LoadError(f"{path}: tensor registry mismatch")
    off = 8 + mlen
    for (name, arr), meta in zip(entries, manifest["tensors"]):
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if off + nbytes > len(raw):
            raise LoadError(f"{path}: truncated blob at {name}")
        vals = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(shape)
        arr[...] = vals.astype(arr.dtype)
        off += nbytes
    if off != len(raw):
        raise LoadError(f"{path}: {len(raw) - off} trailing bytes")
    return snap
