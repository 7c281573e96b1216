"""Adam optimizer, training loop, and checkpointing."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import ArchSpec, NetworkParams, Tensor, TrainConfig, loss_and_gradients

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8

CHECKPOINT_MAGIC = b"BFNC"
CHECKPOINT_VERSION = 1


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def init(cls, params: NetworkParams) -> "AdamState":
        return cls(
            m={k: np.zeros_like(t.data) for k, t in params.tensors.items()},
            v={k: np.zeros_like(t.data) for k, t in params.tensors.items()},
            step=0,
        )


def adam_step(state: AdamState, params: NetworkParams, grads: dict, lr: float) -> None:
    """Standard Adam update with bias correction, in place."""
    state.step += 1
    t = state.step
    for name, tensor in params.tensors.items():
        g = grads[name]
        if g.shape != tensor.data.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        g = g.astype(tensor.data.dtype)
        state.m[name] = BETA1 * state.m[name] + (1.0 - BETA1) * g
        state.v[name] = BETA2 * state.v[name] + (1.0 - BETA2) * g * g
        m_hat = state.m[name] / (1.0 - BETA1**t)
        v_hat = state.v[name] / (1.0 - BETA2**t)
        tensor.data = tensor.data - (lr * m_hat / (np.sqrt(v_hat) + EPSILON)).astype(
            tensor.data.dtype
        )


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(2, epoch))))


def train(
    dataset: np.ndarray,
    config: TrainConfig,
    checkpoint_dir=None,
    initial=None,
    start_epoch: int = 0,
    log=None,
):
    """Train on (count, N, 3) clouds; returns (params, adam_state, curve).

    Mini-batches are reshuffled each epoch from a per-epoch generator
    keyed on (seed, epoch), so a resumed run replays the exact
    trajectory of an unbroken one.
    """
    dataset = np.asarray(dataset, dtype=np.float64)
    if dataset.ndim != 3 or len(dataset) == 0:
        raise ValueError("dataset must be (count, N, 3) with count >= 1")

    arch = config.resolve_arch()
    if initial is not None:
        params, state = initial
    else:
        params = NetworkParams.init(
            arch, seed=int(np.random.SeedSequence(config.seed, spawn_key=(1,)).generate_state(1)[0])
        )
        state = AdamState.init(params)

    curve: list[float] = []
    count = len(dataset)
    for epoch in range(start_epoch, config.epochs):
        order = _epoch_rng(config.seed, epoch).permutation(count)
        total = 0.0
        for lo in range(0, count, config.batch_size):
            batch = dataset[order[lo : lo + config.batch_size]]
            loss, grads = loss_and_gradients(params, batch)
            adam_step(state, params, grads, config.learning_rate)
            total += loss * len(batch)
        mean_loss = total / count
        curve.append(mean_loss)
        if log is not None:
            log(epoch, mean_loss)
        if checkpoint_dir is not None and (epoch + 1) % config.checkpoint_every == 0:
            checkpoint_save(
                Path(checkpoint_dir) / f"epoch{epoch + 1:05d}.ckpt",
                params,
                state,
                config,
                epoch=epoch + 1,
            )
    return params, state, curve


def checkpoint_save(path, params: NetworkParams, state: AdamState, config: TrainConfig,
                    epoch: int = 0) -> None:
    """Binary checkpoint: magic, version, JSON manifest, float32/float64
    little-endian blob with per-tensor offsets in the manifest."""
    blob = bytearray()
    tensors = []
    named = list(params.tensors.items())
    named += [(f"adam.m.{k}", Tensor(v)) for k, v in state.m.items()]
    named += [(f"adam.v.{k}", Tensor(v)) for k, v in state.v.items()]
    for name, tensor in named:
        data = np.ascontiguousarray(tensor.data)
        if data.dtype.byteorder == ">":
            data = data.astype(data.dtype.newbyteorder("<"))
        raw = data.tobytes()
        tensors.append(
            dict(name=name, shape=list(data.shape), dtype=str(data.dtype),
                 offset=len(blob), length=len(raw))
        )
        blob.extend(raw)
    manifest = dict(
        version=CHECKPOINT_VERSION,
        arch=vars_arch(params.arch),
        step=state.step,
        epoch=epoch,
        config=config.to_dict(),
        tensors=tensors,
    )
    header = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        fh.write(bytes(blob))


def vars_arch(arch: ArchSpec) -> dict:
    d = dict(vars(arch))
    d["point_widths"] = list(arch.point_widths)
    return d


def arch_from_dict(d: dict) -> ArchSpec:
    d = dict(d)
    d["point_widths"] = tuple(d["point_widths"])
    return ArchSpec(**d)


class CheckpointError(ValueError):
    pass


def checkpoint_load(path, expected_arch: ArchSpec | None = None):
    """Load a checkpoint; returns (params, adam_state, config, epoch)."""
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    manifest = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    blob = raw[12 + header_len :]

    arch = arch_from_dict(manifest["arch"])
    if expected_arch is not None and arch != expected_arch:
        want = expected_arch.layer_shapes()
        have = arch.layer_shapes()
        for layer in want:
            if want[layer] != have.get(layer):
                raise CheckpointError(
                    f"architecture mismatch at tensor {layer}.w: "
                    f"expected {want[layer]}, checkpoint has {have.get(layer)}"
                )
        raise CheckpointError("architecture mismatch")

    loaded: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        end = entry["offset"] + entry["length"]
        if end > len(blob):
            raise CheckpointError(f"truncated checkpoint: tensor {entry['name']} out of range")
        arr = np.frombuffer(
            blob[entry["offset"] : end], dtype=np.dtype(entry["dtype"])
        ).reshape(entry["shape"]).copy()
        loaded[entry["name"]] = arr

    param_tensors = {}
    m, v = {}, {}
    for name, arr in loaded.items():
        if name.startswith("adam.m."):
            m[name[len("adam.m.") :]] = arr
        elif name.startswith("adam.v."):
            v[name[len("adam.v.") :]] = arr
        else:
            param_tensors[name] = Tensor(arr)

    params = NetworkParams(arch, param_tensors)
    for layer, (fan_in, fan_out) in arch.layer_shapes().items():
        got = param_tensors.get(f"{layer}.w")
        if got is None or got.data.shape != (fan_in, fan_out):
            raise CheckpointError(f"checkpoint missing or misshapen tensor {layer}.w")

    state = AdamState(m=m, v=v, step=int(manifest["step"]))
    cfg = dict(manifest["config"])
    if isinstance(cfg.get("arch"), dict):
        cfg["arch"] = arch_from_dict(cfg["arch"])
    config = TrainConfig(**cfg)
    return params, state, config, int(manifest.get("epoch", 0))
