"""Single-file model checkpoints: text header + raw little-endian float64.

Layout::

    ecgrestore-checkpoint v1
    cfg.<field>=<value>          (one line per config field)
    iteration=<n>
    opt.<net>.step=<n>           (one line per optimizer)
    block <name> <dim,dim,...>   (one line per parameter/moment array)
    end-header
    <concatenated raw '<f8' blocks in the listed order>

Weights and both Adam moment sets are stored, so a resumed run continues
bit-identically.  The header is plain ASCII and the blocks are exact
byte images, so save/load round-trips are lossless.
"""

from __future__ import annotations

import numpy as np

from .cyclegan import CycleGanModel, TrainConfig
from .errors import ConfigurationError, InputError

MAGIC = "ecgrestore-checkpoint v1"

_INT_FIELDS = {"max_iterations", "batch_size", "seed", "q_order", "checkpoint_interval"}
_FLOAT_FIELDS = {"lambda_cyc", "beta_ide", "lr"}
_TUPLE_FIELDS = {"generator_channels", "discriminator_channels"}


def _config_lines(cfg: TrainConfig) -> list[str]:
    lines = []
    for name in sorted(_FLOAT_FIELDS):
        lines.append(f"cfg.{name}={float(getattr(cfg, name))!r}")
    for name in sorted(_INT_FIELDS):
        lines.append(f"cfg.{name}={getattr(cfg, name)}")
    for name in sorted(_TUPLE_FIELDS):
        value = getattr(cfg, name)
        if value is not None:
            lines.append(f"cfg.{name}=" + ",".join(str(v) for v in value))
    return lines


def _parse_config(pairs: dict[str, str]) -> TrainConfig:
    kwargs: dict = {}
    for key, raw in pairs.items():
        if key in _FLOAT_FIELDS:
            kwargs[key] = float(raw)
        elif key in _INT_FIELDS:
            kwargs[key] = int(raw)
        elif key in _TUPLE_FIELDS:
            kwargs[key] = tuple(int(v) for v in raw.split(","))
        else:
            raise ConfigurationError(f"unknown checkpoint config field {key!r}")
    return TrainConfig(**kwargs)


def _blocks(model: CycleGanModel) -> list[tuple[str, np.ndarray]]:
    out: list[tuple[str, np.ndarray]] = []
    for net_name, net in model.networks().items():
        for (param_name, _), arr in zip(net.param_layout(), net.params()):
            out.append((f"{net_name}.{param_name}", arr))
    for net_name, opt in model.optimizers().items():
        for i, m in enumerate(opt.first_moment):
            out.append((f"opt.{net_name}.m.{i}", m))
        for i, v in enumerate(opt.second_moment):
            out.append((f"opt.{net_name}.v.{i}", v))
    return out


def save_checkpoint(path, model: CycleGanModel) -> None:
    """Write the model, config, and optimizer state to one file."""
    lines = [MAGIC]
    lines.extend(_config_lines(model.config))
    lines.append(f"iteration={model.iteration}")
    for net_name, opt in model.optimizers().items():
        lines.append(f"opt.{net_name}.step={opt.step}")
    blocks = _blocks(model)
    for name, arr in blocks:
        lines.append("block " + name + " " + ",".join(str(d) for d in arr.shape))
    lines.append("end-header")
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("ascii"))
        for _, arr in blocks:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> CycleGanModel:
    """Rebuild a model from a checkpoint file, bit-exact."""
    with open(path, "rb") as f:
        data = f.read()
    marker = b"end-header\n"
    split = data.find(marker)
    if not data.startswith(MAGIC.encode("ascii")) or split < 0:
        raise InputError(f"{path} is not a recognized checkpoint file")
    header = data[:split].decode("ascii").splitlines()
    body = data[split + len(marker) :]

    cfg_pairs: dict[str, str] = {}
    meta: dict[str, str] = {}
    declared: list[tuple[str, tuple[int, ...]]] = []
    for line in header[1:]:
        if line.startswith("cfg."):
            key, _, value = line[4:].partition("=")
            cfg_pairs[key] = value
        elif line.startswith("block "):
            _, name, dims = line.split(" ")
            declared.append((name, tuple(int(d) for d in dims.split(","))))
        else:
            key, _, value = line.partition("=")
            meta[key] = value

    cfg = _parse_config(cfg_pairs)
    model = CycleGanModel.build(cfg)
    model.iteration = int(meta.get("iteration", "0"))
    for net_name, opt in model.optimizers().items():
        opt.step = int(meta.get(f"opt.{net_name}.step", "0"))

    targets = dict(_blocks(model))
    if [name for name, _ in declared] != list(targets.keys()):
        raise ConfigurationError(
            f"{path}: checkpoint blocks do not match the architecture built "
            f"from its config (model/config mismatch)"
        )
    offset = 0
    for name, shape in declared:
        target = targets[name]
        if shape != target.shape:
            raise ConfigurationError(
                f"{path}: block {name} has shape {shape}, expected {target.shape}"
            )
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = offset + count * 8
        if end > len(body):
            raise ConfigurationError(f"{path}: truncated block data at {name}")
        block = np.frombuffer(body, dtype="<f8", count=count, offset=offset).reshape(shape)
        np.copyto(target, block)
        offset = end
    if offset != len(body):
        raise ConfigurationError(f"{path}: {len(body) - offset} trailing bytes after last block")
    return model
