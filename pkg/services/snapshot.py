"""
Parameter snapshot files.

A text header followed by raw little-endian float64 data:

    DACL-SNAPSHOT 1
    domains <M> ablation <flag>
    entries <K>
    <name> <rows> <cols>        (K lines, in data order)
    END
    <binary payload>

Names are <group>.<layer>.<weight|bias> with groups shared, domain<m>, c1,
c2 and disc. Network shapes are recovered from the header, so a snapshot
loads without the TrainConfig that produced it.
"""

import logging
import re
from collections import OrderedDict
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from errors import DataFormatError
from models import AblationEnum, MlpSpec, OutputActivation
from .network import GROUP_C1, GROUP_C2, GROUP_DISC, GROUP_SHARED, Mlp, ModelParams

logger = logging.getLogger(__name__)

MAGIC = "DACL-SNAPSHOT 1"
END_MARKER = "END"
DTYPE = np.dtype("<f8")

_NAME = re.compile(r"^(shared|domain\d+|c1|c2|disc)\.(\d+)\.(weight|bias)$")


def save_snapshot(params: ModelParams, path: str) -> Path:
    entries = list(params.named_parameters())
    lines = [
        MAGIC,
        f"domains {params.num_domains} ablation {params.ablation.value}",
        f"entries {len(entries)}",
    ]
    lines.extend(f"{name} {array.shape[0]} {array.shape[1]}" for name, array in entries)
    lines.append(END_MARKER)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("ascii"))
        for _, array in entries:
            f.write(np.ascontiguousarray(array, dtype=DTYPE).tobytes())
    logger.info(f"Wrote snapshot with {len(entries)} arrays to {path}")
    return path


def _read_header_line(f, path: str, line_number: int) -> str:
    raw = f.readline()
    if not raw:
        raise DataFormatError("unexpected end of snapshot header", path, line_number)
    try:
        return raw.decode("ascii").rstrip("\n")
    except UnicodeDecodeError:
        raise DataFormatError("snapshot header is not ASCII", path, line_number)


def _build_mlp(group: str, layers: List[Tuple[np.ndarray, np.ndarray]], path: str) -> Mlp:
    weights = [w for w, _ in layers]
    biases = [b for _, b in layers]
    for a, b in zip(weights, weights[1:]):
        if a.shape[1] != b.shape[0]:
            raise DataFormatError(f"layer shapes of {group!r} do not chain: {a.shape} -> {b.shape}", path)
    activation = OutputActivation.SOFTMAX if group in (GROUP_C1, GROUP_C2, GROUP_DISC) else OutputActivation.RELU
    spec = MlpSpec(
        input_dim=weights[0].shape[0],
        hidden_dims=tuple(w.shape[1] for w in weights[:-1]),
        output_dim=weights[-1].shape[1],
        output_activation=activation,
    )
    return Mlp(spec, weights, biases)


def load_snapshot(path: str) -> ModelParams:
    """Read a snapshot written by save_snapshot; any header or size inconsistency is a DataFormatError"""
    path = str(path)
    with open(path, "rb") as f:
        if _read_header_line(f, path, 1) != MAGIC:
            raise DataFormatError(f"missing {MAGIC!r} magic line", path, 1)

        parts = _read_header_line(f, path, 2).split()
        if len(parts) != 4 or parts[0] != "domains" or parts[2] != "ablation":
            raise DataFormatError("expected 'domains <M> ablation <flag>'", path, 2)
        try:
            num_domains = int(parts[1])
            ablation = AblationEnum(parts[3])
        except ValueError as e:
            raise DataFormatError(str(e), path, 2)

        parts = _read_header_line(f, path, 3).split()
        if len(parts) != 2 or parts[0] != "entries" or not parts[1].isdigit():
            raise DataFormatError("expected 'entries <K>'", path, 3)
        count = int(parts[1])

        shapes: List[Tuple[str, int, int]] = []
        for i in range(count):
            line_number = 4 + i
            parts = _read_header_line(f, path, line_number).split()
            if len(parts) != 3 or not _NAME.match(parts[0]) or not parts[1].isdigit() or not parts[2].isdigit():
                raise DataFormatError("expected '<group>.<layer>.<weight|bias> <rows> <cols>'", path, line_number)
            shapes.append((parts[0], int(parts[1]), int(parts[2])))
        if _read_header_line(f, path, 4 + count) != END_MARKER:
            raise DataFormatError(f"expected {END_MARKER!r} after {count} entries", path, 4 + count)

        payload = f.read()

    expected = sum(rows * cols for _, rows, cols in shapes) * DTYPE.itemsize
    if len(payload) != expected:
        raise DataFormatError(f"payload has {len(payload)} bytes, header describes {expected}", path)

    arrays: Dict[str, np.ndarray] = OrderedDict()
    offset = 0
    for name, rows, cols in shapes:
        size = rows * cols
        chunk = np.frombuffer(payload, dtype=DTYPE, count=size, offset=offset * DTYPE.itemsize)
        arrays[name] = chunk.reshape(rows, cols).astype(np.float64)
        offset += size

    # group -> layer -> (weight, bias)
    grouped: Dict[str, Dict[int, Dict[str, np.ndarray]]] = OrderedDict()
    for name, array in arrays.items():
        group, layer, kind = _NAME.match(name).groups()
        grouped.setdefault(group, {}).setdefault(int(layer), {})[kind] = array

    networks: Dict[str, Mlp] = {}
    for group, layers in grouped.items():
        if sorted(layers) != list(range(len(layers))) or any(set(pair) != {"weight", "bias"} for pair in layers.values()):
            raise DataFormatError(f"incomplete layers for {group!r}", path)
        networks[group] = _build_mlp(group, [(layers[i]["weight"], layers[i]["bias"]) for i in range(len(layers))], path)

    missing = [g for g in [GROUP_SHARED, GROUP_C1] + [f"domain{m}" for m in range(num_domains)] if g not in networks]
    if missing:
        raise DataFormatError(f"snapshot lacks networks {missing}", path)

    params = ModelParams(
        shared=networks[GROUP_SHARED],
        domain=[networks[f"domain{m}"] for m in range(num_domains)],
        c1=networks[GROUP_C1],
        c2=networks.get(GROUP_C2),
        disc=networks.get(GROUP_DISC),
        ablation=ablation,
    )
    logger.info(f"Loaded snapshot {path}: {num_domains} domains, ablation {ablation.value}")
    return params
