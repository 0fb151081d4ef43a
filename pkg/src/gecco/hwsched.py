"""Layer-by-layer kernel-unit schedule and single-load on-chip memory estimate.

Each inference layer is dispatched to the shared compute units it needs:

    fully connected      -> matmul
    graph convolution    -> matmul, activation, elementwise, matrix_addition
    batch-wise attention -> matmul, activation, elementwise
    max pooling          -> max_pooling
    activation           -> activation
    batch normalization  -> batch_normalization

Row/column summations (attention normalisation, the all-ones aggregation)
run on the elementwise unit. Dropout is the identity at inference and is
not scheduled. This is a feasibility model; it has no notion of cycles.
"""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field

from .model import ModelConfig

DEFAULT_BUDGET_BYTES = 35 * 10**6


class KernelUnit(str, enum.Enum):
    MATMUL = "matmul"
    ACTIVATION = "activation"
    ELEMENTWISE = "elementwise"
    MATRIX_ADDITION = "matrix_addition"
    MAX_POOLING = "max_pooling"
    BATCH_NORMALIZATION = "batch_normalization"


U = KernelUnit

UNITS_BY_KIND = {
    "flatten": (U.ELEMENTWISE,),
    "fully_connected": (U.MATMUL,),
    "activation": (U.ACTIVATION,),
    "graph_convolution": (U.MATMUL, U.ACTIVATION, U.ELEMENTWISE, U.MATRIX_ADDITION),
    "batch_normalization": (U.BATCH_NORMALIZATION,),
    "max_pooling": (U.MAX_POOLING,),
    "batch_attention": (U.MATMUL, U.ACTIVATION, U.ELEMENTWISE),
}


@dataclass(frozen=True)
class Layer:
    index: int
    name: str
    kind: str
    inputs: tuple[str, ...]
    output: str
    scratch: tuple[str, ...] = ()


@dataclass(frozen=True)
class ScheduleRecord:
    layer_index: int
    layer_name: str
    layer_kind: str
    unit: KernelUnit
    operand_shapes: tuple[tuple[int, int], ...]
    onchip_bytes: int


@dataclass
class KernelSchedule:
    records: list[ScheduleRecord] = field(default_factory=list)

    def units(self) -> list[str]:
        return [r.unit.value for r in self.records]

    def __len__(self) -> int:
        return len(self.records)

    def to_text(self) -> str:
        lines = [f"{'#':>3} {'layer':<16}{'kind':<22}{'unit':<22}{'bytes':>12}  operands"]
        for i, r in enumerate(self.records):
            shapes = " ".join(f"{a}x{b}" for a, b in r.operand_shapes)
            lines.append(f"{i:>3} {r.layer_name:<16}{r.layer_kind:<22}{r.unit.value:<22}{r.onchip_bytes:>12}  {shapes}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer_index", "layer_name", "layer_kind", "unit", "operand_shapes", "onchip_bytes"])
        for r in self.records:
            w.writerow([r.layer_index, r.layer_name, r.layer_kind, r.unit.value,
                        ";".join(f"{a}x{b}" for a, b in r.operand_shapes), r.onchip_bytes])
        return buf.getvalue()


@dataclass(frozen=True)
class MemoryEstimate:
    parameter_bytes: int
    input_bytes: int
    peak_intermediate_bytes: int
    budget_bytes: int

    @property
    def total_bytes(self) -> int:
        return self.parameter_bytes + self.input_bytes + self.peak_intermediate_bytes

    @property
    def feasible(self) -> bool:
        return self.total_bytes <= self.budget_bytes

    def to_text(self) -> str:
        return "\n".join([
            f"parameters      {self.parameter_bytes:>14} B",
            f"input batch     {self.input_bytes:>14} B",
            f"peak activations{self.peak_intermediate_bytes:>14} B",
            f"total resident  {self.total_bytes:>14} B",
            f"budget          {self.budget_bytes:>14} B",
            f"feasible        {'yes' if self.feasible else 'NO'}",
        ])


def tensor_shapes(config: ModelConfig) -> dict[str, tuple[int, int]]:
    b, d, p, c = config.batch_size, config.d_out, config.pooled_dim, config.num_classes
    shapes = {
        "input": (b, config.input_dim), "x1": (b, config.input_dim),
        "w1": (config.input_dim, d), "b1": (1, d),
        "z1": (b, d), "x2": (b, d), "x3": (b, d),
        "adjacency": (b, b),
        "x4_conv": (b, d), "x4_bn": (b, d), "x4": (b, p),
        "bn_gamma": (1, d), "bn_beta": (1, d),
        "similarity": (b, b), "mixing": (b, b), "x5": (b, p), "x6": (b, p),
        "w_cls": (p, c), "b_cls": (1, c), "logits": (b, c), "probabilities": (b, c),
        "pooled_x3": (b, p),
    }
    for i in range(config.n_graph_layers):
        shapes[f"w2.{i}"] = (d, d)
        shapes[f"gcn{i}.aggregate"] = (b, d)
        shapes[f"gcn{i}.sigmoid"] = (b, d)
        shapes[f"h{i + 1}"] = (b, d)
    return shapes


def inference_layers(config: ModelConfig) -> list[Layer]:
    """The layer list the schedule walks, with the tensors each layer reads and writes."""
    layers: list[tuple] = [
        ("flatten", "flatten", ("input",), "x1"),
        ("fc", "fully_connected", ("x1", "w1", "b1"), "z1"),
        ("relu", "activation", ("z1",), "x2"),
        ("relu", "activation", ("x2",), "x3"),
    ]
    n = config.n_graph_layers
    if n > 0 and config.batch_size > 1:
        h = "x3"
        for i in range(n):
            out = "x4_conv" if i == n - 1 else f"h{i + 1}"
            layers.append((f"gcn{i}", "graph_convolution", (h, f"w2.{i}"), out,
                           ("adjacency", f"gcn{i}.aggregate", f"gcn{i}.sigmoid")))
            h = out
        layers += [
            ("batchnorm", "batch_normalization", ("x4_conv", "bn_gamma", "bn_beta"), "x4_bn"),
            ("maxpool", "max_pooling", ("x4_bn",), "x4"),
        ]
        if config.use_attention:
            layers.append(("attention", "batch_attention", ("x4",), "x6", ("similarity", "mixing", "x5")))
            head = "x6"
        else:
            head = "x4"
    else:
        layers.append(("maxpool", "max_pooling", ("x3",), "pooled_x3"))
        head = "pooled_x3"
    layers += [
        ("classifier", "fully_connected", (head, "w_cls", "b_cls"), "logits"),
        ("softmax", "activation", ("logits",), "probabilities"),
    ]
    return [Layer(i, *spec) for i, spec in enumerate(layers)]


def _is_parameter(name: str) -> bool:
    return name in ("w1", "b1", "bn_gamma", "bn_beta", "w_cls", "b_cls") or name.startswith("w2.")


def _nbytes(shape, bytes_per_scalar: int) -> int:
    return shape[0] * shape[1] * bytes_per_scalar


def emit_schedule(config: ModelConfig, bytes_per_scalar: int = 4) -> KernelSchedule:
    shapes = tensor_shapes(config)
    sched = KernelSchedule()
    for layer in inference_layers(config):
        try:
            units = UNITS_BY_KIND[layer.kind]
        except KeyError:
            raise RuntimeError(f"no kernel mapping for layer kind {layer.kind!r}") from None
        operands = tuple(dict.fromkeys(layer.inputs + layer.scratch + (layer.output,)))
        op_shapes = tuple(shapes[t] for t in operands)
        nbytes = sum(_nbytes(s, bytes_per_scalar) for s in op_shapes)
        for unit in units:
            sched.records.append(ScheduleRecord(layer.index, layer.name, layer.kind, unit, op_shapes, nbytes))
    return sched


def estimate_single_load_memory(config: ModelConfig, bytes_per_scalar: int = 4,
                                budget_bytes: int = DEFAULT_BUDGET_BYTES) -> MemoryEstimate:
    """Weights and input loaded once; activations live from producing layer to last reader."""
    if budget_bytes <= 0:
        raise ValueError("memory budget must be positive")
    shapes = tensor_shapes(config)
    layers = inference_layers(config)
    param_bytes = 0
    seen = set()
    for layer in layers:
        for t in layer.inputs:
            if _is_parameter(t) and t not in seen:
                seen.add(t)
                param_bytes += _nbytes(shapes[t], bytes_per_scalar)
    input_bytes = _nbytes(shapes["input"], bytes_per_scalar)

    born, last_use = {}, {}
    for layer in layers:
        for t in layer.inputs:
            last_use[t] = layer.index
        born[layer.output] = layer.index
        last_use.setdefault(layer.output, layer.index)
    peak = 0
    for layer in layers:
        live = sum(
            _nbytes(shapes[t], bytes_per_scalar)
            for t in born
            # flatten is a view of the loaded input, already counted
            if t != "x1" and born[t] <= layer.index <= last_use[t]
        )
        live += sum(_nbytes(shapes[t], bytes_per_scalar) for t in layer.scratch)
        peak = max(peak, live)
    return MemoryEstimate(param_bytes, input_bytes, peak, budget_bytes)
