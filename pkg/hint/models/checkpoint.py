import json
import os
import uuid
from dataclasses import dataclass
from datetime import datetime
from typing import Dict, Optional

import numpy as np

from hint.config import settings
from hint.errors import CheckpointError
from hint.services.coupling_service import CouplingLayer, InnMap
from hint.services.hint_service import HintMap, SplitNode
from hint.services.mlp_service import DenseNet
from hint.services.numerics_service import HouseholderStack, MobiusParams

FORMAT_VERSION = 1


def _array(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64)


def _net_to_dict(net: DenseNet) -> Dict:
    return {
        "widths": list(net.layer_widths),
        "leaky_slope": net.leaky_slope,
        "output_clamp": net.output_clamp,
        "weights": [W.tolist() for W in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def _net_from_dict(raw: Dict) -> DenseNet:
    widths = raw["widths"]
    weights = [_array(W).reshape(widths[k + 1], widths[k]) for k, W in enumerate(raw["weights"])]
    biases = [_array(b).reshape(widths[k + 1]) for k, b in enumerate(raw["biases"])]
    return DenseNet(widths, weights, biases, raw["leaky_slope"], raw["output_clamp"])


def _stack_to_dict(stack: HouseholderStack) -> Dict:
    return {"type": "householder", "dim": stack.dim, "reflectors": [v.tolist() for v in stack.reflectors]}


def _stack_from_dict(raw: Dict) -> HouseholderStack:
    return HouseholderStack(raw["dim"], [_array(v) for v in raw["reflectors"]])


def _mixing_to_dict(mixing) -> Dict:
    if isinstance(mixing, MobiusParams):
        return {
            "type": "mobius",
            "b": mixing.b.tolist(),
            "a": mixing.a.tolist(),
            "alpha": mixing.alpha,
            "gamma": mixing.gamma,
            "Q": _stack_to_dict(mixing.Q),
        }
    return _stack_to_dict(mixing)


def _mixing_from_dict(raw: Dict):
    if raw["type"] == "mobius":
        return MobiusParams(_array(raw["b"]), _array(raw["a"]), raw["alpha"], raw["gamma"], _stack_from_dict(raw["Q"]))
    return _stack_from_dict(raw)


def _node_to_dict(node: Optional[SplitNode]) -> Optional[Dict]:
    if node is None:
        return None
    return {
        "dim": node.dim,
        "split": list(node.split),
        "Q": _stack_to_dict(node.Q),
        "s_net": _net_to_dict(node.s_net),
        "t_net": _net_to_dict(node.t_net),
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(raw: Optional[Dict]) -> Optional[SplitNode]:
    if raw is None:
        return None
    return SplitNode(
        raw["dim"],
        tuple(raw["split"]),
        _stack_from_dict(raw["Q"]),
        _net_from_dict(raw["s_net"]),
        _net_from_dict(raw["t_net"]),
        _node_from_dict(raw["left"]),
        _node_from_dict(raw["right"]),
    )


def map_to_dict(tmap) -> Dict:
    if isinstance(tmap, HintMap):
        return {
            "kind": "hint",
            "dim_y": tmap.dim_y,
            "dim_x": tmap.dim_x,
            "kr_enforced": tmap.kr_enforced,
            "n_layers": len(tmap.layers),
            "depth": tmap.layers[0].depth,
            "layers": [_node_to_dict(tree) for tree in tmap.layers],
        }
    if isinstance(tmap, InnMap):
        return {
            "kind": "inn",
            "dim": tmap.dim,
            "n_layers": len(tmap.layers),
            "layers": [
                {
                    "dim": layer.dim,
                    "split": list(layer.split),
                    "mixing": _mixing_to_dict(layer.mixing),
                    "s_net": _net_to_dict(layer.s_net),
                    "t_net": _net_to_dict(layer.t_net),
                }
                for layer in tmap.layers
            ],
        }
    raise CheckpointError(f"Cannot serialise a map of type {type(tmap).__name__}")


def map_from_dict(raw: Dict):
    if raw["kind"] == "hint":
        return HintMap([_node_from_dict(tree) for tree in raw["layers"]], raw["dim_y"], raw["dim_x"], raw["kr_enforced"])
    if raw["kind"] == "inn":
        layers = [
            CouplingLayer(
                layer["dim"],
                tuple(layer["split"]),
                _mixing_from_dict(layer["mixing"]),
                _net_from_dict(layer["s_net"]),
                _net_from_dict(layer["t_net"]),
            )
            for layer in raw["layers"]
        ]
        return InnMap(layers, raw["dim"])
    raise CheckpointError(f"Unknown map kind {raw['kind']!r}")


def parameter_count(tmap) -> int:
    return int(sum(p.size for p in tmap.parameters()))


@dataclass
class Checkpoint:
    format_version: int
    architecture: Dict
    map: object
    metadata: Dict


def checkpoint_save(tmap, path: str, metadata: Optional[Dict] = None) -> Dict:
    """Write the map as one JSON document; floats use the shortest exact repr"""
    architecture = map_to_dict(tmap)
    meta = {
        "id": str(uuid.uuid4()),
        "created_at": datetime.now().isoformat(),
        "n_parameters": parameter_count(tmap),
    }
    meta.update(metadata or {})
    document = {
        "format_version": FORMAT_VERSION,
        "architecture": architecture,
        "metadata": meta,
    }
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w") as f:
        json.dump(document, f)
    return meta


def read_checkpoint(path: str) -> Checkpoint:
    if not os.path.exists(path):
        raise CheckpointError(f"Checkpoint not found: {path}")
    with open(path, "r") as f:
        try:
            document = json.load(f)
        except json.JSONDecodeError as e:
            raise CheckpointError(f"Checkpoint {path} is truncated or corrupt: {e}") from e
    if not isinstance(document, dict) or "format_version" not in document:
        raise CheckpointError(f"Checkpoint {path} has no format_version")
    if document["format_version"] != FORMAT_VERSION:
        raise CheckpointError(f"Checkpoint version {document['format_version']} is not supported (expected {FORMAT_VERSION})")
    try:
        tmap = map_from_dict(document["architecture"])
        metadata = document.get("metadata", {})
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"Checkpoint {path} has an invalid architecture: {e}") from e
    expected = metadata.get("n_parameters")
    if expected is not None and expected != parameter_count(tmap):
        raise CheckpointError(f"Checkpoint declares {expected} parameters but holds {parameter_count(tmap)}")
    return Checkpoint(document["format_version"], document["architecture"], tmap, metadata)


def checkpoint_load(path: str):
    return read_checkpoint(path).map


class CheckpointModel:
    """Named checkpoints under one directory"""

    def __init__(self, directory: Optional[str] = None):
        self.directory = directory or os.path.join(settings.OUTPUT_DIR, "checkpoints")
        os.makedirs(self.directory, exist_ok=True)

    def path_for(self, name: str) -> str:
        return os.path.join(self.directory, f"{name}.json")

    def save(self, tmap, name: str, metadata: Optional[Dict] = None) -> Dict:
        """Save a map and return its metadata (including the generated id)"""
        return checkpoint_save(tmap, self.path_for(name), metadata)

    def load(self, name: str) -> Checkpoint:
        return read_checkpoint(self.path_for(name))

    def list_names(self):
        return sorted(f[:-5] for f in os.listdir(self.directory) if f.endswith(".json"))
