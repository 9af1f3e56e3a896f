"""
Checkpoint Container Module

Stores trained networks as a directory of flat binary arrays plus a JSON
manifest.

Layout:
    <dir>/manifest.json     format version, iteration, network specs,
                            array names/shapes, normalizer counts
    <dir>/<name>.bin        one array, float64 little-endian, row-major

Networks:
- actor: mean MLP arrays followed by log_std
- critic: value MLP arrays
- model (optional): predictive MLP arrays plus input/output normalizer mean/var

Arrays are written with ndarray.tobytes() and restored with np.frombuffer, so
a save/load round trip is bit-exact.

Typical usage:
    save_checkpoint("runs/a/checkpoints/final", actor, critic, model, iteration=120)
    ckpt = load_checkpoint("runs/a/checkpoints/final")
"""

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .dyna import NormalizerStats, PredictiveParams
from .errors import ConfigError
from .nn_core import MlpParams, MlpSpec
from .policy import ActorParams, CriticParams

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
_DTYPE = np.dtype("<f8")


@dataclass
class Checkpoint:
    actor: ActorParams
    critic: CriticParams
    model: Optional[PredictiveParams]
    iteration: int


def _write_array(directory: Path, name: str, array: np.ndarray) -> Dict:
    data = np.ascontiguousarray(array, dtype=_DTYPE)
    (directory / f"{name}.bin").write_bytes(data.tobytes())
    return {"name": name, "shape": list(data.shape)}


def _read_array(directory: Path, entry: Dict) -> np.ndarray:
    path = directory / f"{entry['name']}.bin"
    if not path.exists():
        raise ConfigError(f"checkpoint array file missing: {path}")
    shape = tuple(entry["shape"])
    data = np.frombuffer(path.read_bytes(), dtype=_DTYPE)
    if data.size != int(np.prod(shape)):
        raise ConfigError(f"{path} holds {data.size} values, manifest says shape {shape}")
    return data.reshape(shape).astype(np.float64)


def _spec_dict(spec: MlpSpec) -> Dict:
    out = asdict(spec)
    out["hidden_dims"] = list(spec.hidden_dims)
    return out


def _write_network(directory: Path, prefix: str, arrays: Sequence[np.ndarray]) -> List[Dict]:
    return [_write_array(directory, f"{prefix}.{i}", a) for i, a in enumerate(arrays)]


def save_checkpoint(directory: Union[str, Path], actor: ActorParams, critic: CriticParams,
                    model: Optional[PredictiveParams] = None, iteration: int = 0) -> Path:
    """
    Write a checkpoint directory (created if needed, existing files overwritten).

    Args:
        directory: Target directory
        actor: Actor parameters
        critic: Critic parameters
        model: Optional predictive model; its optimizer state is not saved
        iteration: Number of completed training iterations

    Returns:
        Path of the checkpoint directory
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    networks = {
        "actor": {"spec": _spec_dict(actor.mean.spec), "arrays": _write_network(directory, "actor", actor.arrays())},
        "critic": {"spec": _spec_dict(critic.value.spec),
                   "arrays": _write_network(directory, "critic", critic.value.arrays())},
    }
    normalizers = {}
    if model is not None:
        networks["model"] = {"spec": _spec_dict(model.network.spec),
                             "arrays": _write_network(directory, "model", model.network.arrays())}
        for key, stats in (("input", model.input_stats), ("output", model.output_stats)):
            normalizers[key] = {
                "count": float(stats.count),
                "mean": _write_array(directory, f"model.{key}.mean", stats.mean),
                "var": _write_array(directory, f"model.{key}.var", stats.var),
            }

    manifest = {
        "format_version": FORMAT_VERSION,
        "iteration": int(iteration),
        "dtype": "float64-le",
        "networks": networks,
        "normalizers": normalizers,
    }
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))
    logger.info(f"Saved checkpoint at iteration {iteration} to {directory}")
    return directory


def _load_network(directory: Path, entry: Dict) -> Tuple[MlpSpec, List[np.ndarray]]:
    spec_data = dict(entry["spec"])
    spec = MlpSpec(spec_data["input_dim"], tuple(spec_data["hidden_dims"]),
                   spec_data["output_dim"], spec_data.get("activation", "elu"))
    return spec, [_read_array(directory, a) for a in entry["arrays"]]


def load_checkpoint(directory: Union[str, Path]) -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint.

    Raises:
        ConfigError: If the manifest is missing, has another format version,
            or an array file does not match its recorded shape
    """
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise ConfigError(f"no checkpoint manifest in {directory}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint format {manifest.get('format_version')} in {directory}")

    networks = manifest["networks"]
    spec, arrays = _load_network(directory, networks["actor"])
    actor = ActorParams.from_arrays(spec, arrays)
    spec, arrays = _load_network(directory, networks["critic"])
    critic = CriticParams(MlpParams.from_arrays(spec, arrays))

    model = None
    if "model" in networks:
        spec, arrays = _load_network(directory, networks["model"])
        stats = {}
        for key, entry in manifest["normalizers"].items():
            stats[key] = NormalizerStats(float(entry["count"]),
                                         _read_array(directory, entry["mean"]),
                                         _read_array(directory, entry["var"]))
        model = PredictiveParams(MlpParams.from_arrays(spec, arrays), stats["input"], stats["output"])

    return Checkpoint(actor, critic, model, int(manifest.get("iteration", 0)))
