"""Pole memory: named snapshots of trained measurement poles.

A meta circuit is shared by every task; what distinguishes one trained
behaviour from another is only the pole vector of each agent. Every
agent keeps a (polar, azimuth) pair for all L qubits, 2L numbers, even
for qubits that no action measures (qubit 1 of the default two-step
network). Storing K behaviours therefore costs 2 * K * L numbers per
agent, independent of the circuit size.

The store is persisted as one JSON document:

    {"format_version": 1,
     "architecture": {"qubits": 3, "depth": 5, "beta": 8.0,
                      "action_qubits": [[2], [3]]},
     "angles": [...],
     "entries": [{"label": "meta", "agent_poles": [[...], [...]],
                  "variant": "twostep-main", "epoch": 0,
                  "alpha_degrees": 30.0}]}

Floats are written with shortest round-trip precision, so vectors come
back bit-identical.
"""
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from qm2arl.artifacts import PathLike, write_json
from qm2arl.errors import ArgumentError, MemoryLookupError, MemoryParseError, SizeError
from qm2arl.qnn import QnnConfig

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
META_LABEL = "meta"


@dataclass
class PoleMemoryEntry:
    """Poles of every agent saved under one label"""

    label: str
    agent_poles: np.ndarray
    """Shape (agents, 2L)"""
    variant: str = ""
    epoch: int = 0
    alpha_degrees: float = 0.0


@dataclass
class PoleMemoryStore:
    """Label-to-poles map, optionally carrying the meta circuit it belongs to"""

    entries: Dict[str, PoleMemoryEntry] = field(default_factory=dict)
    angles: Optional[np.ndarray] = None
    config: Optional[QnnConfig] = None

    @property
    def labels(self) -> List[str]:
        return list(self.entries)

    def __contains__(self, label: str) -> bool:
        return label in self.entries

    def stored_values(self) -> int:
        """Count of numbers held in pole entries."""
        return sum(entry.agent_poles.size for entry in self.entries.values())

    def to_document(self) -> dict:
        document: dict = {"format_version": FORMAT_VERSION}
        if self.config is not None:
            document["architecture"] = {
                "qubits": self.config.num_qubits,
                "depth": self.config.depth,
                "beta": self.config.beta,
                "action_qubits": [list(q) for q in self.config.action_qubits],
            }
        if self.angles is not None:
            document["angles"] = [float(x) for x in self.angles]
        document["entries"] = [
            {
                "label": entry.label,
                "agent_poles": [[float(x) for x in row] for row in entry.agent_poles],
                "variant": entry.variant,
                "epoch": int(entry.epoch),
                "alpha_degrees": float(entry.alpha_degrees),
            }
            for entry in self.entries.values()
        ]
        return document

    @classmethod
    def from_document(cls, document: dict) -> "PoleMemoryStore":
        try:
            if document["format_version"] != FORMAT_VERSION:
                raise MemoryParseError(
                    f"unsupported pole memory version {document['format_version']}"
                )
            config = None
            if "architecture" in document:
                arch = document["architecture"]
                config = QnnConfig(
                    num_qubits=int(arch["qubits"]),
                    depth=int(arch["depth"]),
                    beta=float(arch["beta"]),
                    action_qubits=tuple(tuple(int(q) for q in a) for a in arch["action_qubits"]),
                )
            angles = None
            if "angles" in document:
                angles = np.array(document["angles"], dtype=np.float64)
            entries = {}
            for raw in document["entries"]:
                entry = PoleMemoryEntry(
                    label=str(raw["label"]),
                    agent_poles=np.array(raw["agent_poles"], dtype=np.float64),
                    variant=str(raw.get("variant", "")),
                    epoch=int(raw.get("epoch", 0)),
                    alpha_degrees=float(raw.get("alpha_degrees", 0.0)),
                )
                if entry.agent_poles.ndim != 2:
                    raise MemoryParseError(f"entry '{entry.label}' poles are not a matrix")
                entries[entry.label] = entry
        except (KeyError, TypeError, ValueError) as err:
            if isinstance(err, MemoryParseError):
                raise
            raise MemoryParseError(f"malformed pole memory document: {err}") from err
        return cls(entries=entries, angles=angles, config=config)

    def write(self, path: PathLike) -> None:
        write_json(path, self.to_document())

    @classmethod
    def read(cls, path: PathLike) -> "PoleMemoryStore":
        try:
            with open(path, "r") as handle:
                document = json.load(handle)
        except json.JSONDecodeError as err:
            raise MemoryParseError(f"{path} is not a pole memory file: {err}") from err
        if not isinstance(document, dict):
            raise MemoryParseError(f"{path} does not hold a pole memory document")
        return cls.from_document(document)


def new_store(
    num_agents: int,
    config: QnnConfig,
    angles: Optional[np.ndarray] = None,
    alpha_degrees: float = 0.0,
) -> PoleMemoryStore:
    """Create a store holding the all-zero meta poles."""
    store = PoleMemoryStore(angles=angles, config=config)
    pole_memory_save(
        store,
        META_LABEL,
        np.zeros((num_agents, config.num_poles)),
        alpha_degrees=alpha_degrees,
    )
    return store


def pole_memory_save(
    store: PoleMemoryStore,
    label: str,
    poles: np.ndarray,
    variant: str = "",
    epoch: int = 0,
    alpha_degrees: float = 0.0,
) -> None:
    """Save a copy of `poles` (agents x 2L) under `label`, replacing any entry."""
    if not label:
        raise ArgumentError("pole memory labels must be nonempty")
    poles = np.array(poles, dtype=np.float64)
    if poles.ndim == 1:
        poles = poles[None, :]
    if store.config is not None and poles.shape[1] != store.config.num_poles:
        raise SizeError(f"expected {store.config.num_poles} poles per agent")
    store.entries[label] = PoleMemoryEntry(label, poles, variant, epoch, alpha_degrees)
    logger.debug("saved poles under '%s'", label)


def pole_memory_load(store: PoleMemoryStore, label: str) -> np.ndarray:
    """Return a copy of the poles saved under `label`."""
    if not label:
        raise ArgumentError("pole memory labels must be nonempty")
    if label not in store.entries:
        raise MemoryLookupError(f"no poles saved under '{label}'")
    return store.entries[label].agent_poles.copy()
