"""
Binary checkpoint container.

Layout: magic ``TABRCKPT`` | u32 format version | u32 header length | JSON
header | raw little-endian arrays in declaration order. The header echoes the
model config and lists every array with section, dtype, shape and offset; the
same listing is written to a ``.manifest.txt`` sidecar.
"""

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from config.run_config import ModelConfig
from models.candidate_store import CandidateStore, EncodedCandidates
from models.context import ContextCache
from models.dataset import FeatureLayout
from models.enums import Task
from models.tabr import TabRModel
from services.autodiff import Tensor
from services.errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"TABRCKPT"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<8sII")


@dataclass
class Checkpoint:
    model: TabRModel
    context_cache: ContextCache | None = None
    candidate_store: CandidateStore | None = None


class CheckpointService:

    @staticmethod
    def manifest_path(path: str | Path) -> Path:
        path = Path(path)
        return path.with_name(path.name + ".manifest.txt")

    @staticmethod
    def save(
        path: str | Path,
        model: TabRModel,
        context_cache: ContextCache | None = None,
        candidate_store: CandidateStore | None = None,
    ) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)

        arrays: list[tuple[str, str, np.ndarray]] = [
            ("params", name, param.data) for name, param in model.params.items()
        ]
        extras: dict = {}
        if context_cache is not None:
            arrays.append(("context_cache", "indices", context_cache.indices))
            extras["context_cache"] = {"frozen_at_epoch": context_cache.frozen_at_epoch}
        if candidate_store is not None:
            arrays.extend([
                ("candidate_store", "features", candidate_store.features),
                ("candidate_store", "labels", candidate_store.labels),
                ("candidate_store", "representations", candidate_store.encoded.representations),
                ("candidate_store", "keys", candidate_store.encoded.keys),
            ])
            extras["candidate_store"] = {"version": candidate_store.version}

        entries, blobs, offset = [], [], 0
        for section, name, array in arrays:
            data = np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<"))
            blob = data.tobytes()
            entries.append({
                "section": section,
                "name": name,
                "dtype": data.dtype.str,
                "shape": list(data.shape),
                "offset": offset,
                "nbytes": len(blob),
            })
            blobs.append(blob)
            offset += len(blob)

        header = {
            "config": model.config.model_dump(mode="json"),
            "layout": {"n_num": model.layout.n_num, "n_bin": model.layout.n_bin, "n_onehot": model.layout.n_onehot},
            "task": model.task.value,
            "n_classes": model.n_classes,
            "version": model.version(),
            "tensors": entries,
            **extras,
        }
        header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as f:
            f.write(_PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
            f.write(header_bytes)
            for blob in blobs:
                f.write(blob)

        lines = ["section\tname\tdtype\tshape\toffset\tnbytes"]
        for entry in entries:
            shape = "x".join(str(s) for s in entry["shape"]) or "scalar"
            lines.append(
                f"{entry['section']}\t{entry['name']}\t{entry['dtype']}\t{shape}\t{entry['offset']}\t{entry['nbytes']}"
            )
        CheckpointService.manifest_path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
        logger.info(f"Saved checkpoint {path} ({len(entries)} arrays, {offset} bytes)")
        return path

    @staticmethod
    def load(path: str | Path) -> Checkpoint:
        path = Path(path)
        if not path.is_file():
            raise CheckpointError(f"checkpoint not found: {path}")
        raw = path.read_bytes()
        if len(raw) < _PREAMBLE.size:
            raise CheckpointError(f"{path}: truncated header")
        magic, version, header_length = _PREAMBLE.unpack_from(raw)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a TabR checkpoint")
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        start = _PREAMBLE.size + header_length
        try:
            header = json.loads(raw[_PREAMBLE.size:start].decode("utf-8"))
            config = ModelConfig.model_validate(header["config"])
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, ValidationError) as e:
            raise CheckpointError(f"{path}: malformed header ({e})") from None

        sections: dict[str, dict[str, np.ndarray]] = {}
        for entry in header["tensors"]:
            begin = start + entry["offset"]
            end = begin + entry["nbytes"]
            if end > len(raw):
                raise CheckpointError(f"{path}: truncated data for {entry['section']}.{entry['name']}")
            array = np.frombuffer(raw[begin:end], dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
            sections.setdefault(entry["section"], {})[entry["name"]] = array.astype(array.dtype.newbyteorder("="))

        params = {
            name: Tensor.wrap(array, requires_grad=True, name=name)
            for name, array in sections.get("params", {}).items()
        }
        model = TabRModel(
            config=config,
            layout=FeatureLayout(**header["layout"]),
            task=Task(header["task"]),
            n_classes=header["n_classes"],
            params=params,
        )
        if model.version() != header["version"]:
            raise CheckpointError(f"{path}: parameter data does not match the recorded version tag")

        cache = None
        if "context_cache" in sections:
            cache = ContextCache(
                indices=sections["context_cache"]["indices"],
                frozen_at_epoch=header["context_cache"]["frozen_at_epoch"],
            )
        store = None
        if "candidate_store" in sections:
            stored = sections["candidate_store"]
            store = CandidateStore(
                features=stored["features"],
                labels=stored["labels"],
                encoded=EncodedCandidates(stored["representations"], stored["keys"]),
                version=header["candidate_store"]["version"],
            )
        return Checkpoint(model=model, context_cache=cache, candidate_store=store)
