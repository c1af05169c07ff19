"""Model files: binary parameter payload plus a JSON metadata sidecar.

A saved model is `<base>.params` (the transport payload layout, so any
protocol peer can read it) and `<base>.json` carrying version, granularity,
feature column names, the standardizer and bookkeeping metadata.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..scoring import Granularity
from ..trainer import LogisticModel, Standardizer
from ..transport import ParamPayload, decode_payload, encode_payload


@dataclass(frozen=True)
class SavedModel:
    params: np.ndarray
    version: int
    metadata: dict

    def as_logistic(self) -> LogisticModel:
        meta = self.metadata
        standardizer = Standardizer(
            mean=np.asarray(meta["standardizer"]["mean"], dtype=np.float64),
            std=np.asarray(meta["standardizer"]["std"], dtype=np.float64),
        )
        weights, bias = self.params[:-1], float(self.params[-1])
        return LogisticModel(
            weights=weights,
            bias=bias,
            trained_on=Granularity(meta.get("granularity", "weekly")),
            standardizer=standardizer,
            version=self.version,
        )


def save_model(
    base_path,
    params: np.ndarray,
    *,
    version: int,
    standardizer: Standardizer,
    granularity: Granularity = Granularity.WEEKLY,
    feature_columns: tuple[str, ...] = (),
    extra: dict | None = None,
) -> tuple[Path, Path]:
    base = Path(base_path)
    base.parent.mkdir(parents=True, exist_ok=True)
    payload = encode_payload(
        ParamPayload(np.asarray(params, dtype=np.float64), 0, version)
    )
    params_path = base.with_suffix(".params")
    json_path = base.with_suffix(".json")
    params_path.write_bytes(payload)
    metadata = {
        "version": version,
        "granularity": granularity.value,
        "feature_columns": list(feature_columns),
        "standardizer": {
            "mean": [float(v) for v in standardizer.mean],
            "std": [float(v) for v in standardizer.std],
        },
    }
    if extra:
        metadata.update(extra)
    json_path.write_text(json.dumps(metadata, sort_keys=True, indent=2) + "\n")
    return params_path, json_path


def load_model(path) -> SavedModel:
    """Load a model from its .params path, base path, or .json sidecar path."""
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".params", ".json") else path
    payload = decode_payload(base.with_suffix(".params").read_bytes())
    metadata = json.loads(base.with_suffix(".json").read_text())
    return SavedModel(
        params=payload.params, version=payload.base_version, metadata=metadata
    )
