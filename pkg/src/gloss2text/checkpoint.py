"""Checkpoint file format.

Layout: a magic line, one JSON header line (model config, both vocabularies,
free-form extra record), then the parameters in sorted name order as
``param <name> <shape-csv> <nbytes>`` lines each followed by the raw
little-endian float32 buffer and a newline, then ``end``. Writing the same
parameters twice produces byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .corpus import Vocabulary
from .errors import DataError
from .model import ModelConfig, TransformerModel

MAGIC = b"gloss2text-checkpoint 1"


def save_checkpoint(path, model: TransformerModel, src_vocab: Vocabulary,
                    tgt_vocab: Vocabulary, extra: dict | None = None) -> None:
    header = {
        "config": model.config.to_dict(),
        "seed": model.seed,
        "source_vocab": [[t, src_vocab.frequencies.get(t, 0)] for t in src_vocab.id_to_token],
        "target_vocab": [[t, tgt_vocab.frequencies.get(t, 0)] for t in tgt_vocab.id_to_token],
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC + b"\n")
        f.write(json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8") + b"\n")
        for name in sorted(model.params):
            arr = np.ascontiguousarray(model.params[name].data, dtype="<f4")
            shape = ",".join(str(d) for d in arr.shape)
            f.write(f"param {name} {shape} {arr.nbytes}\n".encode("utf-8"))
            f.write(arr.tobytes())
            f.write(b"\n")
        f.write(b"end\n")


def _vocab_from_entries(entries) -> Vocabulary:
    id_to_token = [t for t, _ in entries]
    return Vocabulary(
        {t: i for i, t in enumerate(id_to_token)},
        id_to_token,
        {t: int(c) for t, c in entries},
    )


def load_checkpoint(path):
    """Returns (model, src_vocab, tgt_vocab, extra)."""
    path = Path(path)
    with open(path, "rb") as f:
        if f.readline().rstrip(b"\n") != MAGIC:
            raise DataError(f"{path} is not a checkpoint file")
        header = json.loads(f.readline().decode("utf-8"))
        params: dict[str, np.ndarray] = {}
        while True:
            line = f.readline()
            if not line:
                raise DataError(f"{path}: truncated checkpoint (missing end marker)")
            line = line.rstrip(b"\n")
            if line == b"end":
                break
            fields = line.decode("utf-8").split(" ")
            if len(fields) != 4 or fields[0] != "param":
                raise DataError(f"{path}: malformed parameter header {line!r}")
            _, name, shape_csv, nbytes = fields
            shape = tuple(int(d) for d in shape_csv.split(",")) if shape_csv else ()
            buf = f.read(int(nbytes))
            if len(buf) != int(nbytes):
                raise DataError(f"{path}: truncated parameter {name}")
            f.read(1)  # trailing newline
            arr = np.frombuffer(buf, dtype="<f4").reshape(shape)
            params[name] = arr.astype(np.float32)
    config = ModelConfig.from_dict(header["config"])
    model = TransformerModel(config, seed=header.get("seed", 0), init=False)
    model.load_state_arrays(params)
    src_vocab = _vocab_from_entries(header["source_vocab"])
    tgt_vocab = _vocab_from_entries(header["target_vocab"])
    return model, src_vocab, tgt_vocab, header.get("extra", {})
