"""Versioned binary container for all trained models.

One self-describing file (magic `SEQD`) holds every model of the three passes
plus the bigram table and a manifest, so the passes can never get out of sync
on disk. All floats are little-endian 64-bit; section payloads are a JSON
metadata block followed by named arrays. Serialization is byte-deterministic
for identical models.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .grammar import BigramTable
from .hmm import GmmHmmModel
from .labels import EventLabel
from .sda import PcaModel, SdaLayer, SdaModel, SecondPassModels

MAGIC = b"SEQD"
VERSION = 1


class BundleError(Exception):
    pass


def _pack_payload(meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    out = bytearray()
    meta_b = json.dumps(meta, sort_keys=True).encode("utf-8")
    out += struct.pack("<I", len(meta_b)) + meta_b
    out += struct.pack("<I", len(arrays))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        name_b = name.encode("utf-8")
        out += struct.pack("<I", len(name_b)) + name_b
        out += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            out += struct.pack("<Q", d)
        out += arr.tobytes()
    return bytes(out)


def _unpack_payload(buf: bytes):
    off = 0

    def take(n):
        nonlocal off
        chunk = buf[off:off + n]
        if len(chunk) != n:
            raise BundleError("truncated section payload")
        off += n
        return chunk

    meta_len, = struct.unpack("<I", take(4))
    meta = json.loads(take(meta_len).decode("utf-8"))
    n_arrays, = struct.unpack("<I", take(4))
    arrays = {}
    for _ in range(n_arrays):
        name_len, = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        ndim, = struct.unpack("<B", take(1))
        shape = tuple(struct.unpack("<Q", take(8))[0] for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(take(count * 8), dtype="<f8").reshape(shape)
    return meta, arrays


def write_sections(path: str, sections: dict[str, bytes]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(sections)))
        for name, payload in sections.items():
            name_b = name.encode("utf-8")
            f.write(struct.pack("<I", len(name_b)) + name_b)
            f.write(struct.pack("<Q", len(payload)) + payload)


def read_sections(path: str) -> dict[str, bytes]:
    with open(path, "rb") as f:
        head = f.read(8)
        if head[:4] != MAGIC:
            raise BundleError(f"{path}: not a SEQD container")
        version, = struct.unpack("<I", head[4:])
        if version != VERSION:
            raise BundleError(
                f"{path}: container version {version}, expected {VERSION}")
        count, = struct.unpack("<I", f.read(4))
        sections = {}
        for _ in range(count):
            name_len, = struct.unpack("<I", f.read(4))
            name = f.read(name_len).decode("utf-8")
            payload_len, = struct.unpack("<Q", f.read(8))
            payload = f.read(payload_len)
            if len(payload) != payload_len:
                raise BundleError(f"{path}: truncated section {name!r}")
            sections[name] = payload
    return sections


# ---------------------------------------------------------------------------
# Per-model codecs

def _hmm_to_payload(model: GmmHmmModel) -> bytes:
    return _pack_payload({"label": model.label.name},
                         {"trans": model.trans, "weights": model.weights,
                          "means": model.means, "variances": model.variances,
                          "var_floor": model.var_floor})


def _hmm_from_payload(buf: bytes) -> GmmHmmModel:
    meta, arr = _unpack_payload(buf)
    return GmmHmmModel(EventLabel[meta["label"]], arr["trans"], arr["weights"],
                       arr["means"], arr["variances"], arr["var_floor"])


def _pca_to_payload(model: PcaModel) -> bytes:
    return _pack_payload({}, {"mean": model.mean, "components": model.components})


def _pca_from_payload(buf: bytes) -> PcaModel:
    _, arr = _unpack_payload(buf)
    return PcaModel(arr["mean"], arr["components"])


def _sda_to_payload(model: SdaModel) -> bytes:
    meta = {"window_length": model.window_length,
            "corruption": model.corruption,
            "num_layers": len(model.layers)}
    arrays = {"out_w": model.out_w, "out_b": model.out_b,
              "scale_min": model.scale_min, "scale_max": model.scale_max}
    for i, layer in enumerate(model.layers):
        arrays[f"w{i}"] = layer.w
        arrays[f"b{i}"] = layer.b
        arrays[f"bp{i}"] = layer.b_prime
    return _pack_payload(meta, arrays)


def _sda_from_payload(buf: bytes) -> SdaModel:
    meta, arr = _unpack_payload(buf)
    layers = [SdaLayer(np.array(arr[f"w{i}"]), np.array(arr[f"b{i}"]),
                       np.array(arr[f"bp{i}"]))
              for i in range(meta["num_layers"])]
    return SdaModel(layers, np.array(arr["out_w"]), np.array(arr["out_b"]),
                    meta["window_length"], meta["corruption"],
                    arr["scale_min"], arr["scale_max"])


# ---------------------------------------------------------------------------
# The full bundle

@dataclass
class Bundle:
    hmm_models: dict[EventLabel, GmmHmmModel]
    second_pass: SecondPassModels
    bigram: BigramTable
    manifest: dict

    def save(self, path: str) -> None:
        sections = {"manifest": _pack_payload(self.manifest, {})}
        for lab in EventLabel:
            sections[f"hmm/{lab.name}"] = _hmm_to_payload(self.hmm_models[lab])
        sections["pca/detector"] = _pca_to_payload(self.second_pass.pca_detector)
        sections["pca/sixway"] = _pca_to_payload(self.second_pass.pca_sixway)
        sections["sda/spsw"] = _sda_to_payload(self.second_pass.sda_spsw)
        sections["sda/eyem"] = _sda_to_payload(self.second_pass.sda_eyem)
        sections["sda/sixway"] = _sda_to_payload(self.second_pass.sda_sixway)
        sections["bigram"] = _pack_payload({}, {"probs": self.bigram.probs})
        write_sections(path, sections)

    @classmethod
    def load(cls, path: str) -> "Bundle":
        sections = read_sections(path)
        try:
            manifest, _ = _unpack_payload(sections["manifest"])
            hmm_models = {lab: _hmm_from_payload(sections[f"hmm/{lab.name}"])
                          for lab in EventLabel}
            second = SecondPassModels(
                _pca_from_payload(sections["pca/detector"]),
                _pca_from_payload(sections["pca/sixway"]),
                _sda_from_payload(sections["sda/spsw"]),
                _sda_from_payload(sections["sda/eyem"]),
                _sda_from_payload(sections["sda/sixway"]))
            _, bigram_arr = _unpack_payload(sections["bigram"])
        except KeyError as exc:
            raise BundleError(f"{path}: missing section {exc}") from None
        return cls(hmm_models, second, BigramTable(np.array(bigram_arr["probs"])),
                   manifest)
