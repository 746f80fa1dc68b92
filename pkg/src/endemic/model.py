"""The full classifier: text, evidence, graph and contextual branches fused by co-attention."""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .coattn import CoAttention
from .fusion import P_DROP, ClassifierHead, ContextEncoder, fuse
from .textenc import BiLstmEncoder

CONTINUOUS_INPUTS = ("word_emb", "evidence", "tweet_graph", "user_graph", "context")


@dataclass(frozen=True)
class ModelDims:
    vocab_size: int
    n_tf: int
    n_uf: int
    K: int = 512
    G: int = 768
    C: int = 128
    k: int = 256
    N: int = 64
    E: int = 300
    max_evidence: int = 50
    p_drop: float = P_DROP

    @property
    def head_in(self) -> int:
        return 2 * self.K + 2 * self.G + self.C


@dataclass(frozen=True)
class Batch:
    ids: tuple[str, ...]
    token_ids: torch.Tensor  # (n, N) long
    evidence: torch.Tensor  # (n, max_evidence, K)
    tweet_graph: torch.Tensor  # (n, G)
    user_graph: torch.Tensor  # (n, G)
    tweet_feats: torch.Tensor  # (n, N_TF) raw, NaN = masked
    user_feats: torch.Tensor  # (n, N_UF) raw, NaN = masked
    labels: torch.Tensor  # (n,) long, -1 = unlabelled

    def __len__(self) -> int:
        return len(self.ids)

    def select(self, idx: Sequence[int]) -> "Batch":
        t = torch.as_tensor(list(idx), dtype=torch.long)
        tensors = {f.name: getattr(self, f.name)[t] for f in fields(self) if f.name != "ids"}
        return Batch(ids=tuple(self.ids[i] for i in idx), **tensors)

    def replace(self, **kw) -> "Batch":
        return replace(self, **kw)


class Endemic(nn.Module):
    def __init__(self, dims: ModelDims):
        super().__init__()
        self.dims = dims
        self.text = BiLstmEncoder(dims.vocab_size, dims.E, dims.K)
        self.ek_tt = CoAttention(dims.K, dims.k)
        self.tg_ug = CoAttention(dims.G, dims.k)
        self.context = ContextEncoder(dims.n_tf, dims.n_uf, dims.C)
        self.head = ClassifierHead(dims.head_in, dims.p_drop)

    def continuous_inputs(self, batch: Batch) -> dict[str, torch.Tensor]:
        """Differentiable inputs: perturbations for AT/VAT are added to these."""
        return {
            "word_emb": self.text.embed(batch.token_ids),
            "evidence": batch.evidence,
            "tweet_graph": batch.tweet_graph.unsqueeze(1),
            "user_graph": batch.user_graph.unsqueeze(1),
            "context": self.context.features(batch.tweet_feats, batch.user_feats),
        }

    def fused(self, inputs: dict[str, torch.Tensor]) -> torch.Tensor:
        d_tt = self.text.encode_embedded(inputs["word_emb"])
        ek_tt = self.ek_tt(inputs["evidence"], d_tt)
        graph = self.tg_ug(inputs["tweet_graph"], inputs["user_graph"])
        d_tu = self.context.encode_standardized(inputs["context"])
        return fuse(ek_tt.a_hat, ek_tt.b_hat, graph.a_hat, graph.b_hat, d_tu)

    def logits_from(self, inputs, train: bool = False, generator: Optional[torch.Generator] = None):
        return self.head.logits(self.fused(inputs), train=train, generator=generator)

    def logits(self, batch: Batch, train: bool = False, generator=None) -> torch.Tensor:
        return self.logits_from(self.continuous_inputs(batch), train, generator)

    def forward(self, batch: Batch, train: bool = False, generator=None) -> torch.Tensor:
        return torch.softmax(self.logits(batch, train, generator), dim=-1)

    @torch.no_grad()
    def predict_proba(self, batch: Batch) -> np.ndarray:
        return self.forward(batch).numpy()


def build_model(dims: ModelDims, seed: int = 0) -> Endemic:
    """Float64 model with seeded initialisation; the global torch RNG is left untouched."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return Endemic(dims).double()


def _write_npz(path: Path, arrays: dict[str, np.ndarray]) -> None:
    """npz with fixed member timestamps so identical arrays give identical bytes."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.external_attr = 0o644 << 16
            zf.writestr(info, buf.getvalue())


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_checkpoint(model: Endemic, directory, extra: Optional[dict] = None) -> Path:
    """``params.npz`` (one array per state entry) plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    params_path = directory / "params.npz"
    _write_npz(params_path, arrays)
    manifest = {
        "dims": asdict(model.dims),
        "segments": {
            "textenc": sorted(k for k in arrays if k.startswith("text.")),
            "coattn_ek_tt": sorted(k for k in arrays if k.startswith("ek_tt.")),
            "coattn_tg_ug": sorted(k for k in arrays if k.startswith("tg_ug.")),
            "fusion": sorted(k for k in arrays if k.startswith(("context.", "head."))),
        },
        "params_sha256": sha256_file(params_path),
    }
    if extra:
        manifest.update(extra)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_checkpoint(directory) -> tuple[Endemic, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    model = build_model(ModelDims(**manifest["dims"]))
    with np.load(directory / "params.npz", allow_pickle=False) as data:
        state = {k: torch.from_numpy(data[k].copy()) for k in data.files}
    model.load_state_dict(state)
    return model, manifest
