"""One-hidden-layer softmax MLP over hashed bag-of-words features.

Exposes both class probabilities and the penultimate (hidden) activations,
the latter feeding the Mahalanobis post-processing scorer.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_dim: int
    num_labels: int
    init_seed: int = 0

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "num_labels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")


class MlpClassifier:
    def __init__(self, cfg: ModelConfig, w1, b1, w2, b2):
        self.cfg = cfg
        self.w1 = ad.Tensor(w1)
        self.b1 = ad.Tensor(b1)
        self.w2 = ad.Tensor(w2)
        self.b2 = ad.Tensor(b2)

    @classmethod
    def init(cls, cfg: ModelConfig) -> "MlpClassifier":
        """Glorot-uniform weights, zero biases, deterministic per init_seed."""
        rng = np.random.default_rng(cfg.init_seed)
        lim1 = np.sqrt(6.0 / (cfg.input_dim + cfg.hidden_dim))
        lim2 = np.sqrt(6.0 / (cfg.hidden_dim + cfg.num_labels))
        return cls(
            cfg,
            rng.uniform(-lim1, lim1, size=(cfg.input_dim, cfg.hidden_dim)),
            np.zeros(cfg.hidden_dim),
            rng.uniform(-lim2, lim2, size=(cfg.hidden_dim, cfg.num_labels)),
            np.zeros(cfg.num_labels),
        )

    def parameters(self) -> dict[str, ad.Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def forward(self, x: np.ndarray | ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
        """Return (probs[batch x labels], penultimate[batch x hidden])."""
        if not isinstance(x, ad.Tensor):
            x = ad.Tensor(np.atleast_2d(x))
        if x.shape[1] != self.cfg.input_dim:
            raise ValueError(
                f"feature dimension mismatch: expected {self.cfg.input_dim}, "
                f"got {x.shape[1]}"
            )
        hidden = ad.relu(ad.affine(x, self.w1, self.b1))
        probs = ad.softmax_rows(ad.affine(hidden, self.w2, self.b2))
        return probs, hidden

    def save(self, path: str | Path) -> None:
        payload = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config": asdict(self.cfg),
            "params": {
                name: {"shape": list(t.shape), "values": t.values.ravel().tolist()}
                for name, t in self.parameters().items()
            },
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "MlpClassifier":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(
                f"unsupported checkpoint version {payload.get('format_version')!r}"
            )
        cfg = ModelConfig(**payload["config"])
        arrays = {}
        for name in ("w1", "b1", "w2", "b2"):
            entry = payload["params"][name]
            arrays[name] = np.array(entry["values"]).reshape(entry["shape"])
        return cls(cfg, arrays["w1"], arrays["b1"], arrays["w2"], arrays["b2"])
