"""Run configuration: a flat, versioned key=value text format.

Two built-in profiles: `desk` (small encoder, from-scratch learning rates,
trains in seconds) and `paper` (full-scale hyperparameters: tau=0.02, batch
64, lr 2e-5, 5 epochs, 100 warm-up steps, which presume a pretrained
encoder).
"""

from dataclasses import dataclass, field, fields

from .encoder import EncoderConfig
from .experiment import MODES, RunSpec
from .recall import ContrastiveConfig
from .rerank import RerankConfig

CONFIG_VERSION = 1


@dataclass
class RunConfig:
    config_version: int = CONFIG_VERSION
    profile: str = "desk"
    d: int = 64
    layers: int = 2
    heads: int = 4
    ff: int = 256
    seq_len: int = 32
    pair_len: int = 48
    dropout: float = 0.1
    tau: float = 0.15
    batch_size: int = 8
    lr: float = 1e-3
    epochs: int = 10
    warmup_steps: int = 200
    weight_decay: float = 0.01
    restarts: int = 3
    k: int = 2
    hidden: int = 64
    anonymize: float = 0.0
    explore: float = 0.5
    m: int = 5
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    mode: str = "emma"

    def validate(self):
        if self.config_version != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {self.config_version}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.tau <= 0 or self.batch_size < 2 or self.k < 2 or self.m < 1 \
                or self.restarts < 1 or not (0.0 <= self.anonymize <= 1.0) \
                or not (0.0 <= self.explore <= 1.0):
            raise ValueError("invalid hyperparameter in run config")
        return self

    def to_spec(self, vocab_size):
        recall_enc = EncoderConfig(d=self.d, layers=self.layers, heads=self.heads,
                                   ff=self.ff, max_len=self.seq_len,
                                   vocab_size=vocab_size, dropout=self.dropout)
        rerank_enc = EncoderConfig(d=self.d, layers=self.layers, heads=self.heads,
                                   ff=self.ff, max_len=self.pair_len,
                                   vocab_size=vocab_size, dropout=self.dropout)
        contrastive = ContrastiveConfig(tau=self.tau, batch_size=self.batch_size,
                                        lr=self.lr, epochs=self.epochs,
                                        warmup_steps=self.warmup_steps,
                                        weight_decay=self.weight_decay,
                                        restarts=self.restarts)
        rerank = RerankConfig(k=self.k, hidden=self.hidden, lr=self.lr,
                              epochs=self.epochs, warmup_steps=self.warmup_steps,
                              weight_decay=self.weight_decay,
                              anonymize=self.anonymize, explore=self.explore)
        return RunSpec(recall_enc.validate(), rerank_enc.validate(),
                       contrastive.validate(), rerank.validate())

    def save(self, path):
        with open(path, "w") as f:
            for fld in fields(self):
                v = getattr(self, fld.name)
                if fld.name == "seeds":
                    v = ",".join(str(s) for s in v)
                f.write(f"{fld.name}={v}\n")

    @classmethod
    def load(cls, path):
        raw = {}
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key=value")
                k, v = line.split("=", 1)
                raw[k.strip()] = v.strip()
        kwargs = {}
        for fld in fields(cls):
            if fld.name not in raw:
                continue
            v = raw.pop(fld.name)
            if fld.name == "seeds":
                kwargs[fld.name] = [int(s) for s in v.split(",") if s]
            elif fld.type is int or fld.name in ("config_version",):
                kwargs[fld.name] = int(v)
            elif fld.type is float:
                kwargs[fld.name] = float(v)
            else:
                kwargs[fld.name] = v
        if raw:
            raise ValueError(f"unknown config keys: {sorted(raw)}")
        return cls(**kwargs).validate()


def desk_profile(**overrides):
    return RunConfig(**overrides).validate()


def paper_profile(**overrides):
    base = dict(profile="paper", d=768, layers=12, heads=12, ff=3072,
                seq_len=128, pair_len=256, tau=0.02, batch_size=64, lr=2e-5,
                epochs=5, warmup_steps=100, restarts=1, anonymize=0.0, explore=0.0)
    base.update(overrides)
    return RunConfig(**base).validate()
