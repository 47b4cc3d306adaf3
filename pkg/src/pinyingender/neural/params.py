"""Parameter containers for the encoder and the two models.

Everything is float64 numpy, initialized uniformly in [-1/sqrt(d),
+1/sqrt(d)] from a caller-supplied generator, in declaration order, so
a seed pins every weight bit.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator

import numpy as np

FF_MULT = 4
N_GENDERS = 2


def _uniform(rng: np.random.Generator, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(np.float64)


@dataclass
class EncoderParams:
    """One attention block plus feed-forward, with token and position
    embeddings in front."""

    emb: np.ndarray     # (vocab, d)
    pos: np.ndarray     # (l_max + 1, d)
    wq: np.ndarray      # (d, d)
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray      # (d, 4d)
    b1: np.ndarray      # (4d,)
    w2: np.ndarray      # (4d, d)
    b2: np.ndarray      # (d,)
    ln1_g: np.ndarray   # (d,)
    ln1_b: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray

    @property
    def d(self) -> int:
        return self.emb.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.emb.shape[0]

    @property
    def max_positions(self) -> int:
        return self.pos.shape[0]

    @classmethod
    def init(cls, vocab_size: int, d: int, l_max: int, rng: np.random.Generator) -> "EncoderParams":
        bound = 1.0 / np.sqrt(d)
        ff = FF_MULT * d
        return cls(
            emb=_uniform(rng, bound, (vocab_size, d)),
            pos=_uniform(rng, bound, (l_max + 1, d)),
            wq=_uniform(rng, bound, (d, d)),
            wk=_uniform(rng, bound, (d, d)),
            wv=_uniform(rng, bound, (d, d)),
            wo=_uniform(rng, bound, (d, d)),
            w1=_uniform(rng, bound, (d, ff)),
            b1=_uniform(rng, bound, (ff,)),
            w2=_uniform(rng, bound, (ff, d)),
            b2=_uniform(rng, bound, (d,)),
            ln1_g=_uniform(rng, bound, (d,)),
            ln1_b=_uniform(rng, bound, (d,)),
            ln2_g=_uniform(rng, bound, (d,)),
            ln2_b=_uniform(rng, bound, (d,)),
        )

    @classmethod
    def zeros_like(cls, other: "EncoderParams") -> "EncoderParams":
        return cls(**{
            f.name: np.zeros_like(getattr(other, f.name))
            for f in dataclasses.fields(other)
        })

    def named_arrays(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for f in dataclasses.fields(self):
            yield prefix + f.name, getattr(self, f.name)

    def validate(self) -> None:
        d = self.d
        ff = FF_MULT * d
        expect = {
            "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
            "w1": (d, ff), "b1": (ff,), "w2": (ff, d), "b2": (d,),
            "ln1_g": (d,), "ln1_b": (d,), "ln2_g": (d,), "ln2_b": (d,),
        }
        for name, shape in expect.items():
            actual = getattr(self, name).shape
            if actual != shape:
                raise ValueError(f"{name} has shape {actual}, expected {shape}")
        for name, arr in self.named_arrays():
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite values")


@dataclass
class StudentModel:
    """Romanized-name model: shared encoder, character prediction head,
    feature projection, gender head."""

    encoder: EncoderParams
    feat_w: np.ndarray   # (d, d)
    feat_b: np.ndarray   # (d,)
    gen_w: np.ndarray    # (d, 2)
    gen_b: np.ndarray    # (2,)
    char_w: np.ndarray   # (d, hanzi_vocab)
    char_b: np.ndarray   # (hanzi_vocab,)

    @classmethod
    def init(cls, pinyin_vocab_size: int, hanzi_vocab_size: int, d: int,
             l_max: int, rng: np.random.Generator) -> "StudentModel":
        bound = 1.0 / np.sqrt(d)
        return cls(
            encoder=EncoderParams.init(pinyin_vocab_size, d, l_max, rng),
            feat_w=_uniform(rng, bound, (d, d)),
            feat_b=_uniform(rng, bound, (d,)),
            gen_w=_uniform(rng, bound, (d, N_GENDERS)),
            gen_b=_uniform(rng, bound, (N_GENDERS,)),
            char_w=_uniform(rng, bound, (d, hanzi_vocab_size)),
            char_b=_uniform(rng, bound, (hanzi_vocab_size,)),
        )

    @classmethod
    def zeros_like(cls, other: "StudentModel") -> "StudentModel":
        return cls(
            encoder=EncoderParams.zeros_like(other.encoder),
            feat_w=np.zeros_like(other.feat_w),
            feat_b=np.zeros_like(other.feat_b),
            gen_w=np.zeros_like(other.gen_w),
            gen_b=np.zeros_like(other.gen_b),
            char_w=np.zeros_like(other.char_w),
            char_b=np.zeros_like(other.char_b),
        )

    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        yield from self.encoder.named_arrays("encoder.")
        for name in ("feat_w", "feat_b", "gen_w", "gen_b", "char_w", "char_b"):
            yield name, getattr(self, name)

    def validate(self) -> None:
        self.encoder.validate()
        d = self.encoder.d
        if self.feat_w.shape != (d, d) or self.gen_w.shape != (d, N_GENDERS):
            raise ValueError("student head shapes inconsistent with encoder width")
        if self.char_w.shape[0] != d or self.char_b.shape != (self.char_w.shape[1],):
            raise ValueError("character head shapes inconsistent")


@dataclass
class TeacherModel:
    """Character-name model: its own encoder and a gender head."""

    encoder: EncoderParams
    gen_w: np.ndarray
    gen_b: np.ndarray

    @classmethod
    def init(cls, hanzi_vocab_size: int, d: int, l_max: int,
             rng: np.random.Generator) -> "TeacherModel":
        bound = 1.0 / np.sqrt(d)
        return cls(
            encoder=EncoderParams.init(hanzi_vocab_size, d, l_max, rng),
            gen_w=_uniform(rng, bound, (d, N_GENDERS)),
            gen_b=_uniform(rng, bound, (N_GENDERS,)),
        )

    @classmethod
    def zeros_like(cls, other: "TeacherModel") -> "TeacherModel":
        return cls(
            encoder=EncoderParams.zeros_like(other.encoder),
            gen_w=np.zeros_like(other.gen_w),
            gen_b=np.zeros_like(other.gen_b),
        )

    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        yield from self.encoder.named_arrays("encoder.")
        yield "gen_w", self.gen_w
        yield "gen_b", self.gen_b

    def validate(self) -> None:
        self.encoder.validate()
        if self.gen_w.shape != (self.encoder.d, N_GENDERS):
            raise ValueError("teacher gender head inconsistent with encoder width")


def copy_model(model):
    """Deep copy of a parameter container (same class)."""
    cls = type(model)
    kwargs = {}
    for f in dataclasses.fields(model):
        value = getattr(model, f.name)
        kwargs[f.name] = copy_model(value) if dataclasses.is_dataclass(value) else value.copy()
    return cls(**kwargs)
