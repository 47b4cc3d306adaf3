"""Self-contained binary checkpoints.

Layout, all little-endian:

    magic           4 bytes  "PGKT"
    version         u32      currently 1
    d               u32
    l_max           u32
    tokenizer_mode  u8       0 = syllable, 1 = letter
    pinyin vocab    u32 token count, then per token u32 byte length + UTF-8
    hanzi vocab     same
    tensors         student then teacher, fixed field order; each tensor
                    is u8 ndim, u32 per dim, then row-major float64

A reload reproduces every parameter bit-exactly and every vocabulary
token in order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Optional

import numpy as np

from ..corpus import SPECIALS, Vocab
from .params import EncoderParams, StudentModel, TeacherModel

MAGIC = b"PGKT"
VERSION = 1
_MODES = {"syllable": 0, "letter": 1}
_MODE_NAMES = {v: k for k, v in _MODES.items()}

_ENCODER_FIELDS = ("emb", "pos", "wq", "wk", "wv", "wo", "w1", "b1",
                   "w2", "b2", "ln1_g", "ln1_b", "ln2_g", "ln2_b")
_STUDENT_HEADS = ("feat_w", "feat_b", "gen_w", "gen_b", "char_w", "char_b")
_TEACHER_HEADS = ("gen_w", "gen_b")


class CheckpointError(RuntimeError):
    """Unreadable, truncated, or dimensionally incompatible checkpoint."""


@dataclass
class CheckpointBundle:
    student: StudentModel
    teacher: TeacherModel
    pinyin_vocab: Vocab
    hanzi_vocab: Vocab
    d: int
    l_max: int
    tokenizer_mode: str


def _write_vocab(fh: BinaryIO, vocab: Vocab) -> None:
    fh.write(struct.pack("<I", len(vocab.tokens)))
    for token in vocab.tokens:
        raw = token.encode("utf-8")
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)


def _write_tensor(fh: BinaryIO, arr: np.ndarray) -> None:
    fh.write(struct.pack("<B", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<I", dim))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def save_checkpoint(path, bundle: CheckpointBundle) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", VERSION, bundle.d, bundle.l_max))
        fh.write(struct.pack("<B", _MODES[bundle.tokenizer_mode]))
        _write_vocab(fh, bundle.pinyin_vocab)
        _write_vocab(fh, bundle.hanzi_vocab)
        for name in _ENCODER_FIELDS:
            _write_tensor(fh, getattr(bundle.student.encoder, name))
        for name in _STUDENT_HEADS:
            _write_tensor(fh, getattr(bundle.student, name))
        for name in _ENCODER_FIELDS:
            _write_tensor(fh, getattr(bundle.teacher.encoder, name))
        for name in _TEACHER_HEADS:
            _write_tensor(fh, getattr(bundle.teacher, name))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.data):
            raise CheckpointError("truncated checkpoint file")
        chunk = self.data[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def done(self) -> bool:
        return self.offset == len(self.data)


def _read_vocab(reader: _Reader) -> Vocab:
    (count,) = reader.unpack("<I")
    tokens = []
    for _ in range(count):
        (length,) = reader.unpack("<I")
        tokens.append(reader.take(length).decode("utf-8"))
    if tuple(tokens[:3]) != SPECIALS:
        raise CheckpointError("vocabulary does not start with the special tokens")
    return Vocab(tokens[3:])


def _read_tensor(reader: _Reader) -> np.ndarray:
    (ndim,) = reader.unpack("<B")
    shape = tuple(reader.unpack("<" + "I" * ndim)) if ndim else ()
    count = int(np.prod(shape)) if shape else 1
    raw = reader.take(8 * count)
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def _read_encoder(reader: _Reader) -> EncoderParams:
    return EncoderParams(**{name: _read_tensor(reader) for name in _ENCODER_FIELDS})


def load_checkpoint(path, expected_d: Optional[int] = None) -> CheckpointBundle:
    with open(path, "rb") as fh:
        data = fh.read()
    reader = _Reader(data)
    if reader.take(4) != MAGIC:
        raise CheckpointError("bad magic bytes: not a model checkpoint")
    version, d, l_max = reader.unpack("<III")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if expected_d is not None and d != expected_d:
        raise CheckpointError(f"checkpoint has d={d}, expected d={expected_d}")
    (mode_code,) = reader.unpack("<B")
    if mode_code not in _MODE_NAMES:
        raise CheckpointError(f"unknown tokenizer mode code {mode_code}")
    pinyin_vocab = _read_vocab(reader)
    hanzi_vocab = _read_vocab(reader)
    try:
        student = StudentModel(
            encoder=_read_encoder(reader),
            **{name: _read_tensor(reader) for name in _STUDENT_HEADS},
        )
        teacher = TeacherModel(
            encoder=_read_encoder(reader),
            **{name: _read_tensor(reader) for name in _TEACHER_HEADS},
        )
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"malformed tensor section: {exc}") from exc
    if not reader.done():
        raise CheckpointError("trailing bytes after the tensor section")

    def expect(condition: bool, message: str) -> None:
        if not condition:
            raise CheckpointError(message)

    expect(student.encoder.d == d, "student width disagrees with header d")
    expect(teacher.encoder.d == d, "teacher width disagrees with header d")
    expect(student.encoder.max_positions == l_max + 1,
           "student positions disagree with header l_max")
    expect(student.encoder.vocab_size == len(pinyin_vocab),
           "student embeddings disagree with the pinyin vocabulary")
    expect(teacher.encoder.vocab_size == len(hanzi_vocab),
           "teacher embeddings disagree with the hanzi vocabulary")
    expect(student.char_w.shape[1] == len(hanzi_vocab),
           "character head disagrees with the hanzi vocabulary")
    try:
        student.validate()
        teacher.validate()
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc
    return CheckpointBundle(student, teacher, pinyin_vocab, hanzi_vocab,
                            d, l_max, _MODE_NAMES[mode_code])
