"""Forward passes and the five-part training objective.

The student encodes a romanized name and produces three things: a
projected name feature, gender logits, and per-position character
logits.  The teacher encodes the character form of the same name and
produces its own feature and gender logits.  Five loss terms connect
them:

  l_pre       mean summed cross-entropy of character predictions
  l_name      cross-entropy of teacher gender logits
  l_feature   mean Euclidean distance between teacher and student
              name features
  l_response  mean KL(student distribution || teacher distribution)
  l_pinyin    cross-entropy of student gender logits

The total is their plain sum.  Teacher outputs act as constants inside
l_feature and l_response: those terms push only the student, unless the
joint flag is set.  Every gradient here is hand-derived reverse mode.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import backend
from .params import EncoderParams, StudentModel, TeacherModel

_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class LossSwitches:
    """Which objective terms participate; the main gender loss stays on
    for every published variant."""

    pre: bool = True
    name: bool = True
    feature: bool = True
    response: bool = True
    pinyin: bool = True

    @property
    def needs_teacher(self) -> bool:
        return self.name or self.feature or self.response


FULL = LossSwitches()
WITHOUT_LOGITS = LossSwitches(response=False)
WITHOUT_LOGITS_FEAT = LossSwitches(response=False, feature=False)
PINYIN_ONLY = LossSwitches(pre=False, name=False, feature=False, response=False)

ABLATION_VARIANTS = {
    "full": FULL,
    "wo_logits": WITHOUT_LOGITS,
    "wo_logits_feat": WITHOUT_LOGITS_FEAT,
    "wo_distill_namepre": PINYIN_ONLY,
}


@dataclass
class LossBreakdown:
    l_pre: float
    l_name: float
    l_feature: float
    l_response: float
    l_pinyin: float
    total: float

    def as_tuple(self) -> tuple[float, ...]:
        return (self.l_pre, self.l_name, self.l_feature,
                self.l_response, self.l_pinyin, self.total)


@dataclass
class Batch:
    """Padded index arrays for one mini-batch.

    ``char_targets`` holds the hanzi vocabulary index expected at each
    syllable position, -1 where no character exists.  Teacher arrays
    are ``None`` for inference-style batches without character forms.
    """

    student_ids: np.ndarray
    student_mask: np.ndarray
    char_targets: np.ndarray
    teacher_ids: Optional[np.ndarray]
    teacher_mask: Optional[np.ndarray]
    y: np.ndarray

    @property
    def size(self) -> int:
        return self.y.shape[0]

    def rows(self, index: np.ndarray) -> "Batch":
        return Batch(
            student_ids=self.student_ids[index],
            student_mask=self.student_mask[index],
            char_targets=self.char_targets[index],
            teacher_ids=None if self.teacher_ids is None else self.teacher_ids[index],
            teacher_mask=None if self.teacher_mask is None else self.teacher_mask[index],
            y=self.y[index],
        )


class BatchResult(NamedTuple):
    losses: LossBreakdown
    student_grads: Optional[StudentModel]
    teacher_grads: Optional[TeacherModel]


def softmax(z: np.ndarray) -> np.ndarray:
    """Stable softmax over the last axis; components positive, unit sum."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def kl_divergence(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """KL(p || q) over the last axis for strictly positive q."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    terms = np.where(p > 0.0, p * (np.log(np.where(p > 0.0, p, 1.0)) - np.log(q)), 0.0)
    return terms.sum(axis=-1)


def encode(params: EncoderParams, ids, mask=None):
    """Validated entry into the active encoder backend.

    ``ids`` may be a single sequence or a (B, T) batch; ``mask``
    defaults to all-real.  Raises on indices outside the vocabulary or
    sequences longer than the learned positions.
    """
    ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
    if mask is None:
        mask = np.ones(ids.shape, dtype=bool)
    else:
        mask = np.atleast_2d(np.asarray(mask, dtype=bool))
    if ids.size == 0:
        raise ValueError("cannot encode an empty batch")
    if ids.min() < 0 or ids.max() >= params.vocab_size:
        raise ValueError(
            f"token index out of range [0, {params.vocab_size}) in encoder input"
        )
    if ids.shape[1] > params.max_positions:
        raise ValueError(
            f"sequence length {ids.shape[1]} exceeds {params.max_positions} positions"
        )
    if not mask.any(axis=1).all():
        raise ValueError("every sequence needs at least one unmasked position")
    return backend.encoder_forward(params, ids, mask)


class StudentForward(NamedTuple):
    h: np.ndarray            # (B, T, d) encoder output
    h_pinyin: np.ndarray     # (B, d) projected name feature
    z_pinyin: np.ndarray     # (B, 2) gender logits
    char_logits: np.ndarray  # (B, T-1, vocab_hanzi)
    cache: object


class TeacherForward(NamedTuple):
    h: np.ndarray
    h_hanzi: np.ndarray
    z_hanzi: np.ndarray
    cache: object


def forward_student(student: StudentModel, ids, mask=None) -> StudentForward:
    h, cache = encode(student.encoder, ids, mask)
    h0 = h[:, 0, :]
    h_pin = h0 @ student.feat_w + student.feat_b
    z_pin = h_pin @ student.gen_w + student.gen_b
    char_logits = h[:, 1:, :] @ student.char_w + student.char_b
    return StudentForward(h, h_pin, z_pin, char_logits, cache)


def forward_teacher(teacher: TeacherModel, ids, mask=None) -> TeacherForward:
    h, cache = encode(teacher.encoder, ids, mask)
    h_hz = h[:, 0, :]
    z_hz = h_hz @ teacher.gen_w + teacher.gen_b
    return TeacherForward(h, h_hz, z_hz, cache)


def forward_student_record(student: StudentModel, token_ids: Sequence[int],
                           n_syllables: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Single-record view: (h_pinyin, z_pinyin, char_logits with one
    row per syllable)."""
    ids = np.asarray([token_ids], dtype=np.int64)
    out = forward_student(student, ids)
    return out.h_pinyin[0], out.z_pinyin[0], out.char_logits[0, :n_syllables, :]


def run_batch(
    student: StudentModel,
    teacher: TeacherModel,
    batch: Batch,
    switches: LossSwitches = FULL,
    compute_grads: bool = True,
    distill_into_teacher: bool = False,
    frozen_teacher_targets: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> BatchResult:
    """Losses and, optionally, gradients for one mini-batch.

    Every mean uses the batch size.  When no teacher-dependent term is
    enabled the teacher is not even run.  Raises if a teacher term is
    enabled but the batch lacks character forms.

    ``frozen_teacher_targets`` substitutes a fixed (h_hanzi, z_hanzi)
    pair into the two distillation terms.  That is the function the
    default stop-gradient objective actually optimizes, so finite
    difference verification passes targets captured at the center
    point; the teacher gender loss always uses the live teacher.
    """
    n = batch.size
    if n == 0:
        raise ValueError("empty batch")
    if distill_into_teacher and frozen_teacher_targets is not None:
        raise ValueError("frozen targets contradict joint distillation")
    y = batch.y
    rows = np.arange(n)

    s_out = forward_student(student, batch.student_ids, batch.student_mask)
    logp_pin = log_softmax(s_out.z_pinyin)
    p_pin = np.exp(logp_pin)

    t_out = None
    if switches.needs_teacher:
        if batch.teacher_ids is None:
            raise ValueError(
                "teacher losses enabled but the batch has records without hanzi"
            )
        if switches.name or frozen_teacher_targets is None:
            t_out = forward_teacher(teacher, batch.teacher_ids, batch.teacher_mask)
        if frozen_teacher_targets is None:
            h_hz_target = t_out.h_hanzi
            z_hz_target = t_out.z_hanzi
        else:
            h_hz_target, z_hz_target = frozen_teacher_targets
        logp_hz_target = log_softmax(z_hz_target)
        if switches.name:
            logp_hz = log_softmax(t_out.z_hanzi)
            p_hz = np.exp(logp_hz)

    l_pre = 0.0
    if switches.pre:
        valid = batch.char_targets >= 0
        safe_targets = np.where(valid, batch.char_targets, 0)
        logp_char = log_softmax(s_out.char_logits)
        picked = np.take_along_axis(logp_char, safe_targets[:, :, np.newaxis], axis=2)[:, :, 0]
        l_pre = float(-(picked * valid).sum() / n)

    l_name = 0.0
    if switches.name:
        l_name = float(-logp_hz[rows, y].mean())

    l_feature = 0.0
    if switches.feature:
        diff = h_hz_target - s_out.h_pinyin
        norms = np.sqrt((diff * diff).sum(axis=1))
        l_feature = float(norms.mean())

    l_response = 0.0
    if switches.response:
        kl_rows = (p_pin * (logp_pin - logp_hz_target)).sum(axis=1)
        l_response = float(kl_rows.mean())

    l_pinyin = 0.0
    if switches.pinyin:
        l_pinyin = float(-logp_pin[rows, y].mean())

    total = l_pre + l_name + l_feature + l_response + l_pinyin
    losses = LossBreakdown(l_pre, l_name, l_feature, l_response, l_pinyin, total)
    if not compute_grads:
        return BatchResult(losses, None, None)

    s_grads = StudentModel.zeros_like(student)
    t_grads = TeacherModel.zeros_like(teacher)

    # student gender logits collect the main loss and the response term
    d_z_pin = np.zeros_like(s_out.z_pinyin)
    if switches.pinyin:
        delta = p_pin.copy()
        delta[rows, y] -= 1.0
        d_z_pin += delta / n
    if switches.response:
        d_z_pin += p_pin * ((logp_pin - logp_hz_target) - kl_rows[:, np.newaxis]) / n

    d_h_pin = d_z_pin @ student.gen_w.T
    if switches.feature:
        coef = np.where(norms > _NORM_FLOOR,
                        1.0 / (np.maximum(norms, _NORM_FLOOR) * n), 0.0)
        d_h_pin += (s_out.h_pinyin - h_hz_target) * coef[:, np.newaxis]

    s_grads.gen_w[:] = s_out.h_pinyin.T @ d_z_pin
    s_grads.gen_b[:] = d_z_pin.sum(axis=0)
    h0 = s_out.h[:, 0, :]
    s_grads.feat_w[:] = h0.T @ d_h_pin
    s_grads.feat_b[:] = d_h_pin.sum(axis=0)

    d_h_student = np.zeros_like(s_out.h)
    d_h_student[:, 0, :] = d_h_pin @ student.feat_w.T

    if switches.pre:
        d_char = np.exp(logp_char)
        n_positions = d_char.shape[1]
        d_char[rows[:, np.newaxis], np.arange(n_positions)[np.newaxis, :], safe_targets] -= 1.0
        d_char *= valid[:, :, np.newaxis] / n
        vocab_hanzi = d_char.shape[2]
        dim = student.encoder.d
        positions = s_out.h[:, 1:, :]
        s_grads.char_w[:] = positions.reshape(-1, dim).T @ d_char.reshape(-1, vocab_hanzi)
        s_grads.char_b[:] = d_char.sum(axis=(0, 1))
        d_h_student[:, 1:, :] += d_char @ student.char_w.T

    s_grads.encoder = backend.encoder_backward(student.encoder, s_out.cache, d_h_student)

    teacher_has_grads = switches.name or (
        distill_into_teacher and (switches.feature or switches.response)
    )
    if teacher_has_grads:
        d_z_hz = np.zeros_like(t_out.z_hanzi)
        if switches.name:
            delta = p_hz.copy()
            delta[rows, y] -= 1.0
            d_z_hz += delta / n
        if distill_into_teacher and switches.response:
            d_z_hz += (softmax(t_out.z_hanzi) - p_pin) / n
        d_h_hz = d_z_hz @ teacher.gen_w.T
        if distill_into_teacher and switches.feature:
            coef = np.where(norms > _NORM_FLOOR,
                            1.0 / (np.maximum(norms, _NORM_FLOOR) * n), 0.0)
            d_h_hz += (t_out.h_hanzi - s_out.h_pinyin) * coef[:, np.newaxis]
        t_grads.gen_w[:] = t_out.h_hanzi.T @ d_z_hz
        t_grads.gen_b[:] = d_z_hz.sum(axis=0)
        d_h_teacher = np.zeros_like(t_out.h)
        d_h_teacher[:, 0, :] = d_h_hz
        t_grads.encoder = backend.encoder_backward(teacher.encoder, t_out.cache, d_h_teacher)

    return BatchResult(losses, s_grads, t_grads)


def gender_probabilities(student: StudentModel, ids, mask=None) -> np.ndarray:
    """(B, 2) class probabilities from the student, no teacher involved."""
    out = forward_student(student, ids, mask)
    return softmax(out.z_pinyin)
