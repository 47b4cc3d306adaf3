"""Training loop, optimizer, inference path, and gradient verification.

Determinism contract: one seed derives the student init, the teacher
init, and every epoch shuffle through separate spawned streams, so a
(seed, config, data) triple reproduces parameters bit for bit on a
platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from ..corpus import AGG_ID, PAD_ID, NameRecord, Vocab, build_vocab
from ..lexicon import InvalidPinyinError, SyllableLexicon, canonical_segment
from .model import Batch, LossSwitches, gender_probabilities, run_batch
from .params import StudentModel, TeacherModel, copy_model

TOKENIZER_MODES = ("syllable", "letter")


class TrainingDivergedError(RuntimeError):
    """The total loss left the finite range mid-training."""


@dataclass
class TrainConfig:
    d: int = 64
    l_max: int = 3
    batch_size: int = 128
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 20
    seed: int = 0
    use_pre: bool = True
    use_name: bool = True
    use_feature: bool = True
    use_response: bool = True
    tokenizer_mode: str = "syllable"
    distill_into_teacher: bool = False
    min_count: int = 1

    def validate(self) -> None:
        if self.d <= 0 or self.l_max <= 0 or self.batch_size <= 0:
            raise ValueError("d, l_max and batch_size must be positive")
        if self.epochs < 0 or self.learning_rate < 0:
            raise ValueError("epochs and learning_rate must be non-negative")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or self.adam_eps <= 0:
            raise ValueError("invalid adaptive-moment constants")
        if self.tokenizer_mode not in TOKENIZER_MODES:
            raise ValueError(f"tokenizer_mode must be one of {TOKENIZER_MODES}")
        if self.tokenizer_mode == "letter" and self.use_pre:
            raise ValueError(
                "letter tokenization has no per-character positions; "
                "disable the character prediction loss (use_pre)"
            )

    def switches(self) -> LossSwitches:
        return LossSwitches(
            pre=self.use_pre,
            name=self.use_name,
            feature=self.use_feature,
            response=self.use_response,
        )

    def with_switches(self, switches: LossSwitches) -> "TrainConfig":
        return replace(
            self,
            use_pre=switches.pre,
            use_name=switches.name,
            use_feature=switches.feature,
            use_response=switches.response,
        )


class Adam:
    """Adaptive-moment updates applied in place to a fixed array list."""

    def __init__(self, arrays: Sequence[np.ndarray], lr: float,
                 beta1: float, beta2: float, eps: float):
        self.arrays = list(arrays)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(a) for a in self.arrays]
        self.v = [np.zeros_like(a) for a in self.arrays]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        if len(grads) != len(self.arrays):
            raise ValueError("gradient list does not match parameter list")
        self.t += 1
        correct1 = 1.0 - self.beta1 ** self.t
        correct2 = 1.0 - self.beta2 ** self.t
        for arr, g, m, v in zip(self.arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            arr -= self.lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)


# ---------------------------------------------------------------------------
# Tokenization into padded index arrays
# ---------------------------------------------------------------------------

def training_tokens(record: NameRecord, lex: SyllableLexicon,
                    tokenizer_mode: str, l_max: int) -> Optional[list[str]]:
    """Student-side tokens aligned to the character form, or ``None``
    when the record is not trainable in this mode."""
    if tokenizer_mode == "syllable":
        seg = canonical_segment(record.pinyin_given, lex,
                                expected_count=len(record.hanzi_given))
        if seg is None or len(seg) > l_max:
            return None
        return list(seg.parts)
    letters = list(record.pinyin_given)[:l_max]
    return letters if letters else None


def inference_tokens(text: str, lex: SyllableLexicon,
                     tokenizer_mode: str, l_max: int) -> list[str]:
    """Tokens for a bare name at prediction time.

    Syllable mode tries the canonical split; anything unsegmentable
    (or too long, or containing stray characters) falls back to letter
    tokens so a caller always gets an answer.
    """
    text = text.strip().lower()
    if not text:
        raise ValueError("cannot predict gender of an empty name")
    if tokenizer_mode == "syllable":
        try:
            seg = canonical_segment(text, lex)
        except InvalidPinyinError:
            seg = None
        if seg is not None and len(seg) <= l_max:
            return list(seg.parts)
    return list(text)[:l_max]


def _pad_ids(tokens: list[str], vocab: Vocab, l_max: int):
    ids = [AGG_ID] + [vocab.encode(t) for t in tokens]
    width = l_max + 1
    mask = [True] * len(ids) + [False] * (width - len(ids))
    ids = ids + [PAD_ID] * (width - len(ids))
    return ids, mask


def encode_training_batch(
    records: Sequence[NameRecord],
    pinyin_vocab: Vocab,
    hanzi_vocab: Vocab,
    lex: SyllableLexicon,
    tokenizer_mode: str,
    l_max: int,
) -> Batch:
    """Full training arrays; every record must carry its character form
    and tokenize cleanly (pre-filter with :func:`training_tokens`)."""
    n = len(records)
    width = l_max + 1
    student_ids = np.empty((n, width), dtype=np.int64)
    student_mask = np.empty((n, width), dtype=bool)
    char_targets = np.full((n, l_max), -1, dtype=np.int64)
    teacher_ids = np.empty((n, width), dtype=np.int64)
    teacher_mask = np.empty((n, width), dtype=bool)
    y = np.empty(n, dtype=np.int64)
    for i, record in enumerate(records):
        if record.hanzi_given is None:
            raise ValueError(
                f"training record {record.pinyin_given!r} is missing its hanzi form"
            )
        tokens = training_tokens(record, lex, tokenizer_mode, l_max)
        if tokens is None:
            raise ValueError(
                f"record {record.pinyin_given!r} does not tokenize; filter first"
            )
        student_ids[i], student_mask[i] = _pad_ids(tokens, pinyin_vocab, l_max)
        if tokenizer_mode == "syllable":
            for j, char in enumerate(record.hanzi_given):
                char_targets[i, j] = hanzi_vocab.encode(char)
        teacher_ids[i], teacher_mask[i] = _pad_ids(list(record.hanzi_given),
                                                   hanzi_vocab, l_max)
        y[i] = record.gender
    return Batch(student_ids, student_mask, char_targets, teacher_ids, teacher_mask, y)


def encode_eval_arrays(
    records: Sequence[NameRecord],
    pinyin_vocab: Vocab,
    lex: SyllableLexicon,
    tokenizer_mode: str,
    l_max: int,
):
    """Inference-style arrays (no character form needed)."""
    n = len(records)
    width = l_max + 1
    ids = np.empty((n, width), dtype=np.int64)
    mask = np.empty((n, width), dtype=bool)
    y = np.empty(n, dtype=np.int64)
    for i, record in enumerate(records):
        tokens = inference_tokens(record.pinyin_given, lex, tokenizer_mode, l_max)
        ids[i], mask[i] = _pad_ids(tokens, pinyin_vocab, l_max)
        y[i] = record.gender
    return ids, mask, y


def accuracy(student: StudentModel, ids: np.ndarray, mask: np.ndarray,
             y: np.ndarray, chunk: int = 2048) -> float:
    hits = 0
    for start in range(0, ids.shape[0], chunk):
        probs = gender_probabilities(student, ids[start:start + chunk],
                                     mask[start:start + chunk])
        hits += int((probs.argmax(axis=1) == y[start:start + chunk]).sum())
    return hits / ids.shape[0]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class EpochStats:
    epoch: int
    l_pre: float
    l_name: float
    l_feature: float
    l_response: float
    l_pinyin: float
    total: float
    val_acc: float


@dataclass
class TrainResult:
    student: StudentModel
    teacher: TeacherModel
    final_student: StudentModel
    final_teacher: TeacherModel
    pinyin_vocab: Vocab
    hanzi_vocab: Vocab
    trace: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    best_val_accuracy: float = float("nan")
    skipped_records: int = 0


def select_trainable(records: Sequence[NameRecord], lex: SyllableLexicon,
                     tokenizer_mode: str, l_max: int):
    """Split records into (trainable, skipped_count).

    A record trains when it has a character form and its pinyin
    tokenizes into at most ``l_max`` aligned positions.
    """
    usable = []
    skipped = 0
    for record in records:
        if record.hanzi_given is None:
            raise ValueError(
                f"training record {record.pinyin_given!r} is missing its hanzi form"
            )
        if training_tokens(record, lex, tokenizer_mode, l_max) is None:
            skipped += 1
        else:
            usable.append(record)
    return usable, skipped


def train(
    train_records: Sequence[NameRecord],
    config: TrainConfig,
    lex: SyllableLexicon,
    val_records: Optional[Sequence[NameRecord]] = None,
    student: Optional[StudentModel] = None,
    teacher: Optional[TeacherModel] = None,
    pinyin_vocab: Optional[Vocab] = None,
    hanzi_vocab: Optional[Vocab] = None,
) -> TrainResult:
    """Joint mini-batch training of student and teacher.

    Retains the parameters from the epoch with the best validation
    accuracy (the final epoch when no validation set is given).
    Aborts with :class:`TrainingDivergedError` on a non-finite loss.
    """
    config.validate()
    usable, skipped = select_trainable(train_records, lex,
                                       config.tokenizer_mode, config.l_max)
    if not usable:
        raise ValueError("no trainable records")

    if pinyin_vocab is None:
        pinyin_vocab = build_vocab(usable, config.tokenizer_mode,
                                   config.min_count, lex)
    if hanzi_vocab is None:
        hanzi_vocab = build_vocab(usable, "hanzi_char", config.min_count)

    init_rng, teacher_rng, shuffle_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(3)
    )
    if student is None:
        student = StudentModel.init(len(pinyin_vocab), len(hanzi_vocab),
                                    config.d, config.l_max, init_rng)
    if teacher is None:
        teacher = TeacherModel.init(len(hanzi_vocab), config.d,
                                    config.l_max, teacher_rng)

    full = encode_training_batch(usable, pinyin_vocab, hanzi_vocab, lex,
                                 config.tokenizer_mode, config.l_max)
    has_val = val_records is not None and len(val_records) > 0
    if has_val:
        val_ids, val_mask, val_y = encode_eval_arrays(
            val_records, pinyin_vocab, lex, config.tokenizer_mode, config.l_max)

    arrays = [a for _, a in student.named_arrays()] + [a for _, a in teacher.named_arrays()]
    optimizer = Adam(arrays, config.learning_rate, config.beta1,
                     config.beta2, config.adam_eps)
    switches = config.switches()

    trace: list[EpochStats] = []
    best_acc = -math.inf
    best_epoch = 0
    best_pair = (copy_model(student), copy_model(teacher))
    n = full.size
    for epoch in range(1, config.epochs + 1):
        perm = shuffle_rng.permutation(n)
        sums = np.zeros(6)
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            losses, s_grads, t_grads = run_batch(
                student, teacher, full.rows(idx), switches,
                compute_grads=True,
                distill_into_teacher=config.distill_into_teacher,
            )
            if not math.isfinite(losses.total):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, record offset {start}: "
                    f"{losses}"
                )
            sums += np.array(losses.as_tuple()) * len(idx)
            grads = [a for _, a in s_grads.named_arrays()] + \
                    [a for _, a in t_grads.named_arrays()]
            optimizer.step(grads)
        means = sums / n
        val_acc = accuracy(student, val_ids, val_mask, val_y) if has_val else math.nan
        trace.append(EpochStats(epoch, *means, val_acc))
        if has_val:
            if val_acc > best_acc:
                best_acc = val_acc
                best_epoch = epoch
                best_pair = (copy_model(student), copy_model(teacher))
        else:
            best_epoch = epoch
            best_pair = (student, teacher)

    if not has_val or config.epochs == 0:
        best_pair = (copy_model(student), copy_model(teacher))
        best_epoch = config.epochs
        best_acc = math.nan

    return TrainResult(
        student=best_pair[0],
        teacher=best_pair[1],
        final_student=student,
        final_teacher=teacher,
        pinyin_vocab=pinyin_vocab,
        hanzi_vocab=hanzi_vocab,
        trace=trace,
        best_epoch=best_epoch,
        best_val_accuracy=best_acc,
        skipped_records=skipped,
    )


def write_trace(path, trace: Sequence[EpochStats]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,l_pre,l_name,l_feature,l_response,l_pinyin,total,val_acc\n")
        for row in trace:
            fh.write(
                f"{row.epoch},{row.l_pre:.9g},{row.l_name:.9g},{row.l_feature:.9g},"
                f"{row.l_response:.9g},{row.l_pinyin:.9g},{row.total:.9g},"
                f"{row.val_acc:.9g}\n"
            )


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

def predict_gender(
    student: StudentModel,
    pinyin_vocab: Vocab,
    lex: SyllableLexicon,
    text: str,
    tokenizer_mode: str = "syllable",
) -> tuple[int, float]:
    """(label, probability of female) for one romanized name.

    Never abstains: the letter fallback inside
    :func:`inference_tokens` guarantees some tokenization, and unseen
    tokens ride on the UNK embedding.
    """
    l_max = student.encoder.max_positions - 1
    tokens = inference_tokens(text, lex, tokenizer_mode, l_max)
    ids, mask = _pad_ids(tokens, pinyin_vocab, l_max)
    probs = gender_probabilities(student,
                                 np.asarray([ids], dtype=np.int64),
                                 np.asarray([mask], dtype=bool))[0]
    return int(probs.argmax()), float(probs[1])


class Predictor:
    """Bundles a trained student with everything inference needs."""

    def __init__(self, student: StudentModel, pinyin_vocab: Vocab,
                 lex: SyllableLexicon, tokenizer_mode: str = "syllable"):
        self.student = student
        self.pinyin_vocab = pinyin_vocab
        self.lex = lex
        self.tokenizer_mode = tokenizer_mode

    def predict(self, text: str) -> tuple[int, float]:
        return predict_gender(self.student, self.pinyin_vocab, self.lex,
                              text, self.tokenizer_mode)


class TeacherPredictor:
    """Gender prediction from a character sequence, for the conversion
    baseline."""

    def __init__(self, teacher: TeacherModel, hanzi_vocab: Vocab):
        self.teacher = teacher
        self.hanzi_vocab = hanzi_vocab

    def predict(self, chars: Sequence[str]) -> tuple[int, float]:
        from .model import forward_teacher, softmax
        l_max = self.teacher.encoder.max_positions - 1
        tokens = list(chars)[:l_max]
        if not tokens:
            raise ValueError("cannot predict gender of an empty character name")
        ids, mask = _pad_ids(tokens, self.hanzi_vocab, l_max)
        out = forward_teacher(self.teacher,
                              np.asarray([ids], dtype=np.int64),
                              np.asarray([mask], dtype=bool))
        probs = softmax(out.z_hanzi)[0]
        return int(probs.argmax()), float(probs[1])


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------

def gradcheck_probe(lex: SyllableLexicon, seed: int = 0, d: int = 32,
                    batch_records: int = 4, warmup_epochs: int = 15):
    """(student, teacher, batch) for finite-difference verification.

    Uses the tiny four-character universe and a short training warmup:
    that holds the total loss to a few nats, so the FD quotient at
    near-zero gradient coordinates stays above float64 cancellation
    noise instead of drowning in it.
    """
    from ..corpus import generate_synthetic, tiny_synthetic_spec
    records = generate_synthetic(tiny_synthetic_spec(16), seed=seed)
    usable, _ = select_trainable(records, lex, "syllable", 3)
    config = TrainConfig(d=d, epochs=warmup_epochs, seed=seed, batch_size=8)
    result = train(usable, config, lex)
    batch = encode_training_batch(usable[:batch_records], result.pinyin_vocab,
                                  result.hanzi_vocab, lex, "syllable", 3)
    return result.final_student, result.final_teacher, batch


def gradient_check(
    student: StudentModel,
    teacher: TeacherModel,
    batch: Batch,
    switches: LossSwitches = LossSwitches(),
    eps: float = 1e-4,
    max_coords: int = 1000,
    seed: int = 0,
    distill_into_teacher: bool = False,
) -> float:
    """Max relative error between reverse-mode and central differences.

    Checks every coordinate when the models are small enough,
    otherwise a seeded uniform subsample of ``max_coords`` of them.
    The relative error denominator is max(|analytic|, |numeric|, 1e-8).

    Under the default stop-gradient wiring the optimized objective
    holds the distillation targets constant, so the differenced
    function freezes them at the center point; with joint distillation
    the plain total is differenced.
    """
    result = run_batch(student, teacher, batch, switches,
                       compute_grads=True,
                       distill_into_teacher=distill_into_teacher)

    frozen = None
    if switches.needs_teacher and not distill_into_teacher:
        from .model import forward_teacher
        t_out = forward_teacher(teacher, batch.teacher_ids, batch.teacher_mask)
        frozen = (t_out.h_hanzi.copy(), t_out.z_hanzi.copy())
    named_params = list(student.named_arrays()) + list(teacher.named_arrays())
    named_grads = list(result.student_grads.named_arrays()) + \
        list(result.teacher_grads.named_arrays())

    sizes = np.array([arr.size for _, arr in named_params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    if total > max_coords:
        coords = np.sort(np.random.default_rng(seed).choice(
            total, size=max_coords, replace=False))
    else:
        coords = np.arange(total)

    def total_loss() -> float:
        return run_batch(student, teacher, batch, switches,
                         compute_grads=False,
                         frozen_teacher_targets=frozen).losses.total

    worst = 0.0
    for coord in coords:
        which = int(np.searchsorted(offsets, coord, side="right") - 1)
        flat_param = named_params[which][1].reshape(-1)
        flat_grad = named_grads[which][1].reshape(-1)
        offset = int(coord - offsets[which])
        original = flat_param[offset]
        flat_param[offset] = original + eps
        loss_plus = total_loss()
        flat_param[offset] = original - eps
        loss_minus = total_loss()
        flat_param[offset] = original
        numeric = (loss_plus - loss_minus) / (2.0 * eps)
        analytic = flat_grad[offset]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, rel)
    return worst
