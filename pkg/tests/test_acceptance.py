"""Acceptance suite: one test per criterion, each printing a
[PASS]/[FAIL] line with its runtime (run with -s to see them).

The ablation ordering test is statistical by design; on failure it has
already printed its per-seed accuracy table for inspection.
"""

import contextlib
import csv
import itertools
import math
import random
import time
from fractions import Fraction

import numpy as np

from pinyingender.baselines import cct_fit, nb_fit, nb_predict
from pinyingender.corpus import (
    FEMALE,
    MALE,
    NameRecord,
    SyntheticChar,
    SyntheticSpec,
    build_statistics,
    generate_synthetic,
    overfit_synthetic_spec,
    stream_records,
)
from pinyingender.lexicon import canonical_segment, segment_all
from pinyingender.metrics import ConfusionMatrix6, compute_error_metrics
from pinyingender.neural.checkpoint import (
    CheckpointBundle,
    load_checkpoint,
    save_checkpoint,
)
from pinyingender.neural.model import (
    ABLATION_VARIANTS,
    LossSwitches,
    forward_student,
    kl_divergence,
    run_batch,
    softmax,
)
from pinyingender.neural.training import (
    TrainConfig,
    accuracy,
    encode_eval_arrays,
    gradcheck_probe,
    gradient_check,
    predict_gender,
    select_trainable,
    train,
)


@contextlib.contextmanager
def criterion(name, budget_seconds=None):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[FAIL] {name} ({time.perf_counter() - start:.1f}s)")
        raise
    elapsed = time.perf_counter() - start
    print(f"[PASS] {name} ({elapsed:.1f}s)")
    if budget_seconds is not None:
        assert elapsed < budget_seconds, (
            f"{name} took {elapsed:.1f}s, budget {budget_seconds}s")


# -------------------------------------------------------------------------
# 1. segmentation oracle
# -------------------------------------------------------------------------

def brute_force_segmentations(name, syllables, longest):
    if not name:
        return [()]
    found = []
    for end in range(1, min(longest, len(name)) + 1):
        head = name[:end]
        if head in syllables:
            for rest in brute_force_segmentations(name[end:], syllables, longest):
                found.append((head,) + rest)
    return found


def test_segmentation_oracle(lexicon):
    with criterion("segmentation oracle (1000 random strings vs recursion)",
                   budget_seconds=10):
        rng = random.Random(8011)
        alphabet = "aeiounghjxyzwlqsmbt"
        for _ in range(1000):
            name = "".join(rng.choice(alphabet)
                           for _ in range(rng.randint(1, 12)))
            expected = set(brute_force_segmentations(
                name, lexicon.syllables, lexicon.max_syllable_len))
            got = {seg.parts for seg in segment_all(name, lexicon)}
            assert got == expected, name
        pinned = canonical_segment("jianguo", lexicon, expected_count=2)
        assert pinned.parts == ("jian", "guo")


# -------------------------------------------------------------------------
# 2. gradient verification
# -------------------------------------------------------------------------

def test_gradient_verification(lexicon):
    with criterion("gradient verification (5 seeds x 4 variants, rel < 1e-3)",
                   budget_seconds=60):
        worst = 0.0
        for seed in range(5):
            student, teacher, batch = gradcheck_probe(lexicon, seed=seed)
            assert batch.size == 4
            for name, switches in ABLATION_VARIANTS.items():
                err = gradient_check(student, teacher, batch, switches,
                                     eps=1e-4, seed=seed)
                worst = max(worst, err)
                assert err < 1e-3, (seed, name, err)
        print(f"       worst relative error {worst:.2e}")


# -------------------------------------------------------------------------
# 3. loss identities
# -------------------------------------------------------------------------

def test_loss_identities(lexicon):
    with criterion("loss identities (exact sum, zero cases, stop-gradient)"):
        student, teacher, batch = gradcheck_probe(lexicon, seed=3,
                                                  warmup_epochs=0)
        lb = run_batch(student, teacher, batch, compute_grads=False).losses
        assert lb.total == lb.l_pre + lb.l_name + lb.l_feature + \
            lb.l_response + lb.l_pinyin

        out = forward_student(student, batch.student_ids, batch.student_mask)
        frozen = (out.h_pinyin.copy(), out.z_pinyin.copy())
        identical = run_batch(student, teacher, batch,
                              LossSwitches(pre=False, name=False),
                              compute_grads=False,
                              frozen_teacher_targets=frozen).losses
        assert identical.l_feature == 0.0
        assert abs(identical.l_response) < 1e-15

        rng = np.random.default_rng(0)
        p = softmax(rng.standard_normal((200, 2)))
        assert np.abs(kl_divergence(p, p)).max() == 0.0

        z = rng.uniform(-40, 40, size=(500, 6))
        sums = softmax(z).sum(axis=1)
        assert np.abs(sums - 1.0).max() <= 1e-12

        distill_only = run_batch(student, teacher, batch,
                                 LossSwitches(pre=False, name=False,
                                              pinyin=False),
                                 compute_grads=True)
        for name, grad in distill_only.teacher_grads.named_arrays():
            assert np.all(grad == 0.0), name


# -------------------------------------------------------------------------
# 4. metric identities
# -------------------------------------------------------------------------

def test_metric_identities():
    with criterion("metric identities (10k matrices, hand case, na=0 row)"):
        rng = random.Random(41)
        checked = 0
        while checked < 10000:
            cm = ConfusionMatrix6(*(rng.randint(0, 40) for _ in range(6)))
            if cm.total == 0 or cm.classified == 0:
                continue
            checked += 1
            report = compute_error_metrics(cm)
            reconstructed = report.na_coded + \
                report.error_coded_without_na * (1.0 - report.na_coded)
            assert abs(report.error_coded - reconstructed) <= 1e-12

        hand = compute_error_metrics(
            ConfusionMatrix6(m_m=4, m_f=1, m_u=1, f_m=1, f_f=3, f_u=0))
        assert abs(hand.error_coded - 0.3) < 1e-4
        assert abs(hand.error_coded_without_na - 0.2222) < 1e-4
        assert abs(hand.na_coded - 0.1) < 1e-4
        assert abs(hand.error_gender_bias - 0.0) < 1e-4

        no_na = compute_error_metrics(
            ConfusionMatrix6(m_m=300, m_f=90, m_u=0, f_m=70, f_f=250, f_u=0))
        assert no_na.na_coded == 0.0
        assert no_na.error_coded == no_na.error_coded_without_na


# -------------------------------------------------------------------------
# 5. naive bayes oracle
# -------------------------------------------------------------------------

def _exact_nb_posterior(model, syllables):
    prior_f = Fraction(model.prior_female).limit_denominator(10 ** 9)
    posts = []
    for gender in (MALE, FEMALE):
        prior = (1 - prior_f) if gender == MALE else prior_f
        value = prior
        alpha = Fraction(model.alpha).limit_denominator(10 ** 9)
        denominator = Fraction(model.gender_totals[gender]) + alpha * model.vocab_size
        for syllable in syllables:
            count = model.syllable_counts.get(syllable, (0, 0))[gender]
            value *= (Fraction(count) + alpha) / denominator
        posts.append(value)
    total = posts[0] + posts[1]
    return posts[1] / total if total else Fraction(1, 2)


def test_naive_bayes_oracle(lexicon):
    with criterion("naive bayes vs exact-rational enumeration (50 corpora)"):
        rng = random.Random(90)
        syllables = ["yan", "li", "wei", "min", "hao", "yu", "bo", "lan"]
        for trial in range(50):
            rows = []
            for _ in range(rng.randint(2, 60)):
                pinyin = "".join(rng.sample(syllables, rng.randint(1, 2)))
                rows.append(NameRecord(pinyin, None, rng.randint(0, 1)))
            model = nb_fit(rows, lexicon, alpha=rng.choice([0.5, 1.0, 3.0]))
            for _ in range(4):
                name = [rng.choice(syllables) for _ in range(rng.randint(1, 3))]
                _, posterior = nb_predict(model, name)
                expected = float(_exact_nb_posterior(model, name))
                if 0.0 < expected < 1.0 and 0.0 < posterior < 1.0:
                    assert abs(math.log(posterior) - math.log(expected)) \
                        <= 1e-12, trial

        hand_rows = [NameRecord("yanyan", ("妍", "妍"), FEMALE),
                     NameRecord("yanli", ("妍", "丽"), FEMALE),
                     NameRecord("liyan", ("力", "炎"), MALE),
                     NameRecord("lili", ("力", "力"), MALE)]
        model = nb_fit(hand_rows, lexicon)
        _, posterior = nb_predict(model, ["yan"])
        assert abs(posterior - 2.0 / 3.0) <= 1e-12


# -------------------------------------------------------------------------
# 6. source-consensus fixed points
# -------------------------------------------------------------------------

def test_cct_fixed_points():
    with criterion("consensus: unanimity <= 2 iters, first E-step = majority"):
        unanimous = [(src, name, FEMALE)
                     for src in range(3) for name in ("yan", "mei", "lan")]
        model = cct_fit(unanimous)
        assert model.iterations <= 2
        assert all(label == FEMALE for label, _ in model.consensus.values())

        rng = random.Random(64)
        for trial in range(100):
            names = [f"n{i}" for i in range(rng.randint(1, 8))]
            reports = [(src, name, rng.randint(0, 1))
                       for src in range(rng.randint(1, 6))
                       for name in names if rng.random() < 0.75]
            if not reports:
                continue
            na_policy = rng.randint(0, 1)
            one_step = cct_fit(reports, max_iters=1, na_policy=na_policy)
            tallies = {}
            for _, name, label in reports:
                tallies.setdefault(name, [0, 0])[label] += 1
            for name, (males, females) in tallies.items():
                if females > males:
                    expected = FEMALE
                elif males > females:
                    expected = MALE
                else:
                    expected = na_policy
                assert one_step.consensus[name][0] == expected, (trial, name)

        seen = cct_fit([(0, "yan", FEMALE)], na_policy=MALE)
        from pinyingender.baselines import cct_predict
        assert cct_predict(seen, "unseen") == MALE
        assert cct_predict(cct_fit([(0, "yan", FEMALE)], na_policy=FEMALE),
                           "unseen") == FEMALE


# -------------------------------------------------------------------------
# 7. overfit check
# -------------------------------------------------------------------------

def test_overfit_small_corpus(lexicon):
    with criterion("overfit: 50 records reach train accuracy 1.0 within "
                   "200 epochs, deterministic", budget_seconds=120):
        records = generate_synthetic(overfit_synthetic_spec(50), seed=3)
        usable, _ = select_trainable(records, lexicon, "syllable", 3)
        assert len(usable) == 50
        config = TrainConfig(d=64, epochs=200, seed=0, batch_size=16)
        result = train(usable, config, lexicon, val_records=usable)
        accs = [e.val_acc for e in result.trace]
        first = next((i + 1 for i, a in enumerate(accs) if a == 1.0), None)
        assert first is not None and first <= 200, max(accs)
        print(f"       first epoch at accuracy 1.0: {first}")

        again = train(usable, config, lexicon, val_records=usable)
        assert [e.total for e in again.trace] == [e.total for e in result.trace]
        for (_, a), (_, b) in zip(result.final_student.named_arrays(),
                                  again.final_student.named_arrays()):
            assert np.array_equal(a, b)


# -------------------------------------------------------------------------
# 8. ablation ordering (statistical)
# -------------------------------------------------------------------------

ABLATION_SYLLABLE_COUNT = 240
ABLATION_PATTERNS = ((0.95, 0.95), (0.95, 0.05), (0.05, 0.95), (0.05, 0.05))
ABLATION_EPOCHS = 20
ABLATION_SEEDS = (0, 1, 2, 3, 4)
ABLATION_EVAL_COUNT = 20000

_ABLATION_SYLLABLES = [
    "yan", "jia", "wei", "min", "ling", "hao", "xin", "yu", "chen", "qing",
    "bo", "shan", "mei", "jun", "hua", "feng", "lan", "tao", "ying", "gang",
    "hui", "ping", "jie", "dong", "fang", "kai", "lei", "na", "pei", "qiang",
    "rong", "song", "ting", "wen", "xiang", "yun", "zhen", "guo", "heng", "kun",
    "li", "mo", "nan", "pan", "ran", "sha", "tan", "zhuo", "bin", "cai",
    "chang", "chao", "cheng", "chun", "cong", "cui", "dan", "di", "ding", "du",
    "duo", "en", "fan", "fei", "fen", "fu", "gao", "ge", "gen", "gong",
    "gu", "guan", "gui", "guang", "han", "hang", "he", "hong", "hu", "huan",
    "huang", "ji", "jian", "jiang", "jin", "jing", "ju", "juan", "kang", "ke",
    "kong", "kuan", "lai", "lang", "lao", "le", "lian", "liang", "liao", "lin",
    "liu", "long", "lu", "luo", "ma", "man", "mao", "miao", "ming", "mu",
    "nai", "neng", "ni", "niang", "ning", "nuo", "ou", "pang", "peng", "pian",
    "piao", "pin", "pu", "qi", "qian", "qiao", "qin", "qiu", "qu", "quan",
    "que", "ren", "ri", "rou", "ru", "rui", "run", "sai", "san", "sang",
    "sen", "shao", "shen", "sheng", "shi", "shu", "shuai", "shun", "si", "su",
    "sui", "sun", "suo", "ta", "tai", "tang", "tian", "tie", "tong", "tu",
    "tuo", "wan", "wang", "wo", "wu", "xi", "xia", "xiao", "xie", "xu",
    "xuan", "xue", "xun", "ya", "yang", "yao", "ye", "yi", "yin", "yong",
    "you", "yuan", "yue", "zai", "zan", "zao", "ze", "zeng", "zhan", "zhang",
    "zhao", "zheng", "zhi", "zhong", "zhou", "zhu", "zhuan", "zhui", "zhun", "zi",
    "zong", "zou", "zu", "zui", "zun", "a", "ai", "an", "ang", "ao",
    "ba", "bai", "ban", "bang", "bao", "bei", "ben", "beng", "bi", "bian",
    "biao", "bie", "bing", "bu", "ca", "can", "cang", "cao", "ce", "cen",
    "ceng", "cha", "chai", "chan", "che", "chi", "chong", "chou", "chu", "chuan",
]


def ablation_spec(count):
    """Many-to-one character map with per-syllable gendered pairs: the
    single-syllable ambiguity construction scaled out to a corpus."""
    chars = []
    code = 0x4E00
    for i, syllable in enumerate(_ABLATION_SYLLABLES[:ABLATION_SYLLABLE_COUNT]):
        for p in ABLATION_PATTERNS[i % len(ABLATION_PATTERNS)]:
            chars.append(SyntheticChar(chr(code), syllable, p))
            code += 1
    return SyntheticSpec(chars=chars,
                         length_dist={1: 0.1, 2: 0.8, 3: 0.1},
                         count=count)


def test_ablation_ordering(lexicon):
    with criterion("ablation ordering (statistical, 5 seeds x 4 variants)",
                   budget_seconds=900):
        results = {name: [] for name in ABLATION_VARIANTS}
        for seed in ABLATION_SEEDS:
            records = generate_synthetic(ablation_spec(5000), seed=1000 + seed)
            heldout = generate_synthetic(ablation_spec(ABLATION_EVAL_COUNT),
                                         seed=9000 + seed)
            for name, switches in ABLATION_VARIANTS.items():
                config = TrainConfig(d=64, l_max=3, batch_size=128,
                                     epochs=ABLATION_EPOCHS,
                                     seed=seed).with_switches(switches)
                outcome = train(records, config, lexicon)
                ids, mask, y = encode_eval_arrays(
                    heldout, outcome.pinyin_vocab, lexicon,
                    config.tokenizer_mode, config.l_max)
                results[name].append(accuracy(outcome.final_student,
                                              ids, mask, y))

        medians = {name: float(np.median(vals))
                   for name, vals in results.items()}
        print("       per-seed held-out accuracy:")
        for name, vals in results.items():
            print(f"         {name:20s} " +
                  " ".join(f"{v:.4f}" for v in vals) +
                  f"  median {medians[name]:.4f}")
        margin = medians["full"] - medians["wo_distill_namepre"]
        print(f"       margin over gender-loss-only: {margin * 100:+.2f}pp")

        assert medians["full"] >= medians["wo_logits"], medians
        assert medians["wo_logits"] >= medians["wo_logits_feat"], medians
        assert margin >= 0.005, medians


# -------------------------------------------------------------------------
# 9. streaming ingestion at a million rows
# -------------------------------------------------------------------------

def test_streaming_million_rows(lexicon, tmp_path):
    with criterion("streaming: 1M rows, 1000 distinct names, shard merge "
                   "exact", budget_seconds=60):
        syllables = ["ban", "bao", "bei", "ben", "bin", "cai", "can", "cao",
                     "gan", "gao", "gen", "gou", "han", "hao", "hen", "hou",
                     "jia", "jin", "jiu", "kan", "kao", "ken", "kou", "lan",
                     "lao", "lei", "lin", "man", "mao", "mei", "men", "min"]
        chars = {s: chr(0x4E00 + i) for i, s in enumerate(syllables)}
        names = [(a + b, chars[a] + chars[b])
                 for a, b in itertools.product(syllables, repeat=2)][:1000]
        assert len({pinyin for pinyin, _ in names}) == 1000

        shards = [tmp_path / f"shard{i}.csv" for i in range(4)]
        writers = []
        handles = []
        for path in shards:
            handle = open(path, "w", encoding="utf-8", newline="")
            writer = csv.writer(handle)
            writer.writerow(["pinyin", "hanzi", "gender", "source"])
            handles.append(handle)
            writers.append(writer)
        for row_index in range(1_000_000):
            pinyin, hanzi = names[row_index % 1000]
            writers[row_index % 4].writerow(
                [pinyin, hanzi, (row_index % 1000) % 2, ""])
        for handle in handles:
            handle.close()

        def shard_stream():
            for path in shards:
                yield from stream_records(path)

        single = build_statistics(shard_stream(), lexicon)
        assert single.rows_counted == 1_000_000
        sizes = single.key_store_sizes()
        assert sizes["pinyin_name_gender_counts"] == 1000
        assert sizes["pinyin_to_hanzi_counts"] == 1000
        # canonical splits may legally differ from the construction
        # boundary (longest-first tie break), but stay few and fixed
        assert sizes["syllable_to_char_counts"] <= 2 * len(syllables)

        merged = None
        for path in shards:
            part = build_statistics(stream_records(path), lexicon)
            merged = part if merged is None else merged.merge(part)
        assert merged == single


# -------------------------------------------------------------------------
# 10. checkpoint round-trip
# -------------------------------------------------------------------------

def test_checkpoint_roundtrip(lexicon, tmp_path):
    with criterion("checkpoint: bit-exact reload, 100-name prediction "
                   "equivalence"):
        records = generate_synthetic(overfit_synthetic_spec(80), seed=21)
        usable, _ = select_trainable(records, lexicon, "syllable", 3)
        outcome = train(usable, TrainConfig(d=32, epochs=4, seed=1,
                                            batch_size=32), lexicon)
        bundle = CheckpointBundle(
            student=outcome.student, teacher=outcome.teacher,
            pinyin_vocab=outcome.pinyin_vocab, hanzi_vocab=outcome.hanzi_vocab,
            d=32, l_max=3, tokenizer_mode="syllable")
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, bundle)
        loaded = load_checkpoint(path)
        for (name, a), (_, b) in zip(bundle.student.named_arrays(),
                                     loaded.student.named_arrays()):
            assert np.array_equal(a, b), name
        for (name, a), (_, b) in zip(bundle.teacher.named_arrays(),
                                     loaded.teacher.named_arrays()):
            assert np.array_equal(a, b), name

        rng = np.random.default_rng(5)
        pool = sorted(bundle.pinyin_vocab.tokens[3:])
        for _ in range(100):
            name = "".join(rng.choice(pool)
                           for _ in range(int(rng.integers(1, 4))))
            assert predict_gender(bundle.student, bundle.pinyin_vocab,
                                  lexicon, name) == \
                predict_gender(loaded.student, loaded.pinyin_vocab,
                               lexicon, name)
