"""Datasets: synthetic changed-prior benchmark plus VQA-style ingestion.

The synthetic generator builds a classification problem whose per-question-
type answer marginals are skewed on the train split and inverted on the test
split, so a predictor that memorizes the type prior collapses at test time.
Each instance carries a latent concept; the image features embed that
concept (plus Gaussian noise) and the question tokens carry the type, so the
answer is recoverable only from the two together.

The ingestion path reads VQA-style question/annotation JSON with the usual
soft answer scores: min(#matching annotator answers / 3, 1).
"""

import json
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .features import read_feature_file

FORMAT_VERSION = 1
OTHER_TYPE = "other"

# Question-type prefixes as shipped with the public VQA v2 release (65 entries).
# External convention, reproduced here so real-data runs can bucket questions
# the same way; "none of the above" never matches as a prefix and unmatched
# questions fall through to the "other" type.
VQA_V2_QUESTION_TYPES = [
    "how many", "is the", "what", "what color is the", "what is the",
    "none of the above", "is this", "is this a", "what is", "are the",
    "what kind of", "is there a", "what type of", "is it", "what are the",
    "where is the", "is there", "does the", "what color are the", "are these",
    "are there", "which", "is", "what is the man", "is the man", "are", "how",
    "does this", "what is on the", "what does the", "how many people are",
    "what is in the", "what is this", "do", "why", "what time", "in",
    "what is the woman", "on", "is the woman", "what color", "what animal is",
    "are they", "who is", "what sport is", "what color is", "what room is",
    "has", "is he", "what is the name", "how many people are in", "can you",
    "why is the", "what brand", "is anyone", "is that a", "what number is",
    "was", "is this person", "do you", "what is the color of the",
    "what is the person", "could", "is this an", "where are the",
]

_WORD_RE = re.compile(r"[^a-z0-9' ]+")


def tokenize(text):
    """Lowercase, strip punctuation, split on whitespace."""
    return _WORD_RE.sub(" ", text.lower()).split()


class AnswerVocab:
    """Ordered answer strings with a dense string -> index map."""

    def __init__(self, answers):
        self.answers = list(answers)
        self.index = {a: i for i, a in enumerate(self.answers)}
        if len(self.index) != len(self.answers):
            raise DataError("duplicate answers in vocabulary")

    def __len__(self):
        return len(self.answers)

    def __eq__(self, other):
        return isinstance(other, AnswerVocab) and self.answers == other.answers


class QuestionTypeTable:
    """Ordered prefix table with an implicit trailing fallback type."""

    def __init__(self, names, prefixes):
        if len(names) != len(prefixes):
            raise ConfigError("type table needs one prefix per name")
        self.names = list(names) + [OTHER_TYPE]
        self._prefixes = [tuple(tokenize(p)) for p in prefixes]
        self.other_id = len(self.names) - 1
        # longest prefix first so the first hit wins
        self._by_length = sorted(
            range(len(self._prefixes)),
            key=lambda i: (-len(self._prefixes[i]), i),
        )

    @classmethod
    def vqa_v2(cls):
        return cls(VQA_V2_QUESTION_TYPES, VQA_V2_QUESTION_TYPES)

    def __len__(self):
        return len(self.names)

    def __eq__(self, other):
        return (isinstance(other, QuestionTypeTable)
                and self.names == other.names and self._prefixes == other._prefixes)

    def prefix(self, type_id):
        return self._prefixes[type_id]

    def match(self, tokens):
        """Longest matching token prefix; no match -> the fallback type."""
        tokens = tuple(tokens)
        for i in self._by_length:
            pref = self._prefixes[i]
            if pref and tokens[:len(pref)] == pref:
                return i
        return self.other_id


def question_type(tokens, table):
    """Type id of a tokenized question under a prefix table."""
    return table.match(tokens)


def argmax_score(scores):
    """Index of the highest answer score; ties break to the lowest index."""
    if not scores:
        raise DataError("instance has no answer scores")
    best_idx, best = None, None
    for idx in sorted(scores):
        s = scores[idx]
        if best is None or s > best:
            best_idx, best = idx, s
    return best_idx


@dataclass
class Instance:
    id: str
    image_id: str
    features: np.ndarray
    tokens: list
    type_id: int
    scores: dict          # answer index -> score in (0, 1], sparse
    m: int                # argmax of scores, lowest-index tie-break
    latent: int | None = None     # generator concept, synthetic data only
    category: str | None = None   # evaluation bucket for ingested data

    def __eq__(self, other):
        return (isinstance(other, Instance)
                and self.id == other.id
                and self.image_id == other.image_id
                and np.array_equal(self.features, other.features)
                and self.tokens == other.tokens
                and self.type_id == other.type_id
                and self.scores == other.scores
                and self.m == other.m
                and self.latent == other.latent
                and self.category == other.category)


@dataclass
class Dataset:
    kind: str             # "synthetic" or "vqa"
    answers: AnswerVocab
    token_vocab: list
    types: QuestionTypeTable
    train: list
    test: list
    d_img: int
    config: dict = field(default_factory=dict)
    seed: int | None = None

    def __eq__(self, other):
        return (isinstance(other, Dataset)
                and self.kind == other.kind
                and self.answers == other.answers
                and self.token_vocab == other.token_vocab
                and self.types == other.types
                and self.train == other.train
                and self.test == other.test
                and self.d_img == other.d_img
                and self.config == other.config
                and self.seed == other.seed)

    def split(self, name):
        if name not in ("train", "test"):
            raise ConfigError(f"unknown split {name!r}")
        return self.train if name == "train" else self.test

    def validate(self):
        seen = set()
        for inst in self.train + self.test:
            if inst.id in seen:
                raise DataError(f"duplicate instance id {inst.id}")
            seen.add(inst.id)
            if inst.features.shape != (self.d_img,):
                raise DataError(f"instance {inst.id}: feature width {inst.features.shape} "
                                f"!= ({self.d_img},)")
            if not inst.scores:
                raise DataError(f"instance {inst.id}: no answer scores")
            if inst.m != argmax_score(inst.scores):
                raise DataError(f"instance {inst.id}: m does not maximize the scores")
            if not 0 <= inst.type_id < len(self.types):
                raise DataError(f"instance {inst.id}: invalid type id {inst.type_id}")
        return self


# ---------------------------------------------------------------------------
# Synthetic changed-prior benchmark
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    n_types: int = 6
    answers_per_type: int = 4
    n_train: int = 10000
    n_test: int = 4000
    bias: float = 0.8             # train-split mass on each type's head answer
    visual_noise: float = 0.55    # stddev of Gaussian noise on image features
    d_img: int = 4
    query_pool: int = 8           # surface-variation tokens shared across types
    query_len: int = 1
    head_slots: int = 4           # distinct concept slots hosting head answers
    head_credit: float = 0.5      # train-only soft score on the head answer
    label_noise: float = 0.0      # train-only odds of labeling with the head answer
    test_mode: str = "invert"     # "invert" (head answer made rare) or "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.answers_per_type < 2:
            raise ConfigError(f"answers_per_type must be >= 2, got {self.answers_per_type}")
        if not 0.0 <= self.bias <= 1.0:
            raise ConfigError(f"bias must be in [0, 1], got {self.bias}")
        if self.n_types < 1 or self.n_train < 1 or self.n_test < 1:
            raise ConfigError("n_types, n_train and n_test must be positive")
        if self.d_img < self.answers_per_type:
            raise ConfigError(f"d_img must be >= answers_per_type for orthogonal concept "
                              f"embeddings, got {self.d_img} < {self.answers_per_type}")
        if self.test_mode not in ("invert", "uniform"):
            raise ConfigError(f"test_mode must be 'invert' or 'uniform', got {self.test_mode!r}")
        if self.visual_noise < 0:
            raise ConfigError(f"visual_noise must be >= 0, got {self.visual_noise}")
        if not 1 <= self.head_slots <= self.answers_per_type:
            raise ConfigError(f"head_slots must be in [1, answers_per_type], "
                              f"got {self.head_slots}")
        if not 0.0 <= self.head_credit < 1.0:
            raise ConfigError(f"head_credit must be in [0, 1), got {self.head_credit}")
        if not 0.0 <= self.label_noise < 1.0:
            raise ConfigError(f"label_noise must be in [0, 1), got {self.label_noise}")
        if self.label_noise > self.bias:
            raise ConfigError(f"label_noise must not exceed bias, got "
                              f"{self.label_noise} > {self.bias}")
        if self.query_len > 0 and self.query_pool < 1:
            raise ConfigError("query_pool must be positive when query_len > 0")


def _draw_value(rng, k, head, p_head):
    if rng.random() < p_head:
        return head
    c = int(rng.integers(k - 1))
    return c + 1 if c >= head else c


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    """Build the changed-prior benchmark deterministically from its seed.

    Each instance draws a question type and a latent concept; the answer
    pairs the two, so neither modality suffices alone. The image embeds
    the concept (orthonormal directions plus Gaussian noise) and the
    question carries the type token, making the type's head answer an
    attractive shortcut on the skewed train split. Test inverts the
    skew (or flattens it, per `test_mode`).

    With head_credit > 0, train instances whose answer is not the head
    also score the head answer at that weight, mimicking annotators who
    default to the typical answer; test labels stay clean. label_noise
    goes further: that fraction of train instances is labeled with the
    head answer outright, images untouched. The concept draw is
    compensated so the labeled head share still lands on `bias`.
    """
    rng = np.random.default_rng(config.seed)
    T, k = config.n_types, config.answers_per_type

    answers = [f"t{t}_a{j}" for t in range(T) for j in range(k)]
    type_tokens = [f"type{t}" for t in range(T)]
    query_tokens = [f"q{i}" for i in range(config.query_pool)]
    token_vocab = type_tokens + query_tokens
    table = QuestionTypeTable(type_tokens, type_tokens)

    # head layout: few head_slots concentrate the train concept marginal
    # (re-paired donors often repeat the anchor's concept), many slots
    # flatten it; both regimes occur in real data
    heads = np.arange(T) % config.head_slots
    # orthonormal concept directions: decoding difficulty set purely by noise
    basis, _ = np.linalg.qr(rng.standard_normal((config.d_img, k)))
    concept_embed = basis.T.copy()

    if config.test_mode == "invert":
        p_head_test = (1.0 - config.bias) / (k - 1)
    else:
        p_head_test = 1.0 / k

    def make_split(name, n, p_head, head_credit, label_noise):
        # flips relabel toward the head, so the latent head share is set
        # lower to keep the labeled share at p_head
        p_latent = (p_head - label_noise) / (1.0 - label_noise)
        instances = []
        for i in range(n):
            t = int(rng.integers(T))
            c = _draw_value(rng, k, int(heads[t]), p_latent)
            feats = concept_embed[c] + config.visual_noise * rng.standard_normal(config.d_img)
            tokens = [t] + [T + int(q) for q in rng.integers(config.query_pool,
                                                             size=config.query_len)]
            head_idx = t * k + int(heads[t])
            answer_idx = t * k + c
            if label_noise > 0.0 and rng.random() < label_noise:
                answer_idx = head_idx
            scores = {answer_idx: 1.0}
            if head_credit > 0.0 and head_idx != answer_idx:
                scores[head_idx] = head_credit
            instances.append(Instance(
                id=f"{name}{i:06d}",
                image_id=f"img-{name}-{i:06d}",
                features=feats,
                tokens=tokens,
                type_id=t,
                scores=scores,
                m=answer_idx,
                latent=c,
            ))
        return instances

    train = make_split("train", config.n_train, config.bias,
                       config.head_credit, config.label_noise)
    test = make_split("test", config.n_test, p_head_test, 0.0, 0.0)

    cfg = {
        "n_types": T, "answers_per_type": k,
        "n_train": config.n_train, "n_test": config.n_test,
        "bias": config.bias, "visual_noise": config.visual_noise,
        "d_img": config.d_img, "query_pool": config.query_pool,
        "query_len": config.query_len, "head_slots": config.head_slots,
        "head_credit": config.head_credit,
        "label_noise": config.label_noise, "test_mode": config.test_mode,
        "heads": [int(h) for h in heads],
    }
    return Dataset(
        kind="synthetic", answers=AnswerVocab(answers), token_vocab=token_vocab,
        types=table, train=train, test=test, d_img=config.d_img,
        config=cfg, seed=config.seed,
    ).validate()


# ---------------------------------------------------------------------------
# Serialization: line-delimited JSON, header record first
# ---------------------------------------------------------------------------

def save_dataset(dataset: Dataset, path):
    """Write one header record plus one record per instance, inline features."""
    with open(path, "w") as fh:
        header = {
            "record": "header",
            "format_version": FORMAT_VERSION,
            "kind": dataset.kind,
            "answers": dataset.answers.answers,
            "token_vocab": dataset.token_vocab,
            "type_names": dataset.types.names[:-1],
            "type_prefixes": [" ".join(dataset.types.prefix(i))
                              for i in range(len(dataset.types) - 1)],
            "d_img": dataset.d_img,
            "config": dataset.config,
            "seed": dataset.seed,
        }
        fh.write(json.dumps(header) + "\n")
        for split_name in ("train", "test"):
            for inst in dataset.split(split_name):
                rec = {
                    "record": "instance",
                    "split": split_name,
                    "id": inst.id,
                    "image_id": inst.image_id,
                    "features": inst.features.tolist(),
                    "tokens": inst.tokens,
                    "type_id": inst.type_id,
                    "scores": {str(kk): vv for kk, vv in sorted(inst.scores.items())},
                    "m": inst.m,
                }
                if inst.latent is not None:
                    rec["latent"] = inst.latent
                if inst.category is not None:
                    rec["category"] = inst.category
                fh.write(json.dumps(rec) + "\n")


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        first = fh.readline()
        if not first:
            raise DataError(f"{path}: empty dataset file")
        header = json.loads(first)
        if header.get("record") != "header":
            raise DataError(f"{path}: first record must be the header")
        if header.get("format_version") != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported format version "
                            f"{header.get('format_version')}")
        table = QuestionTypeTable(header["type_names"], header["type_prefixes"])
        dataset = Dataset(
            kind=header["kind"],
            answers=AnswerVocab(header["answers"]),
            token_vocab=header["token_vocab"],
            types=table,
            train=[], test=[],
            d_img=header["d_img"],
            config=header["config"],
            seed=header["seed"],
        )
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("record") != "instance":
                raise DataError(f"{path}:{line_no}: unexpected record type")
            inst = Instance(
                id=rec["id"],
                image_id=rec["image_id"],
                features=np.asarray(rec["features"], dtype=np.float64),
                tokens=list(rec["tokens"]),
                type_id=rec["type_id"],
                scores={int(kk): float(vv) for kk, vv in rec["scores"].items()},
                m=rec["m"],
                latent=rec.get("latent"),
                category=rec.get("category"),
            )
            dataset.split(rec["split"]).append(inst)
    return dataset.validate()


# ---------------------------------------------------------------------------
# VQA-style ingestion
# ---------------------------------------------------------------------------

_CATEGORY_BY_ANSWER_TYPE = {"yes/no": "Yes/No", "number": "Num", "other": "Other"}


def _load_features_any(path):
    if str(path).endswith(".json"):
        with open(path) as fh:
            raw = json.load(fh)
        return {k: np.asarray(v, dtype=np.float64) for k, v in raw.items()}
    return read_feature_file(path)


def _read_vqa_pair(question_file, annotation_file):
    with open(question_file) as fh:
        questions = json.load(fh).get("questions", [])
    with open(annotation_file) as fh:
        annotations = json.load(fh).get("annotations", [])
    if not annotations:
        raise DataError(f"{annotation_file}: no annotation records")
    if not questions:
        raise DataError(f"{question_file}: no question records")
    ann_by_qid = {}
    for ann in annotations:
        if "question_id" not in ann or "answers" not in ann:
            raise DataError(f"{annotation_file}: malformed annotation record: "
                            f"{json.dumps(ann)[:120]}")
        ann_by_qid[ann["question_id"]] = ann
    parsed = []
    for q in questions:
        for key in ("question_id", "image_id", "question"):
            if key not in q:
                raise DataError(f"{question_file}: malformed question record: "
                                f"{json.dumps(q)[:120]}")
        parsed.append((q, tokenize(q["question"])))
    return parsed, ann_by_qid, annotations


def _build_split(parsed, ann_by_qid, features, token_index, answer_vocab,
                 type_table, prefix, d_img_holder):
    instances = []
    skipped = 0
    for q, tokens in parsed:
        qid = q["question_id"]
        if qid not in ann_by_qid:
            raise DataError(f"question {qid}: no matching annotation")
        ann = ann_by_qid[qid]
        img = str(q["image_id"])
        if img not in features:
            raise DataError(f"question {qid}: no features for image {img}")
        feats = features[img]
        if d_img_holder[0] is None:
            d_img_holder[0] = feats.shape[0]
        elif feats.shape[0] != d_img_holder[0]:
            raise DataError(f"question {qid}: feature width {feats.shape[0]} "
                            f"!= {d_img_holder[0]}")

        counts = Counter(a["answer"] for a in ann["answers"])
        scores = {}
        for answer, count in counts.items():
            idx = answer_vocab.index.get(answer)
            if idx is not None:
                scores[idx] = min(count / 3.0, 1.0)
        if not scores:
            skipped += 1
            continue

        category = _CATEGORY_BY_ANSWER_TYPE.get(str(ann.get("answer_type", "")).lower())
        instances.append(Instance(
            id=f"{prefix}{qid}",
            image_id=img,
            features=np.asarray(feats, dtype=np.float64),
            tokens=[token_index[t] for t in tokens],
            type_id=question_type(tokens, type_table),
            scores=scores,
            m=argmax_score(scores),
            category=category,
        ))
    return instances, skipped


def ingest_vqa_json(question_file, annotation_file, feature_file,
                    answer_vocab=None, type_table=None,
                    test_question_file=None, test_annotation_file=None) -> Dataset:
    """Build a Dataset from VQA-style question/annotation JSON.

    Soft answer scores follow the standard convention: each distinct
    annotator answer scores min(count / 3, 1). The answer vocabulary
    defaults to every train-split answer; answers outside it are
    dropped and instances left with no scored answer are skipped.
    Pass the optional test files to fill both splits against shared
    vocabularies (ids get train-/test- prefixes to stay unique).
    """
    if (test_question_file is None) != (test_annotation_file is None):
        raise ConfigError("test questions and test annotations go together")
    parsed_tr, anns_tr, raw_anns = _read_vqa_pair(question_file, annotation_file)
    parsed_te, anns_te = [], {}
    if test_question_file is not None:
        parsed_te, anns_te, _ = _read_vqa_pair(test_question_file,
                                               test_annotation_file)

    features = _load_features_any(feature_file)
    if answer_vocab is None:
        answer_vocab = AnswerVocab(sorted(
            {a["answer"] for ann in raw_anns for a in ann["answers"]}))
    if type_table is None:
        type_table = QuestionTypeTable.vqa_v2()

    token_vocab = sorted({t for _, toks in parsed_tr + parsed_te for t in toks})
    token_index = {tok: i for i, tok in enumerate(token_vocab)}

    d_img_holder = [None]
    prefix_tr = "train-" if parsed_te else ""
    train, skipped_tr = _build_split(parsed_tr, anns_tr, features, token_index,
                                     answer_vocab, type_table, prefix_tr,
                                     d_img_holder)
    test, skipped_te = _build_split(parsed_te, anns_te, features, token_index,
                                    answer_vocab, type_table, "test-",
                                    d_img_holder) if parsed_te else ([], 0)

    dataset = Dataset(
        kind="vqa", answers=answer_vocab, token_vocab=token_vocab, types=type_table,
        train=train, test=test,
        d_img=d_img_holder[0] if d_img_holder[0] is not None else 0,
        config={"question_file": str(question_file),
                "annotation_file": str(annotation_file),
                "feature_file": str(feature_file),
                "skipped_no_vocab_answer": skipped_tr + skipped_te},
        seed=None,
    )
    return dataset.validate()
