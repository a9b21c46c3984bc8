"""Question/answer records, tokenization, vocabularies, triples and candidate pools."""
from __future__ import annotations

import base64
import hashlib
import json
import logging
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

PAD = 0
UNK = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
SPLITS = ("train", "dev", "test1", "test2")
DEFAULT_MAX_PAIRS = 10


class DatasetFormatError(ValueError):
    """A dataset file line could not be parsed."""

    def __init__(self, path, lineno: int, reason: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {reason}")


@dataclass(frozen=True)
class Answer:
    user_id: str
    votes: int
    text: str | None = None


@dataclass(frozen=True)
class QuestionRecord:
    question_id: str
    text: str
    answers: tuple[Answer, ...]

    def votes_by_user(self) -> dict[str, int]:
        return {a.user_id: a.votes for a in self.answers}

    def gold_user(self) -> str | None:
        """The unique strict-maximum-vote answerer, or None on a tie/no answers."""
        if not self.answers:
            return None
        top = max(a.votes for a in self.answers)
        best = [a.user_id for a in self.answers if a.votes == top]
        return best[0] if len(best) == 1 else None

    def answer_text(self, user_id: str) -> str | None:
        for a in self.answers:
            if a.user_id == user_id:
                return a.text
        return None


@dataclass
class Dataset:
    split: str
    records: list[QuestionRecord] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.question_id in seen:
                raise ValueError(f"duplicate question_id {r.question_id!r} in split {self.split!r}")
            seen.add(r.question_id)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def users(self) -> list[str]:
        return sorted({a.user_id for r in self.records for a in r.answers})

    def by_id(self) -> dict[str, QuestionRecord]:
        return {r.question_id: r for r in self.records}


def check_disjoint(datasets: Iterable[Dataset]):
    owner: dict[str, str] = {}
    for ds in datasets:
        for r in ds.records:
            if r.question_id in owner:
                raise ValueError(
                    f"question {r.question_id!r} appears in both {owner[r.question_id]!r} and {ds.split!r}"
                )
            owner[r.question_id] = ds.split


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def _parse_tsv_line(line: str, path, lineno: int) -> QuestionRecord:
    parts = line.split("\t")
    if len(parts) < 3:
        raise DatasetFormatError(path, lineno, "expected question_id, question_text and answers fields")
    qid, text, answers_field, *texts = parts
    if not qid:
        raise DatasetFormatError(path, lineno, "empty question_id")
    if not answers_field.strip():
        raise DatasetFormatError(path, lineno, "empty answers field")
    answers = []
    for item in answers_field.split(","):
        user, sep, votes = item.rpartition(":")
        if not sep or not user:
            raise DatasetFormatError(path, lineno, f"answer {item!r} is not user:votes")
        try:
            v = int(votes)
        except ValueError:
            raise DatasetFormatError(path, lineno, f"votes {votes!r} is not an integer") from None
        if v < 0:
            raise DatasetFormatError(path, lineno, f"negative votes {v}")
        answers.append([user, v, None])
    if texts:
        if len(texts) != len(answers):
            raise DatasetFormatError(path, lineno, f"{len(texts)} answer texts for {len(answers)} answers")
        for a, t in zip(answers, texts):
            try:
                a[2] = base64.b64decode(t, validate=True).decode("utf-8")
            except Exception as exc:
                raise DatasetFormatError(path, lineno, f"bad base64 answer text: {exc}") from None
    return QuestionRecord(qid, text, tuple(Answer(*a) for a in answers))


def _parse_json_line(line: str, path, lineno: int) -> QuestionRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(path, lineno, f"invalid JSON: {exc.msg}") from None
    if not isinstance(obj, dict) or "id" not in obj or "text" not in obj or "answers" not in obj:
        raise DatasetFormatError(path, lineno, "record needs id, text and answers")
    answers = []
    for a in obj["answers"]:
        try:
            votes = int(a["votes"])
            user = str(a["user"])
        except (KeyError, TypeError, ValueError):
            raise DatasetFormatError(path, lineno, f"bad answer entry {a!r}") from None
        if votes < 0:
            raise DatasetFormatError(path, lineno, f"negative votes {votes}")
        answers.append(Answer(user, votes, a.get("text")))
    if not answers:
        raise DatasetFormatError(path, lineno, "empty answers list")
    return QuestionRecord(str(obj["id"]), str(obj["text"]), tuple(answers))


def parse_dataset(path, format: str = "tsv", split: str = "train") -> Dataset:
    """Read a line-delimited dataset file (``tsv`` or ``jsonl``), keeping input order."""
    parser = {"tsv": _parse_tsv_line, "jsonl": _parse_json_line, "json": _parse_json_line}.get(format)
    if parser is None:
        raise ValueError(f"unknown dataset format {format!r}")
    records = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            rec = parser(line, path, lineno)
            if rec.question_id in seen:
                raise DatasetFormatError(
                    path, lineno, f"duplicate question_id {rec.question_id!r} (first on line {seen[rec.question_id]})"
                )
            seen[rec.question_id] = lineno
            records.append(rec)
    return Dataset(split, records)


def write_dataset(dataset: Dataset, path, format: str = "tsv"):
    with open(path, "w", encoding="utf-8") as fh:
        for r in dataset.records:
            if format == "tsv":
                for bad in ("\t", "\n"):
                    if bad in r.text or bad in r.question_id:
                        raise ValueError(f"question {r.question_id!r} contains a tab or newline")
                fields = [r.question_id, r.text, ",".join(f"{a.user_id}:{a.votes}" for a in r.answers)]
                if any(a.text is not None for a in r.answers):
                    fields += [base64.b64encode((a.text or "").encode("utf-8")).decode("ascii") for a in r.answers]
                fh.write("\t".join(fields) + "\n")
            else:
                answers = []
                for a in r.answers:
                    d = {"user": a.user_id, "votes": a.votes}
                    if a.text is not None:
                        d["text"] = a.text
                    answers.append(d)
                fh.write(json.dumps({"id": r.question_id, "text": r.text, "answers": answers},
                                    ensure_ascii=False) + "\n")


def write_expert_map(experts: dict[str, str], path):
    with open(path, "w", encoding="utf-8") as fh:
        for qid, uid in experts.items():
            fh.write(f"{qid}\t{uid}\n")


def read_expert_map(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                qid, uid = line.rstrip("\n").split("\t")
                out[qid] = uid
    return out


# ---------------------------------------------------------------------------
# tokens and vocabulary
# ---------------------------------------------------------------------------

_STRIP = string.punctuation + "“”‘’。，？！：；"


def tokenize(text: str, mode: str = "whitespace") -> list[str]:
    """Split text into tokens.

    ``whitespace`` lowercases, splits on whitespace and strips surrounding
    punctuation.  ``char_bigram`` emits overlapping character bigrams of each
    non-space run; a run of one character yields itself.
    """
    if mode == "whitespace":
        out = []
        for tok in text.lower().split():
            tok = tok.strip(_STRIP)
            if tok:
                out.append(tok)
        return out
    if mode == "char_bigram":
        out = []
        for run in text.split():
            if len(run) == 1:
                out.append(run)
            else:
                out.extend(run[i:i + 2] for i in range(len(run) - 1))
        return out
    raise ValueError(f"unknown tokenizer mode {mode!r}")


class Vocab:
    """Token <-> id map with PAD=0 and UNK=1 reserved."""

    def __init__(self, tokens: Sequence[str], min_count: int = 1):
        self.itos = [PAD_TOKEN, UNK_TOKEN] + list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("vocabulary tokens must be unique and must not reuse the reserved tokens")
        self.min_count = min_count

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def tokens(self) -> list[str]:
        return self.itos[2:]

    def fingerprint(self) -> str:
        return fingerprint(self.itos)


def fingerprint(items: Sequence[str]) -> str:
    h = hashlib.sha256()
    for it in items:
        h.update(it.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def build_vocab_from_tokens(sentences: Iterable[Sequence[str]], min_count: int = 1) -> Vocab:
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter()
    for s in sentences:
        counts.update(s)
    counts.pop(PAD_TOKEN, None)
    counts.pop(UNK_TOKEN, None)
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocab(kept, min_count)


def dataset_texts(dataset: Dataset, include_answers: bool = False) -> Iterable[str]:
    for r in dataset.records:
        yield r.text
        if include_answers:
            for a in r.answers:
                if a.text:
                    yield a.text


def build_vocab(dataset: Dataset, min_count: int = 1, mode: str = "whitespace",
                include_answers: bool = False) -> Vocab:
    """Ids from 2 upward in descending frequency, ties broken lexicographically."""
    return build_vocab_from_tokens(
        (tokenize(t, mode) for t in dataset_texts(dataset, include_answers)), min_count
    )


def encode_text(tokens: Sequence[str], vocab: Vocab, length: int = 50) -> np.ndarray:
    """Map tokens to ids, truncating to the first ``length`` and right-padding with PAD."""
    if length < 1:
        raise ValueError("length must be >= 1")
    out = np.full(length, PAD, dtype=np.int64)
    ids = [vocab.id(t) for t in tokens[:length]]
    out[:len(ids)] = ids
    return out


# ---------------------------------------------------------------------------
# supervision
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Triple:
    question_id: str
    pos_user_id: str
    neg_user_id: str


def question_triples(record: QuestionRecord, max_pairs: int = DEFAULT_MAX_PAIRS) -> list[Triple]:
    """Strictly vote-ordered pairs of one question, largest vote gap first."""
    pairs = []
    for i, a in enumerate(record.answers):
        for j, b in enumerate(record.answers):
            if a.votes > b.votes and a.user_id != b.user_id:
                pairs.append((a.votes - b.votes, i, j))
    # stable: gap desc, then answer order
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
    return [Triple(record.question_id, record.answers[i].user_id, record.answers[j].user_id)
            for _, i, j in pairs[:max_pairs]]


def make_triples(dataset: Dataset, rng: np.random.Generator | None = None,
                 max_pairs: int = DEFAULT_MAX_PAIRS) -> list[Triple]:
    """Training triples for every question; shuffled when an rng is given."""
    triples = [t for r in dataset.records for t in question_triples(r, max_pairs)]
    if rng is not None:
        order = rng.permutation(len(triples))
        triples = [triples[i] for i in order]
    return triples


@dataclass(frozen=True)
class CandidatePool:
    question_id: str
    candidates: tuple[str, ...]
    gold_index: int

    @property
    def gold(self) -> str:
        return self.candidates[self.gold_index]


def sample_candidate_pool(question: QuestionRecord, all_users: Sequence[str], k: int,
                          rng: np.random.Generator) -> CandidatePool | None:
    """Gold expert plus ``k - 1`` distinct other users, shuffled.

    Returns None (and logs why) when the question has no unique top answerer.
    """
    gold = question.gold_user()
    if gold is None:
        logger.info("skipping question %s: no unique top-voted answerer", question.question_id)
        return None
    others = [u for u in all_users if u != gold]
    if k < 1 or k - 1 > len(others):
        raise ValueError(f"pool size {k} needs {k - 1} other users, only {len(others)} available")
    picks = rng.choice(len(others), size=k - 1, replace=False) if k > 1 else []
    cands = [gold] + [others[i] for i in picks]
    order = rng.permutation(k)
    cands = [cands[i] for i in order]
    return CandidatePool(question.question_id, tuple(cands), cands.index(gold))


def question_rng(seed: int, question_id: str) -> np.random.Generator:
    """Independent stream per (seed, question) so pools do not depend on iteration order."""
    digest = hashlib.sha256(question_id.encode("utf-8")).digest()
    return np.random.default_rng([int(seed), int.from_bytes(digest[:8], "little")])


# ---------------------------------------------------------------------------
# synthetic data with planted experts
# ---------------------------------------------------------------------------

@dataclass
class SyntheticConfig:
    n_topics: int = 5
    n_users: int = 50
    n_questions: int = 1000
    vocab_size: int = 500
    noise: float = 0.1
    min_len: int = 8
    max_len: int = 20
    answerers_per_question: tuple[int, int] = (2, 4)
    distractors_per_question: tuple[int, int] = (1, 2)
    answer_len: int = 30
    with_answers: bool = True


def _synthetic_world(config: SyntheticConfig):
    if config.n_users < config.n_topics:
        raise ValueError(f"need at least one user per topic: {config.n_users} users, {config.n_topics} topics")
    if config.vocab_size < 2 * config.n_topics:
        raise ValueError("vocab_size too small for the number of topics")
    if not 0 <= config.noise <= 1:
        raise ValueError("noise must be in [0, 1]")
    if not 1 <= config.min_len <= config.max_len <= 50:
        raise ValueError("need 1 <= min_len <= max_len <= 50")
    words = [f"w{i:04d}" for i in range(config.vocab_size)]
    per_topic = config.vocab_size // (config.n_topics + 1)
    keywords = [words[t * per_topic:(t + 1) * per_topic] for t in range(config.n_topics)]
    users = [f"u{i:03d}" for i in range(config.n_users)]
    topic_of = {u: i % config.n_topics for i, u in enumerate(users)}
    members = [[u for u in users if topic_of[u] == t] for t in range(config.n_topics)]
    return words, keywords, users, topic_of, members


def _draw_text(rng, keywords, words, n, noise):
    toks = []
    for _ in range(n):
        pool = words if rng.random() < noise else keywords
        toks.append(pool[rng.integers(len(pool))])
    return " ".join(toks)


def generate_synthetic(config: SyntheticConfig, rng: np.random.Generator,
                       splits: dict[str, int] | None = None):
    """Build datasets whose topic experts are planted by construction.

    Each user belongs to one topic; the first user of each topic is its
    expert and always receives the strictly highest vote on questions of that
    topic.  Other same-topic answerers and cross-topic distractors get lower
    votes.  Answer texts (when enabled) come from the answerer's own topic
    keywords, with noise growing as votes drop.

    Returns ``(datasets, experts, topics)`` where ``datasets`` maps split
    name to :class:`Dataset`, ``experts`` maps question id to its planted
    expert and ``topics`` maps question id to its topic index.
    """
    if splits is None:
        splits = {"train": config.n_questions}
    words, keywords, users, topic_of, members = _synthetic_world(config)
    experts, topics = {}, {}
    datasets = {}
    qn = 0
    for split, count in splits.items():
        records = []
        for _ in range(count):
            qid = f"q{qn:06d}"
            qn += 1
            t = int(rng.integers(config.n_topics))
            n_tok = int(rng.integers(config.min_len, config.max_len + 1))
            text = _draw_text(rng, keywords[t], words, n_tok, config.noise)
            expert = members[t][0]
            rest = members[t][1:]
            lo, hi = config.answerers_per_question
            n_same = min(len(rest), int(rng.integers(lo, hi + 1)))
            same = [rest[i] for i in rng.choice(len(rest), n_same, replace=False)] if n_same else []
            outside = [u for u in users if topic_of[u] != t]
            lo, hi = config.distractors_per_question
            n_out = min(len(outside), int(rng.integers(lo, hi + 1)))
            dist = [outside[i] for i in rng.choice(len(outside), n_out, replace=False)] if n_out else []
            top = int(rng.integers(20, 40))
            entries = [(expert, top)]
            for u in same:
                entries.append((u, int(rng.integers(5, top))))
            for u in dist:
                entries.append((u, int(rng.integers(0, 5))))
            answers = []
            for u, v in entries:
                atext = None
                if config.with_answers:
                    quality = v / top
                    a_noise = min(1.0, config.noise + 0.6 * (1 - quality))
                    atext = _draw_text(rng, keywords[topic_of[u]], words, config.answer_len, a_noise)
                answers.append(Answer(u, v, atext))
            order = rng.permutation(len(answers))
            records.append(QuestionRecord(qid, text, tuple(answers[i] for i in order)))
            experts[qid] = expert
            topics[qid] = t
        datasets[split] = Dataset(split, records)
    return datasets, experts, topics


def synthetic_keywords(config: SyntheticConfig) -> list[list[str]]:
    return _synthetic_world(config)[1]
