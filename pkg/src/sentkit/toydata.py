"""Deterministic synthetic corpora built around topic clusters of pseudo-words.

Every sentence draws its content words from one topic, so sentence
neighbours, conversational replies and class labels all carry topic
information that an encoder can pick up during pre-training.
"""

from pathlib import Path

import numpy as np

TOY_DIR = Path(__file__).parent / "data" / "toy"

DETERMINERS = ["the", "a", "this", "that", "some", "every"]
RELATIONS = ["is near", "sits by", "looks like", "goes with", "is next to", "meets"]
_ONSETS = list("bdfgklmnprstvz") + ["br", "dr", "gl", "kr", "pl", "st", "tr", "sh", "ch"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou"]
_CODAS = ["", "", "n", "l", "r", "s", "m"]


def pseudo_words(count, seed=0):
    """``count`` distinct pronounceable nonsense words."""
    rng = np.random.default_rng(seed)
    reserved = {w for phrase in DETERMINERS + RELATIONS for w in phrase.split()}
    reserved |= {"not", "and", "what", "about", "do", "you", "like", "yes", "no"}
    out, seen = [], set(reserved)
    while len(out) < count:
        syllables = rng.integers(2, 4)
        word = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) + rng.choice(_CODAS)
                       for _ in range(syllables))
        if word not in seen:
            seen.add(word)
            out.append(word)
    return out


def make_lexicon(num_topics=8, words_per_topic=12, seed=0):
    words = pseudo_words(num_topics * words_per_topic, seed)
    return [words[t * words_per_topic:(t + 1) * words_per_topic] for t in range(num_topics)]


def topic_sentence(rng, lexicon, topic, n_content=2, words=None):
    """One sentence whose content words all come from ``topic``."""
    pool = lexicon[topic]
    if words is None:
        words = list(rng.choice(pool, size=n_content, replace=False))
    parts = [str(rng.choice(DETERMINERS)), words[0]]
    for w in words[1:]:
        parts += [str(rng.choice(RELATIONS)), str(rng.choice(DETERMINERS)), w]
    return " ".join(parts) + " ."


def topic_documents(lexicon, num_docs, seed=0, min_len=3, max_len=5):
    """Documents (lists of sentences), each about a single topic."""
    rng = np.random.default_rng(seed)
    docs = []
    for i in range(num_docs):
        topic = i % len(lexicon)
        length = int(rng.integers(min_len, max_len + 1))
        docs.append([topic_sentence(rng, lexicon, topic) for _ in range(length)])
    return docs


def conversation_pairs(lexicon, count, seed=0):
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(count):
        topic = i % len(lexicon)
        a, b = rng.choice(lexicon[topic], size=2, replace=False)
        question = f"what about {rng.choice(DETERMINERS)} {a} ?"
        pairs.append((question, topic_sentence(rng, lexicon, topic, words=[b, rng.choice(
            [w for w in lexicon[topic] if w not in (a, b)])])))
    return pairs


def nli_examples(lexicon, count, seed=0):
    """(premise, hypothesis, label) with 0=entailment, 1=contradiction, 2=neutral."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        topic = i % len(lexicon)
        w1, w2, w3 = rng.choice(lexicon[topic], size=3, replace=False)
        det1, det2 = rng.choice(DETERMINERS, size=2)
        rel = str(rng.choice(RELATIONS))
        premise = f"{det1} {w1} {rel} {det2} {w2} and {w3} ."
        label = i % 3
        if label == 0:
            hyp = f"{det1} {w1} {rel} {det2} {w2} ."
        elif label == 1:
            hyp = f"{det1} {w1} is not {rel.split()[-1]} {det2} {w2} ."
        else:
            other = (topic + 1 + int(rng.integers(len(lexicon) - 1))) % len(lexicon)
            hyp = topic_sentence(rng, lexicon, other)
        out.append((premise, hyp, label))
    return out


def topic_classification(lexicon, count, seed=0, group_size=None):
    """Single-sentence task whose label is the topic's group (topics split in halves)."""
    rng = np.random.default_rng(seed)
    group_size = group_size or len(lexicon) // 2
    rows = []
    for i in range(count):
        topic = int(rng.integers(len(lexicon)))
        rows.append((topic_sentence(rng, lexicon, topic), topic // group_size))
    return rows


def sts_pairs(lexicon, count, seed=0):
    """Sentence pairs with a graded gold score: same topic high, different topic low.

    The two sentences never share a content word, so only topic knowledge can
    recover the score.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(count):
        topic = int(rng.integers(len(lexicon)))
        words = list(rng.choice(lexicon[topic], size=4, replace=False))
        a = topic_sentence(rng, lexicon, topic, words=words[:2])
        if i % 2 == 0:
            b = topic_sentence(rng, lexicon, topic, words=words[2:])
            score = 4.0 + float(rng.integers(0, 3)) / 2
        else:
            other = (topic + 1 + int(rng.integers(len(lexicon) - 1))) % len(lexicon)
            b = topic_sentence(rng, lexicon, other)
            score = float(rng.integers(0, 3)) / 2
        rows.append((a, b, score))
    return rows


def transfer_pretraining_documents(seed=0, num_docs=200):
    """Documents over the same lexicon as ``topics500.tsv`` for encoder pre-training."""
    return topic_documents(make_lexicon(8, 40, seed + 10), num_docs, seed=seed + 99)


def random_vectors(words, dim, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(0, 1, (len(words), dim)).astype(np.float32)


def _write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def write_fixtures(directory=TOY_DIR, seed=0):
    """Regenerate the shipped toy corpora under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lex = make_lexicon(8, 12, seed)
    docs = topic_documents(lex, 48, seed=seed + 1)
    sent = []
    for doc in docs:
        sent.extend(doc)
        sent.append("")
    _write_lines(directory / "corpus.txt", sent[:-1])
    _write_lines(directory / "conversations.tsv",
                 [f"{a}\t{b}" for a, b in conversation_pairs(lex, 120, seed + 2)])
    _write_lines(directory / "nli.tsv",
                 [f"{p}\t{h}\t{y}" for p, h, y in nli_examples(lex, 60, seed + 3)])
    _write_lines(directory / "sts.tsv",
                 [f"{a}\t{b}\t{s}" for a, b, s in sts_pairs(lex, 20, seed + 4)])
    big = make_lexicon(8, 40, seed + 10)
    lines = []
    for doc in transfer_pretraining_documents(seed):
        lines.extend(doc)
        lines.append("")
    _write_lines(directory / "pretrain_corpus.txt", lines[:-1])
    _write_lines(directory / "topics500.tsv",
                 [f"{t}\t{y}" for t, y in topic_classification(big, 500, seed + 5)])
    words = pseudo_words(50, seed + 20)
    vecs = random_vectors(words, 8, seed + 21)
    _write_lines(directory / "vectors50.txt",
                 [f"{len(words)} 8"] + [w + " " + " ".join(f"{x:.6f}" for x in v)
                                        for w, v in zip(words, vecs)])
    return directory


if __name__ == "__main__":
    print(write_fixtures())
