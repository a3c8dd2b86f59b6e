"""Regenerates filter_corpus.jsonl and filter_verdicts.tsv.

Every article is assembled from explicit sentences so the lead/body word
counts and the lead/body overlap ratio are known by construction; the asserts
below re-count them independently of the C++ implementation.
"""
import json
import re
from pathlib import Path

HERE = Path(__file__).parent
STOP = set(re.findall(r'"([a-z]+)"', (HERE / "../../include/ted/stopwords.hpp").read_text()))

BODY_WORDS = ["river", "stone", "market", "signal", "harbor", "lantern", "meadow", "copper",
              "violet", "engine", "garden", "thunder", "canyon", "pepper", "saddle", "quartz"]
LEAD_ONLY = [f"zeta{i}" for i in range(200)]  # content words never placed in the body


def norm(text):
    return re.findall(r"[a-z0-9]+", text.lower())


def sentence(words):
    words = list(words)
    words[0] = words[0].capitalize()
    return " ".join(words) + "."


def chunk_sentences(words, size):
    return [sentence(words[i:i + size]) for i in range(0, len(words), size)]


def body_sentences(n_words, extra=()):
    words = list(extra) + [BODY_WORDS[i % len(BODY_WORDS)] for i in range(n_words - len(extra))]
    assert len(words) == n_words
    return chunk_sentences(words, 10)


def lead_sentences(shared, novel, n_words):
    """Three sentences, `shared` body words + `novel` lead-only words, padded with stopwords."""
    content = list(shared) + list(novel)
    pad = n_words - len(content)
    assert pad >= 0
    words = content + ["the"] * pad
    third = max(1, n_words // 3)
    parts = [words[:third], words[third:2 * third], words[2 * third:]]
    assert all(parts)
    return [sentence(p) for p in parts]


def article(aid, lead, body, prefix=""):
    text = prefix + " ".join(lead + body)
    lead_text, body_text = " ".join(lead), " ".join(body)
    lead_types = {w for w in norm(lead_text) if w not in STOP}
    body_types = set(norm(body_text))
    ratio = len(lead_types & body_types) / len(lead_types) if lead_types else 0.0
    return {"id": aid, "text": text}, (len(lead), len(lead_text.split()), len(body_text.split()), ratio)


def assert_eq(a, b):
    assert a == b, (a, b)


def assert_close(a, b):
    assert abs(a - b) < 1e-12, (a, b)


cases = []
expect = []

def add(aid, verdict, lead, body, prefix="", check=None):
    rec, stats = article(aid, lead, body, prefix)
    if check:
        check(*stats)
    cases.append(rec)
    expect.append((aid, verdict))

# 4 of 6 lead content types appear in the body: ratio 2/3 just above 0.65.
add("a01_lower_bounds", "Accepted",
    lead_sentences(BODY_WORDS[:4], LEAD_ONLY[:2], 10), body_sentences(150),
    check=lambda s, lw, bw, r: (assert_eq(lw, 10), assert_eq(bw, 150), assert_close(r, 2 / 3)))
add("a02_lead_nine_words", "TooFewLeadWords",
    lead_sentences(BODY_WORDS[:6], [], 9), body_sentences(300),
    check=lambda s, lw, bw, r: assert_eq(lw, 9))
add("a03_lead_too_long", "TooManyLeadWords",
    lead_sentences(BODY_WORDS[:10], [], 151), body_sentences(300),
    check=lambda s, lw, bw, r: assert_eq(lw, 151))
add("a04_body_too_short", "BodyOutOfRange",
    lead_sentences(BODY_WORDS[:6], [], 20), body_sentences(149),
    check=lambda s, lw, bw, r: assert_eq(bw, 149))
add("a05_body_too_long", "BodyOutOfRange",
    lead_sentences(BODY_WORDS[:6], [], 20), body_sentences(1201),
    check=lambda s, lw, bw, r: assert_eq(bw, 1201))
# 13 of 20 types shared: exactly 0.65, rejected because the rule is strict.
add("a06_overlap_exactly_065", "LowOverlap",
    lead_sentences(BODY_WORDS[:13], LEAD_ONLY[:7], 30), body_sentences(200),
    check=lambda s, lw, bw, r: assert_eq(r, 0.65))
add("a07_overlap_low", "LowOverlap",
    lead_sentences(BODY_WORDS[:2], LEAD_ONLY[:8], 24), body_sentences(200),
    check=lambda s, lw, bw, r: assert_close(r, 0.2))
add("a08_three_sentences", "TooFewSentences",
    lead_sentences(BODY_WORDS[:6], [], 30), [],
    check=lambda s, lw, bw, r: assert_eq(bw, 0))
# Dateline prefix is stripped before counting: the lead keeps exactly 12 words.
add("a09_cnn_prefix", "Accepted",
    lead_sentences(BODY_WORDS[:8], [], 12), body_sentences(400), prefix="New York (CNN) -- ",
    check=lambda s, lw, bw, r: (assert_eq(lw, 12), assert_close(r, 1.0)))
# Byline prefix stripped; both upper bounds are inclusive.
add("a10_byline_upper_bounds", "Accepted",
    lead_sentences(BODY_WORDS[:16], LEAD_ONLY[:2], 150), body_sentences(1200),
    prefix="Adam Smith, June 3rd 2018: ",
    check=lambda s, lw, bw, r: (assert_eq(lw, 150), assert_eq(bw, 1200), assert_close(r, 16 / 18)))


if __name__ == "__main__":
    with open(HERE / "filter_corpus.jsonl", "w") as f:
        for rec in cases:
            f.write(json.dumps(rec) + "\n")
    with open(HERE / "filter_verdicts.tsv", "w") as f:
        for aid, verdict in expect:
            f.write(f"{aid}\t{verdict}\n")
