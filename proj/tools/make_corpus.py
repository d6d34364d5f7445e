#!/usr/bin/env python3
"""Deterministic English-like corpus generator.

Emits grammatical, topically clustered paragraphs from a seeded template
grammar, so the training and evaluation corpora are reproducible from the
repository alone (no downloads) and carry no copyright.

Two properties matter for the trained model, beyond byte statistics:
  - each paragraph introduces generated proper names (syllable spellings
    that never repeat across seeds) and reuses them several times, so
    predicting a name's later occurrences requires copying bytes from
    earlier context through attention;
  - word choice is biased per paragraph by a topic cluster, giving the
    text structure beyond the sentence.

Usage:
  python3 tools/make_corpus.py --out data/corpus.txt --bytes 1500000 --seed 1
"""

import argparse
import random

TOPICS = {
    "river": {
        "nouns": ["river", "valley", "bridge", "current", "bank", "stone", "ferry",
                  "reed", "fisherman", "flood", "channel", "delta", "stream", "eddy",
                  "shallows", "weir", "towpath", "barge"],
        "verbs": ["flow", "carve", "flood", "carry", "turn", "widen", "rise",
                  "fall", "wind", "feed", "drift", "settle"],
        "adjs": ["shallow", "swift", "muddy", "calm", "frozen", "wide", "narrow",
                 "slow", "green"],
    },
    "market": {
        "nouns": ["market", "merchant", "stall", "price", "crate", "scale", "coin",
                  "ledger", "cart", "buyer", "grain", "cloth", "spice", "receipt",
                  "awning", "bushel", "bolt", "purse"],
        "verbs": ["sell", "weigh", "count", "trade", "haggle", "record", "buy",
                  "store", "ship", "announce", "bargain", "tally"],
        "adjs": ["busy", "crowded", "honest", "careful", "cheap", "rare", "fresh",
                 "fair", "northern"],
    },
    "workshop": {
        "nouns": ["workshop", "carpenter", "plane", "bench", "joint", "timber",
                  "chisel", "apprentice", "pattern", "frame", "hinge", "lathe",
                  "mallet", "dowel", "vise", "sawdust", "template", "brace"],
        "verbs": ["cut", "join", "measure", "sand", "fit", "carve", "repair",
                  "build", "finish", "sharpen", "clamp", "plane"],
        "adjs": ["straight", "smooth", "heavy", "oak", "seasoned", "precise",
                 "worn", "square"],
    },
    "harbor": {
        "nouns": ["harbor", "sailor", "mast", "cargo", "tide", "rope", "lantern",
                  "pier", "gull", "anchor", "chart", "storm", "sail", "quay",
                  "hull", "ballast", "berth", "beacon"],
        "verbs": ["dock", "load", "signal", "drift", "moor", "depart", "return",
                  "watch", "chart", "wait", "unload", "ride"],
        "adjs": ["salt", "grey", "distant", "quiet", "heavy", "northern", "late",
                 "deep"],
    },
    "library": {
        "nouns": ["library", "scholar", "volume", "shelf", "index", "margin",
                  "scribe", "catalog", "page", "binding", "lamp", "archive",
                  "folio", "inkwell", "ledger", "treatise", "survey", "copy"],
        "verbs": ["copy", "read", "collect", "annotate", "sort", "bind",
                  "preserve", "lend", "study", "compare", "shelve", "cite"],
        "adjs": ["old", "rare", "careful", "faded", "long", "patient", "bound",
                 "early"],
    },
    "orchard": {
        "nouns": ["orchard", "branch", "blossom", "ladder", "basket", "root",
                  "grafter", "bee", "harvest", "row", "apple", "frost", "pruner",
                  "sapling", "trellis", "windfall", "cider", "hive"],
        "verbs": ["prune", "graft", "ripen", "gather", "plant", "bloom", "bear",
                  "thin", "water", "inspect", "pick", "press"],
        "adjs": ["early", "sweet", "young", "bare", "ripe", "sheltered", "late",
                 "heavy"],
    },
    "mill": {
        "nouns": ["mill", "miller", "wheel", "grindstone", "hopper", "flour",
                  "sack", "sluice", "gear", "axle", "chute", "granary", "dust",
                  "belt", "spindle", "race"],
        "verbs": ["grind", "turn", "pour", "sift", "haul", "mend", "oil",
                  "listen", "stop", "start", "fill", "sweep"],
        "adjs": ["coarse", "fine", "steady", "loud", "dusty", "wooden", "old"],
    },
    "survey": {
        "nouns": ["survey", "surveyor", "chain", "marker", "boundary", "map",
                  "field", "post", "bearing", "transit", "notebook", "hill",
                  "hollow", "line", "corner", "deed"],
        "verbs": ["measure", "mark", "walk", "sight", "draw", "note", "correct",
                  "confirm", "stake", "record", "compare", "sketch"],
        "adjs": ["true", "level", "distant", "disputed", "old", "exact", "wet"],
    },
}

COMMON_NOUNS = ["morning", "season", "work", "road", "town", "year", "hand",
                "weather", "neighbor", "family", "evening", "winter", "summer",
                "letter", "answer", "habit", "reason", "custom", "share"]
COMMON_VERBS = ["begin", "end", "continue", "change", "remain", "matter",
                "agree", "refuse", "remember", "forget", "expect", "decide"]
COMMON_ADJS = ["long", "short", "cold", "warm", "quiet", "useful", "plain",
               "small", "certain", "usual"]
ADVERBS = ["slowly", "often", "rarely", "again", "early", "late", "together",
           "carefully", "at last", "by habit", "without hurry", "as before"]
CONNECTIVES = ["and", "but", "so", "while", "because", "although", "before",
               "after", "until", "when", "as", "once"]
TIME_PHRASES = ["In the morning", "By noon", "After the rain", "Each spring",
                "That winter", "For many years", "Near the end of the season",
                "On market days", "Before first light", "In the old records",
                "Later that week", "Toward evening"]
UNITS = ["days", "miles", "years", "crates", "pages", "sacks", "barrels",
         "rows", "coins", "chains"]

# Syllable inventory for generated proper names.
ONSETS = ["b", "br", "d", "dr", "f", "g", "gr", "h", "j", "k", "l", "m", "n",
          "p", "pr", "r", "s", "st", "t", "tr", "v", "w", "y", "th", "sh"]
VOWELS = ["a", "e", "i", "o", "u", "ai", "ei", "ia", "or", "an", "en", "el"]
CODAS = ["", "n", "r", "l", "s", "th", "m", "d", "k", "la", "ra", " win"]


class ParagraphWriter:
    def __init__(self, rng: random.Random):
        self.rng = rng

    def make_name(self):
        n_syll = self.rng.randint(2, 3)
        name = ""
        for _ in range(n_syll):
            name += self.rng.choice(ONSETS) + self.rng.choice(VOWELS)
        name += self.rng.choice(CODAS)
        name = name[0].upper() + name[1:]
        return name.strip()

    def verb(self, topic, subject_plural=False):
        pool = topic["verbs"] if self.rng.random() < 0.75 else COMMON_VERBS
        v = self.rng.choice(pool)
        if not subject_plural:
            v = v + "es" if v.endswith(("s", "sh", "ch")) else v + "s"
        return v

    def noun(self, topic):
        pool = topic["nouns"] if self.rng.random() < 0.75 else COMMON_NOUNS
        return self.rng.choice(pool)

    def adj(self, topic):
        pool = topic["adjs"] if self.rng.random() < 0.6 else COMMON_ADJS
        return self.rng.choice(pool)

    def noun_phrase(self, topic, names):
        r = self.rng.random()
        if names and r < 0.42:
            return self.rng.choice(names)
        if r < 0.45:
            return f"the {self.noun(topic)}"
        if r < 0.62:
            return f"the {self.adj(topic)} {self.noun(topic)}"
        if r < 0.74:
            return f"a {self.noun(topic)}"
        if r < 0.85:
            return f"the {self.noun(topic)} of the {self.noun(topic)}"
        if names and r < 0.93:
            return f"{self.rng.choice(names)}'s {self.noun(topic)}"
        return f"every {self.noun(topic)}"

    def clause(self, topic, names):
        subject = self.noun_phrase(topic, names)
        plural = subject.startswith("every")  # crude but consistent
        verb = self.verb(topic, subject_plural=False)
        r = self.rng.random()
        if r < 0.35:
            return f"{subject} {verb} {self.noun_phrase(topic, names)}"
        if r < 0.55:
            return f"{subject} {verb} {self.rng.choice(ADVERBS)}"
        if r < 0.7:
            n = self.rng.randint(2, 90)
            return f"{subject} {verb} {n} {self.rng.choice(UNITS)}"
        return f"{subject} {verb}"

    def dialogue(self, topic, names):
        speaker = self.rng.choice(names)
        inner = self.clause(topic, names)
        inner = inner[0].upper() + inner[1:]
        form = self.rng.random()
        if form < 0.5:
            return f'"{inner}," said {speaker}.'
        return f'{speaker} said, "{inner}."'

    def sentence(self, topic, names):
        r = self.rng.random()
        if names and r < 0.18:
            return self.dialogue(topic, names)
        if r < 0.28:
            body = f"{self.rng.choice(TIME_PHRASES)}, {self.clause(topic, names)}"
        elif r < 0.48:
            body = (f"{self.clause(topic, names)} {self.rng.choice(CONNECTIVES)} "
                    f"{self.clause(topic, names)}")
            body = body[0].upper() + body[1:]
        else:
            body = self.clause(topic, names)
            body = body[0].upper() + body[1:]
        return body + "."

    def paragraph(self, names):
        topic = TOPICS[self.rng.choice(sorted(TOPICS.keys()))]
        n_sentences = self.rng.randint(2, 4)
        return " ".join(self.sentence(topic, names) for _ in range(n_sentences))

    def block(self):
        # Fresh names live for a short run of paragraphs and recur densely,
        # so later occurrences are predictable only by copying their bytes
        # from nearby context.
        names = [self.make_name() for _ in range(self.rng.randint(1, 2))]
        n_paragraphs = self.rng.randint(1, 3)
        return "\n\n".join(self.paragraph(names) for _ in range(n_paragraphs))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--bytes", type=int, default=1_500_000)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()

    rng = random.Random(args.seed)
    writer = ParagraphWriter(rng)
    chunks = []
    size = 0
    while size < args.bytes:
        p = writer.block() + "\n\n"
        chunks.append(p)
        size += len(p)
    text = "".join(chunks)[: args.bytes]
    with open(args.out, "w", encoding="ascii") as f:
        f.write(text)
    print(f"wrote {len(text)} bytes to {args.out} (seed {args.seed})")


if __name__ == "__main__":
    main()
