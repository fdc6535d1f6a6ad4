#!/usr/bin/env python3
"""Build the bundled group-tagged toy corpus (data/toy_corpus.tsv).

Each line is `group<TAB>text`.  Documents are short clause chains built from
slot templates whose syntax is shared by every group while the slot fillers
are drawn from group-specific, Zipf-weighted vocabularies.  Two properties
are deliberate:

* Adjacent groups share a third of each slot vocabulary, so the group is
  genuinely ambiguous from a short context window — a model that is told
  the group keeps an edge even after long training.
* A small set of anchor words appears in every group, but the word that
  follows an anchor is sampled from a group-conditional distribution, so
  predicting it well requires knowing (or inferring) the group.

The generator is deterministic for a fixed SEED.
"""

import random
from pathlib import Path

SEED = 20240817
N_DOCS = 2600
OUT = Path(__file__).resolve().parent.parent / "data" / "toy_corpus.tsv"

GROUPS = ["harbor", "orchard", "foundry", "archive"]

# Shared scaffold -----------------------------------------------------------
OPENERS = [
    "that morning",
    "by late afternoon",
    "all through the season",
    "once the fog lifted",
    "after the long recount",
    "in the quiet hours",
]
CONNECTIVES = ["and", "while", "then", "although", "so", "before", "after"]
CLOSERS = [
    "and nothing more was said",
    "as the ledger finally closed",
    "until the light gave out",
    "and the day ended there",
]

# Group content vocabularies ------------------------------------------------
# Twelve subjects, ten verbs, twelve objects, eight modifiers per group.
SUBJ = {
    "harbor": ["tide", "pilot", "trawler", "gull", "stevedore", "ferry",
               "buoy", "skipper", "deckhand", "tug", "mooring", "crew"],
    "orchard": ["grafter", "blossom", "beekeeper", "sapling", "picker",
                "ladder", "windfall", "pruner", "rootstock", "hive",
                "basket", "bough"],
    "foundry": ["furnace", "molder", "ingot", "crucible", "ladle", "caster",
                "billet", "smelter", "tuyere", "grinder", "forge", "patternmaker"],
    "archive": ["curator", "folio", "ledger", "registrar", "microfilm",
                "catalogue", "binder", "copyist", "vault", "index",
                "manuscript", "clerk"],
}
VERB = {
    "harbor": ["berthed", "hauled", "signalled", "drifted", "unloaded",
               "anchored", "steamed", "listed", "docked", "weathered"],
    "orchard": ["grafted", "blossomed", "pruned", "ripened", "pollinated",
                "thinned", "harvested", "espaliered", "mulched", "budded"],
    "foundry": ["poured", "quenched", "tempered", "cast", "slagged",
                "annealed", "forged", "milled", "riveted", "deburred"],
    "archive": ["catalogued", "annotated", "shelved", "transcribed",
                "indexed", "laminated", "collated", "stamped", "microfilmed",
                "accessioned"],
}
OBJ = {
    "harbor": ["manifest", "bollard", "hawser", "cargo", "jetty", "ballast",
               "winch", "lighthouse", "quay", "gangway", "hold", "channel"],
    "orchard": ["cider", "lattice", "pollen", "canopy", "nectar", "trellis",
                "graft", "orchardist", "bloom", "bushel", "stem", "pip"],
    "foundry": ["mold", "slag", "bessemer", "casting", "alloy", "mandrel",
                "swarf", "pig", "flux", "tongs", "anvil", "billets"],
    "archive": ["accession", "provenance", "foxing", "vellum", "watermark",
                "colophon", "docket", "carton", "fiche", "stacks", "seal",
                "appendix"],
}
MOD = {
    "harbor": ["brackish", "windward", "rusted", "laden", "seaworthy",
               "fogbound", "tarred", "saltworn"],
    "orchard": ["grafted", "sunlit", "overripe", "gnarled", "dormant",
                "blighted", "espaliered", "windfallen"],
    "foundry": ["molten", "tempered", "soot-black", "riveted", "annealed",
                "white-hot", "slagged", "hammered"],
    "archive": ["brittle", "watermarked", "uncatalogued", "acid-free",
                "misfiled", "handwritten", "embossed", "foxed"],
}

# Anchors appear in every group; their continuation is group-conditional.
ANCHORS = ["bank", "dock", "press", "scale", "line", "file", "plant", "charge"]


def overlap_slots(vocab: dict) -> dict:
    """Give each group's slot list a one-third overlap with the next group.

    The last sixth of group i's list is replaced by the first sixth of
    group i+1's list.  Sampling is Zipf-weighted by position, so each group
    is dominated by its own head words while the borrowed tail words blur
    the boundary: seeing one of them never pins down the group on its own.
    """
    names = GROUPS
    original = {g: list(vocab[g]) for g in names}
    out = {}
    for i, g in enumerate(names):
        nxt = original[names[(i + 1) % len(names)]]
        k = max(1, len(original[g]) // 6)
        out[g] = original[g][:-k] + nxt[:k]
    return out


def zipf_weights(n: int) -> list:
    return [1.0 / (r + 2.0) for r in range(n)]


def main() -> None:
    rng = random.Random(SEED)

    subj = overlap_slots(SUBJ)
    verb = overlap_slots(VERB)
    obj = overlap_slots(OBJ)
    mod = overlap_slots(MOD)

    # Two group-conditional continuations per anchor, reused from the
    # group's own object/modifier pool so anchor clauses train the same
    # emission vocabulary as the rest of the group.
    cont = {}
    for g in GROUPS:
        pool = obj[g] + mod[g]
        cont[g] = {a: rng.sample(pool, 2) for a in ANCHORS}

    def pick(words):
        return rng.choices(words, weights=zipf_weights(len(words)), k=1)[0]

    def clause(g: str) -> list:
        s, v, o, m = subj[g], verb[g], obj[g], mod[g]
        t = rng.choices(range(6), weights=[24, 17, 12, 13, 20, 14], k=1)[0]
        if t == 0:
            return ["the", pick(s), pick(v), "the", pick(o)]
        if t == 1:
            return ["a", pick(m), pick(s), pick(v), pick(o)]
        if t == 2:
            a = rng.choice(ANCHORS)
            return [pick(s), pick(v), "near", "the", a,
                    rng.choice(cont[g][a])]
        if t == 3:
            return ["the", pick(m), pick(o), pick(v)]
        if t == 4:
            return [pick(s), pick(v), "the", pick(m), pick(o)]
        return ["some", pick(o), pick(v), "the", pick(s)]

    def build_doc(g: str) -> str:
        words = []
        if rng.random() < 0.6:
            words += rng.choice(OPENERS).split()
        words += clause(g)
        for _ in range(rng.randint(1, 3)):
            words.append(rng.choice(CONNECTIVES))
            words += clause(g)
        if rng.random() < 0.4:
            words += rng.choice(CLOSERS).split()
        return " ".join(words)

    lines = []
    for i in range(N_DOCS):
        g = GROUPS[i % len(GROUPS)]
        lines.append(f"{g}\t{build_doc(g)}")
    rng.shuffle(lines)

    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text("\n".join(lines) + "\n", encoding="utf-8")

    tokens = sum(len(l.split("\t")[1].split()) for l in lines)
    vocab = {w for l in lines for w in l.split("\t")[1].split()}
    print(f"docs={len(lines)} tokens={tokens} vocab={len(vocab)} "
          f"bytes={OUT.stat().st_size}")


if __name__ == "__main__":
    main()
