"""Random answer pairs for metric property checks."""

WORDS = ["life", "hits", "the", "a", "an", "Paris", "paris", "1972", "film", "Harbor", "lights", "of", ""]
PUNCT = ["", "", ".", "!", ",", "'"]


def _answer(rng) -> str:
    words = [rng.choice(WORDS) + rng.choice(PUNCT) for _ in range(rng.randint(0, 4))]
    return (" " * rng.randint(1, 2)).join(words)


def random_pairs(rng, n: int):
    """``n`` (prediction, gold) pairs; about a third are case/punctuation variants of each other."""
    pairs = []
    for _ in range(n):
        gold = _answer(rng)
        if rng.random() < 0.35:
            pred = gold.upper() if rng.random() < 0.5 else f"The {gold}!"
        else:
            pred = _answer(rng)
        pairs.append((pred, gold))
    return pairs
