"""Regenerates crates/core/assets/bpe_merges.txt.

Trains a small byte-level BPE (GPT-2 pre-tokenization) on the bundled phrasing
registries plus standard-library docstrings, using the Hugging Face `tokenizers` package.
Run from the repository root: python3 scripts/train_merges.py
"""
import json
import pathlib

from tokenizers import Tokenizer, models, pre_tokenizers, trainers

ROOT = pathlib.Path(__file__).resolve().parent.parent
ASSETS = ROOT / "crates" / "core" / "assets"


def corpus():
    for reg in sorted(ASSETS.glob("registry_*.json")):
        data = json.loads(reg.read_text())
        for frame in data["decision_frames"]:
            for by_order in data["preference_phrases"].values():
                for phrases in by_order.values():
                    for p in phrases.values():
                        yield frame["preference"].replace("{preference_phrase}", p).replace("{noun}", data["domain"][:-1])
            yield frame["choice"]
        for neg in data["negations"]:
            yield neg["prompt"]
            yield neg["completion"]
        for frame in data["comparison_frames"].values():
            yield frame
    # general English prose: standard-library docstrings
    import inspect, collections, json as js, os, textwrap, argparse, logging, email, http.client, decimal, random, string, urllib.request, pathlib as pl, unittest, typing, datetime, calendar, difflib
    for mod in (collections, js, os, textwrap, argparse, logging, email, http.client, decimal, random, string, urllib.request, pl, unittest, typing, datetime, calendar, difflib):
        for _, obj in sorted(inspect.getmembers(mod), key=lambda kv: kv[0]):
            doc = inspect.getdoc(obj)
            if doc:
                yield from doc.splitlines()
    for n in range(0, 1000):
        yield f"{n} {n / 10:.1f}C {n * 1000:,} {n % 15}.{n % 10} miles"


def main():
    tok = Tokenizer(models.BPE())
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    trainer = trainers.BpeTrainer(
        vocab_size=8000,
        min_frequency=2,
        initial_alphabet=pre_tokenizers.ByteLevel.alphabet(),
        show_progress=False,
    )
    tok.train_from_iterator(list(corpus()), trainer)
    merges = json.loads(tok.to_str())["model"]["merges"]
    with open(ASSETS / "bpe_merges.txt", "w") as f:
        f.write("#version: 0.2\n")
        for m in merges:
            f.write((" ".join(m) if isinstance(m, list) else m) + "\n")
    print(f"wrote {len(merges)} merges")


if __name__ == "__main__":
    main()
