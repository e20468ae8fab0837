"""Builds the external-vocab tokenizer fixture and its golden token counts.

The reference counts come from the Hugging Face `tokenizers` byte-level BPE,
run offline. Run from the repository root: python3 scripts/tokenizer_golden.py
"""
import json
import pathlib

from tokenizers import Tokenizer, models, pre_tokenizers, trainers

ROOT = pathlib.Path(__file__).resolve().parent.parent
OUT = ROOT / "crates" / "core" / "tests" / "fixtures" / "tokenizer"

TRAIN = [
    "Between London and Lisbon, the city with warmer weather is",
    "The average temperature in Lisbon is 17.5C",
    "You don't like cold weather. Between London and Lisbon, you should visit",
    "Someone is looking for a restaurant with cheaper food.",
    "The population of Tokyo is 37,400,068",
] * 20

SENTENCES = [
    "",
    "Lisbon",
    "Between London and Lisbon, the city with warmer weather is",
    "You don't like cold weather. Between London and Lisbon, you should visit",
    "The average temperature in Lisbon is 17.5C",
    "The population of São Paulo is 12,252,023",
    "  leading spaces and  double  gaps  ",
    "line one\nline two\n\n  indented",
    "Price: $$$ (three signs) -- it's pricey, isn't it?",
    "Zürich vs. Kraków: 9.3C / 8.7C",
    "Someone'll say they'd go; we're sure they've been.",
]


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    tok = Tokenizer(models.BPE())
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    trainer = trainers.BpeTrainer(
        vocab_size=400,
        initial_alphabet=pre_tokenizers.ByteLevel.alphabet(),
        show_progress=False,
    )
    tok.train_from_iterator(TRAIN, trainer)
    tok.model.save(str(OUT))
    golden = [{"text": s, "tokens": len(tok.encode(s).tokens)} for s in SENTENCES]
    (OUT / "golden.json").write_text(json.dumps(golden, indent=2, ensure_ascii=False) + "\n")
    print(json.dumps(golden, ensure_ascii=False))


if __name__ == "__main__":
    main()
