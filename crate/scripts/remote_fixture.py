"""Writes the replay fixture for the remote backend tests.

Responses follow the legacy completions / files / fine-tunes wire format.
Tokens are split on word boundaries with a leading space, which is enough
for offset bookkeeping.
"""
import json
import re
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures/remote"
MODEL = "davinci"


def tokens(text):
    return re.findall(r" ?[A-Za-z]+| ?[0-9.]+| ?[^A-Za-z0-9 ]", text)


def echo_choice(index, prompt, candidate, cand_logprobs):
    text = prompt + candidate
    toks = tokens(text)
    offsets, pos = [], 0
    for t in toks:
        offsets.append(pos)
        pos += len(t)
    n_prompt = len(tokens(prompt))
    assert "".join(toks[:n_prompt]) == prompt, "prompt must end on a token boundary"
    lps = [None] + [-2.0] * (n_prompt - 1) + cand_logprobs
    assert len(lps) == len(toks)
    return {
        "index": index,
        "text": text,
        "finish_reason": "length",
        "logprobs": {"tokens": toks, "token_logprobs": lps, "text_offset": offsets, "top_logprobs": None},
    }


def score_request(prompt, candidates):
    return {
        "method": "POST",
        "path": "/completions",
        "body": {
            "type": "json",
            "json": {
                "model": MODEL,
                "prompt": [prompt + c for c in candidates],
                "max_tokens": 0,
                "temperature": 0,
                "echo": True,
                "logprobs": 0,
            },
        },
    }


def ok(body):
    return {"status": 200, "body": body}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    training = (
        '{"prompt":"The average temperature in Lisbon is","completion":" 17.5C"}\n'
        '{"prompt":"Between London and Lisbon, the city with warmer weather is","completion":" Lisbon"}\n'
    )
    (OUT / "training.jsonl").write_text(training)
    ex = []

    p1 = "Between London and Lisbon, the city with warmer weather is"
    c1 = [" Lisbon", " London"]
    ex.append({
        "request": score_request(p1, c1),
        "response": ok({"id": "cmpl-1", "object": "text_completion", "model": MODEL, "choices": [
            echo_choice(1, p1, c1[1], [-3.25]),
            echo_choice(0, p1, c1[0], [-0.5]),
        ]}),
    })

    p2 = "You don't like cold weather. Between Oslo and Lisbon, you should visit"
    c2 = [" Oslo", " Lisbon"]
    ex.append({"request": score_request(p2, c2), "response": {"status": 429, "body": {"error": {"message": "Rate limit reached", "type": "requests"}}}})
    ex.append({"request": score_request(p2, c2), "response": {"status": 503, "body": {"error": {"message": "overloaded", "type": "server_error"}}}})
    ex.append({
        "request": score_request(p2, c2),
        "response": ok({"id": "cmpl-2", "object": "text_completion", "model": MODEL, "choices": [
            echo_choice(0, p2, c2[0], [-4.0]),
            echo_choice(1, p2, c2[1], [-1.25]),
        ]}),
    })

    p3 = "Between Oslo and Lisbon, the city with more people is"
    c3 = [" Oslo", " Lisbon"]
    ex.append({"request": score_request(p3, c3), "response": {"status": 401, "body": {"error": {"message": "Incorrect API key provided", "type": "invalid_request_error"}}}})

    ex.append({
        "request": {"method": "POST", "path": "/completions", "body": {"type": "json", "json": {
            "model": MODEL, "prompt": p1, "max_tokens": 8, "temperature": 0, "logprobs": 5, "stop": ["\n"]}}},
        "response": ok({"id": "cmpl-3", "object": "text_completion", "model": MODEL, "choices": [{
            "index": 0, "text": " Lisbon", "finish_reason": "stop",
            "logprobs": {"tokens": [" Lisbon"], "token_logprobs": [-0.4], "text_offset": [len(p1)],
                         "top_logprobs": [{" Lisbon": -0.4, " London": -1.6, " Madrid": -3.0, " the": -3.5, " a": -4.0}]},
        }]}),
    })

    ex.append({
        "request": {"method": "POST", "path": "/files", "body": {"type": "file", "purpose": "fine-tune", "filename": "training.jsonl", "content": training}},
        "response": ok({"id": "file-abc123", "object": "file", "bytes": len(training), "purpose": "fine-tune", "filename": "training.jsonl"}),
    })
    ex.append({
        "request": {"method": "POST", "path": "/fine-tunes", "body": {"type": "json", "json": {"training_file": "file-abc123", "model": MODEL, "n_epochs": 4}}},
        "response": ok({"id": "ft-xyz789", "object": "fine-tune", "model": MODEL, "status": "pending", "fine_tuned_model": None}),
    })
    for status, model in [("pending", None), ("running", None), ("succeeded", "davinci:ft-personal-2022-06-01")]:
        ex.append({
            "request": {"method": "GET", "path": "/fine-tunes/ft-xyz789", "body": {"type": "none"}},
            "response": ok({"id": "ft-xyz789", "object": "fine-tune", "status": status, "fine_tuned_model": model}),
        })

    with open(OUT / "exchanges.jsonl", "w") as f:
        for e in ex:
            f.write(json.dumps(e, separators=(",", ":")) + "\n")


if __name__ == "__main__":
    main()
