#!/usr/bin/env python3
"""Writes the bundled decode traces into fixtures/traces.

Each round is a list of segments (text, duration in ms). A segment is split
into short tokens whose latencies jitter around an even share and are then
rescaled so the segment lasts exactly its duration. Segment boundaries are
therefore exact points in time, which lets a trace pin e.g. the moment a
field value completes.
"""

import json
import random
import re
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "fixtures" / "traces"
TOKEN_RE = re.compile(r"\n|[ \t]+|\w{1,4}|[^\w\s]")


def tokenize(text):
    pieces = TOKEN_RE.findall(text)
    assert "".join(pieces) == text, text
    # fold single spaces into the following word, like BPE tokenizers do
    out = []
    for p in pieces:
        if out and out[-1] == " " and p not in ("\n", " "):
            out[-1] += p
        else:
            out.append(p)
    return out


def segment_tokens(text, duration_ms, rng):
    toks = tokenize(text)
    total_us = int(round(duration_ms * 1000))
    weights = [rng.uniform(0.8, 1.2) for _ in toks]
    scale = total_us / sum(weights)
    lat = [int(w * scale) for w in weights]
    lat[-1] += total_us - sum(lat)
    return [{"text": t, "latency_us": l} for t, l in zip(toks, lat)]


def build_round(prefill_ms, segments, rng):
    tokens = []
    for text, ms in segments:
        tokens.extend(segment_tokens(text, ms, rng))
    return {"prefill_latency_us": int(prefill_ms * 1000), "tokens": tokens}


def lines_evenly(lines, total_ms):
    """One segment per line, duration proportional to line length."""
    chars = sum(len(l) for l in lines)
    return [(l, total_ms * len(l) / chars) for l in lines]


CODEGEN_SCRIPT = [
    "import torch\n",
    "import matplotlib.pyplot as plt\n",
    "let pi = 3.14159265\n",
    "let n = 1000\n",
    "import numpy as np\n",
    "let step = 2 * pi / n\n",
    "sleep 150  # x = torch.linspace(0, 2 * pi, n)\n",
    "let amplitude = 1.5\n",
    "sleep 200  # y = amplitude * torch.sin(x)\n",
    "let frequency = 2\n",
    "sleep 200  # plt.plot(x.numpy(), y.numpy())\n",
    "print amplitude * frequency\n",
    "sleep 250  # plt.show()\n",
]


def codegen(rng):
    body = ["```python\n"] + CODEGEN_SCRIPT + ["```"]
    r1 = build_round(100, lines_evenly(body, 2300), rng)
    r2 = build_round(60, [("The script above plots a sine wave with torch and matplotlib.", 160)], rng)
    return {"rounds": [r1, r2]}


def search(rng):
    lines = [
        "I will look up a hello world program for each language.\n",
        '@call search {"query": "hello world python"}\n',
        '@call search {"query": "hello world c++"}\n',
        '@call search {"query": "hello world java"}',
    ]
    r1 = build_round(100, lines_evenly(lines, 1100), rng)
    answer = (
        "Python:\nprint(\"Hello, World!\")\n\n"
        "C++:\n#include <iostream>\nint main() { std::cout << \"Hello, World!\" << std::endl; }\n\n"
        "Java:\npublic class Main { public static void main(String[] a) { System.out.println(\"Hello, World!\"); } }\n"
    )
    r2 = build_round(120, [(answer, 680)], rng)
    return {"rounds": [r1, r2]}


def planning(rng):
    lines = [
        "Plan: look up both market caps, then compare them.\n",
        "#E1 = Search[Microsoft market cap]\n",
        "#E2 = Search[Apple market cap]\n",
        "#E3 = Calculator[#E1 / #E2]\n",
        "#E4 = Formatter[The market cap of Microsoft is #E3 times that of Apple.]\n",
    ]
    segments = [(lines[0], 300)] + [(l, 400) for l in lines[1:]]
    r1 = build_round(100, segments, rng)
    r2 = build_round(80, [("Microsoft's market cap is 3.1 times Apple's.", 320)], rng)
    return {"rounds": [r1, r2]}


def validation(rng):
    # The location value closes at exactly 20% of the round's generation time.
    g1_ms = 1500.0
    prefill_ms = 60.0
    head = '@call get_news {"location": "Seattle"'
    tail = (
        ', "category": "local politics and community events", "language": "en",'
        ' "limit": 10, "sort_by": "published_at", "include_summary": true}'
    )
    r1 = build_round(prefill_ms, [(head, 0.2 * g1_ms - prefill_ms), (tail, 0.8 * g1_ms)], rng)
    return {"rounds": [r1]}


def database(rng):
    r1 = build_round(80, [("Let me read every row of the users table.\n", 380), ('@call query_db {"op": "scan"}', 260)], rng)
    answer = "The users table has three rows: Ada Lovelace (London), Alan Turing (Wilmslow) and Grace Hopper (New York)."
    r2 = build_round(120, [(answer, 900)], rng)
    return {"rounds": [r1, r2]}


def calculator(rng):
    r1 = build_round(80, [('@call calculator {"expression": "200*701"}', 420)], rng)
    r2 = build_round(90, [("200 times 701 is 140200.", 230)], rng)
    return {"rounds": [r1, r2]}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name, fn in [
        ("codegen", codegen),
        ("search", search),
        ("planning", planning),
        ("validation", validation),
        ("database", database),
        ("calculator", calculator),
    ]:
        trace = fn(random.Random(f"tpx-{name}"))
        (OUT / f"{name}.json").write_text(json.dumps(trace, indent=1) + "\n")
        for i, r in enumerate(trace["rounds"]):
            g = r["prefill_latency_us"] + sum(t["latency_us"] for t in r["tokens"])
            print(f"{name} round {i}: {len(r['tokens'])} tokens, g = {g} us")


if __name__ == "__main__":
    main()
