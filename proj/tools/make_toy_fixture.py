#!/usr/bin/env python3
"""Train the bundled toy model and write the fixture files.

Produces, under fixtures/:
  toy_model.ltc   2-layer byte-level decoder (d=64, 4 heads, mlp 256, T=64)
  facts.jsonl     question/answer dataset with paraphrases and frequencies
  corpus.jsonl    the training documents (one {"text": ...} per line)

The fact corpus is deliberately skewed: a few facts are repeated dozens of
times, most appear once or twice, and some never appear.  Run once offline;
the outputs are committed.
"""

import argparse
import json
import math
import random
import struct
from pathlib import Path

import torch
import torch.nn.functional as F

BOS, EOS, PAD, VOCAB = 256, 257, 258, 259
D, HEADS, MLP, LAYERS, T_MAX = 64, 4, 256, 2, 64

CITIES = ["Plenk", "Dorvo", "Kasset", "Mirra", "Tolun", "Vesk", "Anbar", "Quill", "Rhode", "Sulm"]
JOBS = ["baker", "sailor", "farmer", "painter", "tailor", "miner", "doctor", "singer"]
COLORS = ["red", "blue", "green", "amber", "violet", "gray", "white", "black"]

RELATIONS = [
    # (statement, paraphrase statement, prompt, paraphrase prompt, answers)
    ("{s} lives in {a}.", "The home of {s} is {a}.", "{s} lives in", "The home of {s} is", CITIES),
    ("{s} works as a {a}.", "The job of {s} is {a}.", "{s} works as a", "The job of {s} is", JOBS),
    ("The favorite color of {s} is {a}.", "{s} likes the color {a}.", "The favorite color of {s} is",
     "{s} likes the color", COLORS),
]


def make_names(rng, n):
    onset = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"]
    vowel = ["a", "e", "i", "o", "u"]
    names = set()
    while len(names) < n:
        syl = rng.choice([2, 2, 3])
        name = "".join(rng.choice(onset) + rng.choice(vowel) for _ in range(syl))
        name = name.capitalize() + rng.choice(["", "n", "r", "x"])
        names.add(name)
    return sorted(names)


def build_facts(seed, n_facts):
    rng = random.Random(seed)
    names = make_names(rng, n_facts)
    rng.shuffle(names)
    facts = []
    for i, subject in enumerate(names):
        rel = i % len(RELATIONS)
        answers = RELATIONS[rel][4]
        # Skewed answer prior so that frequent answers act as "generic" guesses.
        weights = [1.0 / (k + 1) for k in range(len(answers))]
        answer = rng.choices(answers, weights=weights)[0]
        facts.append({"subject": subject, "rel": rel, "answer": answer})
    ranks = list(range(n_facts))
    rng.shuffle(ranks)
    for fact, rank in zip(facts, ranks):
        fact["count"] = 0 if rank >= n_facts - 10 else max(1, round(48.0 / (rank + 1) ** 0.8))
    return facts


def build_corpus(seed, facts):
    rng = random.Random(seed + 1)
    docs = []
    for f in facts:
        stmt, para, *_ = RELATIONS[f["rel"]]
        for _ in range(f["count"]):
            tmpl = para if rng.random() < 0.3 else stmt
            docs.append(tmpl.format(s=f["subject"], a=f["answer"]))
    # Distractors that mention a subject without its answer.
    for f in rng.sample(facts, 20):
        docs.append(f"{f['subject']} is a person.")
    rng.shuffle(docs)
    return docs


def encode(text):
    return list(text.encode("utf-8"))


class Toy(torch.nn.Module):
    """Row-vector convention: y = x W + b, matching the C++ engine."""

    def __init__(self):
        super().__init__()
        g = lambda *s: torch.nn.Parameter(torch.randn(*s) * 0.02)
        z = lambda *s: torch.nn.Parameter(torch.zeros(*s))
        o = lambda *s: torch.nn.Parameter(torch.ones(*s))
        self.emb = g(VOCAB, D)
        self.pos = g(T_MAX, D)
        self.unemb = g(D, VOCAB)
        self.unemb_b = z(VOCAB)
        self.lnf_w, self.lnf_b = o(D), z(D)
        self.layers = torch.nn.ModuleList()
        for _ in range(LAYERS):
            m = torch.nn.Module()
            for name, shape in [("wq", (D, D)), ("wk", (D, D)), ("wv", (D, D)), ("wo", (D, D)),
                                ("u_in", (D, MLP)), ("u_out", (MLP, D))]:
                setattr(m, name, g(*shape))
                setattr(m, name + "_b", z(shape[1]))
            m.ln1_w, m.ln1_b, m.ln2_w, m.ln2_b = o(D), z(D), o(D), z(D)
            self.layers.append(m)

    def forward(self, ids):
        b, t = ids.shape
        x = self.emb[ids] + self.pos[:t]
        hd = D // HEADS
        mask = torch.triu(torch.ones(t, t, dtype=torch.bool), 1)
        for m in self.layers:
            a = F.layer_norm(x, (D,), m.ln1_w, m.ln1_b, 1e-5)
            q = (a @ m.wq + m.wq_b).view(b, t, HEADS, hd).transpose(1, 2)
            k = (a @ m.wk + m.wk_b).view(b, t, HEADS, hd).transpose(1, 2)
            v = (a @ m.wv + m.wv_b).view(b, t, HEADS, hd).transpose(1, 2)
            s = (q @ k.transpose(-1, -2)) / math.sqrt(hd)
            s = s.masked_fill(mask, float("-inf"))
            z = (s.softmax(-1) @ v).transpose(1, 2).reshape(b, t, D)
            x = x + z @ m.wo + m.wo_b
            a = F.layer_norm(x, (D,), m.ln2_w, m.ln2_b, 1e-5)
            x = x + F.gelu(a @ m.u_in + m.u_in_b) @ m.u_out + m.u_out_b
        x = F.layer_norm(x, (D,), self.lnf_w, self.lnf_b, 1e-5)
        return x @ self.unemb + self.unemb_b


def train(docs, steps, seed):
    torch.manual_seed(seed)
    seqs = [[BOS] + encode(d) + [EOS] for d in docs]
    assert max(len(s) for s in seqs) <= T_MAX
    model = Toy()
    opt = torch.optim.AdamW(model.parameters(), lr=3e-3, weight_decay=0.01)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, steps)
    gen = torch.Generator().manual_seed(seed)
    for step in range(steps):
        idx = torch.randint(len(seqs), (64,), generator=gen).tolist()
        batch = [seqs[i] for i in idx]
        t = max(len(s) for s in batch)
        ids = torch.full((len(batch), t), PAD)
        for r, s in enumerate(batch):
            ids[r, : len(s)] = torch.tensor(s)
        logits = model(ids[:, :-1])
        target = ids[:, 1:].clone()
        target[target == PAD] = -100
        loss = F.cross_entropy(logits.reshape(-1, VOCAB), target.reshape(-1), ignore_index=-100)
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        if step % 500 == 0 or step == steps - 1:
            print(f"step {step} loss {loss.item():.4f}")
    return model


def write_ltc(path, model):
    tensors = {
        "embedding.weight": model.emb,
        "position.weight": model.pos,
        "unembedding.weight": model.unemb,
        "unembedding.bias": model.unemb_b,
        "final_ln.weight": model.lnf_w,
        "final_ln.bias": model.lnf_b,
    }
    for l, m in enumerate(model.layers):
        for name in ["wq", "wk", "wv", "wo", "u_in", "u_out"]:
            tensors[f"layers.{l}.{name}.weight"] = getattr(m, name)
            tensors[f"layers.{l}.{name}.bias"] = getattr(m, name + "_b")
        tensors[f"layers.{l}.ln1.weight"] = m.ln1_w
        tensors[f"layers.{l}.ln1.bias"] = m.ln1_b
        tensors[f"layers.{l}.ln2.weight"] = m.ln2_w
        tensors[f"layers.{l}.ln2.bias"] = m.ln2_b
    header = {
        "config": {
            "num_layers": LAYERS, "hidden_dim": D, "num_heads": HEADS, "mlp_hidden_dim": MLP,
            "vocab_size": VOCAB, "max_context": T_MAX, "activation": "gelu", "use_bias": True,
            "norm_kind": "pre_layernorm", "layernorm_eps": 1e-5, "fidelity": "full",
        },
        "metadata": {"source": "tools/make_toy_fixture.py"},
    }
    payload = bytearray()
    for name in sorted(tensors):
        values = tensors[name].detach().to(torch.float32).contiguous().view(-1).tolist()
        header[name] = {"dtype": "f32", "shape": list(tensors[name].shape), "offset": len(payload),
                        "length": 4 * len(values)}
        payload += struct.pack(f"<{len(values)}f", *values)
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(b"LTCV0001")
        f.write(struct.pack("<Q", len(text)))
        f.write(text)
        f.write(payload)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "fixtures"))
    ap.add_argument("--steps", type=int, default=3000)
    ap.add_argument("--facts", type=int, default=150)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    torch.set_num_threads(1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    facts = build_facts(args.seed, args.facts)
    docs = build_corpus(args.seed, facts)
    with open(out / "corpus.jsonl", "w") as f:
        for d in docs:
            f.write(json.dumps({"text": d}) + "\n")
    with open(out / "facts.jsonl", "w") as f:
        for i, fact in enumerate(facts):
            _, _, prompt, para, _ = RELATIONS[fact["rel"]]
            rec = {
                "id": f"f{i:03d}",
                "prompt": prompt.format(s=fact["subject"]),
                "answer": fact["answer"],
                "paraphrases": [para.format(s=fact["subject"])],
                "subject": fact["subject"],
                "answer_text": fact["answer"],
                "frequency": fact["count"],
            }
            f.write(json.dumps(rec) + "\n")

    model = train(docs, args.steps, args.seed)
    write_ltc(out / "toy_model.ltc", model)
    print(f"wrote {len(facts)} facts, {len(docs)} documents")


if __name__ == "__main__":
    main()
