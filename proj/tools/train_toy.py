#!/usr/bin/env python3
"""Trains the toy byte-level checkpoint and saves it in the engine's
container format (weights.bin + config.json), plus a parity.json with
reference logits/perplexity so the C++ tests can verify that the loaded
checkpoint reproduces the training-time forward pass.

The architecture mirrors the engine exactly: pre-RMS-norm, interleaved
rotary pairs, grouped-query attention, SwiGLU, untied output head, fp32.

  python3 tools/train_toy.py --corpus data/corpus.txt --out models/toy \
      --steps 3000
"""

import argparse
import json
import math
import struct
import time
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

BOS, EOS, VOCAB = 256, 257, 258


def load_tokens(path: str) -> torch.Tensor:
    data = Path(path).read_bytes()
    arr = np.frombuffer(data, dtype=np.uint8).astype(np.int64)
    # Engine-side corpus tokenization prepends one BOS to the stream.
    return torch.from_numpy(np.concatenate([[BOS], arr]))


class RMSNorm(nn.Module):
    def __init__(self, dim: int, eps: float):
        super().__init__()
        self.eps = eps
        self.gain = nn.Parameter(torch.ones(dim))

    def forward(self, x):
        rms = torch.rsqrt(x.pow(2).mean(dim=-1, keepdim=True) + self.eps)
        return x * rms * self.gain


def rope_rotate(x: torch.Tensor, theta: float, pos0: int = 0) -> torch.Tensor:
    # x: [batch, heads, len, d_head]; interleaved pairs (2i, 2i+1)
    b, h, t, d = x.shape
    half = d // 2
    idx = torch.arange(half, dtype=torch.float64)
    freq = theta ** (-2.0 * idx / d)
    pos = torch.arange(pos0, pos0 + t, dtype=torch.float64)
    angle = pos[:, None] * freq[None, :]           # [len, half]
    cos = angle.cos().float()[None, None]
    sin = angle.sin().float()[None, None]
    even = x[..., 0::2]
    odd = x[..., 1::2]
    out = torch.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


class Block(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        d, dff = cfg["d_model"], cfg["d_ff"]
        self.nh, self.nkv, self.dh = cfg["n_heads"], cfg["n_kv_heads"], cfg["d_head"]
        self.theta = cfg["rope_theta"]
        self.attn_norm = RMSNorm(d, cfg["norm_eps"])
        self.wq = nn.Linear(d, self.nh * self.dh, bias=False)
        self.wk = nn.Linear(d, self.nkv * self.dh, bias=False)
        self.wv = nn.Linear(d, self.nkv * self.dh, bias=False)
        self.wo = nn.Linear(self.nh * self.dh, d, bias=False)
        self.mlp_norm = RMSNorm(d, cfg["norm_eps"])
        self.w_gate = nn.Linear(d, dff, bias=False)
        self.w_up = nn.Linear(d, dff, bias=False)
        self.w_down = nn.Linear(dff, d, bias=False)

    def forward(self, x):
        b, t, d = x.shape
        xn = self.attn_norm(x)
        q = self.wq(xn).view(b, t, self.nh, self.dh).transpose(1, 2)
        k = self.wk(xn).view(b, t, self.nkv, self.dh).transpose(1, 2)
        v = self.wv(xn).view(b, t, self.nkv, self.dh).transpose(1, 2)
        q = rope_rotate(q, self.theta)
        k = rope_rotate(k, self.theta)
        group = self.nh // self.nkv
        k = k.repeat_interleave(group, dim=1)
        v = v.repeat_interleave(group, dim=1)
        attn = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        x = x + self.wo(attn.transpose(1, 2).reshape(b, t, self.nh * self.dh))
        xn = self.mlp_norm(x)
        x = x + self.w_down(F.silu(self.w_gate(xn)) * self.w_up(xn))
        return x


class ToyModel(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.tok_embedding = nn.Embedding(cfg["vocab_size"], cfg["d_model"])
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg["n_layers"]))
        self.final_norm = RMSNorm(cfg["d_model"], cfg["norm_eps"])
        self.output_head = nn.Linear(cfg["d_model"], cfg["vocab_size"], bias=False)

    def forward(self, tokens):
        x = self.tok_embedding(tokens)
        for block in self.blocks:
            x = block(x)
        return self.output_head(self.final_norm(x))


def batch_iter(tokens, batch, seq_len, gen):
    n = tokens.numel() - seq_len - 1
    while True:
        idx = torch.randint(0, n, (batch,), generator=gen)
        x = torch.stack([tokens[i:i + seq_len] for i in idx])
        y = torch.stack([tokens[i + 1:i + seq_len + 1] for i in idx])
        yield x, y


def save_container(model: ToyModel, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = model.cfg
    (out_dir / "config.json").write_text(json.dumps(cfg, indent=2) + "\n")

    tensors = {}

    def put(name, tensor):
        tensors[name] = tensor.detach().to(torch.float32).contiguous().numpy()

    put("tok_embedding", model.tok_embedding.weight)
    for i, blk in enumerate(model.blocks):
        p = f"layers.{i}."
        put(p + "attn_norm", blk.attn_norm.gain)
        # torch Linear stores [out, in]; the container is row-major [in, out]
        put(p + "wq", blk.wq.weight.T)
        put(p + "wk", blk.wk.weight.T)
        put(p + "wv", blk.wv.weight.T)
        put(p + "wo", blk.wo.weight.T)
        put(p + "mlp_norm", blk.mlp_norm.gain)
        put(p + "w_gate", blk.w_gate.weight.T)
        put(p + "w_up", blk.w_up.weight.T)
        put(p + "w_down", blk.w_down.weight.T)
    put("final_norm", model.final_norm.gain)
    put("output_head", model.output_head.weight.T)

    header = {}
    offset = 0
    for name, arr in tensors.items():
        length = arr.nbytes
        header[name] = {"dtype": "f32", "shape": list(arr.shape),
                        "offset": offset, "length": length}
        offset += length
    header_bytes = json.dumps(header, sort_keys=True).encode("ascii")
    with open(out_dir / "weights.bin", "wb") as f:
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for arr in tensors.values():
            f.write(arr.astype("<f4").tobytes())


@torch.no_grad()
def teacher_forced_ppl(model, sequences):
    total, count = 0.0, 0
    for seq in sequences:
        x = seq[None, :]
        logits = model(x)[0]
        logp = F.log_softmax(logits.double(), dim=-1)
        for t in range(seq.numel() - 1):
            total += logp[t, seq[t + 1]].item()
            count += 1
    return math.exp(-total / count)


@torch.no_grad()
def write_parity(model, tokens, out_dir: Path):
    prompt = tokens[100:116].clone()
    logits = model(prompt[None, :])[0]
    windows = [tokens[i * 64:(i + 1) * 64].clone() for i in range(32, 40)]
    parity = {
        "prompt": prompt.tolist(),
        "last_logits": [float(v) for v in logits[-1]],
        "ppl_windows": [w.tolist() for w in windows],
        "ppl": teacher_forced_ppl(model, windows),
    }
    (out_dir / "parity.json").write_text(json.dumps(parity) + "\n")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--corpus", default="data/corpus.txt")
    parser.add_argument("--out", default="models/toy")
    parser.add_argument("--steps", type=int, default=3000)
    parser.add_argument("--batch", type=int, default=24)
    parser.add_argument("--seq-len", type=int, default=128)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--log-every", type=int, default=100)
    parser.add_argument("--layers", type=int, default=8)
    parser.add_argument("--d-model", type=int, default=64)
    parser.add_argument("--n-heads", type=int, default=4)
    parser.add_argument("--n-kv-heads", type=int, default=2)
    parser.add_argument("--d-ff", type=int, default=128)
    args = parser.parse_args()

    torch.manual_seed(args.seed)
    assert args.d_model % args.n_heads == 0
    cfg = {
        "n_layers": args.layers, "d_model": args.d_model, "n_heads": args.n_heads,
        "n_kv_heads": args.n_kv_heads, "d_head": args.d_model // args.n_heads,
        "d_ff": args.d_ff, "vocab_size": VOCAB, "max_seq": 512,
        "rope_theta": 10000.0, "norm_eps": 1e-5,
    }
    tokens = load_tokens(args.corpus)
    split = int(tokens.numel() * 0.98)
    train_tokens, val_tokens = tokens[:split], tokens[split:]
    print(f"{tokens.numel()} tokens ({split} train)")

    model = ToyModel(cfg)
    n_params = sum(p.numel() for p in model.parameters())
    print(f"{n_params} parameters")

    gen = torch.Generator().manual_seed(args.seed)
    batches = batch_iter(train_tokens, args.batch, args.seq_len, gen)
    opt = torch.optim.AdamW(model.parameters(), lr=args.lr, weight_decay=0.01,
                            betas=(0.9, 0.95))
    warmup = 100

    start = time.time()
    for step in range(1, args.steps + 1):
        if step <= warmup:
            lr = args.lr * step / warmup
        else:
            frac = (step - warmup) / max(1, args.steps - warmup)
            lr = 0.1 * args.lr + 0.9 * args.lr * 0.5 * (1 + math.cos(math.pi * frac))
        for g in opt.param_groups:
            g["lr"] = lr
        x, y = next(batches)
        logits = model(x)
        loss = F.cross_entropy(logits.view(-1, VOCAB), y.reshape(-1))
        opt.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
        opt.step()
        if step % args.log_every == 0 or step == 1:
            tps = step * args.batch * args.seq_len / (time.time() - start)
            print(f"step {step:5d} loss {loss.item():.4f} lr {lr:.2e} "
                  f"({tps:,.0f} tok/s)", flush=True)

    model.eval()
    val_windows = [val_tokens[i * 128:(i + 1) * 128] for i in range(16)]
    val_ppl = teacher_forced_ppl(model, val_windows)
    print(f"validation ppl (128-token windows): {val_ppl:.4f}")

    out_dir = Path(args.out)
    save_container(model, out_dir)
    write_parity(model, tokens, out_dir)
    print(f"saved {out_dir}/weights.bin, config.json, parity.json")


if __name__ == "__main__":
    main()
