#!/usr/bin/env python3
"""Writes a GPT-2 checkpoint directory plus reference outputs from PyTorch.

Without --from-checkpoint, a GPT-2 small shaped model (12 layers, 12 heads,
d_model 768, d_ff 3072, vocab 50257, context 1024) is initialized with a fixed
seed. With --from-checkpoint DIR, weights are read from an existing Hugging
Face style GPT-2 directory (model.safetensors) instead.

Outputs in --out:
  model.safetensors   148 tensors, Hugging Face GPT-2 names, stored as F16
                      (or F32 with --dtype f32)
  config.json         sidecar consumed by lmtrace (with HF aliases)
  reference.json      prompts, token ids, argmax and top-5 of the final position
  reference_logits.f32
                      final-position logits, one row of n_vocab floats per prompt

The reference forward pass runs on the stored (possibly f16-rounded) weights
widened back to f32, so it sees exactly what the C++ loader sees.
"""

import argparse
import json
import os

import numpy as np
import torch
from safetensors.numpy import save_file
from safetensors.torch import load_file
from transformers import GPT2Config, GPT2LMHeadModel, GPT2Tokenizer

PROMPTS = [
    "The capital of France is",
    "When Mary and John went to the store, John gave a drink to",
    "The Eiffel Tower is located in the city of",
    "One, two, three, four,",
    "In 1969, the first person to walk on the moon was",
    "The quick brown fox jumps over the lazy",
    "Water boils at a temperature of",
    "The opposite of hot is",
    "My favourite programming language is",
    "Once upon a time, there was a little",
    "The largest planet in the solar system is",
    "She opened the door and saw",
    "Monday, Tuesday, Wednesday,",
    "The chemical symbol for gold is",
    "To be or not to be, that is the",
    "The Great Wall of China was built to",
    "import numpy as np\nimport",
    "A B C D E F G",
    "The president of the United States lives in the",
    "Attention heads in a transformer model",
]


def hf_state_dict(model):
    sd = model.transformer.state_dict()
    keep = {}
    for k, v in sd.items():
        if k.endswith(".attn.bias") or k.endswith(".attn.masked_bias"):
            continue
        keep[k] = v.detach().contiguous()
    return keep


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", required=True)
    ap.add_argument("--vocab", required=True)
    ap.add_argument("--merges", required=True)
    ap.add_argument("--from-checkpoint")
    ap.add_argument("--seed", type=int, default=1234)
    ap.add_argument("--dtype", choices=["f16", "f32"], default="f16")
    ap.add_argument("--skip-existing", action="store_true",
                    help="do nothing if --out already holds a complete set")
    args = ap.parse_args()

    names = ["model.safetensors", "config.json", "reference.json", "reference_logits.f32"]
    if args.skip_existing and all(os.path.exists(os.path.join(args.out, n)) for n in names):
        return

    os.makedirs(args.out, exist_ok=True)
    torch.manual_seed(args.seed)
    torch.set_num_threads(max(1, os.cpu_count() or 1))

    config = GPT2Config(
        vocab_size=50257, n_positions=1024, n_embd=768, n_layer=12, n_head=12,
        activation_function="gelu_new", layer_norm_epsilon=1e-5,
    )
    model = GPT2LMHeadModel(config)
    if args.from_checkpoint:
        sd = load_file(os.path.join(args.from_checkpoint, "model.safetensors"))
        sd = {k.removeprefix("transformer."): v.float() for k, v in sd.items()}
        model.transformer.load_state_dict(sd, strict=False)
    model.tie_weights()

    tensors = hf_state_dict(model)
    stored = {}
    np_dtype = np.float16 if args.dtype == "f16" else np.float32
    for k, v in tensors.items():
        stored[k] = v.float().numpy().astype(np_dtype)
    assert len(stored) == 148, len(stored)
    save_file(stored, os.path.join(args.out, "model.safetensors"))

    # Reload the exact stored values into the reference model.
    widened = {k: torch.from_numpy(v.astype(np.float32)) for k, v in stored.items()}
    model.transformer.load_state_dict(widened, strict=False)
    model.tie_weights()
    model.eval()

    sidecar = {
        "n_layer": 12, "n_head": 12, "d_model": 768, "d_ff": 3072,
        "n_vocab": 50257, "n_ctx": 1024, "ln_eps": 1e-5,
        "activation": "gelu_tanh", "positional": "learned_absolute",
        "archive": "model.safetensors",
        "vocab_file": os.path.abspath(args.vocab),
        "merges_file": os.path.abspath(args.merges),
    }
    with open(os.path.join(args.out, "config.json"), "w") as f:
        json.dump(sidecar, f, indent=2)

    tok = GPT2Tokenizer(args.vocab, args.merges)
    records = []
    rows = []
    with torch.no_grad():
        for p in PROMPTS:
            ids = tok.encode(p)
            out = model(torch.tensor([ids]))
            logits = out.logits[0, -1].float().numpy()
            rows.append(logits.astype(np.float32))
            top = np.argsort(-logits, kind="stable")[:5]
            records.append({
                "text": p,
                "ids": ids,
                "argmax": int(top[0]),
                "top5": [int(t) for t in top],
                "margin": float(logits[top[0]] - logits[top[1]]),
            })
    np.stack(rows).tofile(os.path.join(args.out, "reference_logits.f32"))
    # Written last: its presence marks a complete directory.
    tmp = os.path.join(args.out, "reference.json.tmp")
    with open(tmp, "w") as f:
        json.dump({"n_vocab": 50257, "prompts": records}, f, indent=1)
    os.replace(tmp, os.path.join(args.out, "reference.json"))


if __name__ == "__main__":
    main()
