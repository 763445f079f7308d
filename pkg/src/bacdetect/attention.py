"""Causally masked self-attention backend for the next-event model."""
from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .seqmodel import EventVocabulary, NextEventModel, SeqModelConfig


class CausalEncoder(nn.Module):
    def __init__(self, vocab_size: int, n_targets: int, config: SeqModelConfig):
        super().__init__()
        d = config.embed_dim
        self.tok = nn.Embedding(vocab_size, d)
        self.pos = nn.Embedding(config.max_context, d)
        layer = nn.TransformerEncoderLayer(d, config.heads, config.ff_dim, dropout=config.dropout,
                                           batch_first=True)
        self.encoder = nn.TransformerEncoder(layer, config.layers, enable_nested_tensor=False)
        self.head = nn.Linear(d, n_targets)

    def forward(self, tokens: torch.Tensor, pad_mask: torch.Tensor | None = None) -> torch.Tensor:
        """Next-token logits at every position."""
        L = tokens.shape[1]
        h = self.tok(tokens) + self.pos(torch.arange(L, device=tokens.device))[None]
        causal = torch.triu(torch.ones(L, L, dtype=torch.bool, device=tokens.device), diagonal=1)
        h = self.encoder(h, mask=causal, src_key_padding_mask=pad_mask, is_causal=True)
        return self.head(h)

    def log_probs(self, tokens, pad_mask=None):
        # normalize in float64 so probabilities sum to 1 well below 1e-9
        return torch.log_softmax(self(tokens, pad_mask).double(), dim=-1)


class AttentionModel(NextEventModel):
    backend = "attention"

    def __init__(self, vocab: EventVocabulary, config: SeqModelConfig, net: CausalEncoder):
        super().__init__(vocab, config)
        self.net = net.eval()

    @classmethod
    def build(cls, vocab, config, dtype=torch.float32):
        torch.manual_seed(config.seed)
        net = CausalEncoder(len(vocab), vocab.n_targets, config).to(dtype)
        return cls(vocab, config, net)

    @classmethod
    def from_arrays(cls, vocab, config, arrays):
        model = cls.build(vocab, config)
        state = {k: torch.from_numpy(v) for k, v in arrays.items()}
        model.net.load_state_dict(state)
        return model

    def _arrays(self):
        return {k: v.detach().cpu().numpy() for k, v in self.net.state_dict().items()}

    @torch.no_grad()
    def next_probs(self, context):
        ctx = list(context)[-self.config.max_context:]
        out = self.net.log_probs(torch.tensor([ctx]))
        return out[0, -1].exp().numpy()

    @torch.no_grad()
    def log_probs(self, tokens):
        tokens = list(tokens)
        n = self.config.max_context
        if len(tokens) - 1 <= n:
            out = self.net.log_probs(torch.tensor([tokens[:-1]]))[0]
            idx = torch.tensor(tokens[1:])
            return out[torch.arange(len(idx)), idx].numpy()
        # sliding context for long sequences
        res = []
        for t in range(1, len(tokens)):
            ctx = tokens[max(0, t - n):t]
            res.append(float(self.net.log_probs(torch.tensor([ctx]))[0, -1, tokens[t]]))
        return np.array(res)


def _batches(corpus, batch_size, max_len, rng):
    # chop long sequences so each piece fits the positional table
    pieces = []
    for toks in corpus:
        for start in range(0, len(toks) - 1, max_len):
            pieces.append(toks[start:start + max_len + 1])
    order = rng.permutation(len(pieces))
    for i in range(0, len(order), batch_size):
        chunk = [pieces[j] for j in order[i:i + batch_size]]
        width = max(len(c) for c in chunk) - 1
        inp = torch.zeros(len(chunk), width, dtype=torch.long)
        tgt = torch.full((len(chunk), width), -100, dtype=torch.long)
        pad = torch.ones(len(chunk), width, dtype=torch.bool)
        for r, c in enumerate(chunk):
            inp[r, :len(c) - 1] = torch.tensor(c[:-1])
            tgt[r, :len(c) - 1] = torch.tensor(c[1:])
            pad[r, :len(c) - 1] = False
        yield inp, tgt, pad


def train_attention(corpus: list[list[int]], vocab: EventVocabulary, config: SeqModelConfig) -> AttentionModel:
    model = AttentionModel.build(vocab, config)
    net = model.net.train()
    opt = torch.optim.AdamW(net.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    loss_fn = nn.NLLLoss(ignore_index=-100)
    for _ in range(config.epochs):
        for inp, tgt, pad in _batches(corpus, config.batch_size, config.max_context, rng):
            out = torch.log_softmax(net(inp, pad), dim=-1)
            loss = loss_fn(out.reshape(-1, out.shape[-1]), tgt.reshape(-1))
            opt.zero_grad()
            loss.backward()
            opt.step()
    net.eval()
    return model
