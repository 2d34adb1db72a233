"""Shared test helpers: sequence builders and the finite-difference oracle."""

from __future__ import annotations

import numpy as np
import torch

from gochat.corpus import DialogueState, TokenSeq, Utterance


def seq(ids, n=6) -> TokenSeq:
    arr = np.zeros(n, dtype=np.int64)
    arr[: len(ids)] = ids
    return TokenSeq(ids=arr, real_length=len(ids))


def utt(speaker, ids, n=6, text=None) -> Utterance:
    return Utterance(speaker, text or " ".join(f"t{i}" for i in ids), tokens=seq(ids, n))


def state_of(*utts) -> DialogueState:
    return DialogueState(history=tuple(utts))


def finite_diff(loss_fn, params, eps=1e-5):
    """Central finite-difference gradients of loss_fn() w.r.t. each tensor.

    loss_fn must be a zero-argument callable returning a python float and
    must depend on `params` only through their current values.
    """
    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat, gf = p.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                h = eps * max(1.0, abs(orig))
                flat[i] = orig + h
                up = loss_fn()
                flat[i] = orig - h
                down = loss_fn()
                flat[i] = orig
                gf[i] = (up - down) / (2 * h)
            grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, rtol=1e-4, atol=1e-8):
    """Elementwise |a - fd| <= atol + rtol * |fd|."""
    for a, f in zip(analytic, numeric):
        diff = (a - f).abs()
        bound = atol + rtol * f.abs()
        worst = float((diff - bound).max())
        assert worst <= 0, f"gradient mismatch: worst violation {worst:.3e}"


def analytic_grads(loss, params):
    for p in params:
        if p.grad is not None:
            p.grad = None
    loss.backward()
    return [p.grad.clone() if p.grad is not None else torch.zeros_like(p) for p in params]
