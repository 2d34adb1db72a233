#!/usr/bin/env python3
"""Regenerate the frozen constants asserted by the seeded-toy tests.

Run after any intentional change to initialization or forward passes, then
update the GOLDEN_* values in tests/test_encoders.py and
tests/test_generator.py.
"""

import numpy as np
import torch

from gochat.config import EncoderConfig, WorkerConfig
from gochat.corpus import TokenSeq
from gochat.encoders import DialogueEncoder
from gochat.generator import ResponseGenerator
from gochat.subgoals import SubGoal

torch.set_num_threads(1)


def seq(ids, n=6):
    arr = np.zeros(n, dtype=np.int64)
    arr[: len(ids)] = ids
    return TokenSeq(ids=arr, real_length=len(ids))


def main():
    enc = DialogueEncoder(10, EncoderConfig(d_emb=4, d_word=6, d_dlg=3), seed=123)
    with torch.no_grad():
        va, _ = enc.encode_utterance_vec(enc.embed(seq([4, 5, 6, 7])))
        vb, _ = enc.encode_utterance_vec(enc.embed(seq([5, 4, 6, 7])))
        h1, _ = enc.encode_dialogue([va])
        h2, _ = enc.encode_dialogue([va, vb])
    print("GOLDEN_UTT_A =", va.numpy().tolist())
    print("GOLDEN_H1 =", h1.numpy().tolist())
    print("GOLDEN_H2 =", h2.numpy().tolist())

    wrk = ResponseGenerator(
        10, WorkerConfig(d_emb=4, d_enc=4, d_ctx=4, d_z=3, d_dec=4), num_subgoals=2, seed=123
    )
    with torch.no_grad():
        hw = wrk.encode_turn(seq([4, 5, 6]))
        hc = wrk.step_context(wrk.initial_context(), hw)
        mu, sigma = wrk.posterior_params(hc)
        logp = wrk.sequence_log_prob([seq([4, 5, 6])], SubGoal(1, 2), seq([7, 8]))
    print("GOLDEN_HW =", hw.numpy().tolist())
    print("GOLDEN_HC =", hc.numpy().tolist())
    print("GOLDEN_MU =", mu.numpy().tolist())
    print("GOLDEN_SIGMA =", sigma.numpy().tolist())
    print("GOLDEN_LOGP =", float(logp))


if __name__ == "__main__":
    main()
