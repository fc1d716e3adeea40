"""
CTC: the alignment-free sequence loss, checked by hand
======================================================

A text recognizer emits one distribution per image column ("frame"), but
the transcript has no per-column alignment. CTC sums the probability of
every frame path that collapses to the transcript: merge repeated symbols,
then drop blanks.
"""

import itertools

import numpy as np

from amdadapt import Alphabet, Tensor, collapse, ctc_loss, decode_batch, greedy_decode

# Alphabet "ab" plus the implicit blank at index 0.
alpha = Alphabet("ab")
print("classes:", alpha.num_classes, "(blank +", alpha.chars + ")")

# Two frames, uniform 1/3 over {blank, a, b}. Which paths spell "a"?
# aa, -a and a- do; every path has probability 1/9, so P = 3/9 and the
# loss is -log(1/3) = log 3.

probs = np.full((2, 3), 1.0 / 3.0)
loss = ctc_loss(Tensor(np.log(probs)[None]), [[1]], [2])
print(f"\nloss('a')  = {loss.item():.6f}   log 3 = {np.log(3):.6f}")

# "ab" needs both symbols in order, so only the path ab survives: P = 1/9.
loss = ctc_loss(Tensor(np.log(probs)[None]), [[1, 2]], [2])
print(f"loss('ab') = {loss.item():.6f}   log 9 = {np.log(9):.6f}")

# The same numbers by brute force, enumerating all 3^K paths. The dynamic
# program inside ctc_loss computes this sum in O(K * target) instead.

def brute(probs, target):
    total = 0.0
    for path in itertools.product(range(probs.shape[1]), repeat=probs.shape[0]):
        if collapse(list(path)) == target:
            total += np.prod([probs[t, s] for t, s in enumerate(path)])
    return -np.log(total)

K = 5
rng = np.random.default_rng(7)
raw = rng.random((K, 3)) + 1e-3
probs = raw / raw.sum(axis=1, keepdims=True)
for target in ([1], [1, 2], [2, 2], [1, 2, 1]):
    fast = ctc_loss(Tensor(np.log(probs)[None]), [target], [K]).item()
    slow = brute(probs, target)
    word = alpha.decode(target)
    print(f"target {word!r:7}  dp {fast:.10f}  brute {slow:.10f}  diff {abs(fast-slow):.1e}")

# Decoding inverts the story: take the argmax path, then collapse it.
path = [1, 1, 0, 2, 2, 0, 0, 1]
print("\npath    ", path)
print("collapse", collapse(path), "->", repr(alpha.decode(collapse(path))))

# greedy_decode finds that argmax path from (B, K, C) probabilities;
# decode_batch adds the collapse and the mapping back to text.
scores = np.zeros((1, len(path), 3))
for k, s in enumerate(path):
    scores[0, k, s] = 1.0
print("greedy  ", greedy_decode(scores, [len(path)])[0])
print("decoded ", repr(decode_batch(scores, [len(path)], alpha)[0]))
