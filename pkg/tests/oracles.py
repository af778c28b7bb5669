"""Independent reference implementations used as test oracles.

Each one is written straight from the rule it checks, with loops and no
shared code from the package under test.
"""
import math

import numpy as np


def make_resize_oracle(PATCH_SIZE=32, MAX_RESOLUTION=1024):
    # verbatim transcription of the reference pseudocode, float division and all
    def get_resize_output_image_size(image_size):
        l1, l2 = image_size
        if l2 <= l1:
            short, long = l2, l1
        else:
            short, long = l1, l2

        requested_new_long = min(
            int(long / PATCH_SIZE + 1) * PATCH_SIZE,
            MAX_RESOLUTION
        )
        new_long = requested_new_long
        new_short = int(new_long * short / long)
        new_short = int(new_short / PATCH_SIZE + 1) \
            * PATCH_SIZE

        if l2 <= l1:
            return new_long, new_short
        else:
            return new_short, new_long

    return get_resize_output_image_size


get_resize_output_image_size = make_resize_oracle()


def naive_matmul(a, b):
    rows, inner, cols = len(a), len(b), len(b[0])
    out = [[0.0] * cols for _ in range(rows)]
    for i in range(rows):
        for j in range(cols):
            s = 0.0
            for k in range(inner):
                s += float(a[i][k]) * float(b[k][j])
            out[i][j] = s
    return out


def attention_oracle(segment_ids, is_pad):
    n = len(segment_ids)
    return [
        [
            k <= q and segment_ids[q] == segment_ids[k] and not is_pad[q] and not is_pad[k]
            for k in range(n)
        ]
        for q in range(n)
    ]


def cross_entropy_oracle(logits_rows, targets, active):
    total = 0.0
    count = 0
    for row, tgt, on in zip(logits_rows, targets, active):
        if not on:
            continue
        m = max(row)
        lse = m + math.log(sum(math.exp(v - m) for v in row))
        total += lse - row[tgt]
        count += 1
    return total / count if count else 0.0


def attention_oracle_rows(segment_ids, is_pad):
    """Same predicate as :func:`attention_oracle`, evaluated row by row with numpy for long sequences."""
    seg = np.asarray(segment_ids)
    pad = np.asarray(is_pad, dtype=bool)
    n = len(seg)
    out = np.zeros((n, n), dtype=bool)
    keys = np.arange(n)
    for q in range(n):
        if not pad[q]:
            out[q] = (keys <= q) & (seg == seg[q]) & ~pad
    return out


def loss_mask_oracle(elements, segment_ids, response=None):
    from solo.encoding import Pad, Text
    out = []
    for t in range(len(elements)):
        ok = (
            t + 1 < len(elements)
            and type(elements[t + 1]) is Text
            and type(elements[t]) is not Pad
            and segment_ids[t] == segment_ids[t + 1]
            and (response is None or response[t + 1])
        )
        out.append(ok)
    return out
