"""Greedy sequence packing with per-example attention isolation and loss masks."""
import enum
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_positive_int
from .encoding import PAD, Pad, Text, vision_spans
from .errors import InvalidInputError, UnpackableExampleError

DEFAULT_MAX_LEN = 32768


class ExampleKind(str, enum.Enum):
    PRETRAIN_TEXT = "pretrain-text"
    PRETRAIN_CAPTIONED = "pretrain-captioned"
    SUPERVISED = "supervised"


class PackMode(str, enum.Enum):
    PRETRAIN = "pretrain"
    SUPERVISED = "supervised"


@dataclass(frozen=True)
class Example:
    """One training document.

    ``response`` optionally flags, per element, whether a text token counts
    as a training target in supervised packing. ``None`` means every text
    token counts; pretrain packing ignores it.
    """

    elements: tuple
    source_dataset: str = ""
    kind: ExampleKind = ExampleKind.PRETRAIN_TEXT
    response: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        object.__setattr__(self, "kind", ExampleKind(self.kind))
        if any(isinstance(el, Pad) for el in self.elements):
            raise InvalidInputError("examples may not contain padding")
        vision_spans(self.elements)
        if self.response is not None:
            resp = tuple(bool(r) for r in self.response)
            if len(resp) != len(self.elements):
                raise InvalidInputError(
                    f"response flags ({len(resp)}) do not match elements ({len(self.elements)})"
                )
            object.__setattr__(self, "response", resp)

    def __len__(self):
        return len(self.elements)

    def response_flags(self):
        if self.response is None:
            return (True,) * len(self.elements)
        return self.response


@dataclass(frozen=True)
class PackedSequence:
    elements: tuple
    segment_ids: tuple
    loss_mask: tuple

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        object.__setattr__(self, "segment_ids", tuple(int(s) for s in self.segment_ids))
        object.__setattr__(self, "loss_mask", tuple(bool(m) for m in self.loss_mask))
        n = len(self.elements)
        if len(self.segment_ids) != n or len(self.loss_mask) != n:
            raise InvalidInputError(
                f"length mismatch: {n} elements, {len(self.segment_ids)} segment ids, "
                f"{len(self.loss_mask)} mask bits"
            )
        seg = np.asarray(self.segment_ids, dtype=np.int64)
        if n and (seg.min() < 0 or np.any(np.diff(seg) < 0)):
            raise InvalidInputError("segment ids must be nonnegative and nondecreasing")

    def __len__(self):
        return len(self.elements)

    @property
    def pad_flags(self):
        return np.fromiter((isinstance(el, Pad) for el in self.elements), bool, len(self.elements))

    def segments(self):
        """``(segment_id, start, stop)`` for every non-pad segment, in order."""
        out = []
        pad = self.pad_flags
        start = 0
        for t in range(1, len(self) + 1):
            if t == len(self) or self.segment_ids[t] != self.segment_ids[start]:
                if not pad[start]:
                    out.append((self.segment_ids[start], start, t))
                start = t
        return out


class AttentionMask:
    """Causal, same-segment, non-pad attention predicate over one sequence."""

    def __init__(self, segment_ids, pad):
        self.segment_ids = np.asarray(segment_ids, dtype=np.int64)
        self.pad = np.asarray(pad, dtype=bool)

    def __len__(self):
        return len(self.segment_ids)

    def allowed(self, q, k):
        return bool(
            k <= q
            and self.segment_ids[q] == self.segment_ids[k]
            and not self.pad[q]
            and not self.pad[k]
        )

    def matrix(self):
        n = len(self.segment_ids)
        same = self.segment_ids[:, None] == self.segment_ids[None, :]
        live = ~self.pad
        return np.tril(np.ones((n, n), dtype=bool)) & same & live[:, None] & live[None, :]


def build_attention_predicate(seq):
    return AttentionMask(seq.segment_ids, seq.pad_flags)


def build_loss_mask(seq, response=None):
    """Next-token loss mask: position ``t`` trains on ``elements[t + 1]``.

    True only when that target is a text token in the same segment and, if
    ``response`` flags are given, inside the response region.
    """
    els = seq.elements
    seg = seq.segment_ids
    n = len(els)
    mask = [False] * n
    for t in range(n - 1):
        if (
            isinstance(els[t + 1], Text)
            and not isinstance(els[t], Pad)
            and seg[t] == seg[t + 1]
            and (response is None or response[t + 1])
        ):
            mask[t] = True
    return mask


def _valid_cuts(elements):
    """Boolean array: ``ok[c]`` iff cutting before index ``c`` splits no span."""
    ok = np.ones(len(elements) + 1, dtype=bool)
    for start, end in vision_spans(elements):
        ok[start + 1:end + 1] = False
    return ok


class _OpenSequence:
    def __init__(self, max_len):
        self.max_len = max_len
        self.elements = []
        self.segment_ids = []
        self.response = []
        self.n_segments = 0

    @property
    def remaining(self):
        return self.max_len - len(self.elements)

    def add(self, elements, response):
        self.elements.extend(elements)
        self.segment_ids.extend([self.n_segments] * len(elements))
        self.response.extend(response)
        self.n_segments += 1

    def close(self, pad):
        n_pad = self.remaining if pad else 0
        elements = self.elements + [PAD] * n_pad
        segment_ids = self.segment_ids + [self.n_segments] * n_pad
        response = self.response + [False] * n_pad
        seq = PackedSequence(elements, segment_ids, [False] * len(elements))
        return PackedSequence(elements, segment_ids, build_loss_mask(seq, response))


def pack_examples(examples, max_len=DEFAULT_MAX_LEN, mode=PackMode.PRETRAIN, pad=True):
    """Pack an example stream into sequences of ``max_len`` elements.

    Examples are placed first-fit in arrival order into a single open
    sequence. In pretrain mode an example that does not fit is split at the
    last position that keeps every vision span intact; in supervised mode it
    starts a new sequence. Each placed piece becomes its own segment and the
    tail is filled with padding carrying segment id ``max + 1``.
    """
    max_len = check_positive_int(max_len, "max_len")
    mode = PackMode(mode)
    cur = _OpenSequence(max_len)
    for i, ex in enumerate(examples):
        if not len(ex):
            continue
        spans = vision_spans(ex.elements)
        for start, end in spans:
            if end - start + 1 > max_len:
                raise UnpackableExampleError(
                    f"example {i}: vision span of {end - start + 1} elements exceeds {max_len}"
                )
        elements = list(ex.elements)
        response = (
            list(ex.response_flags()) if mode is PackMode.SUPERVISED else [True] * len(elements)
        )
        if mode is PackMode.SUPERVISED:
            if len(elements) > max_len:
                raise UnpackableExampleError(
                    f"example {i}: {len(elements)} elements exceed {max_len} in supervised mode"
                )
            if len(elements) > cur.remaining:
                yield cur.close(pad)
                cur = _OpenSequence(max_len)
            cur.add(elements, response)
            continue

        ok = _valid_cuts(elements)
        offset = 0
        while offset < len(elements):
            left = len(elements) - offset
            if left <= cur.remaining:
                cur.add(elements[offset:], response[offset:])
                break
            limit = offset + cur.remaining
            cut = limit
            while cut > offset and not ok[cut]:
                cut -= 1
            if cut > offset:
                cur.add(elements[offset:cut], response[offset:cut])
                offset = cut
            yield cur.close(pad)
            cur = _OpenSequence(max_len)
    if cur.elements:
        yield cur.close(pad)


class SequencePacker(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`pack_examples`."""

    def __init__(self, max_len=DEFAULT_MAX_LEN, mode="pretrain", pad=True):
        self.max_len = max_len
        self.mode = mode
        self.pad = pad

    def fit(self, X=None, y=None):
        check_positive_int(self.max_len, "max_len")
        self.mode_ = PackMode(self.mode)
        return self

    def transform(self, X):
        return list(pack_examples(X, self.max_len, self.mode, self.pad))
