"""Pluggable text tokenizers.

Anything with ``vocab_size``, ``encode(str) -> list[int]`` and
``decode(list[int]) -> str`` can drive ingestion and accounting.
"""
import json


class ByteTokenizer:
    """UTF-8 bytes as token ids; deterministic and dependency free."""

    vocab_size = 256

    def encode(self, text):
        return list(text.encode("utf-8"))

    def decode(self, ids):
        return bytes(ids).decode("utf-8", errors="replace")

    def __repr__(self):
        return "ByteTokenizer()"


class VocabTokenizer:
    """Greedy longest-match over a fixed vocabulary with byte fallback.

    Ids ``0..255`` are raw bytes; vocabulary entries follow in file order.
    """

    def __init__(self, tokens):
        self.tokens = [t for t in dict.fromkeys(tokens) if t]
        self._ids = {t: 256 + i for i, t in enumerate(self.tokens)}
        self._max_len = max((len(t) for t in self.tokens), default=0)

    @classmethod
    def from_file(cls, path):
        """Load ``{"tokens": [...]}`` or a bare JSON list of strings."""
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
        if isinstance(data, dict):
            data = data["tokens"]
        return cls(data)

    @property
    def vocab_size(self):
        return 256 + len(self.tokens)

    def encode(self, text):
        ids = []
        i = 0
        while i < len(text):
            for n in range(min(self._max_len, len(text) - i), 0, -1):
                tid = self._ids.get(text[i:i + n])
                if tid is not None:
                    ids.append(tid)
                    i += n
                    break
            else:
                ids.extend(text[i].encode("utf-8"))
                i += 1
        return ids

    def decode(self, ids):
        out = bytearray()
        for tid in ids:
            if tid < 256:
                out.append(tid)
            else:
                out += self.tokens[tid - 256].encode("utf-8")
        return out.decode("utf-8", errors="replace")


def load_tokenizer(path=None):
    return ByteTokenizer() if path is None else VocabTokenizer.from_file(path)
