"""Token elements, vision-span layout and the linear patch projector."""
import enum
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted

from ._validation import check_finite, check_positive_int
from .errors import DimensionError, InvalidInputError, VocabularyError
from .preprocess import PatchGrid


class SpecialKind(enum.IntEnum):
    VISION_BEGIN = 0
    VISION_END = 1
    VROW_SEP = 2


@dataclass(frozen=True)
class Text:
    id: int


@dataclass(frozen=True)
class Patch:
    """Raw ``P x P x 3`` pixels of one patch, flattened as (row, col, channel)."""

    data: bytes = field(repr=False)
    patch_size: int

    def __post_init__(self):
        if len(self.data) != self.patch_size * self.patch_size * 3:
            raise DimensionError(
                f"patch payload has {len(self.data)} bytes, expected "
                f"{self.patch_size * self.patch_size * 3}"
            )

    @classmethod
    def from_array(cls, block):
        block = np.asarray(block, dtype=np.uint8)
        if block.ndim != 3 or block.shape[0] != block.shape[1] or block.shape[2] != 3:
            raise DimensionError(f"patch block must be (P, P, 3), got {block.shape}")
        return cls(block.tobytes(), block.shape[0])

    @property
    def array(self):
        p = self.patch_size
        return np.frombuffer(self.data, dtype=np.uint8).reshape(p, p, 3)


@dataclass(frozen=True)
class Special:
    kind: SpecialKind

    def __post_init__(self):
        object.__setattr__(self, "kind", SpecialKind(self.kind))


@dataclass(frozen=True)
class Pad:
    pass


VISION_BEGIN = Special(SpecialKind.VISION_BEGIN)
VISION_END = Special(SpecialKind.VISION_END)
VROW_SEP = Special(SpecialKind.VROW_SEP)
PAD = Pad()


@dataclass(frozen=True)
class Vocabulary:
    """Text ids occupy ``[0, text_vocab_size)``; the three specials follow.

    ``patch_id`` is a sentinel that never indexes the embedding table; it
    only marks patch positions in flat id arrays.
    """

    text_vocab_size: int

    def __post_init__(self):
        check_positive_int(self.text_vocab_size, "text_vocab_size")

    def special_id(self, kind):
        return self.text_vocab_size + int(SpecialKind(kind))

    @property
    def size(self):
        """Rows in the embedding table: text tokens plus specials."""
        return self.text_vocab_size + len(SpecialKind)

    @property
    def patch_id(self):
        return self.size

    @property
    def pad_id(self):
        return self.size + 1

    def id_of(self, element):
        if isinstance(element, Text):
            if not 0 <= element.id < self.text_vocab_size:
                raise VocabularyError(
                    f"text id {element.id} outside [0, {self.text_vocab_size})"
                )
            return element.id
        if isinstance(element, Special):
            return self.special_id(element.kind)
        if isinstance(element, Patch):
            return self.patch_id
        if isinstance(element, Pad):
            return self.pad_id
        raise InvalidInputError(f"not a token element: {element!r}")


@dataclass(frozen=True, eq=False)
class ProjectorWeights:
    matrix: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if m.ndim != 2 or b.shape != (m.shape[1],):
            raise DimensionError(f"projector matrix {m.shape} incompatible with bias {b.shape}")
        check_finite(m, "projector matrix")
        check_finite(b, "projector bias")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "bias", b)

    @property
    def in_features(self):
        return self.matrix.shape[0]

    @property
    def d_model(self):
        return self.matrix.shape[1]

    @classmethod
    def zeros(cls, patch_size, d_model):
        return cls(np.zeros((patch_size * patch_size * 3, d_model)), np.zeros(d_model))

    @classmethod
    def random(cls, patch_size, d_model, random_state=None, scale=None):
        rng = check_random_state(random_state)
        fan_in = patch_size * patch_size * 3
        scale = fan_in ** -0.5 if scale is None else scale
        return cls(rng.normal(0.0, scale, (fan_in, d_model)), np.zeros(d_model))


def layout_vision_span(grid):
    """``<vision>`` row0 ``<vrow_sep>`` row1 ... ``</vision>``.

    Separators sit only between consecutive rows, so a grid with ``r`` rows
    and ``c`` columns yields ``r*c + r + 1`` elements.
    """
    if not isinstance(grid, PatchGrid) or len(grid) == 0:
        raise InvalidInputError("layout_vision_span needs a non-empty PatchGrid")
    out = [VISION_BEGIN]
    for r in range(grid.rows):
        if r:
            out.append(VROW_SEP)
        out.extend(Patch.from_array(grid.patch(r, c)) for c in range(grid.cols))
    out.append(VISION_END)
    return out


def normalize_patch(patch):
    """Map 8-bit values to ``[-1, 1]`` and flatten in (row, col, channel) order."""
    if isinstance(patch, Patch):
        patch = patch.array
    return np.asarray(patch, dtype=np.float64).reshape(-1) / 255.0 * 2.0 - 1.0


def project_patches(grid, w):
    patches = grid.patches if isinstance(grid, PatchGrid) else np.asarray(grid)
    flat = patches.reshape(len(patches), -1)
    if flat.shape[1] != w.in_features:
        raise DimensionError(
            f"patch vectors have {flat.shape[1]} entries, projector expects {w.in_features}"
        )
    return (flat.astype(np.float64) / 255.0 * 2.0 - 1.0) @ w.matrix + w.bias


def embed_sequence(elements, text_embeddings, w, vocab=None):
    """Embed a mixed element list.

    ``text_embeddings`` holds one row per text token followed by the special
    token rows. Patches go through the projector; padding embeds to zero.
    """
    table = np.asarray(text_embeddings, dtype=np.float64)
    if vocab is None:
        vocab = Vocabulary(table.shape[0] - len(SpecialKind))
    if table.shape[0] != vocab.size:
        raise DimensionError(f"embedding table has {table.shape[0]} rows, vocabulary needs {vocab.size}")
    if table.shape[1] != w.d_model:
        raise DimensionError(f"embedding width {table.shape[1]} != projector width {w.d_model}")
    out = np.zeros((len(elements), w.d_model))
    patch_pos = []
    for t, el in enumerate(elements):
        if isinstance(el, Patch):
            patch_pos.append(t)
        elif not isinstance(el, Pad):
            out[t] = table[vocab.id_of(el)]
    if patch_pos:
        blocks = np.stack([elements[t].array for t in patch_pos])
        out[patch_pos] = project_patches(blocks, w)
    return out


def vision_spans(elements):
    """Yield ``(start, end)`` index pairs (end inclusive) of every vision span.

    Raises :class:`InvalidInputError` on unbalanced markers, nested spans,
    separators outside a span, or patches outside a span.
    """
    spans = []
    start = None
    for t, el in enumerate(elements):
        if isinstance(el, Special):
            if el.kind == SpecialKind.VISION_BEGIN:
                if start is not None:
                    raise InvalidInputError(f"nested <vision> at {t}")
                start = t
            elif el.kind == SpecialKind.VISION_END:
                if start is None:
                    raise InvalidInputError(f"</vision> without <vision> at {t}")
                spans.append((start, t))
                start = None
            elif start is None:
                raise InvalidInputError(f"<vrow_sep> outside a vision span at {t}")
        elif isinstance(el, Patch) and start is None:
            raise InvalidInputError(f"patch outside a vision span at {t}")
    if start is not None:
        raise InvalidInputError(f"unterminated <vision> starting at {start}")
    return spans


def span_geometry(elements, start, end):
    """``(rows, cols)`` of the vision span ``elements[start..end]``."""
    body = elements[start + 1:end]
    rows = 1 + sum(1 for el in body if el == VROW_SEP)
    n = sum(1 for el in body if isinstance(el, Patch))
    return rows, n // rows


class VisionSpanEncoder(TransformerMixin, BaseEstimator):
    """Turn patch grids into vision-span element lists or projected embeddings.

    ``fit`` draws projector weights; ``transform`` returns the span layout and
    ``embed`` the ``N x d_model`` patch embeddings.
    """

    def __init__(self, patch_size=32, d_model=64, random_state=None):
        self.patch_size = patch_size
        self.d_model = d_model
        self.random_state = random_state

    def fit(self, X=None, y=None):
        self.projector_ = ProjectorWeights.random(self.patch_size, self.d_model, self.random_state)
        return self

    def transform(self, X):
        return [layout_vision_span(g) for g in X]

    def embed(self, X):
        check_is_fitted(self, "projector_")
        return [project_patches(g, self.projector_) for g in X]
