"""Staged data mixtures: token accounting and deterministic draw schedules."""
import bisect
import enum
import hashlib
import json
import os
import struct
from dataclasses import dataclass, field, replace

from ._validation import check_nonnegative_real, check_positive_int
from .encoding import Patch, Special, SpecialKind, Text
from .errors import ConfigurationError, IngestionError
from .packing import ExampleKind
from .preprocess import PreprocessConfig, probe_dims, resize_output_dims
from .tokenizer import ByteTokenizer


class Modality(str, enum.Enum):
    TEXT_ONLY = "text-only"
    IMAGE_TEXT = "image-text"


@dataclass(frozen=True)
class TokenTargets:
    """Reference counts for one dataset row of a stage template."""

    instances: int
    text_tokens: int
    vision_tokens: int


@dataclass(frozen=True)
class DatasetEntry:
    name: str
    path: str = ""
    modality: Modality = Modality.IMAGE_TEXT
    weight: float = 1.0
    role: str = ""
    reference: TokenTargets = None

    def __post_init__(self):
        object.__setattr__(self, "modality", Modality(self.modality))
        object.__setattr__(self, "weight", check_nonnegative_real(self.weight, f"weight of {self.name}"))


@dataclass(frozen=True)
class MixtureSpec:
    stage: int
    entries: tuple
    text_blend_multiplier: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise ConfigurationError(f"stage must be 1, 2 or 3, got {self.stage!r}")
        object.__setattr__(self, "entries", tuple(self.entries))
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"duplicate dataset names in {names}")
        m = check_nonnegative_real(self.text_blend_multiplier, "text_blend_multiplier")
        if m <= 0:
            raise ConfigurationError("text_blend_multiplier must be positive")
        object.__setattr__(self, "text_blend_multiplier", m)
        object.__setattr__(self, "seed", int(self.seed) & 0xFFFFFFFFFFFFFFFF)

    def effective_weights(self):
        """Entry weights with the text-blend multiplier applied to text-only entries."""
        return {
            e.name: e.weight * self.text_blend_multiplier if e.modality is Modality.TEXT_ONLY else e.weight
            for e in self.entries
        }

    def with_weights(self, **weights):
        entries = [replace(e, weight=weights.get(e.name, e.weight)) for e in self.entries]
        return replace(self, entries=tuple(entries))


# Reference per-dataset targets (instances, text tokens, vision tokens).
# The capfusion vision count is total tokens minus text tokens, which is the
# value that makes the stage-2 totals balance.
_STAGES = {
    1: [
        ("imagenet21k", Modality.IMAGE_TEXT, "label-prediction", (74_283, 212_745_573, 2_210_457_535)),
        ("slimpajama", Modality.TEXT_ONLY, "text-blend", (120_839, 4_340_877_587, 0)),
    ],
    2: [
        ("capfusion", Modality.IMAGE_TEXT, "caption", (204_978, 1_172_726_505, 5_491_625_358)),
        ("websight", Modality.IMAGE_TEXT, "markup", (71_579, 1_087_060_511, 1_213_884_704)),
        ("cc3m", Modality.IMAGE_TEXT, "caption", (32_760, 76_092_147, 988_385_167)),
        ("detailed-captions", Modality.IMAGE_TEXT, "caption", (6_225, 44_788_200, 157_228_570)),
        ("llavar", Modality.IMAGE_TEXT, "supervised", (3_602, 31_390_556, 86_058_228)),
        ("dvqa", Modality.IMAGE_TEXT, "supervised", (2_917, 55_653_796, 39_200_000)),
        ("ocr-vqa", Modality.IMAGE_TEXT, "supervised", (1_593, 21_161_018, 30_759_687)),
        ("figureqa", Modality.IMAGE_TEXT, "supervised", (1_526, 24_803_256, 24_783_049)),
        ("slimpajama", Modality.TEXT_ONLY, "text-blend", (120_385, 4_300_998_161, 0)),
    ],
    3: [
        ("allava-laion", Modality.IMAGE_TEXT, "supervised", (13_725, 176_660_898, 265_848_592)),
        ("allava-vlflan", Modality.IMAGE_TEXT, "supervised", (4_469, 77_835_919, 66_741_458)),
        ("llavar", Modality.IMAGE_TEXT, "supervised", (3_602, 31_390_556, 86_058_228)),
        ("dvqa", Modality.IMAGE_TEXT, "supervised", (2_917, 55_653_796, 39_200_000)),
        ("figureqa", Modality.IMAGE_TEXT, "supervised", (1_526, 24_803_256, 24_783_049)),
        ("slimpajama", Modality.TEXT_ONLY, "text-blend", (12_085, 430_688_442, 0)),
    ],
}


def stage_curriculum(stage):
    """Dataset-role template for a pre-training stage.

    Stage 1 pairs a label-prediction image corpus with a text blend, stage 2
    scales up to captions, markup and some supervised data, and stage 3
    anneals on high-quality supervised data with a smaller text blend.
    Default weights are the reference token counts of each role so the
    template reproduces the reference proportions; paths are left empty.
    """
    if stage not in _STAGES:
        raise ConfigurationError(f"unknown stage {stage!r}; expected 1, 2 or 3")
    entries = []
    for name, modality, role, (inst, text, vision) in _STAGES[stage]:
        ref = TokenTargets(inst, text, vision)
        entries.append(DatasetEntry(name, "", modality, float(text + vision), role, ref))
    return MixtureSpec(stage, tuple(entries))


@dataclass
class DatasetCount:
    records: int = 0
    images: int = 0
    text_tokens: int = 0
    vision_tokens: int = 0
    special_tokens: int = 0

    def __add__(self, other):
        return DatasetCount(
            self.records + other.records,
            self.images + other.images,
            self.text_tokens + other.text_tokens,
            self.vision_tokens + other.vision_tokens,
            self.special_tokens + other.special_tokens,
        )


@dataclass
class TokenAccount:
    """Per-dataset token counts. Each image patch is one vision token;
    vision-span markers are tallied separately and belong to neither class."""

    datasets: dict = field(default_factory=dict)

    @property
    def total(self):
        out = DatasetCount()
        for c in self.datasets.values():
            out = out + c
        return out

    @property
    def text_tokens(self):
        return self.total.text_tokens

    @property
    def vision_tokens(self):
        return self.total.vision_tokens

    @staticmethod
    def _percent(part, whole):
        return 100.0 * part / whole if whole else 0.0

    @property
    def text_percent(self):
        t = self.total
        return self._percent(t.text_tokens, t.text_tokens + t.vision_tokens)

    @property
    def vision_percent(self):
        t = self.total
        return self._percent(t.vision_tokens, t.text_tokens + t.vision_tokens)

    def __add__(self, other):
        merged = dict(self.datasets)
        for name, c in other.datasets.items():
            merged[name] = merged.get(name, DatasetCount()) + c
        return TokenAccount(merged)

    def to_dict(self):
        rows = []
        for name, c in self.datasets.items():
            n = c.text_tokens + c.vision_tokens
            rows.append({
                "dataset": name,
                **vars(c),
                "text_percent": self._percent(c.text_tokens, n),
                "vision_percent": self._percent(c.vision_tokens, n),
            })
        return {
            "datasets": rows,
            "total": {**vars(self.total), "text_percent": self.text_percent,
                      "vision_percent": self.vision_percent},
        }

    def format_table(self):
        header = f"{'dataset':<24}{'records':>10}{'images':>10}{'text':>14}{'vision':>14}{'special':>10}{'text%':>9}{'vision%':>9}"
        lines = [header, "-" * len(header)]

        def row(name, c):
            n = c.text_tokens + c.vision_tokens
            return (
                f"{name:<24}{c.records:>10}{c.images:>10}{c.text_tokens:>14}{c.vision_tokens:>14}"
                f"{c.special_tokens:>10}{self._percent(c.text_tokens, n):>9.2f}"
                f"{self._percent(c.vision_tokens, n):>9.2f}"
            )

        for name, c in self.datasets.items():
            lines.append(row(name, c))
        lines.append("-" * len(header))
        lines.append(row("total", self.total))
        return "\n".join(lines)


@dataclass(frozen=True)
class ManifestRecord:
    dataset: str
    text: str = ""
    kind: ExampleKind = ExampleKind.PRETRAIN_TEXT
    image_path: str = None
    prompt: str = ""

    @classmethod
    def from_json(cls, obj, base_dir=""):
        image = obj.get("image_path")
        if image and base_dir and not os.path.isabs(image):
            image = os.path.join(base_dir, image)
        return cls(
            dataset=obj["dataset"],
            text=obj.get("text", ""),
            kind=ExampleKind(obj.get("kind", ExampleKind.PRETRAIN_TEXT)),
            image_path=image or None,
            prompt=obj.get("prompt", ""),
        )


def load_manifest(path, dataset=None):
    """Parse a line-delimited JSON manifest; image paths resolve against its directory."""
    name = dataset or os.path.basename(path)
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as exc:
        raise IngestionError(name, f"cannot read manifest {path}: {exc.strerror}") from exc
    base = os.path.dirname(os.path.abspath(path))
    records = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            records.append(ManifestRecord.from_json(json.loads(line), base))
        except (ValueError, KeyError, TypeError) as exc:
            raise IngestionError(name, f"{path}:{lineno}: malformed record ({exc})") from exc
    return records


def count_record(record, tokenizer, cfg):
    c = DatasetCount(records=1)
    c.text_tokens = len(tokenizer.encode(record.prompt)) + len(tokenizer.encode(record.text))
    if record.image_path:
        dims = resize_output_dims(probe_dims(record.image_path), cfg)
        rows, cols = dims.height // cfg.patch_size, dims.width // cfg.patch_size
        c.images = 1
        c.vision_tokens = rows * cols
        c.special_tokens = rows + 1
    return c


def account_tokens(entries, tokenizer=None, cfg=PreprocessConfig()):
    """Count text and vision tokens over the manifests behind ``entries``."""
    tokenizer = tokenizer or ByteTokenizer()
    account = TokenAccount()
    for entry in entries:
        total = DatasetCount()
        for rec in load_manifest(entry.path, entry.name):
            try:
                total = total + count_record(rec, tokenizer, cfg)
            except OSError as exc:
                raise IngestionError(entry.name, f"cannot read image {rec.image_path}: {exc}") from exc
        account.datasets[entry.name] = total
    return account


def account_examples(examples):
    """Token account over already-encoded :class:`~solo.packing.Example` objects."""
    account = TokenAccount()
    for ex in examples:
        c = account.datasets.setdefault(ex.source_dataset, DatasetCount())
        c.records += 1
        for el in ex.elements:
            if isinstance(el, Text):
                c.text_tokens += 1
            elif isinstance(el, Patch):
                c.vision_tokens += 1
            elif isinstance(el, Special):
                c.special_tokens += 1
                if el.kind == SpecialKind.VISION_BEGIN:
                    c.images += 1
    return account


@dataclass(frozen=True)
class Draw:
    step: int
    dataset: str
    index: int


def _unit_hash(seed, step):
    digest = hashlib.blake2b(struct.pack("<QQ", seed, step), digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2.0 ** 64


def draw_dataset(spec, step):
    """Dataset chosen at ``step``; a pure function of ``(spec.seed, step)`` and the weights."""
    weights = spec.effective_weights()
    names = [n for n, w in weights.items() if w > 0]
    if not names:
        raise ConfigurationError(f"stage {spec.stage} mixture has no positive weight")
    cum = []
    acc = 0.0
    for n in names:
        acc += weights[n]
        cum.append(acc)
    u = _unit_hash(spec.seed, step) * acc
    return names[min(bisect.bisect_right(cum, u), len(names) - 1)]


def plan_schedule(spec, total_sequences, dataset_sizes=None, start=0):
    """Deterministic ``(dataset, example index)`` draws for steps ``start..start+total-1``.

    The dataset at each step comes from a stateless hash of the seed and the
    step. The example index is the number of earlier draws from the same
    dataset (counted from step 0, so a schedule resumed at ``start`` matches
    the tail of a full one), wrapped by ``dataset_sizes`` when given.
    """
    check_positive_int(total_sequences, "total_sequences", ConfigurationError)
    sizes = dataset_sizes or {}
    counts = {}
    for step in range(start):
        name = draw_dataset(spec, step)
        counts[name] = counts.get(name, 0) + 1
    draws = []
    for step in range(start, start + total_sequences):
        name = draw_dataset(spec, step)
        k = counts.get(name, 0)
        counts[name] = k + 1
        if name in sizes:
            if sizes[name] < 1:
                raise ConfigurationError(f"dataset {name!r} is empty")
            k %= sizes[name]
        draws.append(Draw(step, name, k))
    return draws


def load_mixture_spec(path):
    """Read a JSON mixture config; entry paths resolve against the file's directory."""
    try:
        with open(path, encoding="utf-8") as f:
            obj = json.load(f)
    except OSError as exc:
        raise ConfigurationError(f"cannot read mixture spec {path}: {exc.strerror}") from exc
    except ValueError as exc:
        raise ConfigurationError(f"mixture spec {path} is not valid JSON: {exc}") from exc
    base = os.path.dirname(os.path.abspath(path))
    try:
        entries = []
        for e in obj["entries"]:
            p = e.get("path", "")
            if p and not os.path.isabs(p):
                p = os.path.join(base, p)
            entries.append(DatasetEntry(e["name"], p, e.get("modality", Modality.IMAGE_TEXT),
                                        e.get("weight", 1.0), e.get("role", "")))
        return MixtureSpec(
            int(obj["stage"]),
            tuple(entries),
            obj.get("text_blend_multiplier", 1.0),
            obj.get("seed", 0),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"mixture spec {path} is missing field {exc}") from exc
