"""Manifest ingestion: decode, resize, patchify and tokenize into examples."""
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .encoding import Text, layout_vision_span
from .errors import SoloError
from .mixture import load_manifest
from .packfile import write_corpus
from .packing import Example, ExampleKind
from .preprocess import PreprocessConfig, decode_image, preprocess_image
from .tokenizer import ByteTokenizer

logger = logging.getLogger(__name__)

CORPUS_FILE = "corpus.sexc"
SUMMARY_FILE = "summary.json"


def build_example(record, tokenizer, cfg=PreprocessConfig()):
    """Element layout per kind: ``[image span] text`` for pretraining and
    ``[image span] prompt response`` for supervised records, where only the
    response tokens are flagged as response."""
    prefix = []
    if record.image_path:
        grid = preprocess_image(decode_image(record.image_path), cfg)
        prefix = layout_vision_span(grid)
    prompt = [Text(i) for i in tokenizer.encode(record.prompt)] if record.prompt else []
    text = [Text(i) for i in tokenizer.encode(record.text)]
    elements = prefix + prompt + text
    response = None
    if record.kind is ExampleKind.SUPERVISED:
        response = [False] * (len(prefix) + len(prompt)) + [True] * len(text)
    return Example(elements, record.dataset, record.kind, response)


@dataclass
class IngestSummary:
    datasets: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    @property
    def records(self):
        return sum(d["records"] for d in self.datasets.values())

    @property
    def failure_count(self):
        return len(self.failures)

    def to_dict(self):
        return {"records": self.records, "failures": self.failure_count,
                "datasets": self.datasets, "failed_records": self.failures}


def ingest_records(records, tokenizer=None, cfg=PreprocessConfig(), workers=1):
    """Return ``(examples, summary)``; per-record failures are logged and skipped."""
    tokenizer = tokenizer or ByteTokenizer()

    def work(item):
        lineno, rec = item
        try:
            return build_example(rec, tokenizer, cfg), None
        except (OSError, SoloError, ValueError) as exc:
            return None, {"index": lineno, "dataset": rec.dataset, "image_path": rec.image_path,
                          "error": f"{type(exc).__name__}: {exc}"}

    summary = IngestSummary()
    examples = []
    items = list(enumerate(records))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(work, items))
    else:
        results = [work(it) for it in items]
    for (_, rec), (ex, err) in zip(items, results):
        stats = summary.datasets.setdefault(rec.dataset, {"records": 0, "failures": 0, "elements": 0})
        if err:
            stats["failures"] += 1
            summary.failures.append(err)
            logger.warning("skipping record %d of %s: %s", err["index"], rec.dataset, err["error"])
            continue
        stats["records"] += 1
        stats["elements"] += len(ex)
        examples.append(ex)
    return examples, summary


def ingest(manifest, out_dir, tokenizer=None, cfg=PreprocessConfig(), workers=1):
    """Ingest one manifest into ``out_dir/corpus.sexc`` plus a JSON summary."""
    records = load_manifest(manifest)
    examples, summary = ingest_records(records, tokenizer, cfg, workers)
    os.makedirs(out_dir, exist_ok=True)
    write_corpus(os.path.join(out_dir, CORPUS_FILE), examples, cfg.patch_size)
    with open(os.path.join(out_dir, SUMMARY_FILE), "w", encoding="utf-8") as f:
        json.dump(summary.to_dict(), f, indent=2, sort_keys=True)
    return examples, summary
