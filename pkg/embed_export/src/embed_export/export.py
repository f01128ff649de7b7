"""Dump per-token hidden states of a frozen encoder as precomputed JSONL.

Each input line is a JSON object with ``text`` and ``label`` (and an
optional ``id``); each output line is ``{"id", "label", "tokens",
"vectors"}`` with one vector per non-special subword token, the schema the
few-shot pipeline ingests as precomputed representations. The encoder runs
in eval mode under ``no_grad``, so identical inputs always produce
identical files. Only the forward pass is used; nothing is fine-tuned.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass

import torch
from transformers import AutoModel, AutoTokenizer

log = logging.getLogger(__name__)


class ExportError(ValueError):
    """Raised for invalid jobs or malformed input datasets."""


@dataclass(frozen=True)
class ExportJob:
    data_path: str
    encoder: str
    out_path: str
    layer: int = -1  # hidden-state index; -1 means the final layer
    max_length: int = 128
    batch_size: int = 16

    def __post_init__(self):
        if self.max_length < 2:
            raise ExportError("max_length must be >= 2")
        if self.batch_size < 1:
            raise ExportError("batch_size must be >= 1")


def _read_samples(path):
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ExportError(f"{path}:{lineno}: invalid JSON: {exc}")
            if "text" not in obj or "label" not in obj:
                raise ExportError(
                    f"{path}:{lineno}: line needs 'text' and 'label' fields")
            samples.append({"id": str(obj.get("id", lineno - 1)),
                            "label": obj["label"], "text": obj["text"]})
    if not samples:
        raise ExportError(f"{path}: no samples found")
    return samples


def _resolve_layer(layer: int, n_hidden: int) -> int:
    """Map a user-facing layer index onto the hidden_states tuple.

    The tuple has n_hidden + 1 entries (embeddings output first); valid
    user indices are 0..n_hidden, or -1 for the final layer.
    """
    if layer == -1:
        return n_hidden
    if not 0 <= layer <= n_hidden:
        raise ExportError(
            f"layer {layer} out of range; encoder exposes hidden states "
            f"0..{n_hidden}")
    return layer


def export(job: ExportJob) -> int:
    """Run the extraction; returns the number of truncated texts."""
    samples = _read_samples(job.data_path)
    tokenizer = AutoTokenizer.from_pretrained(job.encoder)
    model = AutoModel.from_pretrained(job.encoder)
    model.eval()
    layer = _resolve_layer(job.layer, model.config.num_hidden_layers)

    truncated = 0
    with open(job.out_path, "w", encoding="utf-8") as out, torch.no_grad():
        for start in range(0, len(samples), job.batch_size):
            batch = samples[start:start + job.batch_size]
            enc = tokenizer(
                [s["text"] for s in batch], return_tensors="pt",
                padding=True, truncation=True, max_length=job.max_length,
                return_special_tokens_mask=True)
            special = enc.pop("special_tokens_mask")
            hidden = model(**enc, output_hidden_states=True
                           ).hidden_states[layer]
            for i, sample in enumerate(batch):
                full_len = len(tokenizer(sample["text"],
                                         truncation=False)["input_ids"])
                if full_len > job.max_length:
                    truncated += 1
                keep = (enc["attention_mask"][i] == 1) & (special[i] == 0)
                ids = enc["input_ids"][i][keep]
                tokens = tokenizer.convert_ids_to_tokens(ids.tolist())
                vectors = hidden[i][keep].numpy()
                json.dump({"id": sample["id"], "label": sample["label"],
                           "tokens": tokens,
                           "vectors": [[float(x) for x in row]
                                       for row in vectors]},
                          out, sort_keys=True)
                out.write("\n")
    if truncated:
        log.warning("%d of %d texts exceeded max_length=%d and were "
                    "truncated", truncated, len(samples), job.max_length)
    return truncated


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="Extract frozen per-token encoder embeddings to the "
                    "precomputed JSONL format")
    parser.add_argument("--data", required=True,
                        help="input JSONL with 'text' and 'label' per line")
    parser.add_argument("--encoder", required=True,
                        help="model name or local checkpoint directory")
    parser.add_argument("--out", required=True, help="output JSONL path")
    parser.add_argument("--layer", type=int, default=-1,
                        help="hidden-state index to export; -1 = final "
                             "layer (default)")
    parser.add_argument("--max-length", type=int, default=128)
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        job = ExportJob(data_path=args.data, encoder=args.encoder,
                        out_path=args.out, layer=args.layer,
                        max_length=args.max_length,
                        batch_size=args.batch_size)
        export(job)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename or exc}", file=sys.stderr)
        return 2
    except (ExportError, OSError, EnvironmentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
