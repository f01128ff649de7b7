"""Cross-package acceptance check: the exported file must be directly
consumable by the few-shot pipeline's precomputed-representation loader."""

import pytest
from transformers import AutoTokenizer

from embed_export import ExportJob, export

from conftest import SENTENCES

wordrep = pytest.importorskip(
    "fewtext.wordrep",
    reason="round-trip check needs the fewtext package installed")


def test_criterion_8_export_round_trip(tiny_encoder, fixture_dataset,
                                       tmp_path):
    out = tmp_path / "reps.jsonl"
    export(ExportJob(data_path=str(fixture_dataset), encoder=tiny_encoder,
                     out_path=str(out)))

    sequences = wordrep.load_precomputed(out)
    tokenizer = AutoTokenizer.from_pretrained(tiny_encoder)

    ok = len(sequences) == len(SENTENCES)
    dims = {seq.vectors.shape[1] for seq in sequences}
    ok = ok and dims == {32}
    for seq, (text, label) in zip(sequences, SENTENCES):
        non_special = tokenizer.tokenize(text)
        ok = ok and seq.label == label
        ok = ok and len(seq.tokens) == len(non_special)
        ok = ok and seq.vectors.shape[0] == len(non_special)

    print(f"criterion 8: {'PASS' if ok else 'FAIL'} - exported embeddings "
          f"round-trip through the precomputed loader "
          f"({len(sequences)} lines, dim {sorted(dims)})")
    assert ok
