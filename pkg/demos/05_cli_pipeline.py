"""
The whole pipeline through the command line
===========================================

Build a tiered dataset, train three seeds, evaluate the raw and trained
query encoders on disturbed queries, and diff the two reports.  Small
dimensions keep it quick; drop ``SMALL`` for the full-size encoder.
Every step leaves a ``manifest.json`` with the resolved settings.
"""

import json
import tempfile
from pathlib import Path

from lore.cli import main
from lore.synthetic import make_raw_corpus, make_separable_corpus
from lore.tiers import save_dataset

SMALL = ["--embed-dim", "64", "--feature-dim", "16384"]
work = Path(tempfile.mkdtemp(prefix="lore-demo-"))

# a labeled raw corpus in the input format of build-dataset
with open(work / "raw.jsonl", "w") as fh:
    for r in make_raw_corpus(20, seed=0):
        chunks = [{"chunk_id": c.chunk_id, "text": c.text, "label": y} for c, y in zip(r.chunks, r.labels)]
        fh.write(json.dumps({"query_id": r.query_id, "query": r.query, "chunks": chunks}) + "\n")

main(["build-dataset", "--in", str(work / "raw.jsonl"), "--out", str(work / "build" / "tiered.jsonl")])
print((work / "build" / "tiered.build_report.json").read_text())

# training and evaluation on the synthetic corpus, where learning has signal
save_dataset(make_separable_corpus(200, seed=0), work / "train.jsonl")
save_dataset(make_separable_corpus(200, seed=100), work / "test.jsonl")
main(["train", "--dataset", str(work / "train.jsonl"), "--out-dir", str(work / "run"), *SMALL])
main(["eval", "--dataset", str(work / "test.jsonl"), "--out-dir", str(work / "eval-raw"),
      "--mode", "disturbed", *SMALL])
main(["eval", "--dataset", str(work / "test.jsonl"), "--out-dir", str(work / "eval-tuned"),
      "--checkpoint", str(work / "run" / "checkpoint_seed0.npz"), "--mode", "disturbed"])
main(["compare", str(work / "eval-raw" / "report.json"), str(work / "eval-tuned" / "report.json")])

print(json.dumps(json.loads((work / "run" / "manifest.json").read_text())["config"], indent=1))
print("outputs in", work)
