"""Golden BLEU / CIDEr-D values for tests/fixtures/metric_fixture.json.

Runs the pycocoevalcap reference scorers once; the printed numbers are frozen into
tests/test_metrics.cpp and tests/acceptance.cpp. The fixture text is already lowercase
and punctuation-free, so it is fed to the scorers unchanged.
"""
import json
import pathlib

from pycocoevalcap.bleu.bleu import Bleu
from pycocoevalcap.cider.cider import Cider

root = pathlib.Path(__file__).resolve().parents[1] / "fixtures"
fixture = json.loads((root / "metric_fixture.json").read_text())
ids = sorted(fixture["candidates"])
res = {i: [fixture["candidates"][i]] for i in ids}
gts = {i: fixture["references"][i] for i in ids}

bleu, _ = Bleu(4).compute_score(gts, res, verbose=0)
cider, per_item = Cider().compute_score(gts, res)
for n, b in enumerate(bleu, 1):
    print(f"bleu_{n} {b:.12f}")
print(f"cider {cider:.12f}")
for i, s in zip(ids, per_item):
    print(f"cider[{i}] {s:.12f}")

# Identical candidates: each candidate equals its single, mutually distinct reference.
same_res = {i: [fixture["candidates"][i]] for i in ids}
same_gts = {i: [fixture["candidates"][i]] for i in ids}
s, items = Cider().compute_score(same_gts, same_res)
print(f"identical_cider {s:.12f}", " ".join(f"{x:.12f}" for x in items))
