"""
Retrieval, captioning and significance
======================================

"""

import numpy as np

from torquefusion import evaluation as ev

rng = np.random.default_rng(0)
gallery = rng.normal(size=(30, 16))
gallery_ids = np.repeat(np.arange(10), 3)
probes = gallery[::3] + 0.3 * rng.normal(size=(10, 16))
probe_ids = np.arange(10)

D = ev.distance_matrix(probes, gallery, probe_ids, gallery_ids)
print(ev.retrieval_metrics(D, ks=(1, 5)))

# ROUGE-L on whitespace tokens
print(ev.rouge_l("the cat sat on mat", "the cat on the mat"))

# two-sample t-test from published mean / std / n summaries
for name, a, b in [("gait", (89.55, 0.05, 5), (90.35, 0.06, 5)),
                   ("action", (94.40, 0.24, 5), (94.97, 0.09, 5))]:
    res = ev.t_test(a, b)
    print("%-6s t=%8.3f df=%g p=%.2e" % (name, res.t, res.df, res.p))

base = ev.EvalReport("gait", "synthetic", {"rank1": 46.0, "mAP": 85.12})
plus = ev.EvalReport("gait", "synthetic", {"rank1": 47.3, "mAP": 84.31})
print(ev.delta_report(base, plus).format_table())
