"""
An end-to-end synthetic experiment
==================================

"""

import numpy as np

from torquefusion import dynamics as dyn
from torquefusion import harness as hn

# two classes that share appearance statistics up to noise and differ
# in how strongly the twist joint oscillates
chain = dyn.twist_arm_chain()
sig = np.array([[(1.5, 2.0, 0.0), (7.0, 1.0, 0.0), (5.0, 1.5, 1.0)]] * 2)
sig[1, 0, 0] = 4.0
spec = hn.SyntheticCohortSpec(n_subjects=20, sequences_per_subject=4, chain=chain,
                              signatures=sig, appearance_noise=0.95, seed=0)
samples = hn.generate_synthetic_cohort(spec)
print(len(samples), "sequences from", spec.n_subjects, "subjects")

config = hn.ExperimentConfig(fusion="decision", metrics=("top1", "rank1", "mAP"), seed=0)
experiment = hn.Experiment(samples, config, chain).fit()
print(experiment.evaluate().format_table())

# mask one joint at a time; only the twist joint should matter
config = hn.ExperimentConfig(fusion="decision", metrics=("top1",), seed=0)
print(hn.ablate_joints(config, [(), 0, 1, 2], experiment=experiment).format_table())
