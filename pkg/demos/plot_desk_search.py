"""
Scoring untrained architectures at desk scale
=============================================

Score a handful of random cells from noise images, then rank and filter
them with the bundled rule sets. Real CIFAR-10 batches plug in through
``nasgeom.io.CifarBatches``.
"""

from nasgeom.idest import EstimatorParams
from nasgeom.netlab import NetworkConfig, format_arch_string, random_arch
from nasgeom.pipeline import ScoreConfig, apply_rules, default_rules, rank, score_many

###############################################################################
# Eight random cells, three initialisations each, one batch of 64 images
archs = [format_arch_string(random_arch(seed)) for seed in range(8)]
cfg = ScoreConfig(inits=3, batches=1, batch_size=64, seed=0, network=NetworkConfig(initial_channels=16),
                  params=EstimatorParams(fishers_condition_number=10.0))
scores = score_many(archs, cfg=cfg)

###############################################################################
# Means over initialisations, with the spread next to them
for s in rank(scores, "f_mean"):
    fm = s.measures["f_mean"]
    fi = s.measures["fishers"]
    mean = "n/a" if fi.mean is None else f"{fi.mean:5.2f}"
    print(f"f_mean {fm.mean:6.2f} +- {fm.std:4.2f}  fishers {mean}  {s.arch}")

###############################################################################
# Rule sets act on the means; a cell with no path to its output fails every measure
rules = default_rules()
for s in scores:
    verdicts = {name: apply_rules(s, r).keep for name, r in rules.items()}
    print(s.arch, verdicts, "hard failures:", s.hard_failures() or "none")
