"""Online learning of maps, place categories, and a place-name lexicon.

A Rao-Blackwellized particle filter jointly estimates an occupancy grid,
Gaussian place regions grouped into concepts by a Chinese-restaurant
process, and a word lexicon segmented from noisy phoneme utterances.
Fixed-lag rejuvenation and sequential posterior-statistic updates keep
the per-step cost of the scalable variant independent of run length.
"""

__version__ = "0.1.0"

from . import concepts, core, engine, evaluation, lexicon, sim, slam  # noqa: F401
