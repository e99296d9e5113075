"""
Building the exposure instrument
================================

Each country's exposure is the distance-weighted openness of the other
countries, averaged over the sample window, times a common global rate.
Three countries are enough to check every number by hand.
"""

import numpy as np

from paneliv import DistanceMatrix, GlobalRateSeries, PanelDataset, build_instrument
from paneliv.instrument import inverse_distance_weights

D = DistanceMatrix.from_pairs([("AAA", "BBB", 1.0), ("AAA", "CCC", 3.0), ("BBB", "CCC", 2.0)])

# AAA sees BBB at distance 1 and CCC at 3: weights 1 and 1/3, normalised
print(inverse_distance_weights(D, "AAA"))

openness = PanelDataset(
    ["AAA", "BBB", "CCC"], [1991, 1992],
    {"kopen": [[0.6, 0.6], [0.1, 0.3], [1.0, 1.0]]},
)
rates = GlobalRateSeries({1991: 2.0, 1992: 4.0})

inst = build_instrument(D, openness, rates, window=(1991, 1992))
for e, row in zip(inst.entities, inst.values):
    print(e, "Kbar =", round(inst.kopen_bar[e], 4), "z =", row)

###############################################################################
# All time variation comes from the rate, so z / rate is flat per country.

print(inst.values / rates.over(inst.periods))

###############################################################################
# A missing openness cell is handled by renormalising over the neighbours
# that are observed in that year; the affected cells are flagged.

k = np.array(openness["kopen"])
k[2, 1] = np.nan
holey = PanelDataset(openness.entities, openness.periods, {"kopen": k})
inst2 = build_instrument(D, holey, rates, window=(1991, 1992))
print(inst2.renormalized)
print(inst2.provenance["renormalized_cells"], "cell(s) renormalised")
