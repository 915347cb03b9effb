"""Build the training targets of one phantom and look at them.

Run: python3 demos/01_targets.py

A phantom is an ellipsoidal atrium (bright blood), a one-voxel wall (dark)
and scar patches on the wall (bright again). The network never sees these
masks directly at the distance-aware heads; it is fitted to fields derived
from them:

* the signed distance map phi, negative inside the atrium and positive
  outside, which scales the SE term of the atrium head;
* the two probability maps exp(-d') for normal wall and scar, which the scar
  head regresses.
"""

import numpy as np

from lasesa.distance import distance_probability_maps, edt, signed_dtm
from lasesa.phantom import PhantomConfig, generate_phantom
from lasesa.surface import binarize_scar, extract_boundary, project_to_surface

case = generate_phantom(PhantomConfig(dims=(32, 32, 32), n_confounders=(2, 2)), seed=7)
la, wall, scar = case.la, case.wall, case.scar
print(f"atrium {la.data.sum()} voxels, wall {wall.data.sum()}, scar {scar.data.sum()}")

# The EDT gives the distance from each voxel to the nearest foreground voxel.
d = edt(la)
print(f"farthest voxel from the atrium: {d.data.max():.2f} mm")

phi = signed_dtm(la, beta=1.0)
print(f"phi ranges from {phi.data.min():.2f} (deep inside) to {phi.data.max():.2f} (corner)")
print(f"phi on the boundary: {np.unique(phi.data[extract_boundary(la).data])}")

probs = distance_probability_maps(scar, wall)
print(f"p_scar is 1 on scar voxels: {np.all(probs.scar[scar.data] == 1.0)}")
print(f"mean p_scar one voxel off the scar: "
      f"{probs.scar[(probs.scar < 1) & (probs.scar > np.exp(-1.01))].mean():.3f}")

# Extraction compares the two maps; on gold maps inside the wall this gives
# back the scar exactly, and projection carries it to the atrium surface.
extracted = binarize_scar(probs, wall.spacing)
extracted = extracted.with_data(extracted.data & wall.data)
print(f"extraction matches gold scar: {np.array_equal(extracted.data, scar.data)}")
labeling = project_to_surface(extracted, la, d_max=5.0)
print(f"surface: {labeling.labels.size} vertices, {labeling.labels.sum()} labelled scar")
