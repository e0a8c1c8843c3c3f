"""
ctlo.constants
==============

Set constants used by the rest of the package.
"""

#- Lie group numerics
small_angle = 1e-7       # rad, first-order branch of exp/log/Jacobians
series_angle = 1e-2      # rad, Taylor series for cancellation-prone coefficients
near_pi_angle = 1e-4     # rad, log switches to the symmetric-part axis extraction
pi_tolerance = 1e-12     # rad, closer than this to pi is rejected by log

#- Trajectory
knot_snap = 1e-9         # fraction of a segment; times this close to a knot hit it exactly

#- Sliding window defaults
segments = 4
segment_dt = 0.03        # s
aggressive_dt = 0.01     # s
sigma_r = 0.1            # m
sigma_v = 0.05
init_duration = 0.3      # s

#- Voxel map
voxel_size_indoor = 0.4      # m
voxel_size_outdoor = 0.8     # m
voxel_size_aggressive = 0.2  # m
max_points_per_voxel = 20
max_range = 100.0            # m
plane_neighbors = 5
max_planarity = 0.1          # smallest/middle eigenvalue ratio
min_line_ratio = 0.05        # middle/largest eigenvalue ratio; below this the support is a line
correspondence_voxels = 2.0  # max point-to-neighbor distance in voxel sizes

#- Robust loss
huber_threshold = 0.3    # m

#- Solver
max_outer = 5
max_inner = 10
tolerance = 1e-6
damping_init = 1e-4
damping_up = 10.0
damping_down = 3.0
max_damping_retries = 10
marginal_regularization = 1e-9

#- Pipeline
segment_budget = 4096
min_correspondences = 50

#- Toolkit
association_tolerance = 0.01                 # s
rte_lengths = (10, 20, 30, 40, 50, 60, 70, 80)  # m
range_noise = 0.01                           # m
