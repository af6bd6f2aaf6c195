"""Growth configurations shared by the acceptance suite and the calibration script."""

from dbmlab.growth import GrowthConfig

# criterion 4: capacity against ln R, dense checkpoints
CAP_RADIUS = GrowthConfig(dimension=2, eta=1.0, n_particles=10_000, measure_mode="dla_fast",
                          capacity_checkpoint_every=100, checkpoint_samples=20_000)
# criteria 6 and 7: attachment measures between checkpoints, accurate checkpoint profiles
BEURLING = GrowthConfig(dimension=2, eta=1.0, n_particles=40_000, measure_mode="dla_fast",
                        omega_every=5, omega_samples=1_000, checkpoint_samples=100_000)
# criterion 8
DLA_2D = GrowthConfig(dimension=2, eta=1.0, n_particles=200_000, measure_mode="dla_fast",
                      checkpoint_samples=10_000)
# the max-radius slope of Eden clusters still creeps up to 1/2 at 1e5 particles
EDEN_2D = GrowthConfig(dimension=2, eta=0.0, n_particles=1_000_000, measure_mode="eden",
                       checkpoint_samples=2_000)
DBM_15 = GrowthConfig(dimension=2, eta=1.5, n_particles=3_000, measure_mode="monte_carlo",
                      samples_per_step=10_000)
# criteria 8 and 9
DLA_3D = GrowthConfig(dimension=3, eta=1.0, n_particles=100_000, measure_mode="dla_fast",
                      checkpoint_samples=10_000)

ALL = {
    "cap_radius": CAP_RADIUS,
    "beurling": BEURLING,
    "dla_2d": DLA_2D,
    "eden_2d": EDEN_2D,
    "dbm_15": DBM_15,
    "dla_3d": DLA_3D,
}
