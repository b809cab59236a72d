"""Trajectory feature sampling for action recognition.

Dense trajectories are extracted from frame sequences, scored against
EdgeBox-style object and motion proposals, sampled under a feature budget,
encoded as Fisher vectors and classified with a one-vs-rest linear SVM.
"""

__version__ = "0.1.0"

DESCRIPTOR_TYPES = ("shape", "hog", "hof", "mbhx", "mbhy")
DESCRIPTOR_DIMS = {"shape": 30, "hog": 96, "hof": 108, "mbhx": 96, "mbhy": 96}
TRAJ_LEN = 15
