"""
Joint torques from motion
=========================

"""

import numpy as np

from torquefusion import dynamics as dyn

# a single link hanging from a hinge: holding it horizontal costs m g l
chain = dyn.pendulum(mass=1.0, com_distance=1.0, inertia=0.1)
state = dyn.MotionState(q=[np.pi / 2], qdot=[0.0], qddot=[0.0])
print("holding torque:", dyn.inverse_dynamics(chain, state))

# the leg has a ball-joint hip, then knee, ankle and toe hinges
leg = dyn.leg_chain()
q = np.array([0.2, -0.1, 0.3, 0.5, -0.2, 0.1])
M = dyn.mass_matrix(leg, q)
print("mass matrix eigenvalues:", np.round(np.linalg.eigvalsh(M), 4))

C, g = dyn.bias_forces(leg, q, np.ones(6))
print("velocity terms:", np.round(C, 4))
print("gravity terms: ", np.round(g, 4))

# a whole sequence: derivatives come from finite differences
t = np.arange(64) / 30.0
frames = 0.4 * np.sin(2 * np.pi * t[:, None] * np.array([0.5, 0.7, 0.9, 1.0, 1.2, 1.5]))
torques = dyn.torques_from_sequence(leg, dyn.MotionSequence(frames, 1 / 30))
print("torque tensor:", torques.tau.shape, "peak |tau| per joint:",
      np.round(np.linalg.norm(torques.tau, axis=-1).max(axis=0), 2))
