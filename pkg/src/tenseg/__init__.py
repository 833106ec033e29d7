"""Proprioceptive state estimation for 3-bar prism tensegrity robots.

Shape reconstruction from cable lengths, a contact-aided right-invariant
EKF fusing IMU + reconstructed kinematics + contact events, a kinematic
rolling simulator for validation, and trajectory metrics.
"""

__version__ = "0.1.0"
