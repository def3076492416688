"""Sedimentation of inertial spheres in quasi-static Stokes flow: simulator and checks."""

__version__ = "0.1.0"
