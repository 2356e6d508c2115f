"""Rotation-group and unit-sphere primitives.

Rotations are plain 3x3 orthonormal numpy arrays throughout the package.
All functions here are pure; long composition chains should be pushed back
onto the manifold with :func:`renormalize` now and then.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Below this rotation angle the closed-form Rodrigues coefficients are
# replaced by their 2nd-order Taylor series to avoid cancellation.
SMALL_ANGLE = 1e-6


def skew(v) -> np.ndarray:
    """Cross-product matrix: skew(v) @ w == cross(v, w)."""
    v = np.asarray(v, dtype=float)
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def skew_batch(v: np.ndarray) -> np.ndarray:
    """Vectorized :func:`skew` for an (n, 3) array, returns (n, 3, 3)."""
    v = np.asarray(v, dtype=float)
    n = v.shape[0]
    out = np.zeros((n, 3, 3))
    out[:, 0, 1] = -v[:, 2]
    out[:, 0, 2] = v[:, 1]
    out[:, 1, 0] = v[:, 2]
    out[:, 1, 2] = -v[:, 0]
    out[:, 2, 0] = -v[:, 1]
    out[:, 2, 1] = v[:, 0]
    return out


def exp_so3(phi) -> np.ndarray:
    """Rodrigues exponential of a rotation vector (radians)."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    K = skew(phi)
    if angle < SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(angle) / angle
    b = (1.0 - np.cos(angle)) / (angle * angle)
    return np.eye(3) + a * K + b * (K @ K)


def log_so3(R) -> np.ndarray:
    """Rotation vector of R; inverse of exp_so3 for angles < pi.

    At exactly pi the axis sign is fixed deterministically: the
    largest-magnitude component is made positive.
    """
    R = np.asarray(R, dtype=float)
    c = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(c)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < SMALL_ANGLE:
        # angle / (2 sin angle) ~ 1/2 (1 + angle^2 / 6)
        return 0.5 * w * (1.0 + angle * angle / 6.0)
    if np.pi - angle > 1e-4:
        return (angle / (2.0 * np.sin(angle))) * w
    # Near pi the sin-based formula degrades; recover the axis from R + I,
    # whose columns are parallel to it.
    M = R + np.eye(3)
    k = int(np.argmax(np.diag(M)))
    axis = M[:, k] / np.linalg.norm(M[:, k])
    sin_part = 0.5 * w  # = sin(angle) * axis away from exactly pi
    if np.linalg.norm(sin_part) > 1e-12:
        if sin_part @ axis < 0.0:
            axis = -axis
    else:
        j = int(np.argmax(np.abs(axis)))
        if axis[j] < 0.0:
            axis = -axis
    return angle * axis


def right_jacobian(phi) -> np.ndarray:
    """Right Jacobian of SO(3): Exp(phi + d) ~ Exp(phi) Exp(Jr(phi) d)."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    K = skew(phi)
    if angle < SMALL_ANGLE:
        return np.eye(3) - 0.5 * K + (K @ K) / 6.0
    a = (1.0 - np.cos(angle)) / (angle * angle)
    b = (angle - np.sin(angle)) / (angle ** 3)
    return np.eye(3) - a * K + b * (K @ K)


def renormalize(R) -> np.ndarray:
    """Project a near-rotation matrix onto SO(3) (polar projection)."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def is_rotation(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    return (
        R.shape == (3, 3)
        and abs(np.linalg.det(R) - 1.0) <= tol
        and np.abs(R @ R.T - np.eye(3)).max() <= tol
    )


def tangent_basis(omega) -> np.ndarray:
    """Deterministic orthonormal basis of the tangent plane at a unit vector.

    Householder construction from the axis with the smallest-magnitude
    component; the two returned columns are orthonormal and orthogonal to
    ``omega``. Only the span is meaningful to callers.
    """
    omega = np.asarray(omega, dtype=float)
    k = int(np.argmin(np.abs(omega)))
    e = np.zeros(3)
    e[k] = 1.0
    w = omega - e
    w = w / np.linalg.norm(w)
    H = np.eye(3) - 2.0 * np.outer(w, w)
    cols = [j for j in range(3) if j != k]
    return H[:, cols]


@dataclass(frozen=True)
class Direction:
    """Unit vector on the sphere with its derived tangent-plane operators."""

    omega: np.ndarray

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=float)
        n = np.linalg.norm(omega)
        if abs(n - 1.0) > 1e-12:
            raise ValueError(f"direction must be unit length, got norm {n!r}")
        object.__setattr__(self, "omega", omega)

    @property
    def basis(self) -> np.ndarray:
        """3x2 orthonormal tangent basis N(omega)."""
        return tangent_basis(self.omega)

    @property
    def perturbation(self) -> np.ndarray:
        """3x2 matrix mapping tangent angle noise to direction noise."""
        return skew(self.omega) @ self.basis
