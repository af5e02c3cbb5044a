"""Articulated rigid-body dynamics for fixed-base kinematic trees.

Torques are computed with a recursive Newton-Euler pass over spatial
(6-vector) quantities; the joint-space mass matrix uses the composite
rigid-body algorithm, so the two routes are independent of each other.

Spatial vectors are ordered ``[angular; linear]`` and expressed in the
frame of the joint that owns them. Every joint frame sits at the joint
origin. A revolute joint rotates about a fixed unit axis; a spherical
joint is parameterized by a rotation vector whose time derivative maps
to body angular velocity through the right Jacobian of SO(3).

Torques for spherical joints are reported (in the ``J x 3`` layout) as
the physical moment in the child joint frame. Revolute torques occupy
the joint-axis direction with the remaining components zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

REVOLUTE = "revolute"
SPHERICAL = "spherical"
JOINT_DOF = {REVOLUTE: 1, SPHERICAL: 3}

DEFAULT_GRAVITY = (0.0, -9.81, 0.0)

# complex-step size used for the time derivative of the spherical motion subspace
_CSTEP = 1e-30


class DynamicsError(ValueError):
    """Raised for malformed chains, states or sequences."""


# ---------------------------------------------------------------------------
# small SO(3) / spatial algebra helpers
# ---------------------------------------------------------------------------


def skew(v):
    v = np.asarray(v)
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]],
        dtype=v.dtype if np.iscomplexobj(v) else float,
    )


def _so3_coefficients(theta2):
    """Return (sin t / t, (1 - cos t) / t^2, (t - sin t) / t^3) for t^2 = theta2.

    Uses truncated Taylor series near zero so it stays exact and also works for
    complex arguments (needed by the complex-step derivative).
    """
    if abs(theta2) < 1e-6:
        t2 = theta2
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        return a, b, c
    t = np.sqrt(theta2)
    s, co = np.sin(t), np.cos(t)
    return s / t, (1.0 - co) / theta2, (t - s) / (theta2 * t)


def rotation_from_rotvec(phi):
    """Exponential map of a rotation vector (small-angle safe)."""
    phi = np.asarray(phi, dtype=float)
    a, b, _ = _so3_coefficients(float(phi @ phi))
    K = skew(phi)
    return np.eye(3) + a * K + b * (K @ K)


def rotation_about_axis(axis, angle):
    return rotation_from_rotvec(np.asarray(axis, dtype=float) * angle)


def right_jacobian(phi):
    """Map rotation-vector rates to body-frame angular velocity."""
    phi = np.asarray(phi)
    a, b, c = _so3_coefficients(phi @ phi)
    K = skew(phi)
    return np.eye(3) - b * K + c * (K @ K)


def _right_jacobian_rate(phi, phidot):
    """d/dt J_r(phi(t)) for phi' = phidot, via complex-step differentiation."""
    z = np.asarray(phi, dtype=complex) + 1j * _CSTEP * np.asarray(phidot, dtype=float)
    return right_jacobian(z).imag / _CSTEP


def _crm(v):
    """Spatial motion cross-product operator."""
    w, u = skew(v[:3]), skew(v[3:])
    out = np.zeros((6, 6))
    out[:3, :3] = w
    out[3:, :3] = u
    out[3:, 3:] = w
    return out


def _crf(v):
    return -_crm(v).T


def _motion_transform(E, r):
    """Plücker transform of motion vectors from parent to child.

    E rotates parent coordinates into child coordinates; r is the child origin
    expressed in parent coordinates.
    """
    X = np.zeros((6, 6))
    X[:3, :3] = E
    X[3:, 3:] = E
    X[3:, :3] = -E @ skew(r)
    return X


def _spatial_inertia(mass, com, inertia):
    C = skew(com)
    I = np.zeros((6, 6))
    I[:3, :3] = inertia + mass * C @ C.T
    I[:3, 3:] = mass * C
    I[3:, :3] = mass * C.T
    I[3:, 3:] = mass * np.eye(3)
    return I


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Joint:
    """One joint plus the rigid body it carries.

    ``offset`` locates the joint in its parent's frame (meters). ``com`` and
    ``inertia`` (about the COM) are given in this joint's own frame.
    """

    id: int
    parent: Optional[int]
    kind: str
    offset: tuple = (0.0, 0.0, 0.0)
    mass: float = 1.0
    com: tuple = (0.0, 0.0, 0.0)
    inertia: tuple = ((0.01, 0.0, 0.0), (0.0, 0.01, 0.0), (0.0, 0.0, 0.01))
    axis: tuple = (0.0, 0.0, 1.0)
    name: str = ""

    @property
    def dof(self):
        return JOINT_DOF[self.kind]


@dataclass(frozen=True)
class KinematicChain:
    """Fixed-base rigid-body tree.

    Joint ``k`` has id ``k``; parents may appear in any position as long as the
    references form a tree. Generalized coordinates are stacked in joint id
    order (1 entry per revolute joint, 3 per spherical joint).
    """

    joints: tuple
    gravity: tuple = DEFAULT_GRAVITY

    def __post_init__(self):
        joints = tuple(self.joints)
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "gravity", tuple(float(g) for g in self.gravity))
        if not joints:
            raise DynamicsError("chain has no joints")
        roots = 0
        for k, jt in enumerate(joints):
            if jt.id != k:
                raise DynamicsError(f"joint at position {k} has id {jt.id}; ids must be 0..J-1 in order")
            if jt.kind not in JOINT_DOF:
                raise DynamicsError(f"joint {k}: unknown kind {jt.kind!r}")
            if jt.parent is None:
                roots += 1
            elif not 0 <= jt.parent < len(joints) or jt.parent == k:
                raise DynamicsError(f"joint {k}: invalid parent {jt.parent}")
            if not jt.mass > 0:
                raise DynamicsError(f"joint {k}: mass must be positive")
            inertia = np.asarray(jt.inertia, dtype=float)
            if inertia.shape != (3, 3) or not np.allclose(inertia, inertia.T, rtol=0, atol=1e-12):
                raise DynamicsError(f"joint {k}: inertia must be a symmetric 3x3 matrix")
            if np.linalg.eigvalsh(inertia).min() <= 0:
                raise DynamicsError(f"joint {k}: inertia must be positive definite")
            if jt.kind == REVOLUTE and not np.isclose(np.linalg.norm(jt.axis), 1.0):
                raise DynamicsError(f"joint {k}: revolute axis must be a unit vector")
        if roots != 1:
            raise DynamicsError(f"chain must have exactly one root, found {roots}")
        order, pending = [], [j.id for j in joints if j.parent is None]
        children = {k: [j.id for j in joints if j.parent == k] for k in range(len(joints))}
        while pending:
            k = pending.pop(0)
            order.append(k)
            pending.extend(children[k])
        if len(order) != len(joints):
            raise DynamicsError("parent references contain a cycle")
        object.__setattr__(self, "_order", tuple(order))

    @property
    def order(self):
        """Joint ids with every parent before its children."""
        return self._order

    @property
    def n_joints(self):
        return len(self.joints)

    @property
    def n_dof(self):
        return sum(j.dof for j in self.joints)

    @property
    def dof_slices(self):
        out, start = [], 0
        for j in self.joints:
            out.append(slice(start, start + j.dof))
            start += j.dof
        return out


@dataclass(frozen=True)
class MotionState:
    q: np.ndarray
    qdot: np.ndarray
    qddot: np.ndarray

    def __post_init__(self):
        for name in ("q", "qdot", "qddot"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        if not (len(self.q) == len(self.qdot) == len(self.qddot)):
            raise DynamicsError("q, qdot and qddot must have identical length")


@dataclass(frozen=True)
class MotionSequence:
    """T frames of generalized coordinates sampled every ``dt`` seconds."""

    frames: np.ndarray
    dt: float

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=float)
        if frames.ndim == 1:
            frames = frames[:, None]
        if frames.ndim != 2:
            raise DynamicsError("frames must be a T x n array")
        if not self.dt > 0:
            raise DynamicsError("dt must be positive")
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self):
        return self.frames.shape[0]


@dataclass(frozen=True)
class Contact:
    """External contact acting on ``joint`` through a (3 or 6) x n Jacobian."""

    joint: int
    jacobian: np.ndarray
    wrench: np.ndarray


@dataclass(frozen=True)
class ContactSet:
    contacts: tuple = ()

    def generalized_force(self, n):
        """J_C^T lambda summed over contacts (length n)."""
        out = np.zeros(n)
        for c in self.contacts:
            Jc = np.asarray(c.jacobian, dtype=float)
            lam = np.asarray(c.wrench, dtype=float).reshape(-1)
            if Jc.ndim != 2 or Jc.shape[1] != n or Jc.shape[0] not in (3, 6):
                raise DynamicsError(f"contact Jacobian must be 3xn or 6xn with n={n}, got {Jc.shape}")
            if lam.shape != (Jc.shape[0],):
                raise DynamicsError("contact wrench length must match Jacobian rows")
            out += Jc.T @ lam
        return out


@dataclass(frozen=True)
class TorqueSequence:
    """Per-frame, per-joint torque 3-vectors, shape T x J x 3 (N m)."""

    tau: np.ndarray
    joint_ids: tuple = field(default=())

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        if tau.ndim != 3 or tau.shape[2] != 3:
            raise DynamicsError(f"torque tensor must be T x J x 3, got {tau.shape}")
        if not np.all(np.isfinite(tau)):
            raise DynamicsError("invalid input: torque tensor has non-finite entries")
        object.__setattr__(self, "tau", tau)
        if not self.joint_ids:
            object.__setattr__(self, "joint_ids", tuple(range(tau.shape[1])))
        elif len(self.joint_ids) != tau.shape[1]:
            raise DynamicsError("joint_ids length must equal J")

    @property
    def n_frames(self):
        return self.tau.shape[0]

    @property
    def n_joints(self):
        return self.tau.shape[1]


# ---------------------------------------------------------------------------
# kinematics
# ---------------------------------------------------------------------------


def _check_vector(chain, x, name):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (chain.n_dof,):
        raise DynamicsError(f"dimension mismatch: {name} has length {x.size}, chain has {chain.n_dof} DOF")
    if not np.all(np.isfinite(x)):
        raise DynamicsError(f"invalid input: {name} has non-finite entries")
    return x


def _joint_kinematics(joint, qj, qdj=None):
    """Return (E, S, Sdot_qdot) for one joint.

    E rotates parent-frame coordinates into the joint frame; S is the 6 x dof
    motion subspace; Sdot_qdot is dS/dt applied to the joint rate.
    """
    if joint.kind == REVOLUTE:
        axis = np.asarray(joint.axis, dtype=float)
        R = rotation_about_axis(axis, qj[0])
        S = np.zeros((6, 1))
        S[:3, 0] = axis
        return R.T, S, np.zeros(6)
    R = rotation_from_rotvec(qj)
    S = np.zeros((6, 3))
    S[:3, :] = right_jacobian(qj)
    sdq = np.zeros(6)
    if qdj is not None and np.any(qdj):
        sdq[:3] = _right_jacobian_rate(qj, qdj) @ qdj
    return R.T, S, sdq


def forward_kinematics(chain, q):
    """World rotation and joint-origin position for each joint frame."""
    q = _check_vector(chain, q, "q")
    rots, pos = [None] * chain.n_joints, [None] * chain.n_joints
    slices = chain.dof_slices
    for i in chain.order:
        joint = chain.joints[i]
        E, _, _ = _joint_kinematics(joint, q[slices[i]])
        if joint.parent is None:
            R_parent, p_parent = np.eye(3), np.zeros(3)
        else:
            R_parent, p_parent = rots[joint.parent], pos[joint.parent]
        pos[i] = p_parent + R_parent @ np.asarray(joint.offset, dtype=float)
        rots[i] = R_parent @ E.T
    return rots, pos


def potential_energy(chain, q):
    """Gravitational potential energy, zero at the world origin."""
    rots, pos = forward_kinematics(chain, q)
    g = np.asarray(chain.gravity)
    total = 0.0
    for joint, R, p in zip(chain.joints, rots, pos):
        com_world = p + R @ np.asarray(joint.com, dtype=float)
        total -= joint.mass * g @ com_world
    return total


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------


def _rnea(chain, q, qdot, qddot, gravity):
    n_j = chain.n_joints
    X, S, v, a, f = [None] * n_j, [None] * n_j, [None] * n_j, [None] * n_j, [None] * n_j
    a0 = np.zeros(6)
    a0[3:] = -np.asarray(gravity, dtype=float)
    slices = chain.dof_slices
    for i in chain.order:
        joint = chain.joints[i]
        sl = slices[i]
        E, S[i], sdq = _joint_kinematics(joint, q[sl], qdot[sl])
        X[i] = _motion_transform(E, np.asarray(joint.offset, dtype=float))
        vj = S[i] @ qdot[sl]
        if joint.parent is None:
            v[i] = vj
            a[i] = X[i] @ a0 + S[i] @ qddot[sl] + sdq
        else:
            v[i] = X[i] @ v[joint.parent] + vj
            a[i] = X[i] @ a[joint.parent] + S[i] @ qddot[sl] + sdq + _crm(v[i]) @ vj
        I = _spatial_inertia(joint.mass, np.asarray(joint.com, dtype=float), np.asarray(joint.inertia, dtype=float))
        f[i] = I @ a[i] + _crf(v[i]) @ (I @ v[i])
    tau = np.zeros(chain.n_dof)
    for i in reversed(chain.order):
        tau[slices[i]] = S[i].T @ f[i]
        p = chain.joints[i].parent
        if p is not None:
            f[p] = f[p] + X[i].T @ f[i]
    return tau


def mass_matrix(chain, q):
    """Joint-space inertia matrix M(q) by the composite rigid-body algorithm."""
    q = _check_vector(chain, q, "q")
    n_j = chain.n_joints
    slices = chain.dof_slices
    X, S, Ic = [None] * n_j, [None] * n_j, [None] * n_j
    for i, joint in enumerate(chain.joints):
        E, S[i], _ = _joint_kinematics(joint, q[slices[i]])
        X[i] = _motion_transform(E, np.asarray(joint.offset, dtype=float))
        Ic[i] = _spatial_inertia(joint.mass, np.asarray(joint.com, dtype=float), np.asarray(joint.inertia, dtype=float))
    for i in reversed(chain.order):
        p = chain.joints[i].parent
        if p is not None:
            Ic[p] = Ic[p] + X[i].T @ Ic[i] @ X[i]
    M = np.zeros((chain.n_dof, chain.n_dof))
    for i in range(n_j):
        F = Ic[i] @ S[i]
        M[slices[i], slices[i]] = S[i].T @ F
        j = i
        while chain.joints[j].parent is not None:
            F = X[j].T @ F
            j = chain.joints[j].parent
            block = F.T @ S[j]
            M[slices[i], slices[j]] = block
            M[slices[j], slices[i]] = block.T
    # symmetric by construction up to rounding in the diagonal blocks
    return 0.5 * (M + M.T)


def bias_forces(chain, q, qdot):
    """Return (C(q, qdot), g(q)): velocity-product and gravity torques."""
    q = _check_vector(chain, q, "q")
    qdot = _check_vector(chain, qdot, "qdot")
    zeros = np.zeros(chain.n_dof)
    coriolis = _rnea(chain, q, qdot, zeros, (0.0, 0.0, 0.0))
    gravity = _rnea(chain, q, zeros, zeros, chain.gravity)
    return coriolis, gravity


def inverse_dynamics(chain, state, contacts=None):
    """Generalized joint torques tau = M qddot + C + g - J_C^T lambda."""
    q = _check_vector(chain, state.q, "q")
    qdot = _check_vector(chain, state.qdot, "qdot")
    qddot = _check_vector(chain, state.qddot, "qddot")
    tau = _rnea(chain, q, qdot, qddot, chain.gravity)
    if contacts is not None and contacts.contacts:
        tau = tau - contacts.generalized_force(chain.n_dof)
    return tau


def torque_layout(chain, q, tau):
    """Arrange a generalized torque vector as a J x 3 array of joint moments."""
    q = _check_vector(chain, q, "q")
    tau = _check_vector(chain, tau, "tau")
    out = np.zeros((chain.n_joints, 3))
    for k, (joint, sl) in enumerate(zip(chain.joints, chain.dof_slices)):
        if joint.kind == REVOLUTE:
            out[k] = tau[sl][0] * np.asarray(joint.axis, dtype=float)
        else:
            # generalized force is J_r^T n; recover the moment n
            out[k] = np.linalg.solve(right_jacobian(q[sl]).T, tau[sl])
    return out


def finite_difference_derivatives(seq):
    """Velocities and accelerations of a motion sequence by finite differences.

    Interior frames use central differences; the boundary frames use
    second-order one-sided stencils (first-order for the acceleration when
    only three frames are available).
    """
    q = seq.frames
    T = q.shape[0]
    if T < 3:
        raise DynamicsError("sequence too short: need at least 3 frames")
    if not np.all(np.isfinite(q)):
        raise DynamicsError("invalid input: non-finite coordinate")
    h = seq.dt
    qdot = np.gradient(q, h, axis=0, edge_order=2)
    qddot = np.empty_like(q)
    qddot[1:-1] = (q[2:] - 2.0 * q[1:-1] + q[:-2]) / (h * h)
    if T >= 4:
        # 2q0 - 5q1 + 4q2 - q3 written on differences so constants give exact zeros
        d = np.diff(q, axis=0)
        qddot[0] = (3.0 * d[1] - 2.0 * d[0] - d[2]) / (h * h)
        qddot[-1] = (2.0 * d[-1] - 3.0 * d[-2] + d[-3]) / (h * h)
    else:
        qddot[0] = qddot[1]
        qddot[-1] = qddot[1]
    return qdot, qddot


def torques_from_sequence(chain, seq, contacts: Optional[Sequence[ContactSet]] = None):
    """Differentiate a motion sequence and run inverse dynamics on every frame."""
    if seq.frames.shape[1] != chain.n_dof:
        raise DynamicsError(
            f"dimension mismatch: sequence has {seq.frames.shape[1]} coordinates, chain has {chain.n_dof} DOF"
        )
    qdot, qddot = finite_difference_derivatives(seq)
    T = seq.n_frames
    if contacts is not None and len(contacts) != T:
        raise DynamicsError("need one contact set per frame")
    out = np.empty((T, chain.n_joints, 3))
    for t in range(T):
        state = MotionState(seq.frames[t], qdot[t], qddot[t])
        tau = inverse_dynamics(chain, state, None if contacts is None else contacts[t])
        out[t] = torque_layout(chain, seq.frames[t], tau)
    return TorqueSequence(out, tuple(j.id for j in chain.joints))


# ---------------------------------------------------------------------------
# reference chains
# ---------------------------------------------------------------------------


def _rod_inertia(mass, length, radius=0.02):
    """Inertia about the COM of a thin cylinder lying along the local y axis."""
    axial = 0.5 * mass * radius**2
    transverse = mass * (3 * radius**2 + length**2) / 12.0
    return ((transverse, 0.0, 0.0), (0.0, axial, 0.0), (0.0, 0.0, transverse))


def pendulum(mass=1.0, com_distance=1.0, inertia=0.1, gravity=DEFAULT_GRAVITY):
    """Planar pendulum about z; theta = 0 hangs straight down along -y."""
    I = ((inertia, 0.0, 0.0), (0.0, inertia, 0.0), (0.0, 0.0, inertia))
    return KinematicChain(
        (Joint(0, None, REVOLUTE, mass=mass, com=(0.0, -com_distance, 0.0), inertia=I, name="pivot"),),
        gravity=gravity,
    )


def double_pendulum(m1=1.0, m2=1.0, l1=1.0, lc1=0.5, lc2=0.5, I1=0.1, I2=0.1, gravity=DEFAULT_GRAVITY):
    """Planar double pendulum about z, both angles measured from the downward vertical."""
    def diag(v):
        return ((v, 0.0, 0.0), (0.0, v, 0.0), (0.0, 0.0, v))

    return KinematicChain(
        (
            Joint(0, None, REVOLUTE, mass=m1, com=(0.0, -lc1, 0.0), inertia=diag(I1), name="shoulder"),
            Joint(1, 0, REVOLUTE, offset=(0.0, -l1, 0.0), mass=m2, com=(0.0, -lc2, 0.0), inertia=diag(I2), name="elbow"),
        ),
        gravity=gravity,
    )


def leg_chain(gravity=DEFAULT_GRAVITY):
    """Four-joint leg: spherical hip, then knee, ankle and toe hinges about z."""
    thigh, shank, foot, toe = 0.45, 0.42, 0.15, 0.06
    return KinematicChain(
        (
            Joint(0, None, SPHERICAL, mass=8.0, com=(0.0, -thigh / 2, 0.0), inertia=_rod_inertia(8.0, thigh, 0.06), name="hip"),
            Joint(1, 0, REVOLUTE, offset=(0.0, -thigh, 0.0), mass=3.5, com=(0.0, -shank / 2, 0.0),
                  inertia=_rod_inertia(3.5, shank, 0.04), name="knee"),
            Joint(2, 1, REVOLUTE, offset=(0.0, -shank, 0.0), mass=1.0, com=(0.05, -0.03, 0.0),
                  inertia=_rod_inertia(1.0, foot, 0.03), name="ankle"),
            Joint(3, 2, REVOLUTE, offset=(foot, -0.06, 0.0), mass=0.2, com=(toe / 2, 0.0, 0.0),
                  inertia=_rod_inertia(0.2, toe, 0.015), name="toe"),
        ),
        gravity=gravity,
    )


def twist_arm_chain(gravity=(0.0, 0.0, -9.81)):
    """Two-link arm swinging in the horizontal plane with a forearm-twist leaf.

    Joints 1 (shoulder) and 2 (elbow) hinge about z; joint 0 twists the hand
    about the forearm's y axis. The hand is axisymmetric about that axis with
    its COM on it, so its motion produces torque only at joint 0 and the z
    hinges never see it. Gravity defaults to -z, i.e. normal to the plane of
    motion.
    """
    upper, fore = 0.3, 0.28
    return KinematicChain(
        (
            Joint(0, 2, REVOLUTE, offset=(0.0, -fore, 0.0), mass=1.0, com=(0.0, 0.0, 0.0),
                  inertia=((0.03, 0.0, 0.0), (0.0, 0.05, 0.0), (0.0, 0.0, 0.03)), axis=(0.0, 1.0, 0.0),
                  name="twist"),
            Joint(1, None, REVOLUTE, mass=2.0, com=(0.0, -upper / 2, 0.0), inertia=_rod_inertia(2.0, upper, 0.04),
                  name="shoulder"),
            Joint(2, 1, REVOLUTE, offset=(0.0, -upper, 0.0), mass=1.2, com=(0.0, -fore / 2, 0.0),
                  inertia=_rod_inertia(1.2, fore, 0.03), name="elbow"),
        ),
        gravity=gravity,
    )
