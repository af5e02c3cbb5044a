"""Plain-text file formats for chains, motion, torques and embeddings.

chain (JSON)::

    {"gravity": [0, -9.81, 0],
     "joints": [{"id": 0, "parent": null, "kind": "revolute", "axis": [0, 0, 1],
                 "offset": [0, 0, 0], "mass": 1.0, "com": [0, -0.5, 0],
                 "inertia": [[...], [...], [...]], "name": "hip"}, ...]}

motion::

    # n=<coordinates> dt=<seconds>
    <frame> <q_1> ... <q_n>

torques (9 significant digits, N m)::

    # frames=<T> joints=<J>
    <frame> <joint> <tx> <ty> <tz>

embeddings::

    # d=<width>
    <sequence id> <label or -> <v_1> ... <v_d>
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .dynamics import Joint, KinematicChain, MotionSequence, TorqueSequence


class FormatError(ValueError):
    pass


def atomic_write_text(path, text):
    """Write via a temporary file in the same directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _parse_header(line, keys):
    if not line.startswith("#"):
        raise FormatError(f"malformed header: {line.strip()!r}")
    fields = {}
    for tok in line[1:].split():
        if "=" not in tok:
            raise FormatError(f"malformed header token {tok!r}")
        k, v = tok.split("=", 1)
        fields[k] = v
    missing = [k for k in keys if k not in fields]
    if missing:
        raise FormatError(f"malformed header: missing {', '.join(missing)}")
    return fields


# ---------------------------------------------------------------------------
# chains
# ---------------------------------------------------------------------------


def chain_to_dict(chain):
    joints = []
    for j in chain.joints:
        joints.append({
            "id": j.id, "parent": j.parent, "kind": j.kind, "name": j.name,
            "axis": list(j.axis), "offset": list(j.offset), "mass": j.mass,
            "com": list(j.com), "inertia": [list(r) for r in j.inertia],
        })
    return {"gravity": list(chain.gravity), "joints": joints}


def chain_from_dict(data):
    joints = []
    for d in data["joints"]:
        joints.append(Joint(
            id=int(d["id"]),
            parent=None if d.get("parent") is None else int(d["parent"]),
            kind=d["kind"],
            offset=tuple(float(x) for x in d.get("offset", (0.0, 0.0, 0.0))),
            mass=float(d["mass"]),
            com=tuple(float(x) for x in d.get("com", (0.0, 0.0, 0.0))),
            inertia=tuple(tuple(float(x) for x in row) for row in d["inertia"]),
            axis=tuple(float(x) for x in d.get("axis", (0.0, 0.0, 1.0))),
            name=d.get("name", ""),
        ))
    kwargs = {}
    if "gravity" in data:
        kwargs["gravity"] = tuple(float(g) for g in data["gravity"])
    return KinematicChain(tuple(joints), **kwargs)


def write_chain(path, chain):
    atomic_write_text(path, json.dumps(chain_to_dict(chain), indent=2) + "\n")


def read_chain(path):
    with open(path) as fh:
        return chain_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# motion
# ---------------------------------------------------------------------------


def write_motion(path, seq):
    n = seq.frames.shape[1]
    lines = [f"# n={n} dt={seq.dt!r}"]
    for t, row in enumerate(seq.frames):
        lines.append(" ".join([str(t)] + [repr(float(v)) for v in row]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def resample(seq, n_frames):
    """Uniformly resample to ``n_frames`` by linear interpolation in time."""
    T = seq.n_frames
    if n_frames < 2:
        raise FormatError("target frame count must be >= 2")
    if n_frames == T:
        return MotionSequence(seq.frames.copy(), seq.dt)
    src = np.arange(T, dtype=float)
    dst = np.linspace(0.0, T - 1.0, n_frames)
    frames = np.column_stack([np.interp(dst, src, seq.frames[:, k]) for k in range(seq.frames.shape[1])])
    return MotionSequence(frames, seq.dt * (T - 1) / (n_frames - 1))


def ingest_motion_file(path, n_frames=None):
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise FormatError("malformed header: empty file")
    head = _parse_header(lines[0], ("n", "dt"))
    try:
        n, dt = int(head["n"]), float(head["dt"])
    except ValueError as exc:
        raise FormatError(f"malformed header: {exc}") from None
    if not dt > 0:
        raise FormatError("dt must be positive")
    rows = []
    for k, ln in enumerate(lines[1:]):
        parts = ln.split()
        if len(parts) != n + 1:
            raise FormatError(f"record {k}: expected {n} coordinates, found {len(parts) - 1}")
        rows.append([float(v) for v in parts[1:]])
    seq = MotionSequence(np.array(rows, dtype=float).reshape(len(rows), n), dt)
    if n_frames is not None:
        seq = resample(seq, n_frames)
    return seq


# ---------------------------------------------------------------------------
# torques and embeddings
# ---------------------------------------------------------------------------


def write_torques(path, ts):
    lines = [f"# frames={ts.n_frames} joints={ts.n_joints}"]
    for t in range(ts.n_frames):
        for k, jid in enumerate(ts.joint_ids):
            x, y, z = ts.tau[t, k]
            lines.append(f"{t} {jid} {x:.9g} {y:.9g} {z:.9g}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_torques(path):
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip()]
    head = _parse_header(lines[0], ("frames", "joints"))
    T, J = int(head["frames"]), int(head["joints"])
    tau = np.zeros((T, J, 3))
    ids = [None] * J
    if len(lines) - 1 != T * J:
        raise FormatError(f"expected {T * J} torque records, found {len(lines) - 1}")
    for k, ln in enumerate(lines[1:]):
        parts = ln.split()
        if len(parts) != 5:
            raise FormatError(f"torque record {k} must have 5 fields")
        t, j = divmod(k, J)
        if int(parts[0]) != t:
            raise FormatError(f"torque record {k}: frame index out of order")
        ids[j] = int(parts[1])
        tau[t, j] = [float(v) for v in parts[2:]]
    return TorqueSequence(tau, tuple(ids))


def write_embeddings(path, ids, vectors, labels=None):
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    lines = [f"# d={vectors.shape[1]}"]
    for k, (sid, v) in enumerate(zip(ids, vectors)):
        lab = "-" if labels is None else str(labels[k])
        lines.append(" ".join([str(sid), lab] + [repr(float(x)) for x in v]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_embeddings(path):
    """Returns (ids, labels or None, vectors)."""
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip()]
    d = int(_parse_header(lines[0], ("d",))["d"])
    ids, labels, rows = [], [], []
    for k, ln in enumerate(lines[1:]):
        parts = ln.split()
        if len(parts) != d + 2:
            raise FormatError(f"embedding record {k}: expected {d} values")
        ids.append(parts[0])
        labels.append(parts[1])
        rows.append([float(x) for x in parts[2:]])
    lab = None if all(x == "-" for x in labels) else labels
    return ids, lab, np.array(rows, dtype=float).reshape(len(rows), d)
