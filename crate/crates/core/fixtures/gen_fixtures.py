#!/usr/bin/env python3
"""Regenerates the scenario fixtures in this directory.

Hand poses are authored in the robot base frame and converted to the camera
frame with numpy/scipy, so the stored streams are independent of the Rust
pose code. Run from any directory: python3 gen_fixtures.py
"""

from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation as R

OUT = Path(__file__).resolve().parent

FX, FY, CX, CY = 615.0, 615.0, 320.0, 240.0
RATE = 30.0

# Camera across the table at x = 1.3 m, looking back along -x, pitched 35 deg down.
PITCH = np.deg2rad(35.0)
forward = np.array([-np.cos(PITCH), 0.0, -np.sin(PITCH)])
right = np.array([0.0, 1.0, 0.0])
down = np.cross(forward, right)
R_B_C = np.column_stack([right, down, forward])
T_B_C = np.eye(4)
T_B_C[:3, :3] = R_B_C
T_B_C[:3, 3] = [1.3, 0.0, 0.75]

# Palm up, fingers pointing along base -y.
R_B_H = R.from_euler("z", -90.0, degrees=True).as_matrix()

VOLUME = ([0.35, -0.3, 0.15], [0.75, 0.3, 0.55])
STATIC_POSE = [0.5, 0.0, 0.4]


def wxyz(rot):
    x, y, z, w = R.from_matrix(rot).as_quat()
    q = np.array([w, x, y, z])
    if q[0] < 0 or (q[0] == 0 and q[np.nonzero(q)[0][0]] < 0):
        q = -q
    return [float(c) + 0.0 for c in q]


def hand_base(p, rot=R_B_H):
    T = np.eye(4)
    T[:3, :3] = rot
    T[:3, 3] = p
    return T


def in_camera(T_B_H):
    return np.linalg.inv(T_B_C) @ T_B_H


def fmt(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(fmt(x) for x in v) + "]"
    if isinstance(v, str):
        return f'"{v}"'
    return repr(float(v))


def pose_record(t, T_C_H, repeat_until=None):
    lines = ["[[hand.samples]]", f"t = {fmt(t)}", f"position = {fmt(T_C_H[:3, 3])}",
             f"quaternion = {fmt(wxyz(T_C_H[:3, :3]))}"]
    if repeat_until is not None:
        lines.append(f"repeat = {{ until = {fmt(repeat_until)}, rate_hz = {fmt(RATE)} }}")
    return "\n".join(lines)


def pixel_record(t, T_C_H):
    x, y, z = T_C_H[:3, 3]
    u = FX * x / z + CX
    v = FY * y / z + CY
    return "\n".join(["[[hand.samples]]", f"t = {fmt(t)}", f"pixel = {fmt([u, v])}", f"depth = {fmt(z)}",
                      f"quaternion = {fmt(wxyz(T_C_H[:3, :3]))}"])


def header(sid, description, volume=VOLUME, noise=(0.0, 0.0, 0.0), seed=7, smoothing_alpha=0.8,
           duration=8.0, release=6.0, planner_extra=""):
    tq = wxyz(R_B_C)
    return f"""# Generated by gen_fixtures.py; edit the generator, not this file.
id = "{sid}"
description = "{description}"
task = "MugDrink"
duration = {fmt(duration)}
grasp_catalog = "../data/grasp_catalog.toml"
robot = "panda"

[camera]
fx = {fmt(FX)}
fy = {fmt(FY)}
cx = {fmt(CX)}
cy = {fmt(CY)}

[calibration]
position = {fmt(T_B_C[:3, 3])}
quaternion = {fmt(tq)}

[planner]
loop_rate = {fmt(RATE)}{planner_extra}
static_pose = {{ position = {fmt(STATIC_POSE)}, quaternion = [1.0, 0.0, 0.0, 0.0] }}
handover_volume = {{ min = {fmt(volume[0])}, max = {fmt(volume[1])} }}

[noise]
position_sigma = {fmt(noise[0])}
rotation_sigma = {fmt(noise[1])}
dropout_prob = {fmt(noise[2])}
rng_seed = {seed}

[smoothing]
kind = "exponential_ma"
alpha = {fmt(smoothing_alpha)}

[[events]]
t = 0.2
kind = "object_in_gripper"

[[events]]
t = {fmt(release)}
kind = "release"

[hand]
encoding = "{{encoding}}"
"""


def write(name, text):
    (OUT / name).write_text(text)
    print("wrote", name)


def stationary():
    h = header("stationary_hand_mug_drink", "hand held still, palm up, inside the handover volume",
               noise=(0.0, 0.0, 0.1)).replace("{encoding}", "pose")
    T = in_camera(hand_base([0.55, 0.0, 0.30]))
    write("stationary_hand_mug_drink.toml", h + "\n" + pose_record(0.0, T, repeat_until=8.0) + "\n")


def step():
    h = header("step_moving_hand", "hand jumps 10 cm along y at t = 1.0 s, during the approach",
               noise=(0.001, 0.005, 0.05), seed=11).replace("{encoding}", "pose")
    a = in_camera(hand_base([0.55, -0.05, 0.30]))
    b = in_camera(hand_base([0.55, 0.05, 0.30]))
    body = pose_record(0.0, a, repeat_until=29.0 / RATE) + "\n\n" + pose_record(1.0, b, repeat_until=8.0)
    write("step_moving_hand.toml", h + "\n" + body + "\n")


def out_of_volume():
    h = header("out_of_volume_hand", "hand held above the handover volume", noise=(0.001, 0.005, 0.05),
               seed=13).replace("{encoding}", "pose")
    T = in_camera(hand_base([0.55, 0.0, 0.70]))
    write("out_of_volume_hand.toml", h + "\n" + pose_record(0.0, T, repeat_until=8.0) + "\n")


def unreachable():
    vol = ([0.35, -0.3, 0.15], [1.4, 0.3, 0.55])
    h = header("unreachable_hand", "hand inside an enlarged volume but beyond the arm's reach", volume=vol,
               noise=(0.001, 0.005, 0.05), seed=17).replace("{encoding}", "pose")
    T = in_camera(hand_base([1.25, 0.0, 0.30]))
    write("unreachable_hand.toml", h + "\n" + pose_record(0.0, T, repeat_until=8.0) + "\n")


def circling_hand(t):
    """Hand drifting on a 4 cm circle with a slow wrist roll."""
    w = 2.0 * np.pi / 4.0
    p = [0.55 + 0.04 * np.cos(w * t), 0.04 * np.sin(w * t), 0.30 + 0.01 * np.sin(2 * w * t)]
    rot = R.from_euler("zx", [-90.0, 10.0 * np.sin(w * t)], degrees=True).as_matrix()
    return hand_base(p, rot)


def cross_encoding():
    times = [k / RATE for k in range(0, int(3.0 * RATE) + 1)]
    for enc, rec in (("pose", pose_record), ("pixel_depth", pixel_record)):
        name = f"cross_encoding_{'pose' if enc == 'pose' else 'pixel'}"
        h = header(name, f"circling hand, {enc} encoding", duration=3.0, release=2.5,
                   planner_extra="\nreplan_pos_threshold = inf\nreplan_rot_threshold = inf").replace("{encoding}", enc)
        body = "\n\n".join(rec(t, in_camera(circling_hand(t))) for t in times)
        write(f"{name}.toml", h + "\n" + body + "\n")


def alpha_shrink():
    # A wide start arc leaves the reachable workspace; shrinking it brings the path back.
    h = header("alpha_shrink", "initial start tangent overshoots the workspace", noise=(0.0, 0.0, 0.0),
               planner_extra="\nalpha_s = 0.9\nalpha_a = 0.1").replace("{encoding}", "pose")
    T = in_camera(hand_base([0.55, 0.0, 0.30]))
    write("alpha_shrink.toml", h + "\n" + pose_record(0.0, T, repeat_until=8.0) + "\n")


if __name__ == "__main__":
    stationary()
    step()
    out_of_volume()
    unreachable()
    cross_encoding()
    alpha_shrink()
