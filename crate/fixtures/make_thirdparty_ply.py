"""Writes thirdparty_sh3.ply: a torus of 800 Gaussians in the layout common
3DGS trainers export (zero normals, degree-3 SH rest coefficients,
unnormalized quaternions)."""
import math
import random
import struct

random.seed(11)
props = (["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
         + [f"f_rest_{i}" for i in range(45)]
         + ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"])
rows = []
n = 800
for k in range(n):
    u = random.uniform(0, 2 * math.pi)
    v = random.uniform(0, 2 * math.pi)
    R, r = 0.7, 0.25
    x = (R + r * math.cos(v)) * math.cos(u)
    y = r * math.sin(v)
    z = (R + r * math.cos(v)) * math.sin(u)
    hue = u / (2 * math.pi)
    col = [0.5 + 0.4 * math.cos(2 * math.pi * (hue + o)) for o in (0, 1 / 3, 2 / 3)]
    dc = [(c - 0.5) / 0.28209479177387814 for c in col]
    rest = [random.gauss(0, 0.05) for _ in range(45)]
    op = random.uniform(1.0, 4.0)
    sc = [math.log(random.uniform(0.03, 0.07)) for _ in range(3)]
    q = [random.gauss(0, 1) for _ in range(4)]
    qn = math.sqrt(sum(a * a for a in q))
    q = [a / qn * random.uniform(0.5, 2.0) for a in q]
    rows.append([x, y, z, 0, 0, 0] + dc + rest + [op] + sc + q)

with open("thirdparty_sh3.ply", "wb") as f:
    f.write(b"ply\nformat binary_little_endian 1.0\n")
    f.write(f"element vertex {n}\n".encode())
    for p in props:
        f.write(f"property float {p}\n".encode())
    f.write(b"end_header\n")
    for row in rows:
        f.write(struct.pack("<%df" % len(props), *row))
