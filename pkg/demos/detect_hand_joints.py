"""
Finding joint windows in a hand silhouette
==========================================

Binarize a synthetic hand, trace its outline, fit one midline per finger
and propose a window at each dark joint band.
"""

import numpy as np

from jsnpoc.detection import detect_joints
from jsnpoc.phantom import render_hand_silhouette

img, truth = render_hand_silhouette(5, seed=3, rotation=np.radians(6))
det = detect_joints(img)

print("outline vertices:", len(det.polygon))
for finger, true_angle in zip(det.fingers, truth.angles):
    err = np.degrees(finger.angle - true_angle)
    tag = " (thumb)" if finger.is_thumb else ""
    print(f"finger {finger.label}{tag}: angle {np.degrees(finger.angle):+6.2f} deg, error {err:+.2f}")

print("\nproposed windows:")
for p in det.proposals:
    d = p.to_dict()
    x, y = d["center"]
    print(f"  finger {d['finger']} {d['joint_kind']:>3} at ({x:6.1f}, {y:6.1f}), score {d['score']:.3f}")
