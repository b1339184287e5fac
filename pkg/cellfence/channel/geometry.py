import math

import numpy as np

EPS = 1e-12


def _orientation(a, b, c):
    value = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    if abs(value) < EPS:
        return 0
    return 1 if value > 0 else -1


def _on_segment(a, b, p):
    return (min(a[0], b[0]) - EPS <= p[0] <= max(a[0], b[0]) + EPS
            and min(a[1], b[1]) - EPS <= p[1] <= max(a[1], b[1]) + EPS)


def segments_intersect(p1, p2, q1, q2):
    """True if segment p1-p2 touches or crosses segment q1-q2."""
    o1 = _orientation(p1, p2, q1)
    o2 = _orientation(p1, p2, q2)
    o3 = _orientation(q1, q2, p1)
    o4 = _orientation(q1, q2, p2)

    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and _on_segment(p1, p2, q1):
        return True
    if o2 == 0 and _on_segment(p1, p2, q2):
        return True
    if o3 == 0 and _on_segment(q1, q2, p1):
        return True
    if o4 == 0 and _on_segment(q1, q2, p2):
        return True
    return False


def polygon_edges(vertices):
    n = len(vertices)
    return [(tuple(vertices[i]), tuple(vertices[(i + 1) % n])) for i in range(n)]


def is_simple_polygon(vertices):
    """No two non-adjacent edges intersect."""
    if len(vertices) < 3:
        return False
    edges = polygon_edges(vertices)
    n = len(edges)
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if segments_intersect(*edges[i], *edges[j]):
                return False
    return True


def point_in_polygon(point, vertices):
    """Ray casting; points exactly on an edge count as inside."""
    x, y = point
    inside = False
    for (x1, y1), (x2, y2) in polygon_edges(vertices):
        if _orientation((x1, y1), (x2, y2), (x, y)) == 0 and _on_segment((x1, y1), (x2, y2), (x, y)):
            return True
        if (y1 > y) != (y2 > y):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < x_cross:
                inside = not inside
    return inside


def distance(a, b):
    return math.hypot(b[0] - a[0], b[1] - a[1])


def bearing_deg(origin, target):
    """Angle of target seen from origin, degrees counter-clockwise from +x."""
    return math.degrees(math.atan2(target[1] - origin[1], target[0] - origin[0]))


def normalize_angle_deg(angle):
    return ((angle + 180.0) % 360.0) - 180.0


def polyline_length(points):
    pts = np.asarray(points, dtype=float)
    return float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))


def point_along_polyline(points, fraction):
    """Point at `fraction` of the total length of a polyline, plus the local heading."""
    pts = np.asarray(points, dtype=float)
    seg = np.diff(pts, axis=0)
    lengths = np.hypot(seg[:, 0], seg[:, 1])
    target = np.clip(fraction, 0.0, 1.0) * lengths.sum()
    cumulative = np.concatenate([[0.0], np.cumsum(lengths)])
    index = min(int(np.searchsorted(cumulative, target, side="right")) - 1, len(lengths) - 1)
    local = (target - cumulative[index]) / lengths[index] if lengths[index] > 0 else 0.0
    position = pts[index] + local * seg[index]
    heading = math.atan2(seg[index][1], seg[index][0])
    return (float(position[0]), float(position[1])), heading
