"""Shared test utilities, chiefly finite-difference gradient checking."""

import numpy as np


def central_difference(fn, x, step=1e-4):
    """Full central-difference gradient of a scalar function of one array.

    ``fn`` receives a float64 array and returns a float.  Every entry is
    perturbed by +/- step independently.
    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + step
        f_plus = fn(x)
        flat[i] = saved - step
        f_minus = fn(x)
        flat[i] = saved
        gflat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def central_difference_entries(fn, x, indices, step=1e-4):
    """Central differences of fn at selected entries of x (list of index tuples)."""
    x = np.array(x, dtype=np.float64)
    vals = np.zeros(len(indices))
    for n, idx in enumerate(indices):
        saved = x[idx]
        x[idx] = saved + step
        f_plus = fn(x)
        x[idx] = saved - step
        f_minus = fn(x)
        x[idx] = saved
        vals[n] = (f_plus - f_minus) / (2.0 * step)
    return vals


def relative_error(analytic, numeric):
    """Norm of the difference over the larger of the two norms."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return np.linalg.norm(analytic - numeric) / denom


def sample_indices(shape, count, rng):
    """A reproducible subset of entry indices of an array of the given shape."""
    total = int(np.prod(shape))
    take = min(count, total)
    chosen = rng.choice(total, size=take, replace=False)
    return [np.unravel_index(int(k), shape) for k in chosen]


def random_rotation(rng):
    """Uniform-ish random rotation matrix from a normalized random quaternion."""
    q = rng.normal(size=4)
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def look_at_rotation(center, target, up=(0.0, 1.0, 0.0)):
    """World-to-camera rotation with +z pointing from center toward target."""
    center = np.asarray(center, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - center
    forward = forward / np.linalg.norm(forward)
    right = np.cross(np.asarray(up, dtype=np.float64), forward)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.stack([right, down, forward])


def plane_depth(cam, plane_point, plane_normal, shape):
    """Analytic z-depth raster of an infinite world plane seen by a camera.

    Rays that miss the plane (or hit it behind the camera) get depth 0.
    """
    h, w = shape
    n = np.asarray(plane_normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    origin = cam.center()
    offset = np.dot(np.asarray(plane_point, dtype=np.float64) - origin, n)
    depth = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            d_cam = np.array([(j + 0.5 - cam.cx) / cam.fx,
                              (i + 0.5 - cam.cy) / cam.fy, 1.0])
            d_world = cam.rotation.T @ d_cam
            denom = np.dot(d_world, n)
            if abs(denom) < 1e-12:
                continue
            s = offset / denom
            if s > 0:
                depth[i, j] = s
    return depth
