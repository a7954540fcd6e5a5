"""Slow reference implementations the fast code is checked against."""

import itertools

import numpy as np


def brute_assignment_cost(c: np.ndarray) -> float:
    n = c.shape[0]
    return min(sum(c[i][p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def brute_cindex(risk, time, event) -> float:
    """Pairwise Harrell C with ties in risk counted as 1/2."""
    num = den = 0.0
    n = len(time)
    for i in range(n):
        if not event[i]:
            continue
        for j in range(n):
            if time[i] < time[j]:
                den += 1
                if risk[i] > risk[j]:
                    num += 1
                elif risk[i] == risk[j]:
                    num += 0.5
    return num / den


def breslow_nll(X, time, event, theta) -> float:
    """Loop form of the Breslow negative log partial likelihood over n."""
    eta = X @ theta
    total = 0.0
    for i in np.flatnonzero(event):
        at_risk = time >= time[i]
        total += eta[i] - np.log(np.sum(np.exp(eta[at_risk])))
    return -total / len(time)


def kabsch_oracle(M, F):
    """Horn's quaternion solution, an independent closed form."""
    mc, fc = M.mean(0), F.mean(0)
    S = (M - mc).T @ (F - fc)
    Sxx, Sxy, Sxz = S[0]
    Syx, Syy, Syz = S[1]
    Szx, Szy, Szz = S[2]
    N = np.array([
        [Sxx + Syy + Szz, Syz - Szy, Szx - Sxz, Sxy - Syx],
        [Syz - Szy, Sxx - Syy - Szz, Sxy + Syx, Szx + Sxz],
        [Szx - Sxz, Sxy + Syx, -Sxx + Syy - Szz, Syz + Szy],
        [Sxy - Syx, Szx + Sxz, Syz + Szy, -Sxx - Syy + Szz],
    ])
    w, V = np.linalg.eigh(N)
    q0, qx, qy, qz = V[:, -1]
    R = np.array([
        [q0**2 + qx**2 - qy**2 - qz**2, 2 * (qx * qy - q0 * qz), 2 * (qx * qz + q0 * qy)],
        [2 * (qy * qx + q0 * qz), q0**2 - qx**2 + qy**2 - qz**2, 2 * (qy * qz - q0 * qx)],
        [2 * (qz * qx - q0 * qy), 2 * (qz * qy + q0 * qx), q0**2 - qx**2 - qy**2 + qz**2],
    ])
    return R, fc - R @ mc


def exhaustive_best_subset(deviance_of, p: int, s: int):
    best = min(itertools.combinations(range(p), s), key=lambda sub: (deviance_of(sub), sub))
    return best, deviance_of(best)
