"""Capsule-capsule signed distances and linearized non-penetration rows.

Every penetration check in the package (solver line search, diagnostics,
contact graph, metrics) goes through :func:`capsule_pair_distances`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .robot import point_jacobian

PENETRATION_TOL = 1e-6
_EPS = 1e-12


@dataclass(frozen=True)
class WorldCapsules:
    a: np.ndarray       # (C, 3)
    b: np.ndarray       # (C, 3)
    radius: np.ndarray  # (C,)
    link: np.ndarray    # (C,) owner link index
    names: tuple[str, ...]


@dataclass(frozen=True)
class CapsulePair:
    a0: np.ndarray
    a1: np.ndarray
    ra: float
    b0: np.ndarray
    b1: np.ndarray
    rb: float


@dataclass(frozen=True)
class CapsuleDistance:
    signed: float
    witness_a: np.ndarray  # closest point on capsule a's axis
    witness_b: np.ndarray
    normal: np.ndarray     # unit, from b toward a

    @property
    def penetration(self):
        return max(0.0, -self.signed)


def world_capsules(spec, fk):
    if not spec.capsules:
        z = np.zeros((0, 3))
        return WorldCapsules(z, z, np.zeros(0), np.zeros(0, dtype=int), ())
    link = np.array([c.link for c in spec.capsules])
    R = fk.link_rot[link]
    p = fk.link_pos[link]
    a = p + np.einsum("cij,cj->ci", R, np.array([c.a for c in spec.capsules]))
    b = p + np.einsum("cij,cj->ci", R, np.array([c.b for c in spec.capsules]))
    return WorldCapsules(a, b, np.array([c.radius for c in spec.capsules]), link,
                         tuple(c.name for c in spec.capsules))


def closest_points(p1, q1, p2, q2):
    """Closest points between segment batches [p1,q1] and [p2,q2], shapes (..., 3).

    Zero-length segments degrade to points. Returns (c1, c2).
    """
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = np.einsum("...i,...i->...", d1, d1)
    e = np.einsum("...i,...i->...", d2, d2)
    f = np.einsum("...i,...i->...", d2, r)
    c = np.einsum("...i,...i->...", d1, r)
    b = np.einsum("...i,...i->...", d1, d2)
    a_deg = a <= _EPS
    e_deg = e <= _EPS
    safe_a = np.where(a_deg, 1.0, a)
    safe_e = np.where(e_deg, 1.0, e)
    denom = a * e - b * b
    par = denom <= _EPS * np.maximum(a * e, _EPS)
    s = np.where(par, 0.0, np.clip((b * f - c * e) / np.where(par, 1.0, denom), 0.0, 1.0))
    t = (b * s + f) / safe_e
    s = np.where(t < 0.0, np.clip(-c / safe_a, 0.0, 1.0), s)
    s = np.where(t > 1.0, np.clip((b - c) / safe_a, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)
    # degenerate segments
    s = np.where(e_deg, np.clip(-c / safe_a, 0.0, 1.0), s)
    t = np.where(e_deg, 0.0, t)
    t = np.where(a_deg, np.clip(f / safe_e, 0.0, 1.0), t)
    s = np.where(a_deg, 0.0, s)
    t = np.where(a_deg & e_deg, 0.0, t)
    par &= ~(a_deg | e_deg)
    if np.any(par):
        # parallel: the minimum sits at an endpoint projected onto the other segment
        zero, one = np.zeros_like(s), np.ones_like(s)
        cs = np.stack([zero, one, np.clip(-c / safe_a, 0, 1), np.clip((b - c) / safe_a, 0, 1)], -1)
        ct = np.stack([np.clip(f / safe_e, 0, 1), np.clip((b + f) / safe_e, 0, 1), zero, one], -1)
        gap = (p1 - p2)[..., None, :] + d1[..., None, :] * cs[..., None] - d2[..., None, :] * ct[..., None]
        k = np.argmin(np.einsum("...ki,...ki->...k", gap, gap), axis=-1)[..., None]
        s = np.where(par, np.take_along_axis(cs, k, -1)[..., 0], s)
        t = np.where(par, np.take_along_axis(ct, k, -1)[..., 0], t)
    return p1 + d1 * s[..., None], p2 + d2 * t[..., None]


def _normals(c1, c2, d1, d2):
    diff = c1 - c2
    dist = np.linalg.norm(diff, axis=-1)
    n = diff / np.where(dist > _EPS, dist, 1.0)[..., None]
    bad = dist <= _EPS
    if np.any(bad):
        # axes intersect: fall back to a deterministic perpendicular direction
        for idx in zip(*np.nonzero(bad)):
            cand = np.cross(d1[idx], d2[idx])
            if np.linalg.norm(cand) < 1e-9:
                cand = np.cross(d1[idx], [0.0, 0.0, 1.0])
            if np.linalg.norm(cand) < 1e-9:
                cand = np.cross(d1[idx], [1.0, 0.0, 0.0])
            if np.linalg.norm(cand) < 1e-9:
                cand = np.array([0.0, 0.0, 1.0])
            n[idx] = cand / np.linalg.norm(cand)
    return n, dist


def capsule_distance(pair):
    """Signed distance between two capsules; negative means penetration depth."""
    c1, c2 = closest_points(pair.a0[None], pair.a1[None], pair.b0[None], pair.b1[None])
    n, dist = _normals(c1, c2, (pair.a1 - pair.a0)[None], (pair.b1 - pair.b0)[None])
    return CapsuleDistance(float(dist[0] - pair.ra - pair.rb), c1[0], c2[0], n[0])


def capsule_pair_distances(ca, cb):
    """All-pairs signed distances between two capsule sets.

    Returns (signed (Ca, Cb), witness_a (Ca, Cb, 3), witness_b, normal).
    """
    A0 = np.broadcast_to(ca.a[:, None], (len(ca.radius), len(cb.radius), 3))
    A1 = np.broadcast_to(ca.b[:, None], A0.shape)
    B0 = np.broadcast_to(cb.a[None], A0.shape)
    B1 = np.broadcast_to(cb.b[None], A0.shape)
    c1, c2 = closest_points(A0, A1, B0, B1)
    n, dist = _normals(c1, c2, A1 - A0, B1 - B0)
    signed = dist - ca.radius[:, None] - cb.radius[None, :]
    return signed, c1, c2, n


def inter_robot_signed(spec_a, fk_a, spec_b, fk_b):
    return capsule_pair_distances(world_capsules(spec_a, fk_a), world_capsules(spec_b, fk_b))[0]


def inter_robot_penetration(spec_a, fk_a, spec_b, fk_b):
    """Largest inter-robot penetration depth in metres (0 when separated)."""
    signed = inter_robot_signed(spec_a, fk_a, spec_b, fk_b)
    return float(max(0.0, -signed.min())) if signed.size else 0.0


def link_contact_matrix(spec_a, fk_a, spec_b, fk_b, eps_contact):
    """Per capsule-bearing link pair: minimal signed distance and contact flag."""
    ca, cb = world_capsules(spec_a, fk_a), world_capsules(spec_b, fk_b)
    signed = capsule_pair_distances(ca, cb)[0]
    la = sorted(set(ca.link.tolist()))
    lb = sorted(set(cb.link.tolist()))
    out = np.full((len(la), len(lb)), np.inf)
    for i, l1 in enumerate(la):
        for j, l2 in enumerate(lb):
            out[i, j] = signed[np.ix_(ca.link == l1, cb.link == l2)].min()
    return ([spec_a.links[l] for l in la], [spec_b.links[l] for l in lb], out, out <= eps_contact)


def self_collision_pairs(spec):
    """Capsule index pairs on non-adjacent bodies of one robot."""
    has_caps = {c.link for c in spec.capsules}
    parent_link = {}
    for jt in spec.joints:
        parent_link[jt.child] = jt.parent

    def body_parent(link):
        l = parent_link.get(link)
        while l is not None and l not in has_caps:
            l = parent_link.get(l)
        return l

    pairs = []
    caps = spec.capsules
    for i in range(len(caps)):
        for j in range(i + 1, len(caps)):
            li, lj = caps[i].link, caps[j].link
            if li == lj or body_parent(li) == lj or body_parent(lj) == li:
                continue
            pairs.append((i, j))
    return pairs


@dataclass(frozen=True)
class CollisionRows:
    A: np.ndarray      # (m, dim)
    lower: np.ndarray  # (m,)
    phi: np.ndarray    # (m,) signed distance at the linearization point
    pairs: list        # (kind, capsule a, capsule b)


def collision_rows(specs, fks, offsets, dim, eps_safe, margin=0.10, include_self=False, self_pairs=None,
                   touch_tol=0.1 * PENETRATION_TOL, hold=True):
    """Linear rows ``A dx >= lower`` keeping capsule pairs apart.

    Row = n^T (J_pa - J_pb) with witness points held fixed. The target
    distance is ``eps_safe`` once clear of it, and the current distance while
    inside the margin band, so a penetration-free point is always feasible.
    Overlaps shallower than `touch_tol` count as touching and are held too.
    With ``hold=False`` every row asks for the full ``eps_safe`` clearance.
    """
    rows, lower, phis, meta = [], [], [], []

    def emit(kind, ka, ia, kb, ib, phi, wa, wb, n):
        spec_a, spec_b = specs[ka], specs[kb]
        Ja = point_jacobian(spec_a, fks[ka], spec_a.capsules[ia].link, wa)
        Jb = point_jacobian(spec_b, fks[kb], spec_b.capsules[ib].link, wb)
        row = np.zeros(dim)
        row[offsets[ka]:offsets[ka] + spec_a.n_dof] += n @ Ja
        row[offsets[kb]:offsets[kb] + spec_b.n_dof] -= n @ Jb
        rows.append(row)
        if not hold:
            lower.append(eps_safe - phi)
        elif -touch_tol <= phi < 0.0:
            lower.append(0.0)
        else:
            lower.append(min(eps_safe, max(phi, 0.0)) - phi)
        phis.append(phi)
        meta.append((kind, ia, ib))

    caps = [world_capsules(s, f) for s, f in zip(specs, fks)]
    signed, wa, wb, n = capsule_pair_distances(caps[0], caps[1])
    for ia, ib in zip(*np.nonzero(signed < margin)):
        emit("inter", 0, ia, 1, ib, signed[ia, ib], wa[ia, ib], wb[ia, ib], n[ia, ib])
    if include_self:
        for k in range(2):
            pairs = self_pairs[k] if self_pairs is not None else self_collision_pairs(specs[k])
            if not pairs:
                continue
            i, j = np.array(pairs).T
            c = caps[k]
            c1, c2 = closest_points(c.a[i], c.b[i], c.a[j], c.b[j])
            nn, dist = _normals(c1, c2, c.b[i] - c.a[i], c.b[j] - c.a[j])
            sd = dist - c.radius[i] - c.radius[j]
            for m in np.nonzero(sd < margin)[0]:
                emit(f"self{k}", k, i[m], k, j[m], sd[m], c1[m], c2[m], nn[m])
    if not rows:
        return CollisionRows(np.zeros((0, dim)), np.zeros(0), np.zeros(0), [])
    return CollisionRows(np.array(rows), np.array(lower), np.array(phis), meta)
