"""Frame-by-frame coupled SQP retargeting of two robots.

Each frame minimizes, over both robots jointly,

    w_self * (sum ||L(p) - L(p_ind)||^2 + lambda_rot * sum ||log(R_ref^T R)||^2)
  + w_inter * sum_ij omega_ij ||(p_i - p_j) - (p_i^uni - p_j^uni)||^2
  + w_anchor * ||pelvis - anchor||^2
  + w_reg * ||q - q_prev||^2

subject to joint limits, linearized capsule non-penetration, foot stick rows
and a per-component trust region. The objective is a sum of squared
residuals; the QP uses its Gauss-Newton model.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .collision import PENETRATION_TOL, collision_rows, inter_robot_signed, self_collision_pairs
from .mesh import MeshConfig, extract_priors, inter_edges_from_points, make_topology
from .motion_io import RobotTrajectory, build_manifolds, config_hash, estimate_height
from .qp import QPSubproblem, solve_qp
from .robot import forward_kinematics, nominal_configuration, orientation_error_jacobian, point_jacobian
from .rotations import frame_from_vectors, right_jacobian_inv

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    w_self: float = 2.0
    w_inter: float = 10.0
    w_reg: float = 0.1
    lambda_rot: float = 0.1
    w_anchor: float = 1.0
    delta: float = 0.05             # rad (and m for root translation) per iteration
    eps_safe: float = 0.005         # m clearance kept by collision rows
    eps_stick: float = 0.005        # m per iteration for contacting feet
    sqp_iters_per_frame: int = 3
    init_iters: int = 60            # iterations spent reaching frame 0 from the nominal pose
    qp_tolerance: float = 1e-9
    step_tolerance: float = 1e-5
    collision_margin: float = 0.10  # m; rows only for pairs closer than this
    collisions: bool = True
    self_collision: bool = False
    foot_contact_height: float = 0.02  # m above the clip's lowest foot
    foot_contact_speed: float = 0.2    # m/s
    l2_trust_region: bool = False
    line_search_steps: int = 10
    height_estimator: str = "head_foot"

    def __post_init__(self):
        for name in ("w_self", "w_inter", "w_reg", "lambda_rot", "w_anchor"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.sqp_iters_per_frame < 1:
            raise ValueError("sqp_iters_per_frame must be at least 1")
        if not self.w_reg > 0:
            raise ValueError("w_reg must be positive to keep the QP strictly convex")

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class FrameTargets:
    lap_ref: np.ndarray                 # (2, K, 3)
    rot_targets: list                   # per agent: {link index: R}
    anchor: np.ndarray                  # (2, 3)
    inter: object                       # InterEdges
    inter_ref: np.ndarray               # (m, 3)
    foot_contact: np.ndarray            # (2, n_feet) bool


class Problem:
    """Static data shared by every frame: specs, topology, index maps, weights."""

    def __init__(self, specs, config=SolverConfig(), mesh=MeshConfig()):
        self.specs = tuple(specs)
        self.config = config
        self.mesh = mesh
        for s in self.specs:
            missing = [v for v in mesh.vertices if v not in s.keypoints]
            if missing:
                raise KeyError(f"robot {s.name!r} lacks keypoints {missing}")
        self.topology = make_topology(mesh)
        self.lap = self.topology.laplacian_matrix()
        self.kp_index = [np.array([s.keypoint_names.index(v) for v in mesh.vertices]) for s in self.specs]
        self.offsets = (0, self.specs[0].n_dof)
        self.dim = self.specs[0].n_dof + self.specs[1].n_dof
        self.pelvis = [s.keypoint_names.index("pelvis") for s in self.specs]
        self.key_links = [[s.link_index(l) for l in s.key_links] for s in self.specs]
        self.feet = [[s.keypoint_names.index(f) for f in s.feet] for s in self.specs]
        self.self_pairs = [self_collision_pairs(s) for s in self.specs]
        # nominal frames for orientation targets
        self.nominal = []
        for s in self.specs:
            fk = forward_kinematics(s, nominal_configuration(s))
            kp = {n: fk.keypoints[i] for i, n in enumerate(s.keypoint_names)}
            frames = {}
            for link in s.key_links:
                F = orientation_frame(s.orientation_frames[link], kp)
                frames[s.link_index(link)] = (F, fk.link_rot[s.link_index(link)])
            self.nominal.append(frames)

    # -- residuals ----------------------------------------------------

    def residuals(self, configs, targets, prev, jacobian=True):
        """Stacked weighted residual vector r (objective = r.r) and optionally dr/dx."""
        c = self.config
        fks = [forward_kinematics(s, q) for s, q in zip(self.specs, configs)]
        res, jac = [], []
        Jkp = []
        for k, (s, fk) in enumerate(zip(self.specs, fks)):
            off = self.offsets[k]
            X = fk.keypoints[self.kp_index[k]]
            if jacobian:
                Jk = np.array([point_jacobian(s, fk, s.keypoints[s.keypoint_names[i]][0], fk.keypoints[i])
                               for i in self.kp_index[k]])
                Jkp.append(Jk)
            sw = np.sqrt(c.w_self)
            res.append(sw * (self.lap @ X - targets.lap_ref[k]).ravel())
            if jacobian:
                J = np.zeros((X.size, self.dim))
                J[:, off:off + s.n_dof] = sw * np.einsum("ij,jab->iab", self.lap, Jk).reshape(-1, s.n_dof)
                jac.append(J)
            sr = np.sqrt(c.w_self * c.lambda_rot)
            for link, R_ref in targets.rot_targets[k].items():
                e, Je = orientation_error_jacobian(s, fk, link, R_ref)
                res.append(sr * e)
                if jacobian:
                    J = np.zeros((3, self.dim))
                    J[:, off:off + s.n_dof] = sr * Je
                    jac.append(J)
            sa = np.sqrt(c.w_anchor)
            p = self.pelvis[k]
            res.append(sa * (fk.keypoints[p] - targets.anchor[k]))
            if jacobian:
                J = np.zeros((3, self.dim))
                J[:, off:off + s.n_dof] = sa * point_jacobian(s, fk, s.keypoints["pelvis"][0], fk.keypoints[p])
                jac.append(J)
        inter = targets.inter
        if len(inter):
            X0 = fks[0].keypoints[self.kp_index[0]]
            X1 = fks[1].keypoints[self.kp_index[1]]
            wsq = np.sqrt(c.w_inter * inter.weight)[:, None]
            res.append((wsq * ((X0[inter.i] - X1[inter.j]) - targets.inter_ref)).ravel())
            if jacobian:
                J = np.zeros((len(inter), 3, self.dim))
                n0 = self.specs[0].n_dof
                J[:, :, :n0] = wsq[:, :, None] * Jkp[0][inter.i]
                J[:, :, n0:] = -wsq[:, :, None] * Jkp[1][inter.j]
                jac.append(J.reshape(-1, self.dim))
        sg = np.sqrt(c.w_reg)
        for k in range(2):
            d = configs[k].difference(prev[k])
            res.append(sg * d)
            if jacobian:
                J = np.zeros((len(d), self.dim))
                off = self.offsets[k]
                J[:, off:off + len(d)] = sg * np.eye(len(d))
                J[3:6, off + 3:off + 6] = sg * right_jacobian_inv(-d[3:6])
                jac.append(J)
        r = np.concatenate(res)
        return (r, np.vstack(jac), fks) if jacobian else (r, None, fks)

    def objective(self, configs, targets, prev):
        r, _, _ = self.residuals(configs, targets, prev, jacobian=False)
        return float(r @ r)

    def assemble_objective(self, configs, targets, prev):
        """Gauss-Newton QP model (H, g) of the frame objective at `configs`."""
        r, J, fks = self.residuals(configs, targets, prev)
        H = 2.0 * J.T @ J
        H = 0.5 * (H + H.T)
        return H, 2.0 * J.T @ r, float(r @ r), fks

    def assemble_constraints(self, configs, fks, targets, eps_safe=None, hold=True):
        """Box bounds (limits and trust region) plus collision and foot rows."""
        c = self.config
        eps_safe = c.eps_safe if eps_safe is None else eps_safe
        lb, ub = [], []
        for s, q in zip(self.specs, configs):
            if np.any(q.q < s.q_min) or np.any(q.q > s.q_max):
                log.warning("configuration outside joint limits; projecting")
                q.q = s.clamp(q.q)
            lb.append(np.concatenate([np.full(6, -c.delta), np.maximum(s.q_min - q.q, -c.delta)]))
            ub.append(np.concatenate([np.full(6, c.delta), np.minimum(s.q_max - q.q, c.delta)]))
        rows, lo, hi, kinds = [], [], [], []
        if c.collisions:
            cr = collision_rows(self.specs, fks, self.offsets, self.dim, eps_safe, c.collision_margin,
                                c.self_collision, self.self_pairs, hold=hold)
            rows.extend(cr.A)
            lo.extend(cr.lower)
            hi.extend([np.inf] * len(cr.lower))
            kinds.extend(["collision"] * len(cr.lower))
        for k, s in enumerate(self.specs):
            for f, kp in enumerate(self.feet[k]):
                if not targets.foot_contact[k, f]:
                    continue
                Jf = point_jacobian(s, fks[k], s.keypoints[s.keypoint_names[kp]][0], fks[k].keypoints[kp])
                for axis in range(3):
                    row = np.zeros(self.dim)
                    row[self.offsets[k]:self.offsets[k] + s.n_dof] = Jf[axis]
                    rows.append(row)
                    lo.append(-c.eps_stick)
                    hi.append(c.eps_stick)
                    kinds.append("foot")
        A = np.array(rows).reshape(-1, self.dim)
        return A, np.array(lo), np.array(hi), np.concatenate(lb), np.concatenate(ub), kinds

    def clearance(self, fks):
        return float(inter_robot_signed(self.specs[0], fks[0], self.specs[1], fks[1]).min())

    def penetration(self, fks):
        return max(0.0, -self.clearance(fks))

    def restore_clearance(self, configs, targets, prev):
        """Push capsule pairs closer than eps_safe/2 back toward eps_safe.

        Runs before a frame's SQP iterations so contacting pairs keep some
        slack; without it, holding a pair at zero clearance leaves no room for
        curvature and the line search stalls. Only clearance has to improve.
        """
        c = self.config
        fks = [forward_kinematics(s, q) for s, q in zip(self.specs, configs)]
        d0 = self.clearance(fks)
        if not c.collisions or d0 >= 0.5 * c.eps_safe:
            return configs, None, 0.0
        H, g, _, _ = self.assemble_objective(configs, targets, prev)
        A, lo, hi, lb, ub, _ = self.assemble_constraints(configs, fks, targets, hold=False)
        res = solve_qp(QPSubproblem(H, g, A, lo, hi, lb, ub), tol=c.qp_tolerance)
        if not res.ok:
            return configs, "restore_failed", 0.0
        alpha = 1.0
        for _ in range(c.line_search_steps):
            trial = self._retract(configs, alpha * res.x)
            d1 = self.clearance([forward_kinematics(s, q) for s, q in zip(self.specs, trial)])
            if d1 > d0 and -d1 <= max(-d0, 0.1 * PENETRATION_TOL):
                return trial, "restored", float(np.max(np.abs(alpha * res.x)))
            alpha *= 0.5
        return configs, "restore_failed", 0.0

    # -- SQP ---------------------------------------------------------

    def sqp_step(self, configs, targets, prev):
        """One linearize-solve-line-search step. Returns (new configs, info)."""
        c = self.config
        H, g, f0, fks = self.assemble_objective(configs, targets, prev)
        pen0 = self.penetration(fks) if c.collisions else 0.0
        info = {"objective_before": f0, "flags": []}
        A, lo, hi, lb, ub, kinds = self.assemble_constraints(configs, fks, targets)
        res = solve_qp(QPSubproblem(H, g, A, lo, hi, lb, ub), tol=c.qp_tolerance)
        iters = res.iterations
        if not res.ok and c.collisions:
            info["flags"].append("relaxed_eps_safe")
            A, lo, hi, lb, ub, kinds = self.assemble_constraints(configs, fks, targets, eps_safe=0.0)
            res = solve_qp(QPSubproblem(H, g, A, lo, hi, lb, ub), tol=c.qp_tolerance)
            iters += res.iterations
        if not res.ok and c.collisions:
            # elastic mode: penetrating pairs become stiff penalties
            info["flags"].append("elastic")
            kinds = np.array(kinds)
            soft = (kinds == "collision") & (lo > 0)
            mu = 1e3
            H = H + 2 * mu * A[soft].T @ A[soft]
            g = g - 2 * mu * A[soft].T @ lo[soft]
            keep = ~soft
            res = solve_qp(QPSubproblem(H, g, A[keep], lo[keep], hi[keep], lb, ub), tol=c.qp_tolerance)
            iters += res.iterations
        info["qp_status"] = res.status
        info["qp_iterations"] = iters
        if not res.ok:
            info["flags"].append("qp_failed")
            info["objective_after"] = f0
            return configs, 0.0, info
        dx = res.x
        if c.l2_trust_region:
            nrm = np.linalg.norm(dx)
            if nrm > c.delta:
                dx = dx * (c.delta / nrm)
        viol = 0.0
        if len(lo):
            ax = A @ dx
            viol = float(max(np.max(lo - ax, initial=0.0), np.max(ax - hi, initial=0.0)))
        viol = max(viol, float(np.max(lb - dx, initial=0.0)), float(np.max(dx - ub, initial=0.0)))
        info["max_violation"] = viol
        info["model_value"] = float(0.5 * dx @ H @ dx + g @ dx)

        alpha = 1.0
        for _ in range(c.line_search_steps):
            trial = self._retract(configs, alpha * dx)
            r, _, tfks = self.residuals(trial, targets, prev, jacobian=False)
            f1 = float(r @ r)
            if c.collisions:
                pen1 = self.penetration(tfks)
                if pen0 <= PENETRATION_TOL * 0.1:
                    ok = pen1 <= PENETRATION_TOL * 0.1 and f1 <= f0
                else:
                    ok = pen1 < pen0
            else:
                ok = f1 <= f0
            if ok:
                info["objective_after"] = f1
                info["step"] = alpha
                return trial, float(np.max(np.abs(alpha * dx))), info
            alpha *= 0.5
        info["flags"].append("line_search_failed")
        info["objective_after"] = f0
        info["step"] = 0.0
        return configs, 0.0, info

    def _retract(self, configs, dx):
        out = []
        for k, (s, q) in enumerate(zip(self.specs, configs)):
            d = dx[self.offsets[k]:self.offsets[k] + s.n_dof]
            nq = q.retract(d)
            nq.q = s.clamp(nq.q)
            out.append(nq)
        return out

    def solve_frame(self, configs, targets, prev, iters, prox=False):
        """Run up to `iters` steps; `prox` moves the regularization anchor each step.

        A clearance restoration, when needed, uses up one of the steps. The
        objective history starts after it, so it is non-increasing unless `prox`.
        """
        qp_iters = 0
        flags = []
        steps = []
        viol = 0.0
        configs, note, step = self.restore_clearance(configs, targets, prev)
        if note:
            flags.append(note)
        if note == "restored":
            steps.append(step)
            iters -= 1
        history = [self.objective(configs, targets, prev)]
        for _ in range(iters):
            configs, step, info = self.sqp_step(configs, targets, prev)
            history.append(info["objective_after"])
            steps.append(step)
            qp_iters += info["qp_iterations"]
            flags.extend(info["flags"])
            viol = max(viol, info.get("max_violation", 0.0))
            if prox:
                prev = [q.copy() for q in configs]
            if step < self.config.step_tolerance:
                break
        return configs, {"objective_history": history, "qp_iterations": qp_iters, "steps": steps,
                         "flags": sorted(set(flags)), "max_violation": viol}


def orientation_frame(rule, kp):
    aim = kp[rule["aim"][1]] - kp[rule["aim"][0]]
    hint = (0.0, 0.0, 1.0) if rule["hint"] == "up" else kp[rule["hint"][1]] - kp[rule["hint"][0]]
    return frame_from_vectors(aim, hint)


def detect_foot_contacts(p_ind, names, feet, dt, height=0.02, speed=0.2):
    """(T, 2, n_feet) flags: foot near the clip's floor and nearly still."""
    idx = [names.index(f) for f in feet]
    P = p_ind[:, :, idx]                         # (T, 2, F, 3)
    floor = P[..., 2].min(axis=(0, 2))           # per agent
    low = (P[..., 2] - floor[None, :, None]) < height
    v = np.zeros(P.shape[:3])
    if P.shape[0] > 1:
        v[1:] = np.linalg.norm(np.diff(P, axis=0), axis=-1) / dt
        v[0] = v[1]
    return low & (v < speed)


def frame_targets(problem, ref, t, foot_contact):
    """Per-frame references from the dual manifolds."""
    names = ref.names
    vidx = [names.index(v) for v in problem.mesh.vertices]
    lap_ref = np.stack([problem.lap @ ref.p_ind[t, k][vidx] for k in range(2)])
    rot = []
    for k, s in enumerate(problem.specs):
        kp = {n: ref.p_ind[t, k, i] for i, n in enumerate(names)}
        tk = {}
        for link, (F_nom, R_nom) in problem.nominal[k].items():
            F = orientation_frame(s.orientation_frames[s.links[link]], kp)
            tk[link] = F @ F_nom.T @ R_nom
        rot.append(tk)
    pel = names.index("pelvis")
    anchor = np.stack([np.array([ref.p_uni[t, k, pel, 0], ref.p_uni[t, k, pel, 1], ref.p_ind[t, k, pel, 2]])
                       for k in range(2)])
    P = ref.p_uni[t][:, vidx]
    m = problem.mesh
    inter = inter_edges_from_points(P[0], P[1], m.r_inter, m.omega_max, m.gamma)
    return FrameTargets(lap_ref, rot, anchor, inter, P[0, inter.i] - P[1, inter.j], foot_contact[t])


def robot_height(spec, strategy="head_foot"):
    fk = forward_kinematics(spec, nominal_configuration(spec))
    return estimate_height(fk.keypoints[None], spec.keypoint_names, strategy)


def initial_configs(problem, targets):
    out = []
    for k, s in enumerate(problem.specs):
        pel_link = s.link_index("pelvis")
        R = targets.rot_targets[k].get(pel_link, np.eye(3))
        out.append(nominal_configuration(s, targets.anchor[k], R))
    return out


def retarget_clip(clip, specs, config=SolverConfig(), mesh=MeshConfig(), progress=None):
    """Retarget a two-agent clip; returns a RobotTrajectory with priors attached."""
    problem = Problem(specs, config, mesh)
    h_robot = robot_height(specs[0], config.height_estimator)
    ref = build_manifolds(clip, h_robot, config.height_estimator)
    feet = detect_foot_contacts(ref.p_ind, ref.names, specs[0].feet, clip.frame_dt,
                                config.foot_contact_height, config.foot_contact_speed)
    T = clip.n_frames
    root_pos = np.zeros((T, 2, 3))
    root_quat = np.zeros((T, 2, 4))
    qs = [np.zeros((T, s.n_joints)) for s in specs]
    diagnostics = []
    configs = None
    for t in range(T):
        targets = frame_targets(problem, ref, t, feet)
        if t == 0:
            configs = initial_configs(problem, targets)
            configs, diag = problem.solve_frame(configs, targets, [q.copy() for q in configs],
                                                config.init_iters, prox=True)
        else:
            prev = [q.copy() for q in configs]
            configs, diag = problem.solve_frame(configs, targets, prev, config.sqp_iters_per_frame)
        fks = [forward_kinematics(s, q) for s, q in zip(specs, configs)]
        diag.update({
            "frame": t,
            "objective": diag["objective_history"][-1] if diag["objective_history"] else None,
            "penetration": problem.penetration(fks),
            "active_inter_edges": len(targets.inter),
            "foot_contacts": int(targets.foot_contact.sum()),
        })
        if "qp_failed" in diag["flags"]:
            log.warning("frame %d: QP failed, keeping the previous pose", t)
        diagnostics.append(diag)
        for k in range(2):
            root_pos[t, k] = configs[k].root_pos
            root_quat[t, k] = configs[k].root_quat
            qs[k][t] = configs[k].q
        if progress is not None:
            progress(t, T)
    traj = RobotTrajectory(
        robot_ids=(specs[0].name, specs[1].name), frame_dt=clip.frame_dt,
        root_pos=root_pos, root_quat=root_quat, q=tuple(qs), diagnostics=diagnostics,
        metadata={"solver_config_hash": config_hash({"solver": config.to_dict(), "mesh": mesh.to_dict()}),
                  "solver_config": config.to_dict(), "mesh_config": mesh.to_dict(),
                  "h_robot_manifold": h_robot, "s_individual": ref.s_individual.tolist(),
                  "s_unified": ref.s_unified},
    )
    traj.priors = extract_priors(ref, mesh, traj, specs)
    return traj, ref
