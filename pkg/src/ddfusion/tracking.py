"""Multi-robot target-tracking simulation and Monte Carlo harness.

Ground truth follows the constant-velocity kinematic model; each robot
takes biased relative position measurements of its tracked targets plus a
landmark observation of its own bias.  A centralized information filter
over the full state serves as the consistency reference for the NEES and
minimum-eigenvalue conservativeness metrics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .canonical import min_eigenvalue
from .errors import NegativeInformationError
from .filtering import CommonStructure, LinearDynamics
from .network import Network, Robot
from .scenario import BIAS_DIM, TARGET_DIM, ScenarioConfig


def kinematic_matrices(dt: float):
    """(F, G) of the planar constant-velocity model, state [n, ndot, e, edot]."""
    f = np.array([
        [1.0, dt, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, dt],
        [0.0, 0.0, 0.0, 1.0],
    ])
    g = np.array([
        [0.5 * dt * dt, 0.0],
        [dt, 0.0],
        [0.0, 0.5 * dt * dt],
        [0.0, dt],
    ])
    return f, g


@dataclass
class TruthState:
    targets: dict            # subject -> 4-state
    biases: dict             # subject -> 2-vector, constant per run

    def copy(self):
        return TruthState({k: v.copy() for k, v in self.targets.items()},
                          {k: v.copy() for k, v in self.biases.items()})


def init_truth(config: ScenarioConfig, rng) -> TruthState:
    """Targets on a 100 m grid with unit-magnitude random velocities;
    biases drawn from the bias prior."""
    targets = {}
    for t in range(1, config.n_targets + 1):
        pn = 100.0 * ((t - 1) % 3)
        pe = 100.0 * ((t - 1) // 3)
        theta = rng.uniform(0.0, 2.0 * np.pi)
        targets[config.target_subject(t)] = np.array(
            [pn, np.cos(theta), pe, np.sin(theta)]
        )
    biases = {}
    if config.with_bias:
        for r in range(1, config.n_robots + 1):
            biases[config.bias_subject(r)] = (
                config.sigma_bias_m * rng.standard_normal(BIAS_DIM)
            )
    return TruthState(targets, biases)


def propagate_truth(truth: TruthState, config: ScenarioConfig, rng) -> TruthState:
    f, _ = kinematic_matrices(config.dt_seconds)
    sd = np.sqrt(config.process_noise_intensity)
    out = truth.copy()
    for subject in sorted(out.targets):
        w = sd * rng.standard_normal(TARGET_DIM)
        out.targets[subject] = f @ out.targets[subject] + w
    return out


def gen_measurements(truth: TruthState, config: ScenarioConfig, rid: int, rng):
    """(target measurements, landmark measurement) for one robot.

    Target rows observe [n, e] of the target plus the robot's bias; the
    landmark row observes the bias directly.
    """
    r1 = np.sqrt(config.r_target_m2)
    bias = (truth.biases[config.bias_subject(rid)]
            if config.with_bias else np.zeros(BIAS_DIM))
    ys = {}
    for t in sorted(config.tasks[rid]):
        subject = config.target_subject(t)
        pos = truth.targets[subject][[0, 2]]
        ys[subject] = pos + bias + r1 * rng.standard_normal(2)
    m = None
    if config.with_bias:
        r2 = np.sqrt(config.r_landmark_m2)
        m = bias + r2 * rng.standard_normal(BIAS_DIM)
    return ys, m


# -- centralized oracle ------------------------------------------------


class CentralizedFilter:
    """Information filter over the full global state vector."""

    def __init__(self, config: ScenarioConfig, prior_means: dict, prior_covs: dict):
        self.config = config
        self.subjects = sorted(prior_means)
        self.slices = {}
        off = 0
        for s in self.subjects:
            d = prior_means[s].shape[0]
            self.slices[s] = slice(off, off + d)
            off += d
        self.n = off
        self.mean = np.zeros(self.n)
        self.cov = np.zeros((self.n, self.n))
        for s in self.subjects:
            sl = self.slices[s]
            self.mean[sl] = prior_means[s]
            self.cov[sl, sl] = prior_covs[s]
        f, _ = kinematic_matrices(config.dt_seconds)
        self.f_full = np.eye(self.n)
        self.q_full = np.zeros((self.n, self.n))
        for s in self.subjects:
            if s.startswith("t"):
                sl = self.slices[s]
                self.f_full[sl, sl] = f
                self.q_full[sl, sl] = config.process_noise_intensity * np.eye(TARGET_DIM)

    def predict(self):
        self.mean = self.f_full @ self.mean
        self.cov = self.f_full @ self.cov @ self.f_full.T + self.q_full
        self.cov = (self.cov + self.cov.T) / 2.0

    def update(self, measurements):
        """measurements: list of (subjects, H, y, R) linear observations."""
        rows = sum(y.shape[0] for _, _, y, _ in measurements)
        if rows == 0:
            return
        h = np.zeros((rows, self.n))
        y = np.zeros(rows)
        rdiag = np.zeros(rows)
        off = 0
        for subjects, h_loc, y_loc, r_var in measurements:
            m = y_loc.shape[0]
            col = 0
            for s in subjects:
                sl = self.slices[s]
                h[off:off + m, sl] = h_loc[:, col:col + (sl.stop - sl.start)]
                col += sl.stop - sl.start
            y[off:off + m] = y_loc
            rdiag[off:off + m] = r_var
            off += m
        s_mat = h @ self.cov @ h.T + np.diag(rdiag)
        k = self.cov @ h.T @ np.linalg.inv(s_mat)
        self.mean = self.mean + k @ (y - h @ self.mean)
        ikh = np.eye(self.n) - k @ h
        # Joseph form keeps the covariance symmetric PSD
        self.cov = ikh @ self.cov @ ikh.T + k @ np.diag(rdiag) @ k.T
        self.cov = (self.cov + self.cov.T) / 2.0

    def marginal(self, subjects):
        idx = np.concatenate([
            np.arange(self.slices[s].start, self.slices[s].stop) for s in subjects
        ])
        return self.mean[idx], self.cov[np.ix_(idx, idx)]


# -- metrics -----------------------------------------------------------


def nees(mean: np.ndarray, cov: np.ndarray, truth_vec: np.ndarray) -> float:
    """Normalized estimation error squared e' Sigma^-1 e."""
    e = mean - truth_vec
    try:
        c = np.linalg.cholesky((cov + cov.T) / 2.0)
    except np.linalg.LinAlgError as err:
        raise NegativeInformationError("estimate covariance is not PD") from err
    z = np.linalg.solve(c, e)
    return float(z @ z)


def min_eig_diff(cov: np.ndarray, cov_cent: np.ndarray) -> float:
    if cov.shape != cov_cent.shape:
        raise ValueError("covariance shapes differ")
    return min_eigenvalue(cov - cov_cent)


def nees_bounds(dof: int, n_runs: int, confidence: float = 0.95):
    """Two-sided bounds on the per-step average NEES over n_runs runs."""
    a = (1.0 - confidence) / 2.0
    lo = chi2.ppf(a, dof * n_runs) / n_runs
    hi = chi2.ppf(1.0 - a, dof * n_runs) / n_runs
    return lo, hi


# -- single run --------------------------------------------------------


def build_network(config: ScenarioConfig) -> Network:
    robots = {}
    f, _ = kinematic_matrices(config.dt_seconds)
    q = config.process_noise_intensity * np.eye(TARGET_DIM)
    for rid in range(1, config.n_robots + 1):
        subjects = config.robot_subjects(rid)
        dynamics = {s: LinearDynamics(f, q) for s, (d, dyn) in subjects.items() if dyn}
        channels = {n: config.common_subjects(rid, n) for n in config.neighbors(rid)}
        local = frozenset(subjects) - frozenset().union(*channels.values()) \
            if channels else frozenset(subjects)
        structure = CommonStructure(local, channels)
        robot = Robot(rid, subjects, dynamics, structure)
        for n, subs in channels.items():
            robot.add_channel(n, subs)
        robots[rid] = robot
    return Network(robots, config.edges)


def draw_priors(config: ScenarioConfig, truth: TruthState, rng):
    """Shared prior (mean, cov) per subject; means are prior-consistent
    draws around the truth so the NEES test is meaningful."""
    means, covs = {}, {}
    p_t = np.diag([config.sigma_position_m ** 2, config.sigma_velocity_mps ** 2,
                   config.sigma_position_m ** 2, config.sigma_velocity_mps ** 2])
    for s in sorted(truth.targets):
        means[s] = truth.targets[s] + np.sqrt(np.diag(p_t)) * rng.standard_normal(4)
        covs[s] = p_t.copy()
    p_b = config.sigma_bias_m ** 2 * np.eye(BIAS_DIM)
    for s in sorted(truth.biases):
        means[s] = truth.biases[s] + config.sigma_bias_m * rng.standard_normal(2)
        covs[s] = p_b.copy()
    return means, covs


@dataclass
class RunResult:
    nees: np.ndarray        # (steps, robots)
    mineig: np.ndarray      # (steps, robots)
    lam: np.ndarray         # (steps, robots)
    cf_divergence: np.ndarray   # (steps,)
    aborted_at: int | None = None
    abort_reason: str = ""
    posteriors: list | None = None     # per step: {rid: (mean, cov)}
    centralized: list | None = None    # per step: {rid: (mean, cov)}


def run_simulation(config: ScenarioConfig, run_seed, record_posteriors=False) -> RunResult:
    """One realization: returns per-step per-robot metrics.

    `run_seed` is a numpy SeedSequence; it is split into independent
    truth-noise, measurement-noise and prior streams so runs with
    filtering on and off see identical noise."""
    ss_truth, ss_meas, ss_prior = run_seed.spawn(3)
    rng_truth = np.random.Generator(np.random.Philox(ss_truth))
    rng_meas = np.random.Generator(np.random.Philox(ss_meas))
    rng_prior = np.random.Generator(np.random.Philox(ss_prior))

    truth = init_truth(config, rng_prior)
    prior_means, prior_covs = draw_priors(config, truth, rng_prior)

    net = build_network(config)
    for rid in sorted(net.robots):
        robot = net.robots[rid]
        robot.init_priors({s: (prior_means[s], prior_covs[s])
                           for s in robot.subjects})
    cent = CentralizedFilter(config, prior_means, prior_covs)

    steps = config.horizon_steps
    nr = config.n_robots
    out = RunResult(
        nees=np.full((steps, nr), np.nan),
        mineig=np.full((steps, nr), np.nan),
        lam=np.full((steps, nr), np.nan),
        cf_divergence=np.full(steps, np.nan),
        posteriors=[] if record_posteriors else None,
        centralized=[] if record_posteriors else None,
    )

    h_target = np.zeros((2, TARGET_DIM + BIAS_DIM))
    h_target[0, 0] = h_target[1, 2] = 1.0
    h_target[0, 4] = h_target[1, 5] = 1.0
    h_pos = np.zeros((2, TARGET_DIM))
    h_pos[0, 0] = h_pos[1, 2] = 1.0

    for step in range(steps):
        try:
            truth = propagate_truth(truth, config, rng_truth)
            for rid in sorted(net.robots):
                net.robots[rid].predict_tick()
            cent.predict()

            cent_meas = []
            for rid in sorted(net.robots):
                robot = net.robots[rid]
                ys, m = gen_measurements(truth, config, rid, rng_meas)
                bias_subject = config.bias_subject(rid)
                for subject in sorted(ys):
                    if config.with_bias:
                        robot.update_biased_position(
                            subject, bias_subject, ys[subject],
                            config.r_target_m2 * np.eye(2))
                        # centralized H columns follow sorted subject order
                        pair = sorted([subject, bias_subject])
                        h_cent = np.zeros((2, TARGET_DIM + BIAS_DIM))
                        off = 0
                        for s in pair:
                            d = TARGET_DIM if s.startswith("t") else BIAS_DIM
                            if s.startswith("t"):
                                h_cent[0, off + 0] = h_cent[1, off + 2] = 1.0
                            else:
                                h_cent[0, off + 0] = h_cent[1, off + 1] = 1.0
                            off += d
                        cent_meas.append((pair, h_cent, ys[subject],
                                          np.full(2, config.r_target_m2)))
                    else:
                        robot.update_position(subject, ys[subject],
                                              config.r_target_m2 * np.eye(2))
                        cent_meas.append(([subject], h_pos, ys[subject],
                                          np.full(2, config.r_target_m2)))
                if m is not None:
                    robot.update_bias(bias_subject, m,
                                      config.r_landmark_m2 * np.eye(BIAS_DIM))
                    cent_meas.append(([bias_subject], np.eye(BIAS_DIM), m,
                                      np.full(BIAS_DIM, config.r_landmark_m2)))
            cent.update(cent_meas)

            if len(net.robots) > 1:
                if config.exchange_mode == "sweep":
                    net.exchange_sweep()
                else:
                    net.exchange_simultaneous()

            reports = net.filter_all(config.conservative_filtering)
        except NegativeInformationError as e:
            out.aborted_at = step + 1
            out.abort_reason = str(e)
            break

        step_post = {}
        step_cent = {}
        for j, rid in enumerate(sorted(net.robots)):
            robot = net.robots[rid]
            mean, cov = robot.task_moment()
            subjects = [v.subject for v in robot.task_keys()]
            truth_vec = np.concatenate([
                truth.targets[s] if s.startswith("t") else truth.biases[s]
                for s in subjects
            ])
            mean_c, cov_c = cent.marginal(subjects)
            out.nees[step, j] = nees(mean, cov, truth_vec)
            out.mineig[step, j] = min_eig_diff(cov, cov_c)
            out.lam[step, j] = reports[rid].lambda_min
            if record_posteriors:
                step_post[rid] = (mean, cov)
                step_cent[rid] = (mean_c, cov_c)
        out.cf_divergence[step] = net.cf_divergence()
        if record_posteriors:
            out.posteriors.append(step_post)
            out.centralized.append(step_cent)
    return out


# -- Monte Carlo -------------------------------------------------------


@dataclass
class MonteCarloResult:
    config: ScenarioConfig
    nees: np.ndarray         # (runs, steps, robots)
    mineig: np.ndarray
    lam: np.ndarray
    aborts: list             # (run index, step, reason)

    @property
    def mean_nees(self) -> np.ndarray:
        return np.nanmean(self.nees, axis=0)

    def robot_dofs(self):
        return [self.config.robot_dim(r)
                for r in range(1, self.config.n_robots + 1)]


def _one_run(args):
    config, idx, entropy = args
    ss = np.random.SeedSequence(entropy=entropy, spawn_key=(idx,))
    return idx, run_simulation(config, ss)


def monte_carlo(config: ScenarioConfig, parallel: int = 1) -> MonteCarloResult:
    """Run `config.mc_runs` independent realizations, deterministically
    seeded from `config.seed` regardless of the parallelism degree."""
    runs = config.mc_runs
    steps = config.horizon_steps
    nr = config.n_robots
    result = MonteCarloResult(
        config=config,
        nees=np.full((runs, steps, nr), np.nan),
        mineig=np.full((runs, steps, nr), np.nan),
        lam=np.full((runs, steps, nr), np.nan),
        aborts=[],
    )
    jobs = [(config, i, config.seed) for i in range(runs)]
    if parallel > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            outcomes = list(pool.map(_one_run, jobs, chunksize=max(1, runs // (4 * parallel))))
    else:
        outcomes = [_one_run(j) for j in jobs]
    for idx, run in sorted(outcomes, key=lambda p: p[0]):
        result.nees[idx] = run.nees
        result.mineig[idx] = run.mineig
        result.lam[idx] = run.lam
        if run.aborted_at is not None:
            result.aborts.append((idx, run.aborted_at, run.abort_reason))
    return result
