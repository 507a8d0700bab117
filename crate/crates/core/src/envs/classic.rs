//! The five classic-control environments with the de-facto standard
//! constants: CartPole (Euler, tau=0.02), MountainCar (force 0.001, gravity
//! 0.0025), continuous MountainCar (power 0.0015), Pendulum (g=10, dt=0.05),
//! and Acrobot (two-link dynamics, RK4).
//!
//! Truncation and termination are distinct flags: `done` means the MDP
//! terminated, `truncated` means the configured horizon cut the episode.

use std::f32::consts::PI;

use super::{Action, ActionSpace, Env, EnvId, EnvState};
use crate::{Error, Result, Rng};

/// A classic-control environment instance. The horizon defaults to the
/// standard truncation limit and can be overridden for curriculum-length
/// evaluation.
#[derive(Debug, Clone)]
pub struct ClassicEnv {
    id: EnvId,
    horizon: usize,
}

impl ClassicEnv {
    pub fn new(id: EnvId) -> Self {
        ClassicEnv { id, horizon: id.default_horizon() }
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        assert!(horizon >= 1);
        self.horizon = horizon;
        self
    }

    pub fn id(&self) -> EnvId {
        self.id
    }
}

const CP_GRAVITY: f32 = 9.8;
const CP_MASSCART: f32 = 1.0;
const CP_MASSPOLE: f32 = 0.1;
const CP_TOTAL_MASS: f32 = CP_MASSPOLE + CP_MASSCART;
const CP_LENGTH: f32 = 0.5; // half the pole length
const CP_POLEMASS_LENGTH: f32 = CP_MASSPOLE * CP_LENGTH;
const CP_FORCE_MAG: f32 = 10.0;
const CP_TAU: f32 = 0.02;
const CP_X_THRESHOLD: f32 = 2.4;
const CP_THETA_THRESHOLD: f32 = 12.0 * 2.0 * PI / 360.0;

const MC_MIN_POS: f32 = -1.2;
const MC_MAX_POS: f32 = 0.6;
const MC_MAX_SPEED: f32 = 0.07;
const MC_FORCE: f32 = 0.001;
const MC_GRAVITY: f32 = 0.0025;
const MC_GOAL_POS: f32 = 0.5;

const MCC_POWER: f32 = 0.0015;
const MCC_GOAL_POS: f32 = 0.45;

const PEND_MAX_SPEED: f32 = 8.0;
const PEND_MAX_TORQUE: f32 = 2.0;
const PEND_DT: f32 = 0.05;
const PEND_G: f32 = 10.0;

const ACR_DT: f32 = 0.2;
const ACR_LINK_LENGTH_1: f32 = 1.0;
const ACR_LINK_MASS_1: f32 = 1.0;
const ACR_LINK_MASS_2: f32 = 1.0;
const ACR_LINK_COM_POS_1: f32 = 0.5;
const ACR_LINK_COM_POS_2: f32 = 0.5;
const ACR_LINK_MOI: f32 = 1.0;
const ACR_MAX_VEL_1: f32 = 4.0 * PI;
const ACR_MAX_VEL_2: f32 = 9.0 * PI;
const ACR_G: f32 = 9.8;

fn angle_normalize(x: f32) -> f32 {
    let two_pi = 2.0 * PI;
    ((x + PI).rem_euclid(two_pi)) - PI
}

fn wrap(mut x: f32, lo: f32, hi: f32) -> f32 {
    let diff = hi - lo;
    while x > hi {
        x -= diff;
    }
    while x < lo {
        x += diff;
    }
    x
}

impl Env for ClassicEnv {
    fn obs_dim(&self) -> usize {
        self.id.obs_dim()
    }

    fn action_space(&self) -> ActionSpace {
        self.id.action_space()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&self, rng: &mut Rng) -> EnvState {
        let internal: Vec<f32> = match self.id {
            EnvId::CartPoleV1 => (0..4).map(|_| rng.uniform_in(-0.05, 0.05)).collect(),
            EnvId::MountainCarV0 | EnvId::MountainCarContinuousV0 => {
                vec![rng.uniform_in(-0.6, -0.4), 0.0]
            }
            EnvId::PendulumV1 => vec![rng.uniform_in(-PI, PI), rng.uniform_in(-1.0, 1.0)],
            EnvId::AcrobotV1 => (0..4).map(|_| rng.uniform_in(-0.1, 0.1)).collect(),
        };
        EnvState {
            obs: observe(self.id, &internal),
            t: 0,
            done: false,
            truncated: false,
            internal,
        }
    }

    fn step(&self, state: &EnvState, action: &Action) -> Result<(EnvState, f32)> {
        if state.done {
            return Err(Error::Contract("step called on a finished episode".into()));
        }
        if !self.action_space().contains(action) {
            return Err(Error::Contract(format!(
                "action {action:?} outside space {:?}",
                self.action_space()
            )));
        }
        let (internal, reward, done) = step_physics(self.id, &state.internal, action);
        let t = state.t + 1;
        Ok((
            EnvState {
                obs: observe(self.id, &internal),
                t,
                done,
                truncated: !done && t >= self.horizon,
                internal,
            },
            reward,
        ))
    }
}

fn observe(id: EnvId, internal: &[f32]) -> Vec<f32> {
    match id {
        EnvId::CartPoleV1 | EnvId::MountainCarV0 | EnvId::MountainCarContinuousV0 => {
            internal.to_vec()
        }
        EnvId::PendulumV1 => vec![internal[0].cos(), internal[0].sin(), internal[1]],
        EnvId::AcrobotV1 => vec![
            internal[0].cos(),
            internal[0].sin(),
            internal[1].cos(),
            internal[1].sin(),
            internal[2],
            internal[3],
        ],
    }
}

fn step_physics(id: EnvId, s: &[f32], action: &Action) -> (Vec<f32>, f32, bool) {
    match id {
        EnvId::CartPoleV1 => {
            let (x, x_dot, theta, theta_dot) = (s[0], s[1], s[2], s[3]);
            let force = match action {
                Action::Discrete(1) => CP_FORCE_MAG,
                _ => -CP_FORCE_MAG,
            };
            let cos_t = theta.cos();
            let sin_t = theta.sin();
            let temp =
                (force + CP_POLEMASS_LENGTH * theta_dot * theta_dot * sin_t) / CP_TOTAL_MASS;
            let theta_acc = (CP_GRAVITY * sin_t - cos_t * temp)
                / (CP_LENGTH * (4.0 / 3.0 - CP_MASSPOLE * cos_t * cos_t / CP_TOTAL_MASS));
            let x_acc = temp - CP_POLEMASS_LENGTH * theta_acc * cos_t / CP_TOTAL_MASS;
            let ns = vec![
                x + CP_TAU * x_dot,
                x_dot + CP_TAU * x_acc,
                theta + CP_TAU * theta_dot,
                theta_dot + CP_TAU * theta_acc,
            ];
            let done = ns[0].abs() > CP_X_THRESHOLD || ns[2].abs() > CP_THETA_THRESHOLD;
            (ns, 1.0, done)
        }
        EnvId::MountainCarV0 => {
            let (pos, vel) = (s[0], s[1]);
            let a = match action {
                Action::Discrete(a) => *a as f32,
                _ => unreachable!("validated discrete"),
            };
            let mut vel = vel + (a - 1.0) * MC_FORCE + (3.0 * pos).cos() * (-MC_GRAVITY);
            vel = vel.clamp(-MC_MAX_SPEED, MC_MAX_SPEED);
            let pos = (pos + vel).clamp(MC_MIN_POS, MC_MAX_POS);
            if pos == MC_MIN_POS && vel < 0.0 {
                vel = 0.0;
            }
            let done = pos >= MC_GOAL_POS && vel >= 0.0;
            (vec![pos, vel], -1.0, done)
        }
        EnvId::MountainCarContinuousV0 => {
            let (pos, vel) = (s[0], s[1]);
            let force = match action {
                Action::Continuous(v) => v[0].clamp(-1.0, 1.0),
                _ => unreachable!("validated continuous"),
            };
            let mut vel = vel + force * MCC_POWER - 0.0025 * (3.0 * pos).cos();
            vel = vel.clamp(-MC_MAX_SPEED, MC_MAX_SPEED);
            let pos = (pos + vel).clamp(MC_MIN_POS, MC_MAX_POS);
            if pos == MC_MIN_POS && vel < 0.0 {
                vel = 0.0;
            }
            let done = pos >= MCC_GOAL_POS && vel >= 0.0;
            let mut reward = if done { 100.0 } else { 0.0 };
            reward -= 0.1 * force * force;
            (vec![pos, vel], reward, done)
        }
        EnvId::PendulumV1 => {
            let (th, th_dot) = (s[0], s[1]);
            let u = match action {
                Action::Continuous(v) => v[0].clamp(-PEND_MAX_TORQUE, PEND_MAX_TORQUE),
                _ => unreachable!("validated continuous"),
            };
            let norm = angle_normalize(th);
            let cost = norm * norm + 0.1 * th_dot * th_dot + 0.001 * u * u;
            let new_th_dot = (th_dot + (3.0 * PEND_G / 2.0 * th.sin() + 3.0 * u) * PEND_DT)
                .clamp(-PEND_MAX_SPEED, PEND_MAX_SPEED);
            let new_th = th + new_th_dot * PEND_DT;
            (vec![new_th, new_th_dot], -cost, false)
        }
        EnvId::AcrobotV1 => {
            let torque = match action {
                Action::Discrete(a) => *a as f32 - 1.0,
                _ => unreachable!("validated discrete"),
            };
            let ns = acrobot_rk4(s, torque);
            let theta1 = wrap(ns[0], -PI, PI);
            let theta2 = wrap(ns[1], -PI, PI);
            let d1 = ns[2].clamp(-ACR_MAX_VEL_1, ACR_MAX_VEL_1);
            let d2 = ns[3].clamp(-ACR_MAX_VEL_2, ACR_MAX_VEL_2);
            let done = -theta1.cos() - (theta2 + theta1).cos() > 1.0;
            let reward = if done { 0.0 } else { -1.0 };
            (vec![theta1, theta2, d1, d2], reward, done)
        }
    }
}

/// Two-link dynamics (the "book" variant), torque on the second joint.
fn acrobot_dsdt(s: &[f32; 4], torque: f32) -> [f32; 4] {
    let (m1, m2) = (ACR_LINK_MASS_1, ACR_LINK_MASS_2);
    let l1 = ACR_LINK_LENGTH_1;
    let (lc1, lc2) = (ACR_LINK_COM_POS_1, ACR_LINK_COM_POS_2);
    let (i1, i2) = (ACR_LINK_MOI, ACR_LINK_MOI);
    let g = ACR_G;
    let (theta1, theta2, dtheta1, dtheta2) = (s[0], s[1], s[2], s[3]);

    let d1 = m1 * lc1 * lc1
        + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * theta2.cos())
        + i1
        + i2;
    let d2 = m2 * (lc2 * lc2 + l1 * lc2 * theta2.cos()) + i2;
    let phi2 = m2 * lc2 * g * (theta1 + theta2 - PI / 2.0).cos();
    let phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * theta2.sin()
        - 2.0 * m2 * l1 * lc2 * dtheta2 * dtheta1 * theta2.sin()
        + (m1 * lc1 + m2 * l1) * g * (theta1 - PI / 2.0).cos()
        + phi2;
    let ddtheta2 = (torque + d2 / d1 * phi1
        - m2 * l1 * lc2 * dtheta1 * dtheta1 * theta2.sin()
        - phi2)
        / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
    let ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
    [dtheta1, dtheta2, ddtheta1, ddtheta2]
}

/// One fourth-order Runge-Kutta step of size `ACR_DT`.
fn acrobot_rk4(s: &[f32], torque: f32) -> [f32; 4] {
    let y0 = [s[0], s[1], s[2], s[3]];
    let dt = ACR_DT;
    let k1 = acrobot_dsdt(&y0, torque);
    let y1 = add_scaled(&y0, &k1, dt / 2.0);
    let k2 = acrobot_dsdt(&y1, torque);
    let y2 = add_scaled(&y0, &k2, dt / 2.0);
    let k3 = acrobot_dsdt(&y2, torque);
    let y3 = add_scaled(&y0, &k3, dt);
    let k4 = acrobot_dsdt(&y3, torque);
    let mut out = [0.0f32; 4];
    for i in 0..4 {
        out[i] = y0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn add_scaled(y: &[f32; 4], k: &[f32; 4], h: f32) -> [f32; 4] {
    [y[0] + h * k[0], y[1] + h * k[1], y[2] + h * k[2], y[3] + h * k[3]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::rollout;
    use approx::assert_relative_eq;

    #[test]
    fn reset_ranges() {
        let mut rng = Rng::new(17);
        let cp = ClassicEnv::new(EnvId::CartPoleV1);
        for _ in 0..10_000 {
            let s = cp.reset(&mut rng);
            assert_eq!(s.t, 0);
            assert!(!s.done);
            assert!(s.obs.iter().all(|v| (-0.05..=0.05).contains(v)));
        }
        let mc = ClassicEnv::new(EnvId::MountainCarV0);
        for _ in 0..10_000 {
            let s = mc.reset(&mut rng);
            assert!((-0.6..=-0.4).contains(&s.obs[0]));
            assert_eq!(s.obs[1], 0.0);
        }
        let pd = ClassicEnv::new(EnvId::PendulumV1);
        for _ in 0..10_000 {
            let s = pd.reset(&mut rng);
            assert!((-PI..=PI).contains(&s.internal[0]));
            assert!((-1.0..=1.0).contains(&s.internal[1]));
            assert_eq!(s.obs.len(), 3);
        }
    }

    #[test]
    fn cartpole_hand_evaluated_step() {
        // Euler step from the all-zero state with a rightward push, derived by
        // hand from g=9.8, m_c=1.0, m_p=0.1, half-length=0.5, force=10, tau=0.02.
        let env = ClassicEnv::new(EnvId::CartPoleV1);
        let state = EnvState {
            obs: vec![0.0; 4],
            t: 0,
            done: false,
            truncated: false,
            internal: vec![0.0; 4],
        };
        let (next, reward) = env.step(&state, &Action::Discrete(1)).unwrap();
        assert_eq!(reward, 1.0);
        assert_relative_eq!(next.obs[0], 0.0);
        assert_relative_eq!(next.obs[1], 0.19512194, epsilon = 1e-5);
        assert_relative_eq!(next.obs[2], 0.0);
        assert_relative_eq!(next.obs[3], -0.29268292, epsilon = 1e-5);
    }

    #[test]
    fn mountain_car_constant_penalty() {
        let env = ClassicEnv::new(EnvId::MountainCarV0);
        let mut rng = Rng::new(0);
        let mut s = env.reset(&mut rng);
        for i in 0..50 {
            let (next, r) = env.step(&s, &Action::Discrete(i % 3)).unwrap();
            assert_eq!(r, -1.0);
            s = next;
        }
    }

    #[test]
    fn pendulum_zero_cost_at_upright_rest() {
        let env = ClassicEnv::new(EnvId::PendulumV1);
        let state = EnvState {
            obs: vec![1.0, 0.0, 0.0],
            t: 0,
            done: false,
            truncated: false,
            internal: vec![0.0, 0.0],
        };
        let (_, r) = env.step(&state, &Action::Continuous(vec![0.0])).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn rollout_mountain_car_never_reaching() {
        let env = ClassicEnv::new(EnvId::MountainCarV0);
        let mut rng = Rng::new(3);
        // "Do nothing" never builds enough energy to escape the valley.
        let ret = rollout(&env, &mut |_| Action::Discrete(1), 200, &mut rng);
        assert_eq!(ret, -200.0);
    }

    #[test]
    fn cartpole_solvable_by_reactive_policy() {
        // Push in the direction the pole is falling, weighted by angle and
        // angular velocity; balances for the full 500 steps.
        let env = ClassicEnv::new(EnvId::CartPoleV1);
        let mut rng = Rng::new(9);
        let mut policy = |obs: &[f32]| {
            if obs[2] + 0.5 * obs[3] > 0.0 {
                Action::Discrete(1)
            } else {
                Action::Discrete(0)
            }
        };
        let ret = rollout(&env, &mut policy, 500, &mut rng);
        assert_eq!(ret, 500.0, "reactive policy should balance to the 500 cap");
    }

    #[test]
    fn mountain_car_energy_pumping_reaches_goal() {
        // Accelerating along the velocity sign is the classic near-optimal
        // policy; the goal return must beat the -200 floor.
        let env = ClassicEnv::new(EnvId::MountainCarV0);
        let mut rng = Rng::new(4);
        let mut policy =
            |obs: &[f32]| if obs[1] >= 0.0 { Action::Discrete(2) } else { Action::Discrete(0) };
        let ret = rollout(&env, &mut policy, 200, &mut rng);
        assert!(ret > -200.0, "energy pumping should reach the goal, got {ret}");
    }

    #[test]
    fn bounds_preserved_under_random_actions() {
        let mut rng = Rng::new(21);
        let mc = ClassicEnv::new(EnvId::MountainCarV0);
        let mut s = mc.reset(&mut rng);
        for _ in 0..500 {
            if s.done || s.truncated {
                s = mc.reset(&mut rng);
            }
            let (next, _) = mc.step(&s, &Action::Discrete(rng.index(3))).unwrap();
            assert!((MC_MIN_POS..=MC_MAX_POS).contains(&next.obs[0]));
            assert!((-MC_MAX_SPEED..=MC_MAX_SPEED).contains(&next.obs[1]));
            s = next;
        }
        let pd = ClassicEnv::new(EnvId::PendulumV1);
        let mut s = pd.reset(&mut rng);
        for _ in 0..500 {
            if s.done || s.truncated {
                s = pd.reset(&mut rng);
            }
            let raw = rng.uniform_in(-3.0, 3.0);
            let a = pd.action_space().clamp(Action::Continuous(vec![raw]));
            let (next, _) = pd.step(&s, &a).unwrap();
            assert!(next.internal[1].abs() <= PEND_MAX_SPEED);
            s = next;
        }
    }

    #[test]
    fn termination_rules() {
        let env = ClassicEnv::new(EnvId::CartPoleV1);
        let tilted = EnvState {
            obs: vec![0.0, 0.0, 0.2, 3.0],
            t: 0,
            done: false,
            truncated: false,
            internal: vec![0.0, 0.0, 0.2, 3.0],
        };
        let (next, _) = env.step(&tilted, &Action::Discrete(0)).unwrap();
        assert!(next.done, "pole beyond 0.2095 rad must terminate");

        let acro = ClassicEnv::new(EnvId::AcrobotV1);
        // Swung-up configuration: -cos(t1) - cos(t1+t2) > 1.
        let up = EnvState {
            obs: observe(EnvId::AcrobotV1, &[3.0, 0.0, 0.0, 0.0]),
            t: 0,
            done: false,
            truncated: false,
            internal: vec![3.0, 0.0, 0.0, 0.0],
        };
        let (next, r) = acro.step(&up, &Action::Discrete(1)).unwrap();
        assert!(next.done);
        assert_eq!(r, 0.0, "terminal acrobot step pays 0");
    }

    #[test]
    fn stepping_is_deterministic() {
        let mut rng = Rng::new(33);
        for id in EnvId::ALL {
            let env = ClassicEnv::new(id);
            let s = env.reset(&mut rng);
            let a = match env.action_space() {
                ActionSpace::Discrete(n) => Action::Discrete(n - 1),
                ActionSpace::Box { low, .. } => Action::Continuous(vec![low[0] / 2.0]),
            };
            let (n1, r1) = env.step(&s, &a).unwrap();
            let (n2, r2) = env.step(&s, &a).unwrap();
            assert_eq!(n1, n2, "{id}");
            assert_eq!(r1.to_bits(), r2.to_bits());
        }
    }

    #[test]
    fn step_contract_violations() {
        let env = ClassicEnv::new(EnvId::CartPoleV1);
        let mut rng = Rng::new(1);
        let s = env.reset(&mut rng);
        assert!(env.step(&s, &Action::Discrete(2)).is_err(), "action out of bounds");
        let done = EnvState { done: true, ..s };
        assert!(env.step(&done, &Action::Discrete(0)).is_err(), "step after done");
    }

    #[test]
    fn horizon_override_truncates() {
        let env = ClassicEnv::new(EnvId::MountainCarV0).with_horizon(5);
        let mut rng = Rng::new(2);
        let ret = rollout(&env, &mut |_| Action::Discrete(1), 1000, &mut rng);
        assert_eq!(ret, -5.0);
    }
}
