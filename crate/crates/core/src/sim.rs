//! Synthetic two-phase particle world.
//!
//! `n` particles sit on evenly spaced spokes around a virtual centroid and
//! move as one rigid body (translation plus rotation) until any particle
//! touches the ground line `y = 0`. From the next step on, every particle
//! keeps its instantaneous velocity and moves independently in a straight
//! line. Ground-truth interaction labels are "with link" for every ordered
//! pair during the rigid phase and "without link" afterwards, so the latent
//! structure flips exactly once, for all pairs simultaneously.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rngutil::stream_rng;

/// Horizontal range the centroid is drawn from at initialization.
pub const CENTROID_X_RANGE: (f64, f64) = (-2.0, 2.0);
/// Required minimum downward y-speed at initialization, so every world
/// eventually descends toward the ground line.
pub const MIN_DESCENT: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub n_particles: usize,
    pub radius_range: (f64, f64),
    pub centroid_y_range: (f64, f64),
    pub speed_range: (f64, f64),
    pub omega_range: (f64, f64),
    pub total_steps: usize,
    pub seed: u64,
}

impl WorldConfig {
    /// Ranges used by the shipped profiles: five particles, spawn heights
    /// that guarantee several rigid steps, and a spread of switch times that
    /// covers "switch in history", "switch in prediction", and "no switch".
    pub fn desk(seed: u64) -> Self {
        WorldConfig {
            n_particles: 5,
            radius_range: (0.5, 1.5),
            centroid_y_range: (3.0, 6.0),
            speed_range: (0.05, 0.3),
            omega_range: (-0.15, 0.15),
            total_steps: 70,
            seed,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.n_particles == 0 {
            v.push("n_particles must be positive".into());
        }
        for (name, range) in [
            ("radius_range", self.radius_range),
            ("centroid_y_range", self.centroid_y_range),
            ("speed_range", self.speed_range),
            ("omega_range", self.omega_range),
        ] {
            if !(range.0 <= range.1) {
                v.push(format!("{name} is empty or reversed: ({}, {})", range.0, range.1));
            }
        }
        if !(self.radius_range.0 > 0.0) {
            v.push(format!("radius_range lower bound must be positive, got {}", self.radius_range.0));
        }
        if !(self.centroid_y_range.0 > self.radius_range.1) {
            v.push(format!(
                "centroid_y_range lower bound {} must exceed radius_range upper bound {} so worlds start above the ground line",
                self.centroid_y_range.0, self.radius_range.1
            ));
        }
        if !(self.speed_range.0 > 0.0) {
            v.push(format!("speed_range lower bound must be positive, got {}", self.speed_range.0));
        }
        if self.total_steps == 0 {
            v.push("total_steps must be positive".into());
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Rigid,
    Free,
}

#[derive(Debug, Clone)]
pub struct WorldState {
    /// `[n, 2]` particle positions.
    pub positions: Array2<f64>,
    pub phase: Phase,
    /// Virtual centroid the spokes attach to; keeps translating after the
    /// switch purely as a diagnostic.
    pub centroid: [f64; 2],
    pub centroid_velocity: [f64; 2],
    pub omega: f64,
    /// Per-particle velocities, set once at the switch.
    pub free_velocities: Option<Array2<f64>>,
    pub step: usize,
}

impl WorldState {
    /// Rigid star of `n` particles with spoke spacing `2*pi/n`, first spoke
    /// at `offset` radians.
    pub fn from_parts(
        n: usize,
        centroid: [f64; 2],
        radius: f64,
        offset: f64,
        centroid_velocity: [f64; 2],
        omega: f64,
    ) -> Self {
        let mut positions = Array2::zeros((n, 2));
        for i in 0..n {
            let theta = offset + 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            positions[[i, 0]] = centroid[0] + radius * theta.cos();
            positions[[i, 1]] = centroid[1] + radius * theta.sin();
        }
        WorldState {
            positions,
            phase: Phase::Rigid,
            centroid,
            centroid_velocity,
            omega,
            free_velocities: None,
            step: 0,
        }
    }
}

/// Draws a fresh rigid world. Requires a validated config.
pub fn init_world(config: &WorldConfig, rng: &mut ChaCha8Rng) -> WorldState {
    let radius = rng.random_range(config.radius_range.0..=config.radius_range.1);
    let cx = rng.random_range(CENTROID_X_RANGE.0..=CENTROID_X_RANGE.1);
    let cy = rng.random_range(config.centroid_y_range.0..=config.centroid_y_range.1);
    let offset = rng.random_range(0.0..std::f64::consts::TAU);

    // Speed magnitude from the configured range, direction uniform but
    // constrained to descend by at least MIN_DESCENT per step. Rejection
    // sampling; if the configured speeds make that impossible, fall back to
    // straight down.
    let mut velocity = None;
    for _ in 0..256 {
        let speed = rng.random_range(config.speed_range.0..=config.speed_range.1);
        let dir = rng.random_range(0.0..std::f64::consts::TAU);
        let vy = speed * dir.sin();
        if vy <= -MIN_DESCENT {
            velocity = Some([speed * dir.cos(), vy]);
            break;
        }
    }
    let velocity = velocity.unwrap_or_else(|| {
        let speed = rng.random_range(config.speed_range.0..=config.speed_range.1);
        [0.0, -speed]
    });
    let omega = rng.random_range(config.omega_range.0..=config.omega_range.1);

    let state = WorldState::from_parts(config.n_particles, [cx, cy], radius, offset, velocity, omega);
    debug_assert!(state.positions.column(1).iter().all(|&y| y > 0.0));
    state
}

/// Advances the world one step (`dt = 1`).
///
/// Rigid phase: the centroid translates by its velocity and the spokes rotate
/// by `omega`. If any particle ends the step at `y <= 0`, the world switches:
/// every particle keeps its instantaneous rigid-body velocity
/// `centroid_velocity + omega x r` (the spoke vector rotated a quarter turn,
/// scaled by `omega`) and the switch governs the following steps.
pub fn step_world(state: &WorldState) -> WorldState {
    let n = state.positions.nrows();
    let mut next = state.clone();
    next.step = state.step + 1;
    match state.phase {
        Phase::Rigid => {
            let (sin_w, cos_w) = state.omega.sin_cos();
            let c = state.centroid;
            let v = state.centroid_velocity;
            let c_new = [c[0] + v[0], c[1] + v[1]];
            for i in 0..n {
                let rx = state.positions[[i, 0]] - c[0];
                let ry = state.positions[[i, 1]] - c[1];
                let rx_new = cos_w * rx - sin_w * ry;
                let ry_new = sin_w * rx + cos_w * ry;
                next.positions[[i, 0]] = c_new[0] + rx_new;
                next.positions[[i, 1]] = c_new[1] + ry_new;
            }
            next.centroid = c_new;
            let grounded = next.positions.column(1).iter().any(|&y| y <= 0.0);
            if grounded {
                let mut vel = Array2::zeros((n, 2));
                for i in 0..n {
                    let rx = next.positions[[i, 0]] - c_new[0];
                    let ry = next.positions[[i, 1]] - c_new[1];
                    vel[[i, 0]] = v[0] + state.omega * (-ry);
                    vel[[i, 1]] = v[1] + state.omega * rx;
                }
                next.free_velocities = Some(vel);
                next.phase = Phase::Free;
            }
        }
        Phase::Free => {
            let vel = state.free_velocities.as_ref().expect("free phase has velocities");
            for i in 0..n {
                next.positions[[i, 0]] = state.positions[[i, 0]] + vel[[i, 0]];
                next.positions[[i, 1]] = state.positions[[i, 1]] + vel[[i, 1]];
            }
            next.centroid = [
                state.centroid[0] + state.centroid_velocity[0],
                state.centroid[1] + state.centroid_velocity[1],
            ];
        }
    }
    next
}

/// A simulated world unrolled for a fixed number of steps.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `[T, n, 2]`, `positions[0]` is the initial state.
    pub positions: Array3<f64>,
    /// Phase per step; `phases[t]` governs the motion from `t` to `t + 1`.
    pub phases: Vec<Phase>,
    /// First step index in the free phase, if the switch happens in-window.
    pub change_step: Option<usize>,
}

/// Unrolls `steps` states (including the initial one) from `state`.
pub fn rollout_world(mut state: WorldState, steps: usize) -> Trajectory {
    let n = state.positions.nrows();
    let mut positions = Array3::zeros((steps, n, 2));
    let mut phases = Vec::with_capacity(steps);
    let mut change_step = None;
    for t in 0..steps {
        positions.slice_mut(ndarray::s![t, .., ..]).assign(&state.positions);
        phases.push(state.phase);
        if state.phase == Phase::Free && change_step.is_none() {
            change_step = Some(t);
        }
        if t + 1 < steps {
            state = step_world(&state);
        }
    }
    Trajectory { positions, phases, change_step }
}

/// Simulates the sample with index `sample_idx` of the dataset defined by
/// `config`. Each sample owns an independent RNG stream, so generation order
/// (serial, parallel, partial) cannot change the result.
pub fn simulate_sample(config: &WorldConfig, sample_idx: usize, steps: usize) -> Trajectory {
    let mut rng = stream_rng(config.seed, 1 + sample_idx as u64);
    let state = init_world(config, &mut rng);
    rollout_world(state, steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    /// Independent closed-form integrator for the rigid phase:
    /// `p_i(t) = c0 + t*v + R(t*omega) * r_i(0)`.
    fn rigid_closed_form(state: &WorldState, t: usize) -> Array2<f64> {
        let n = state.positions.nrows();
        let mut out = Array2::zeros((n, 2));
        let angle = state.omega * t as f64;
        let (s, c) = angle.sin_cos();
        for i in 0..n {
            let rx = state.positions[[i, 0]] - state.centroid[0];
            let ry = state.positions[[i, 1]] - state.centroid[1];
            out[[i, 0]] = state.centroid[0] + t as f64 * state.centroid_velocity[0] + c * rx - s * ry;
            out[[i, 1]] = state.centroid[1] + t as f64 * state.centroid_velocity[1] + s * rx + c * ry;
        }
        out
    }

    #[test]
    fn four_spokes_at_quarter_spacing() {
        let w = WorldState::from_parts(4, [0.0, 5.0], 1.0, 0.0, [0.0, -0.1], 0.0);
        let expect = [[1.0, 5.0], [0.0, 6.0], [-1.0, 5.0], [0.0, 4.0]];
        for i in 0..4 {
            assert!((w.positions[[i, 0]] - expect[i][0]).abs() < 1e-12);
            assert!((w.positions[[i, 1]] - expect[i][1]).abs() < 1e-12);
        }
    }

    #[test]
    fn pure_translation_step() {
        let w = WorldState::from_parts(3, [0.0, 5.0], 1.0, 0.3, [0.25, -0.125], 0.0);
        let next = step_world(&w);
        for i in 0..3 {
            assert!((next.positions[[i, 0]] - (w.positions[[i, 0]] + 0.25)).abs() < 1e-12);
            assert!((next.positions[[i, 1]] - (w.positions[[i, 1]] - 0.125)).abs() < 1e-12);
        }
        assert_eq!(next.phase, Phase::Rigid);
    }

    #[test]
    fn quarter_turn_rotation_step() {
        let w = WorldState::from_parts(1, [0.0, 5.0], 1.0, 0.0, [0.0, 0.0], FRAC_PI_2);
        // Particle starts at (1, 5); a quarter turn about the centroid moves
        // it to (0, 6).
        let next = step_world(&w);
        assert!((next.positions[[0, 0]] - 0.0).abs() < 1e-12);
        assert!((next.positions[[0, 1]] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn rigid_phase_matches_closed_form_integrator() {
        let w = WorldState::from_parts(5, [1.5, 40.0], 1.2, 0.7, [0.08, -0.03], 0.11);
        let mut state = w.clone();
        for t in 1..=50 {
            state = step_world(&state);
            assert_eq!(state.phase, Phase::Rigid, "spawned high enough to stay rigid");
            let expect = rigid_closed_form(&w, t);
            for i in 0..5 {
                for d in 0..2 {
                    assert!(
                        (state.positions[[i, d]] - expect[[i, d]]).abs() < 1e-9,
                        "step {t} particle {i}"
                    );
                }
            }
        }
    }

    #[test]
    fn switch_at_exact_ground_contact() {
        // Bottom spoke starts at y = 2 and descends exactly 0.25 per step, so
        // post-step y hits 0 exactly at step 8.
        let w = WorldState::from_parts(4, [0.0, 3.0], 1.0, -FRAC_PI_2, [0.0, -0.25], 0.0);
        let traj = rollout_world(w, 12);
        assert_eq!(traj.change_step, Some(8));
        for t in 0..8 {
            assert_eq!(traj.phases[t], Phase::Rigid);
        }
        for t in 8..12 {
            assert_eq!(traj.phases[t], Phase::Free);
        }
    }

    #[test]
    fn free_velocity_is_rigid_velocity_at_switch() {
        // Rotating world: at the switch every particle must leave with
        // centroid velocity plus omega times its quarter-turned spoke vector.
        let omega = 0.1;
        let w = WorldState::from_parts(3, [0.0, 1.05], 1.0, -FRAC_PI_2, [0.0, -0.1], omega);
        let mut state = w;
        while state.phase == Phase::Rigid {
            state = step_world(&state);
        }
        let vel = state.free_velocities.clone().unwrap();
        for i in 0..3 {
            let rx = state.positions[[i, 0]] - state.centroid[0];
            let ry = state.positions[[i, 1]] - state.centroid[1];
            assert!((vel[[i, 0]] - (0.0 + omega * -ry)).abs() < 1e-12);
            assert!((vel[[i, 1]] - (-0.1 + omega * rx)).abs() < 1e-12);
        }
        // And the free phase is affine in the step index from the switch on.
        let anchor = state.clone();
        let mut later = state;
        for k in 1..=10 {
            later = step_world(&later);
            for i in 0..3 {
                for d in 0..2 {
                    let expect = anchor.positions[[i, d]] + k as f64 * vel[[i, d]];
                    assert!((later.positions[[i, d]] - expect).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn samples_are_reproducible_and_independent_of_order() {
        let cfg = WorldConfig::desk(11);
        let a = simulate_sample(&cfg, 3, 70);
        let b = simulate_sample(&cfg, 3, 70);
        assert_eq!(a.positions, b.positions);
        let other = simulate_sample(&cfg, 4, 70);
        assert_ne!(a.positions, other.positions);
    }

    #[test]
    fn initial_draw_respects_ranges() {
        let cfg = WorldConfig::desk(5);
        for idx in 0..500 {
            let mut rng = stream_rng(cfg.seed, 1 + idx);
            let w = init_world(&cfg, &mut rng);
            assert!(w.positions.column(1).iter().all(|&y| y > 0.0), "starts above ground");
            let speed = (w.centroid_velocity[0].powi(2) + w.centroid_velocity[1].powi(2)).sqrt();
            assert!(speed >= cfg.speed_range.0 - 1e-12 && speed <= cfg.speed_range.1 + 1e-12);
            assert!(w.centroid_velocity[1] <= -MIN_DESCENT + 1e-12, "descends");
            assert!(w.omega >= cfg.omega_range.0 && w.omega <= cfg.omega_range.1);
            assert!(w.centroid[0] >= CENTROID_X_RANGE.0 && w.centroid[0] <= CENTROID_X_RANGE.1);
            // Spokes evenly spaced: consecutive angular gaps all equal 2*pi/n.
            let c = w.centroid;
            let mut angles: Vec<f64> = (0..cfg.n_particles)
                .map(|i| (w.positions[[i, 1]] - c[1]).atan2(w.positions[[i, 0]] - c[0]))
                .collect();
            let first = angles[0];
            for a in angles.iter_mut() {
                *a = (*a - first).rem_euclid(std::f64::consts::TAU);
            }
            let gap = std::f64::consts::TAU / cfg.n_particles as f64;
            for (i, a) in angles.iter().enumerate() {
                assert!((a - i as f64 * gap).abs() < 1e-9, "spoke {i} misplaced");
            }
        }
    }

    #[test]
    fn label_flip_is_single_and_simultaneous() {
        let cfg = WorldConfig::desk(21);
        let mut seen_switch = 0;
        for idx in 0..200 {
            let traj = simulate_sample(&cfg, idx, 70);
            let mut flips = 0;
            for t in 1..70 {
                if traj.phases[t] != traj.phases[t - 1] {
                    flips += 1;
                    assert_eq!(traj.phases[t - 1], Phase::Rigid);
                    assert_eq!(traj.phases[t], Phase::Free);
                }
            }
            assert!(flips <= 1, "at most one phase flip per window");
            if let Some(s) = traj.change_step {
                seen_switch += 1;
                assert_eq!(traj.phases[s], Phase::Free);
                assert!(s == 0 || traj.phases[s - 1] == Phase::Rigid);
                assert!(s > 0, "worlds start rigid above ground");
            }
        }
        assert!(seen_switch > 20, "default ranges produce plenty of switches");
    }

    #[test]
    fn rigid_distances_preserved_until_switch() {
        let cfg = WorldConfig::desk(31);
        for idx in 0..50 {
            let traj = simulate_sample(&cfg, idx, 70);
            let horizon = traj.change_step.unwrap_or(70);
            let n = cfg.n_particles;
            let d0: Vec<f64> = pair_distances(&traj.positions, 0, n);
            for t in 1..horizon {
                let dt = pair_distances(&traj.positions, t, n);
                for (a, b) in d0.iter().zip(dt.iter()) {
                    assert!((a - b).abs() < 1e-9, "distance drifted at step {t}");
                }
            }
        }
    }

    fn pair_distances(p: &Array3<f64>, t: usize, n: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = p[[t, i, 0]] - p[[t, j, 0]];
                let dy = p[[t, i, 1]] - p[[t, j, 1]];
                out.push((dx * dx + dy * dy).sqrt());
            }
        }
        out
    }

    #[test]
    fn angular_order_preserved_in_rigid_phase() {
        let w = WorldState::from_parts(5, [0.0, 30.0], 1.0, 0.1, [0.0, -0.05], 0.12);
        let mut state = w;
        for _ in 0..40 {
            state = step_world(&state);
            let c = state.centroid;
            let angles: Vec<f64> = (0..5)
                .map(|i| (state.positions[[i, 1]] - c[1]).atan2(state.positions[[i, 0]] - c[0]))
                .collect();
            // Successive spokes stay exactly one gap apart (mod 2*pi).
            for i in 0..5 {
                let diff = (angles[(i + 1) % 5] - angles[i]).rem_euclid(std::f64::consts::TAU);
                assert!((diff - 2.0 * PI / 5.0).abs() < 1e-9);
            }
        }
    }
}
