//! Synthetic environments, trajectories, and noisy range/odometry logs.
//!
//! Two motion policies are provided: a smoothed random walk (velocity
//! uniform in a band, heading increments low-pass filtered) which stays
//! generic in the nonsingularity sense, and a lawnmower pattern for
//! Plaza-style paths. Poses follow the unicycle kinematics exactly under
//! the noiseless actions; the odometry log carries the noise-corrupted
//! actions. Every draw comes from a seeded, stream-separated RNG so logs
//! are bitwise reproducible.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{Landmark, OdometryStep, Pose, RangeReading};

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n_landmarks: usize,
    pub n_steps: usize,
    /// Square arena half-width in meters.
    pub arena: f64,
    /// Range noise sigma as a fraction of the true range.
    pub range_noise_frac: f64,
    /// Odometry noise sigmas `(sigma_v, sigma_omega)`.
    pub odom_noise: (f64, f64),
    /// Probability that an individual range reading is dropped.
    pub dropout_prob: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_landmarks: 6,
            n_steps: 500,
            arena: 10.0,
            range_noise_frac: 0.01,
            odom_noise: (0.0, 0.0),
            dropout_prob: 0.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_landmarks < 1 {
            return Err(Error::InvalidConfig("n_landmarks must be >= 1".into()));
        }
        if self.n_steps < 2 {
            return Err(Error::InvalidConfig("n_steps must be >= 2".into()));
        }
        if !(self.arena > 0.0) {
            return Err(Error::InvalidConfig("arena must be positive".into()));
        }
        for (name, frac) in [
            ("range_noise_frac", self.range_noise_frac),
            ("dropout_prob", self.dropout_prob),
        ] {
            if !(0.0..=1.0).contains(&frac) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0,1]")));
            }
        }
        if self.odom_noise.0 < 0.0 || self.odom_noise.1 < 0.0 {
            return Err(Error::InvalidConfig("odometry sigmas must be >= 0".into()));
        }
        Ok(())
    }
}

/// True poses plus the (possibly noisy) odometry log.
/// `poses.len() == odometry.len() + 1`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    pub odometry: Vec<OdometryStep>,
}

// RNG streams; one per independent noise source.
const STREAM_ENV: u64 = 0;
const STREAM_PATH: u64 = 1;
const STREAM_ODOM: u64 = 2;
const STREAM_RANGE: u64 = 3;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Place `n_landmarks` uniformly in the arena.
pub fn generate_environment(config: &SimConfig) -> Result<Vec<Landmark>> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, STREAM_ENV);
    Ok((0..config.n_landmarks)
        .map(|id| {
            let x = rng.random_range(-config.arena..config.arena);
            let y = rng.random_range(-config.arena..config.arena);
            Landmark::new(id as u32, x, y)
        })
        .collect())
}

/// Smoothed random walk: per-step translation uniform in a band scaled to
/// the arena, heading increments AR-filtered, with steering back toward
/// the center near the boundary.
pub fn simulate_trajectory(config: &SimConfig) -> Result<Trajectory> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, STREAM_PATH);
    let steer = Normal::new(0.0, 0.08).expect("valid sigma");

    let v_lo = 0.03 * config.arena;
    let v_hi = 0.07 * config.arena;
    let mut pose = Pose::new(0.0, 0.0, rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
    let mut omega_prev = 0.0f64;

    let mut actions = Vec::with_capacity(config.n_steps - 1);
    let mut poses = Vec::with_capacity(config.n_steps);
    poses.push(pose);
    for _ in 0..config.n_steps - 1 {
        let v = rng.random_range(v_lo..v_hi);
        let mut omega = 0.9 * omega_prev + steer.sample(&mut rng);
        omega = omega.clamp(-0.5, 0.5);

        let candidate = pose.step(v, omega);
        if candidate.x.abs() > config.arena || candidate.y.abs() > config.arena {
            let toward_center = (-pose.y).atan2(-pose.x);
            omega = crate::geometry::normalize_angle(toward_center - pose.theta).clamp(-0.6, 0.6);
        }

        actions.push((v, omega));
        pose = pose.step(v, omega);
        poses.push(pose);
        omega_prev = omega;
    }

    Ok(Trajectory {
        poses,
        odometry: corrupt_actions(&actions, config),
    })
}

/// Boustrophedon mowing pattern: straight rows joined by two quarter
/// turns around a short spacing leg, alternating turn direction.
pub fn simulate_lawnmower(config: &SimConfig, row_steps: usize, spacing_steps: usize) -> Result<Trajectory> {
    config.validate()?;
    if row_steps < 2 {
        return Err(Error::InvalidConfig("row_steps must be >= 2".into()));
    }
    let step_len = 2.0 * config.arena / (row_steps as f64 + 1.0);
    let quarter = std::f64::consts::FRAC_PI_2 / 2.0;

    let mut actions: Vec<(f64, f64)> = Vec::with_capacity(config.n_steps - 1);
    let mut turn_left = true;
    'outer: loop {
        for _ in 0..row_steps {
            if actions.len() + 1 >= config.n_steps {
                break 'outer;
            }
            actions.push((step_len, 0.0));
        }
        let sign = if turn_left { 1.0 } else { -1.0 };
        let turn_pattern: Vec<(f64, f64)> = std::iter::repeat_n((step_len, sign * quarter), 2)
            .chain(std::iter::repeat_n((step_len, 0.0), spacing_steps))
            .chain(std::iter::repeat_n((step_len, sign * quarter), 2))
            .collect();
        for a in turn_pattern {
            if actions.len() + 1 >= config.n_steps {
                break 'outer;
            }
            actions.push(a);
        }
        turn_left = !turn_left;
    }

    let start = Pose::new(-config.arena * 0.9, -config.arena * 0.9, 0.0);
    let mut poses = Vec::with_capacity(config.n_steps);
    poses.push(start);
    let mut pose = start;
    for &(v, omega) in &actions {
        pose = pose.step(v, omega);
        poses.push(pose);
    }

    Ok(Trajectory {
        poses,
        odometry: corrupt_actions(&actions, config),
    })
}

fn corrupt_actions(actions: &[(f64, f64)], config: &SimConfig) -> Vec<OdometryStep> {
    let mut rng = stream_rng(config.seed, STREAM_ODOM);
    let (sigma_v, sigma_w) = config.odom_noise;
    let noise_v = Normal::new(0.0, sigma_v.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let noise_w = Normal::new(0.0, sigma_w.max(f64::MIN_POSITIVE)).expect("valid sigma");
    actions
        .iter()
        .enumerate()
        .map(|(t, &(v, omega))| {
            let dv = if sigma_v > 0.0 { noise_v.sample(&mut rng) } else { 0.0 };
            let dw = if sigma_w > 0.0 { noise_w.sample(&mut rng) } else { 0.0 };
            OdometryStep {
                time: t as f64,
                v: v + dv,
                omega: omega + dw,
            }
        })
        .collect()
}

/// Range readings with sigma proportional to the true range, independent
/// dropout, and negative readings clamped to zero. Reading times follow the
/// pose index (one unit per odometry interval).
pub fn generate_ranges(
    landmarks: &[Landmark],
    poses: &[Pose],
    config: &SimConfig,
) -> Vec<RangeReading> {
    let mut rng = stream_rng(config.seed, STREAM_RANGE);
    let gauss = Normal::new(0.0, 1.0).expect("valid sigma");
    let mut readings = Vec::new();
    for (t, pose) in poses.iter().enumerate() {
        for lm in landmarks {
            // Draw in fixed order so dropout does not shift the noise stream.
            let u: f64 = rng.random();
            let z = gauss.sample(&mut rng);
            if u < config.dropout_prob {
                continue;
            }
            let true_range = crate::geometry::squared_range(lm, pose).sqrt();
            let noisy = true_range + z * config.range_noise_frac * true_range;
            readings.push(RangeReading {
                time: t as f64,
                landmark_id: lm.id,
                range: noisy.max(0.0),
            });
        }
    }
    readings
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn environment_is_deterministic_and_bounded() {
        let config = SimConfig {
            n_landmarks: 100,
            arena: 10.0,
            ..Default::default()
        };
        let a = generate_environment(&config).unwrap();
        let b = generate_environment(&config).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|lm| lm.x.abs() <= 10.0 && lm.y.abs() <= 10.0));
    }

    #[test]
    fn zero_landmarks_rejected() {
        let config = SimConfig {
            n_landmarks: 0,
            ..Default::default()
        };
        assert!(matches!(
            generate_environment(&config),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn straight_line_kinematics() {
        // v = 1, omega = 0 from the origin: poses at (t, 0, 0).
        let start = Pose::new(0.0, 0.0, 0.0);
        let mut pose = start;
        for t in 1..=5 {
            pose = pose.step(1.0, 0.0);
            assert_relative_eq!(pose.x, t as f64, epsilon = 1e-12);
            assert_relative_eq!(pose.y, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn square_loop_returns_to_start() {
        // Four steps of v = 1, omega = pi/2 close a square.
        let mut pose = Pose::new(0.0, 0.0, 0.0);
        for _ in 0..4 {
            pose = pose.step(1.0, PI / 2.0);
        }
        assert!(pose.x.abs() < 1e-9 && pose.y.abs() < 1e-9);
    }

    #[test]
    fn noisy_logs_reproducible() {
        let config = SimConfig {
            odom_noise: (0.01, 0.005),
            range_noise_frac: 0.01,
            dropout_prob: 0.3,
            seed: 42,
            ..Default::default()
        };
        let t1 = simulate_trajectory(&config).unwrap();
        let t2 = simulate_trajectory(&config).unwrap();
        assert_eq!(t1.poses, t2.poses);
        assert_eq!(t1.odometry, t2.odometry);
        let lms = generate_environment(&config).unwrap();
        let r1 = generate_ranges(&lms, &t1.poses, &config);
        let r2 = generate_ranges(&lms, &t2.poses, &config);
        assert_eq!(r1, r2);
    }

    #[test]
    fn trajectory_stays_near_arena() {
        let config = SimConfig {
            n_steps: 5000,
            seed: 7,
            ..Default::default()
        };
        let traj = simulate_trajectory(&config).unwrap();
        assert_eq!(traj.poses.len(), 5000);
        assert_eq!(traj.odometry.len(), 4999);
        for p in &traj.poses {
            assert!(p.x.abs() < 1.5 * config.arena && p.y.abs() < 1.5 * config.arena);
        }
    }

    #[test]
    fn noiseless_ranges_are_exact_and_dropout_one_empties() {
        let config = SimConfig {
            range_noise_frac: 0.0,
            ..Default::default()
        };
        let lms = generate_environment(&config).unwrap();
        let traj = simulate_trajectory(&config).unwrap();
        let readings = generate_ranges(&lms, &traj.poses, &config);
        assert_eq!(readings.len(), config.n_steps * config.n_landmarks);
        for r in readings.iter().take(200) {
            let t = r.time as usize;
            let lm = lms[r.landmark_id as usize];
            let truth = crate::geometry::squared_range(&lm, &traj.poses[t]).sqrt();
            assert_relative_eq!(r.range, truth, epsilon = 1e-12);
        }

        let all_dropped = SimConfig {
            dropout_prob: 1.0,
            ..config
        };
        assert!(generate_ranges(&lms, &traj.poses, &all_dropped).is_empty());
    }

    #[test]
    fn range_noise_scale_matches_model() {
        // Monte Carlo: sigma = frac * range. 1e5 samples at range 10 with
        // frac 0.01 puts the sample std of the error in [0.095, 0.105].
        let config = SimConfig {
            n_landmarks: 1,
            n_steps: 100_000,
            range_noise_frac: 0.01,
            seed: 3,
            ..Default::default()
        };
        let lm = Landmark::new(0, 10.0, 0.0);
        let poses = vec![Pose::new(0.0, 0.0, 0.0); 100_000];
        let readings = generate_ranges(&[lm], &poses, &config);
        let errs: Vec<f64> = readings.iter().map(|r| r.range - 10.0).collect();
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (errs.len() - 1) as f64;
        let std = var.sqrt();
        assert!((0.095..=0.105).contains(&std), "sample std {std}");
    }

    #[test]
    fn lawnmower_balances_turns() {
        let config = SimConfig {
            n_steps: 2000,
            arena: 30.0,
            seed: 1,
            ..Default::default()
        };
        let traj = simulate_lawnmower(&config, 100, 4).unwrap();
        assert_eq!(traj.poses.len(), 2000);
        let net_rotation: f64 = traj.odometry.iter().map(|o| o.omega).sum();
        // Serpentine rows alternate left and right turn pairs.
        assert!(net_rotation.abs() < PI + 1e-9, "net rotation {net_rotation}");
    }
}
