//! Measurement matrix construction: dead reckoning, the range grid,
//! windowed interpolation for sparse logs, and the rank-4 / rank-7
//! matrix builders.
//!
//! The odometry clock defines the grid columns: range readings are
//! assigned to the nearest odometry timestep. Grid entries hold halved
//! squared ranges (`d^2/2`) so that the matrices factor exactly as
//! `Y = C X` with the encodings from [`crate::geometry`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{
    landmark_to_row, pose_to_col, pose_to_col4, Landmark, OdometryStep, Pose, RangeReading,
    VELOCITY_FLOOR,
};
use crate::linalg;

/// Default interpolation window, in odometry steps.
pub const DEFAULT_WINDOW: usize = 100;
/// Default window overlap (50%).
pub const DEFAULT_OVERLAP: usize = 50;
/// Minimum readings of a landmark inside a window before it widens.
pub const MIN_WINDOW_READINGS: usize = 5;

/// Dense or partially observed grid of halved squared ranges.
#[derive(Debug, Clone)]
pub struct RangeGrid {
    /// `n_landmarks x n_timesteps` of `d^2/2`; unobserved cells are NaN
    /// until interpolation fills them.
    pub values: DMatrix<f64>,
    /// True where the entry came from an actual reading.
    pub mask: DMatrix<bool>,
    pub timesteps: Vec<f64>,
    pub landmark_ids: Vec<u32>,
}

impl RangeGrid {
    pub fn n_landmarks(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_timesteps(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_dense(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Row index of a landmark id.
    pub fn row_of(&self, id: u32) -> Option<usize> {
        self.landmark_ids.iter().position(|&l| l == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    Rank4,
    Rank7,
}

/// The dense measurement matrix handed to the spectral solver.
#[derive(Debug, Clone)]
pub struct MeasurementMatrix {
    pub y: DMatrix<f64>,
    pub kind: MatrixKind,
    /// Time of each retained column.
    pub col_times: Vec<f64>,
    /// Grid timestep index of each retained column.
    pub col_steps: Vec<usize>,
    /// Per-column velocity (rank-7 only).
    pub velocities: Option<Vec<f64>>,
    pub landmark_ids: Vec<u32>,
}

/// Integrate odometry from `start` under the noiseless kinematics.
/// Returns `odometry.len() + 1` poses.
pub fn dead_reckon(odometry: &[OdometryStep], start: Pose) -> Vec<Pose> {
    let mut poses = Vec::with_capacity(odometry.len() + 1);
    poses.push(start);
    let mut pose = start;
    for step in odometry {
        pose = pose.step(step.v, step.omega);
        poses.push(pose);
    }
    poses
}

/// Pose timestamps implied by an odometry log: each step's start time,
/// plus one final timestep extrapolated from the last interval.
pub fn timesteps_from_odometry(odometry: &[OdometryStep]) -> Vec<f64> {
    let mut times: Vec<f64> = odometry.iter().map(|o| o.time).collect();
    let last_dt = if odometry.len() >= 2 {
        odometry[odometry.len() - 1].time - odometry[odometry.len() - 2].time
    } else {
        1.0
    };
    match odometry.last() {
        Some(last) => times.push(last.time + last_dt),
        None => times.push(0.0),
    }
    times
}

/// Index of the timestep nearest to `t` (times ascending).
pub fn nearest_time_index(times: &[f64], t: f64) -> usize {
    match times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
        Ok(i) => i,
        Err(0) => 0,
        Err(i) if i >= times.len() => times.len() - 1,
        Err(i) => {
            if (t - times[i - 1]).abs() <= (times[i] - t).abs() {
                i - 1
            } else {
                i
            }
        }
    }
}

/// Bucket readings onto the odometry clock. Multiple readings of one
/// landmark at one timestep are averaged. Unobserved cells are NaN.
pub fn observed_grid(readings: &[RangeReading], odometry: &[OdometryStep]) -> RangeGrid {
    let times = timesteps_from_odometry(odometry);
    let mut ids: Vec<u32> = readings.iter().map(|r| r.landmark_id).collect();
    ids.sort_unstable();
    ids.dedup();

    let n = ids.len();
    let t = times.len();
    let mut sums = DMatrix::<f64>::zeros(n, t);
    let mut counts = DMatrix::<u32>::zeros(n, t);
    for r in readings {
        let row = ids.binary_search(&r.landmark_id).expect("id collected above");
        let col = nearest_time_index(&times, r.time);
        sums[(row, col)] += 0.5 * r.range * r.range;
        counts[(row, col)] += 1;
    }

    let mut values = DMatrix::from_element(n, t, f64::NAN);
    let mut mask = DMatrix::from_element(n, t, false);
    for row in 0..n {
        for col in 0..t {
            if counts[(row, col)] > 0 {
                values[(row, col)] = sums[(row, col)] / counts[(row, col)] as f64;
                mask[(row, col)] = true;
            }
        }
    }
    RangeGrid {
        values,
        mask,
        timesteps: times,
        landmark_ids: ids,
    }
}

/// Fill unobserved grid cells by windowed local regression.
///
/// Each window dead-reckons a local path, fits a linear model from the
/// 4-dim pose features to the observed halved squared ranges (one model
/// per landmark), and predicts the full window. Windows that see fewer
/// than [`MIN_WINDOW_READINGS`] readings of a landmark widen until they
/// do. Overlapping predictions are averaged; observed entries always win.
pub fn interpolate_missing(
    readings: &[RangeReading],
    odometry: &[OdometryStep],
    window: usize,
    overlap: usize,
) -> Result<RangeGrid> {
    if window == 0 || overlap >= window {
        return Err(Error::InvalidConfig(
            "window must be positive and larger than overlap".into(),
        ));
    }
    let mut grid = observed_grid(readings, odometry);
    let n = grid.n_landmarks();
    let t = grid.n_timesteps();

    // Per-landmark observed column lists, and the global sanity guard.
    let mut observed_cols: Vec<Vec<usize>> = vec![Vec::new(); n];
    for row in 0..n {
        for col in 0..t {
            if grid.mask[(row, col)] {
                observed_cols[row].push(col);
            }
        }
        if observed_cols[row].len() < 4 {
            return Err(Error::InsufficientData {
                landmark_id: grid.landmark_ids[row],
                readings: observed_cols[row].len(),
            });
        }
    }

    if grid.is_dense() {
        return Ok(grid);
    }

    let stride = window - overlap;
    let mut pred_sum = DMatrix::<f64>::zeros(n, t);
    let mut pred_count = DMatrix::<u32>::zeros(n, t);

    let mut start = 0usize;
    loop {
        let end = (start + window).min(t);
        for row in 0..n {
            let missing = (start..end).any(|c| !grid.mask[(row, c)]);
            if !missing {
                continue;
            }

            // Widen until the landmark has enough readings in [lo, hi).
            let (mut lo, mut hi) = (start, end);
            loop {
                let count = count_in(&observed_cols[row], lo, hi);
                if count >= MIN_WINDOW_READINGS || (lo == 0 && hi == t) {
                    break;
                }
                lo = lo.saturating_sub(window);
                hi = (hi + window).min(t);
            }
            let obs: Vec<usize> = observed_cols[row]
                .iter()
                .copied()
                .filter(|&c| c >= lo && c < hi)
                .collect();
            if obs.len() < 4 {
                return Err(Error::InsufficientData {
                    landmark_id: grid.landmark_ids[row],
                    readings: obs.len(),
                });
            }

            // Local frame: dead-reckon from the window start.
            let local = dead_reckon(&odometry[lo..hi - 1], Pose::new(0.0, 0.0, 0.0));
            let mut a = DMatrix::zeros(obs.len(), 4);
            let mut b = DMatrix::zeros(obs.len(), 1);
            for (i, &c) in obs.iter().enumerate() {
                a.row_mut(i).copy_from(&pose_to_col4(&local[c - lo]).transpose());
                b[(i, 0)] = grid.values[(row, c)];
            }
            let coeffs = linalg::lstsq(&a, &b);

            for c in start..end {
                if grid.mask[(row, c)] {
                    continue;
                }
                let f = pose_to_col4(&local[c - lo]);
                let pred = (f.transpose() * &coeffs)[(0, 0)].max(0.0);
                pred_sum[(row, c)] += pred;
                pred_count[(row, c)] += 1;
            }
        }

        if end == t {
            break;
        }
        start += stride;
    }

    for row in 0..n {
        for col in 0..t {
            if !grid.mask[(row, col)] {
                debug_assert!(pred_count[(row, col)] > 0);
                grid.values[(row, col)] = pred_sum[(row, col)] / pred_count[(row, col)] as f64;
            }
        }
    }
    Ok(grid)
}

fn count_in(sorted: &[usize], lo: usize, hi: usize) -> usize {
    let a = sorted.partition_point(|&c| c < lo);
    let b = sorted.partition_point(|&c| c < hi);
    b - a
}

/// Rank-4 matrix: `Y[n, t] = d^2 / 2`.
pub fn build_rank4(grid: &RangeGrid) -> Result<MeasurementMatrix> {
    if !grid.is_dense() {
        return Err(Error::InvalidConfig(
            "range grid has unobserved, uninterpolated entries".into(),
        ));
    }
    Ok(MeasurementMatrix {
        y: grid.values.clone(),
        kind: MatrixKind::Rank4,
        col_times: grid.timesteps.clone(),
        col_steps: (0..grid.n_timesteps()).collect(),
        velocities: None,
        landmark_ids: grid.landmark_ids.clone(),
    })
}

/// Rank-7 matrix: halved squared ranges stacked over velocity-scaled
/// successive differences. Columns whose velocity falls below `floor`
/// (pass `None` for the default) are dropped.
pub fn build_rank7(
    grid: &RangeGrid,
    odometry: &[OdometryStep],
    floor: Option<f64>,
) -> Result<MeasurementMatrix> {
    if !grid.is_dense() {
        return Err(Error::InvalidConfig(
            "range grid has unobserved, uninterpolated entries".into(),
        ));
    }
    let t = grid.n_timesteps();
    if odometry.len() + 1 != t {
        return Err(Error::LengthMismatch {
            left: odometry.len() + 1,
            right: t,
        });
    }
    let floor = floor.unwrap_or(VELOCITY_FLOOR);
    let n = grid.n_landmarks();

    let kept: Vec<usize> = (0..t - 1)
        .filter(|&c| odometry[c].v.abs() >= floor)
        .collect();
    if kept.is_empty() {
        return Err(Error::AllColumnsDropped);
    }

    let mut y = DMatrix::zeros(2 * n, kept.len());
    for (out_col, &c) in kept.iter().enumerate() {
        let v = odometry[c].v;
        for row in 0..n {
            let here = grid.values[(row, c)];
            let next = grid.values[(row, c + 1)];
            y[(row, out_col)] = here;
            // (d^2_{t+1} - d^2_t) / (2 v_t); grid already holds d^2/2.
            y[(n + row, out_col)] = (next - here) / v;
        }
    }

    Ok(MeasurementMatrix {
        y,
        kind: MatrixKind::Rank7,
        col_times: kept.iter().map(|&c| grid.timesteps[c]).collect(),
        col_steps: kept.clone(),
        velocities: Some(kept.iter().map(|&c| odometry[c].v).collect()),
        landmark_ids: grid.landmark_ids.clone(),
    })
}

// ---------------------------------------------------------------------
// Ground-truth factor matrices (Y = C X). Used by tests and by the
// evaluation harness to compare learned models against the truth.
// ---------------------------------------------------------------------

/// `N x 4` landmark model matrix.
pub fn landmark_model_rank4(landmarks: &[Landmark]) -> DMatrix<f64> {
    DMatrix::from_fn(landmarks.len(), 4, |i, j| landmark_to_row(&landmarks[i])[j])
}

/// `4 x T` state matrix.
pub fn state_matrix_rank4(poses: &[Pose]) -> DMatrix<f64> {
    DMatrix::from_fn(4, poses.len(), |i, t| pose_to_col4(&poses[t])[i])
}

/// `2N x 7` landmark model matrix (positional block over heading block).
pub fn landmark_model_rank7(landmarks: &[Landmark]) -> DMatrix<f64> {
    let n = landmarks.len();
    let mut c = DMatrix::zeros(2 * n, 7);
    for (i, lm) in landmarks.iter().enumerate() {
        let row = landmark_to_row(lm);
        for k in 0..4 {
            c[(i, k)] = row[k];
        }
        c[(n + i, 4)] = lm.x;
        c[(n + i, 5)] = lm.y;
        c[(n + i, 6)] = 1.0;
    }
    c
}

/// `7 x (T-1)` state matrix for the velocity-differenced features.
/// `velocities[t]` is the translation from pose `t` to `t+1`.
pub fn state_matrix_rank7(poses: &[Pose], velocities: &[f64]) -> Result<DMatrix<f64>> {
    if poses.len() != velocities.len() + 1 {
        return Err(Error::LengthMismatch {
            left: poses.len(),
            right: velocities.len() + 1,
        });
    }
    let cols: Result<Vec<DVector<f64>>> = (0..poses.len() - 1)
        .map(|t| {
            pose_to_col(&poses[t], &poses[t + 1], velocities[t])
                .map(|s| DVector::from_column_slice(s.as_slice()))
        })
        .collect();
    Ok(DMatrix::from_columns(&cols?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_environment, generate_ranges, simulate_trajectory, SimConfig};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn odom(v: f64, omega: f64, n: usize) -> Vec<OdometryStep> {
        (0..n)
            .map(|t| OdometryStep {
                time: t as f64,
                v,
                omega,
            })
            .collect()
    }

    #[test]
    fn dead_reckon_examples() {
        let poses = dead_reckon(&odom(1.0, 0.0, 3), Pose::new(0.0, 0.0, 0.0));
        assert_eq!(poses.len(), 4);
        assert_relative_eq!(poses[3].x, 3.0, epsilon = 1e-12);
        assert_relative_eq!(poses[3].y, 0.0, epsilon = 1e-12);

        let loop_poses = dead_reckon(&odom(1.0, PI / 2.0, 4), Pose::new(0.0, 0.0, 0.0));
        assert!(loop_poses[4].x.abs() < 1e-9 && loop_poses[4].y.abs() < 1e-9);

        let only_start = dead_reckon(&[], Pose::new(2.0, 3.0, 1.0));
        assert_eq!(only_start, vec![Pose::new(2.0, 3.0, 1.0)]);
    }

    #[test]
    fn rank4_column_by_hand() {
        // Four unit-square landmarks, robot at the center: d^2/2 = 0.25.
        let lms = [
            Landmark::new(0, 0.0, 0.0),
            Landmark::new(1, 1.0, 0.0),
            Landmark::new(2, 0.0, 1.0),
            Landmark::new(3, 1.0, 1.0),
        ];
        let pose = Pose::new(0.5, 0.5, 0.0);
        let readings: Vec<RangeReading> = lms
            .iter()
            .map(|lm| RangeReading {
                time: 0.0,
                landmark_id: lm.id,
                range: crate::geometry::squared_range(lm, &pose).sqrt(),
            })
            .collect();
        let grid = observed_grid(&readings, &[]);
        let m = build_rank4(&grid).unwrap();
        for row in 0..4 {
            assert_relative_eq!(m.y[(row, 0)], 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn rank7_bottom_entry_by_hand() {
        // Landmark at the origin, robot moving (1,0) -> (2,0) at v = 1:
        // (d^2_{t+1} - d^2_t) / (2 v) = (4 - 1) / 2 = 1.5.
        let readings = vec![
            RangeReading {
                time: 0.0,
                landmark_id: 0,
                range: 1.0,
            },
            RangeReading {
                time: 1.0,
                landmark_id: 0,
                range: 2.0,
            },
        ];
        let odometry = odom(1.0, 0.0, 1);
        let grid = observed_grid(&readings, &odometry);
        let m = build_rank7(&grid, &odometry, None).unwrap();
        assert_eq!(m.y.nrows(), 2);
        assert_eq!(m.y.ncols(), 1);
        assert_relative_eq!(m.y[(0, 0)], 0.5, epsilon = 1e-12);
        assert_relative_eq!(m.y[(1, 0)], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn zero_velocity_columns_dropped() {
        let readings: Vec<RangeReading> = (0..4)
            .map(|t| RangeReading {
                time: t as f64,
                landmark_id: 0,
                range: 1.0,
            })
            .collect();
        let mut odometry = odom(1.0, 0.0, 3);
        odometry[1].v = 0.0;
        let grid = observed_grid(&readings, &odometry);
        let m = build_rank7(&grid, &odometry, None).unwrap();
        assert_eq!(m.y.ncols(), 2);
        assert_eq!(m.col_steps, vec![0, 2]);

        odometry.iter_mut().for_each(|o| o.v = 0.0);
        assert!(matches!(
            build_rank7(&grid, &odometry, None),
            Err(Error::AllColumnsDropped)
        ));
    }

    fn noiseless_setup(n_landmarks: usize, n_steps: usize, seed: u64) -> (SimConfig, Vec<Landmark>, crate::sim::Trajectory, Vec<RangeReading>) {
        let config = SimConfig {
            n_landmarks,
            n_steps,
            range_noise_frac: 0.0,
            seed,
            ..Default::default()
        };
        let lms = generate_environment(&config).unwrap();
        let traj = simulate_trajectory(&config).unwrap();
        let readings = generate_ranges(&lms, &traj.poses, &config);
        (config, lms, traj, readings)
    }

    #[test]
    fn rank4_factorization_identity() {
        let (_, lms, traj, readings) = noiseless_setup(6, 120, 11);
        let grid = observed_grid(&readings, &traj.odometry);
        let m = build_rank4(&grid).unwrap();
        let c = landmark_model_rank4(&lms);
        let x = state_matrix_rank4(&traj.poses);
        let product = &c * &x;
        for (a, b) in m.y.iter().zip(product.iter()) {
            assert_relative_eq!(a, b, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn rank4_numerical_rank_is_four() {
        let (_, _, traj, readings) = noiseless_setup(6, 500, 5);
        let grid = observed_grid(&readings, &traj.odometry);
        let m = build_rank4(&grid).unwrap();
        let sv = linalg::singular_values(&m.y);
        assert!(sv[4] / sv[0] < 1e-10, "sigma5/sigma1 = {}", sv[4] / sv[0]);
        assert!(sv[3] / sv[0] > 1e-8);
    }

    #[test]
    fn rank7_factorization_identity_and_rank() {
        let (_, lms, traj, readings) = noiseless_setup(6, 400, 9);
        let grid = observed_grid(&readings, &traj.odometry);
        let m = build_rank7(&grid, &traj.odometry, None).unwrap();

        let c = landmark_model_rank7(&lms);
        let velocities: Vec<f64> = traj.odometry.iter().map(|o| o.v).collect();
        let x = state_matrix_rank7(&traj.poses, &velocities).unwrap();
        let product = &c * &x;
        // No columns dropped here: the walk keeps v well above the floor.
        assert_eq!(m.y.ncols(), product.ncols());
        for (a, b) in m.y.iter().zip(product.iter()) {
            assert_relative_eq!(a, b, max_relative = 1e-9, epsilon = 1e-10);
        }

        let sv = linalg::singular_values(&m.y);
        assert!(sv[7] / sv[0] < 1e-10, "sigma8/sigma1 = {}", sv[7] / sv[0]);
        assert!(sv[6] / sv[0] > 1e-10);
    }

    #[test]
    fn interpolation_is_identity_on_dense_data() {
        let (_, _, traj, readings) = noiseless_setup(5, 200, 21);
        let grid = interpolate_missing(&readings, &traj.odometry, DEFAULT_WINDOW, DEFAULT_OVERLAP)
            .unwrap();
        let reference = observed_grid(&readings, &traj.odometry);
        assert_eq!(grid.values, reference.values);
        assert!(grid.mask.iter().all(|&m| m));
    }

    #[test]
    fn interpolation_recovers_dropped_entries() {
        // Noiseless ranges, exact odometry, 50% dropout: interpolated
        // squared ranges match the simulator truth.
        let config = SimConfig {
            n_landmarks: 6,
            n_steps: 400,
            range_noise_frac: 0.0,
            dropout_prob: 0.5,
            seed: 13,
            ..Default::default()
        };
        let lms = generate_environment(&config).unwrap();
        let traj = simulate_trajectory(&config).unwrap();
        let readings = generate_ranges(&lms, &traj.poses, &config);
        let grid =
            interpolate_missing(&readings, &traj.odometry, DEFAULT_WINDOW, DEFAULT_OVERLAP)
                .unwrap();
        let mut worst: f64 = 0.0;
        for (row, lm) in lms.iter().enumerate() {
            for (t, pose) in traj.poses.iter().enumerate() {
                let truth = 0.5 * crate::geometry::squared_range(lm, pose);
                let got = grid.values[(row, t)];
                let rel = (got - truth).abs() / truth.abs().max(1e-9);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-6, "worst relative interpolation error {worst}");
    }

    #[test]
    fn landmark_with_three_readings_rejected() {
        let (_, _, traj, mut readings) = noiseless_setup(3, 100, 2);
        readings.retain(|r| r.landmark_id != 2 || r.time < 3.0);
        let err = interpolate_missing(&readings, &traj.odometry, 50, 25).unwrap_err();
        assert!(matches!(err, Error::InsufficientData { landmark_id: 2, readings: 3 }));
    }

    #[test]
    fn sparse_grid_rejected_by_builders() {
        let readings = vec![
            RangeReading { time: 0.0, landmark_id: 0, range: 1.0 },
            RangeReading { time: 2.0, landmark_id: 0, range: 1.0 },
        ];
        let odometry = odom(1.0, 0.0, 2);
        let grid = observed_grid(&readings, &odometry);
        assert!(!grid.is_dense());
        assert!(build_rank4(&grid).is_err());
        assert!(build_rank7(&grid, &odometry, None).is_err());
    }
}
