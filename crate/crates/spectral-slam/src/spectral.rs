//! Spectral SLAM: factorize the measurement matrix, align the factors to
//! anchor landmarks, decode the map and trajectory, and optionally stream
//! columns through an incremental SVD.
//!
//! A rank-4 factorization is aligned by regressing the anchor rows of `U`
//! onto their landmark-row targets. For rank-7 the top block of `U` first
//! has its 3-dimensional nullspace removed; the reduced positional frame
//! is aligned the same way and headings are then recovered from successive
//! positions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{landmark_to_row, normalize_angle, Landmark, Pose};
use crate::linalg;
use crate::measurement::{MatrixKind, MeasurementMatrix};

/// Minimum spectral gap `sigma4 / sigma5` of the top block required to
/// call the 3-dimensional nullspace "clear".
pub const NULLSPACE_GAP: f64 = 10.0;

/// Truncated SVD factors of a measurement matrix.
#[derive(Debug, Clone)]
pub struct FactoredModel {
    /// Left singular vectors, `rows x rank`.
    pub u: DMatrix<f64>,
    /// Singular values, descending.
    pub lambda: DVector<f64>,
    /// Right singular vectors, `cols x rank`.
    pub v: DMatrix<f64>,
    pub rank: usize,
}

impl FactoredModel {
    /// `Lambda V^T`: the latent state trajectory, `rank x cols`.
    pub fn latent_states(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.lambda) * self.v.transpose()
    }

    /// Rank-`r` reconstruction `U Lambda V^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * self.latent_states()
    }
}

/// Reference frame of a decoded solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    /// Metrically correct, anchored to known landmark coordinates.
    Anchored,
    /// Metrically correct up to an orthogonal transform (and translation).
    UpToOrthogonal,
}

/// Decoded SLAM output: the landmark model, state matrix, and their
/// geometric readout.
#[derive(Debug, Clone)]
pub struct SlamSolution {
    /// Canonical `N x 4` landmark model (rows `[q, mx, my, 1]`).
    pub c: DMatrix<f64>,
    /// Canonical `4 x T` state matrix (columns `[1, -x, -y, q]`).
    pub x: DMatrix<f64>,
    pub map: Vec<Landmark>,
    pub trajectory: Vec<Pose>,
    pub frame: Frame,
    /// Time of each trajectory entry (matrix column).
    pub col_times: Vec<f64>,
    /// Grid timestep index of each trajectory entry.
    pub col_steps: Vec<usize>,
}

/// Truncated SVD of `Y` keeping `rank` components.
pub fn factorize(matrix: &MeasurementMatrix, rank: usize) -> Result<FactoredModel> {
    factorize_raw(&matrix.y, rank)
}

/// [`factorize`] on a bare matrix.
pub fn factorize_raw(y: &DMatrix<f64>, rank: usize) -> Result<FactoredModel> {
    if rank == 0 || rank > y.nrows().min(y.ncols()) {
        return Err(Error::DimensionMismatch {
            expected: y.nrows().min(y.ncols()),
            got: rank,
        });
    }
    let svd = y.clone().svd(true, true);
    let sv = &svd.singular_values;
    if sv[0] <= 0.0 || sv[rank - 1] / sv[0] < 1e-13 {
        return Err(Error::DegenerateInput(format!(
            "requested rank {rank} exceeds numerical rank (sigma_r/sigma_1 = {:.3e})",
            if sv[0] > 0.0 { sv[rank - 1] / sv[0] } else { 0.0 }
        )));
    }
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    Ok(FactoredModel {
        u: u.columns(0, rank).into_owned(),
        lambda: DVector::from_iterator(rank, sv.iter().take(rank).copied()),
        v: v_t.rows(0, rank).transpose(),
        rank,
    })
}

/// Output of the rank-7 nullspace elimination.
#[derive(Debug, Clone)]
pub struct NullspaceReduction {
    /// `N x 4` reduced positional basis (top block restricted to its
    /// row space).
    pub basis: DMatrix<f64>,
    /// `7 x 4` restriction map (orthonormal columns).
    pub restriction: DMatrix<f64>,
    /// Singular values of the top block, descending.
    pub top_singular_values: DVector<f64>,
}

/// Remove the 3-dimensional nullspace of the top `N x 7` block of `U`.
pub fn eliminate_nullspace(model: &FactoredModel, n_landmarks: usize) -> Result<NullspaceReduction> {
    if model.rank != 7 {
        return Err(Error::DimensionMismatch {
            expected: 7,
            got: model.rank,
        });
    }
    if model.u.nrows() != 2 * n_landmarks {
        return Err(Error::DimensionMismatch {
            expected: 2 * n_landmarks,
            got: model.u.nrows(),
        });
    }
    let top = model.u.rows(0, n_landmarks).into_owned();
    reduce_top_block(&top).map_err(|gap| Error::SingularLandmarks { gap })
}

/// Shared worker: SVD the block, check the `sigma4/sigma5` gap, return the
/// reduced basis. The error carries the gap so callers can rename it.
pub(crate) fn reduce_top_block(top: &DMatrix<f64>) -> std::result::Result<NullspaceReduction, f64> {
    if top.nrows() < 4 {
        return Err(0.0);
    }
    let svd = top.clone().svd(true, true);
    let sv = svd.singular_values.clone();
    let gap = if sv.len() < 5 || sv[4] == 0.0 {
        f64::INFINITY
    } else {
        sv[3] / sv[4]
    };
    if !(gap >= NULLSPACE_GAP) {
        return Err(gap);
    }
    let v_t = svd.v_t.expect("v_t requested");
    let restriction = v_t.rows(0, 4).transpose();
    Ok(NullspaceReduction {
        basis: top * &restriction,
        restriction,
        top_singular_values: sv,
    })
}

/// Align a factorization to at least four anchor landmarks and decode the
/// full solution (Algorithm 1, step 3).
pub fn align_with_anchors(
    model: &FactoredModel,
    matrix: &MeasurementMatrix,
    anchors: &[Landmark],
) -> Result<SlamSolution> {
    if anchors.len() < 4 {
        return Err(Error::TooFewAnchors {
            needed: 4,
            got: anchors.len(),
        });
    }
    let n = matrix.landmark_ids.len();
    let anchor_rows: Vec<usize> = anchors
        .iter()
        .map(|a| {
            matrix
                .landmark_ids
                .iter()
                .position(|&id| id == a.id)
                .ok_or_else(|| {
                    Error::InvalidConfig(format!("anchor id {} not present in readings", a.id))
                })
        })
        .collect::<Result<_>>()?;

    // Positional basis: U itself for rank 4, the nullspace-reduced top
    // block for rank 7.
    let (basis, reduced) = match matrix.kind {
        MatrixKind::Rank4 => (model.u.clone(), false),
        MatrixKind::Rank7 => (eliminate_nullspace(model, n)?.basis, true),
    };

    let mut a = DMatrix::zeros(anchors.len(), 4);
    for (i, &row) in anchor_rows.iter().enumerate() {
        a.row_mut(i).copy_from(&basis.row(row));
    }
    let cond = linalg::condition_number(&a);
    if cond > 1e8 {
        return Err(Error::IllConditionedAnchors { cond });
    }
    let mut targets = DMatrix::zeros(anchors.len(), 4);
    for (i, anchor) in anchors.iter().enumerate() {
        targets
            .row_mut(i)
            .copy_from(&landmark_to_row(anchor).transpose());
    }
    // basis[anchors] * S = targets
    let s = linalg::lstsq(&a, &targets);

    let c = &basis * &s;
    let x = if reduced {
        // Positional states from the aligned map: X = C^+ Y_top.
        let y_top = model.u.rows(0, n) * model.latent_states();
        linalg::lstsq(&c, &y_top)
    } else {
        // X = S^-1 Lambda V^T
        linalg::lstsq(&s, &model.latent_states())
    };

    Ok(decode_solution(c, x, Frame::Anchored, matrix))
}

/// Build the map and trajectory readout from canonical factors.
pub(crate) fn decode_solution(
    c: DMatrix<f64>,
    x: DMatrix<f64>,
    frame: Frame,
    matrix: &MeasurementMatrix,
) -> SlamSolution {
    let map: Vec<Landmark> = matrix
        .landmark_ids
        .iter()
        .enumerate()
        .map(|(row, &id)| Landmark::new(id, c[(row, 1)], c[(row, 2)]))
        .collect();
    let positions: Vec<(f64, f64)> = (0..x.ncols()).map(|t| (-x[(1, t)], -x[(2, t)])).collect();
    let headings = recover_headings(&positions);
    let trajectory: Vec<Pose> = positions
        .iter()
        .zip(&headings)
        .map(|(&(px, py), &theta)| Pose::new(px, py, theta))
        .collect();
    SlamSolution {
        c,
        x,
        map,
        trajectory,
        frame,
        col_times: matrix.col_times.clone(),
        col_steps: matrix.col_steps.clone(),
    }
}

/// Headings as angles between successive positions; the final step copies
/// the previous heading, and coincident positions carry it forward.
pub fn recover_headings(positions: &[(f64, f64)]) -> Vec<f64> {
    let mut headings = vec![0.0; positions.len()];
    let mut prev = 0.0;
    for t in 0..positions.len() {
        if t + 1 < positions.len() {
            let dx = positions[t + 1].0 - positions[t].0;
            let dy = positions[t + 1].1 - positions[t].1;
            if dx.abs() > 1e-12 || dy.abs() > 1e-12 {
                prev = normalize_angle(dy.atan2(dx));
            }
        }
        headings[t] = prev;
    }
    headings
}

/// Incremental (online) SVD maintaining a rank-capped factorization while
/// measurement columns stream in.
#[derive(Debug, Clone)]
pub struct OnlineSvd {
    rows: usize,
    max_rank: usize,
    u: DMatrix<f64>,
    sigma: DVector<f64>,
    v: DMatrix<f64>,
    n_cols: usize,
}

impl OnlineSvd {
    pub fn new(rows: usize, max_rank: usize) -> Self {
        OnlineSvd {
            rows,
            max_rank: max_rank.max(1),
            u: DMatrix::zeros(rows, 0),
            sigma: DVector::zeros(0),
            v: DMatrix::zeros(0, 0),
            n_cols: 0,
        }
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.sigma
    }

    /// Fold one measurement column into the factorization.
    pub fn update(&mut self, column: &DVector<f64>) -> Result<()> {
        if column.len() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                got: column.len(),
            });
        }
        let k = self.rank();
        if k == 0 {
            let norm = column.norm();
            if norm > 0.0 {
                self.u = DMatrix::from_columns(&[column / norm]);
                self.sigma = DVector::from_element(1, norm);
                self.v = DMatrix::from_element(1, 1, 1.0);
            } else {
                // Keep a null placeholder so V stays aligned with columns.
                self.u = DMatrix::zeros(self.rows, 1);
                self.sigma = DVector::zeros(1);
                self.v = DMatrix::from_element(1, 1, 1.0);
            }
            self.n_cols = 1;
            return Ok(());
        }

        let projected = self.u.transpose() * column;
        let residual = column - &self.u * &projected;
        let rho = residual.norm();
        let spill = rho > 1e-12 * self.sigma[0].max(1.0);

        // Core matrix of the update: diag(sigma) extended by the new
        // column's coordinates (and residual magnitude if it spills).
        let kk = if spill { k + 1 } else { k };
        let mut core = DMatrix::zeros(kk, k + 1);
        for i in 0..k {
            core[(i, i)] = self.sigma[i];
            core[(i, k)] = projected[i];
        }
        if spill {
            core[(k, k)] = rho;
        }

        let svd = core.svd(true, true);
        let cu = svd.u.expect("u requested");
        let cv_t = svd.v_t.expect("v_t requested");

        let u_ext = if spill {
            let mut ext = DMatrix::zeros(self.rows, k + 1);
            ext.columns_mut(0, k).copy_from(&self.u);
            ext.column_mut(k).copy_from(&(residual / rho));
            ext
        } else {
            self.u.clone()
        };
        let mut v_ext = DMatrix::zeros(self.n_cols + 1, k + 1);
        v_ext.view_mut((0, 0), (self.n_cols, k)).copy_from(&self.v);
        v_ext[(self.n_cols, k)] = 1.0;

        let keep = self.max_rank.min(kk).min(self.n_cols + 1);
        self.u = (&u_ext * &cu).columns(0, keep).into_owned();
        self.sigma = DVector::from_iterator(keep, svd.singular_values.iter().take(keep).copied());
        self.v = (&v_ext * cv_t.transpose()).columns(0, keep).into_owned();
        self.n_cols += 1;
        Ok(())
    }

    /// The current factors as a [`FactoredModel`], truncated to `rank`.
    pub fn factors(&self, rank: usize) -> Result<FactoredModel> {
        if rank > self.rank() {
            return Err(Error::DimensionMismatch {
                expected: self.rank(),
                got: rank,
            });
        }
        Ok(FactoredModel {
            u: self.u.columns(0, rank).into_owned(),
            lambda: DVector::from_iterator(rank, self.sigma.iter().take(rank).copied()),
            v: self.v.columns(0, rank).into_owned(),
            rank,
        })
    }
}
