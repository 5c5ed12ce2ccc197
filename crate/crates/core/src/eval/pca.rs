//! 2-D PCA via Jacobi eigendecomposition of the covariance matrix.

use super::EvalError;

#[derive(Debug, Clone)]
pub struct PcaProjection {
    pub coords: Vec<[f64; 2]>,
    /// Top two eigenvalues of the covariance (second is 0 when rank 1).
    pub eigenvalues: [f64; 2],
    /// 1 when the covariance had a single positive eigenvalue and the
    /// second axis was zero-filled.
    pub components_used: usize,
}

/// Cyclic Jacobi for a symmetric matrix; returns eigenvalues and matching
/// eigenvector columns.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = a.len();
    let mut v = vec![vec![0.0f64; d]; d];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                off += a[i][j] * a[i][j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                if a[p][q].abs() < 1e-30 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let eigenvalues: Vec<f64> = (0..d).map(|i| a[i][i]).collect();
    (eigenvalues, v)
}

/// Mean-center, eigendecompose the covariance, project onto the top two
/// components. Eigenvector sign is fixed so the first component with
/// magnitude above 1e-9 is positive. A rank-1 covariance falls back to one
/// component with the second axis zero-filled (logged).
pub fn pca_project(reps: &[Vec<f64>]) -> Result<PcaProjection, EvalError> {
    let n = reps.len();
    if n < 3 {
        return Err(EvalError::InvalidInput(format!(
            "PCA needs at least 3 points, got {n}"
        )));
    }
    let d = reps[0].len();
    if d < 2 {
        return Err(EvalError::InvalidInput("PCA needs dimension >= 2".to_string()));
    }
    if reps.iter().any(|r| r.len() != d) {
        return Err(EvalError::InvalidInput("ragged representation matrix".to_string()));
    }

    let mut mean = vec![0.0f64; d];
    for r in reps {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> = reps
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    let mut cov = vec![vec![0.0f64; d]; d];
    for row in &centered {
        for i in 0..d {
            for j in i..d {
                cov[i][j] += row[i] * row[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= n as f64;
            cov[j][i] = cov[i][j];
        }
    }

    let (eigenvalues, vectors) = jacobi_eigen(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eigenvalues[j].partial_cmp(&eigenvalues[i]).unwrap());

    let tol = 1e-12;
    let positive = order
        .iter()
        .take(2)
        .filter(|&&i| eigenvalues[i] > tol)
        .count();
    if positive == 0 {
        // All points coincide: every projection is the origin.
        return Ok(PcaProjection {
            coords: vec![[0.0, 0.0]; n],
            eigenvalues: [0.0, 0.0],
            components_used: 0,
        });
    }
    let components_used = positive.min(2);
    if components_used < 2 {
        log::warn!("pca_project: rank-deficient covariance, zero-filling second axis");
    }

    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(2);
    for c in 0..2 {
        if c < components_used {
            let idx = order[c];
            let mut axis: Vec<f64> = (0..d).map(|r| vectors[r][idx]).collect();
            if let Some(first) = axis.iter().find(|x| x.abs() > 1e-9) {
                if *first < 0.0 {
                    for x in axis.iter_mut() {
                        *x = -*x;
                    }
                }
            }
            axes.push(axis);
        } else {
            axes.push(vec![0.0; d]);
        }
    }

    let coords = centered
        .iter()
        .map(|row| {
            [
                row.iter().zip(&axes[0]).map(|(x, a)| x * a).sum(),
                row.iter().zip(&axes[1]).map(|(x, a)| x * a).sum(),
            ]
        })
        .collect();
    let ev = [
        eigenvalues[order[0]].max(0.0),
        if d > 1 { eigenvalues[order[1]].max(0.0) } else { 0.0 },
    ];
    Ok(PcaProjection {
        coords,
        eigenvalues: ev,
        components_used,
    })
}
