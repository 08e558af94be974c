//! G-optimal experimental design over a finite set of value vectors.
//!
//! The design is found by Frank-Wolfe on the D-optimal objective
//! `log det G_alpha` with the exact Fedorov-Wynn step; by the
//! Kiefer-Wolfowitz equivalence theorem its optimum also minimizes
//! `g(alpha) = max_i v_i' G_alpha^+ v_i`, with optimal value equal to the
//! dimension of the span.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::sample_categorical;

const RANK_TOL: f64 = 1e-10;
const SPAN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leverage {
    pub g: f64,
    pub per_vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignWeights {
    pub alpha: Vec<f64>,
    pub g_value: f64,
    pub effective_dim: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl DesignWeights {
    pub fn support_size(&self, threshold: f64) -> usize {
        self.alpha.iter().filter(|a| **a > threshold).count()
    }
}

fn to_rows<V: AsRef<[f64]>>(vectors: &[V]) -> Result<(usize, Vec<DVector<f64>>)> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::invalid("design needs at least one vector"))?;
    let d = first.as_ref().len();
    if d == 0 {
        return Err(Error::invalid("design vectors must be non-empty"));
    }
    let mut rows = Vec::with_capacity(vectors.len());
    for v in vectors {
        let v = v.as_ref();
        check_dim(d, v.len())?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("design vectors".into()));
        }
        rows.push(DVector::from_column_slice(v));
    }
    Ok((d, rows))
}

/// Eigenpairs of a symmetric PSD matrix above a relative threshold.
fn range_eigen(m: DMatrix<f64>) -> (Vec<f64>, Vec<DVector<f64>>) {
    let eig = SymmetricEigen::new(m);
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let mut vals = Vec::new();
    let mut vecs = Vec::new();
    if max <= 0.0 {
        return (vals, vecs);
    }
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > max * RANK_TOL {
            vals.push(l);
            vecs.push(eig.eigenvectors.column(i).into_owned());
        }
    }
    (vals, vecs)
}

/// `v_i' G_alpha^+ v_i` for every vector, where the pseudo-inverse acts on
/// the range of `G_alpha`. Vectors with a component outside that range get
/// `+inf`.
pub fn leverage_score<V: AsRef<[f64]>>(vectors: &[V], alpha: &[f64]) -> Result<Leverage> {
    let (d, rows) = to_rows(vectors)?;
    check_dim(rows.len(), alpha.len())?;
    if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(Error::invalid("design weights must be finite and >= 0"));
    }
    let total: f64 = alpha.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "design weights sum to {total}, expected 1"
        )));
    }
    let mut g = DMatrix::<f64>::zeros(d, d);
    for (v, &a) in rows.iter().zip(alpha) {
        if a > 0.0 {
            g += a * v * v.transpose();
        }
    }
    let (vals, vecs) = range_eigen(g);
    let per_vector: Vec<f64> = rows
        .iter()
        .map(|v| {
            let norm2 = v.norm_squared();
            if norm2 == 0.0 {
                return 0.0;
            }
            let mut lev = 0.0;
            let mut captured = 0.0;
            for (l, u) in vals.iter().zip(&vecs) {
                let z = u.dot(v);
                captured += z * z;
                lev += z * z / l;
            }
            if norm2 - captured > SPAN_TOL * norm2 {
                f64::INFINITY
            } else {
                lev
            }
        })
        .collect();
    let g = per_vector.iter().cloned().fold(0.0, f64::max);
    Ok(Leverage { g, per_vector })
}

/// Frank-Wolfe (Fedorov-Wynn) D-optimal design, stopped once
/// `g(alpha) <= k (1 + tolerance)` with `k` the rank of the vectors.
pub fn g_optimal_design<V: AsRef<[f64]>>(
    vectors: &[V],
    tolerance: f64,
    max_iters: usize,
) -> Result<DesignWeights> {
    if !(tolerance.is_finite() && tolerance >= 0.0) {
        return Err(Error::invalid("design tolerance must be finite and >= 0"));
    }
    let (d, rows) = to_rows(vectors)?;
    let n = rows.len();

    let mut scatter = DMatrix::<f64>::zeros(d, d);
    for v in &rows {
        scatter += v * v.transpose();
    }
    let (_, basis) = range_eigen(scatter);
    let k = basis.len();
    if k == 0 {
        let mut alpha = vec![0.0; n];
        alpha[0] = 1.0;
        return Ok(DesignWeights {
            alpha,
            g_value: 0.0,
            effective_dim: 0,
            iterations: 0,
            converged: true,
        });
    }
    // coordinates in an orthonormal basis of the span
    let z: Vec<DVector<f64>> = rows
        .iter()
        .map(|v| DVector::from_iterator(k, basis.iter().map(|u| u.dot(v))))
        .collect();

    let mut alpha = vec![0.0; n];
    for i in spanning_subset(&z, k) {
        alpha[i] = 1.0 / k as f64;
    }

    let target = k as f64 * (1.0 + tolerance);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        let lev = reduced_leverages(&z, &alpha, k);
        let (j, g) = lev
            .iter()
            .cloned()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, l)| if l > acc.1 { (i, l) } else { acc });
        if g <= target {
            converged = true;
            break;
        }
        let gamma = (g / k as f64 - 1.0) / (g - 1.0);
        for a in alpha.iter_mut() {
            *a *= 1.0 - gamma;
        }
        alpha[j] += gamma;
        iterations += 1;
    }

    caratheodory_prune(&z, &mut alpha, k);

    let g_value = leverage_score(vectors, &alpha)?.g;
    Ok(DesignWeights {
        alpha,
        g_value,
        effective_dim: k,
        iterations,
        converged,
    })
}

/// Greedy Gram-Schmidt pick of `k` indices spanning the space.
fn spanning_subset(z: &[DVector<f64>], k: usize) -> Vec<usize> {
    let mut picked: Vec<usize> = Vec::with_capacity(k);
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(k);
    while picked.len() < k {
        let mut best = (usize::MAX, 0.0);
        for (i, v) in z.iter().enumerate() {
            if picked.contains(&i) {
                continue;
            }
            let mut r = v.clone();
            for q in &ortho {
                r -= q * q.dot(v);
            }
            let norm = r.norm();
            if norm > best.1 {
                best = (i, norm);
            }
        }
        if best.0 == usize::MAX {
            break;
        }
        let mut r = z[best.0].clone();
        for q in &ortho {
            r -= q * q.dot(&z[best.0]);
        }
        ortho.push(r / best.1);
        picked.push(best.0);
    }
    picked
}

fn reduced_leverages(z: &[DVector<f64>], alpha: &[f64], k: usize) -> Vec<f64> {
    let mut m = DMatrix::<f64>::zeros(k, k);
    for (v, &a) in z.iter().zip(alpha) {
        if a > 0.0 {
            m += a * v * v.transpose();
        }
    }
    let chol = match m.clone().cholesky() {
        Some(c) => c,
        None => (m + DMatrix::identity(k, k) * 1e-12)
            .cholesky()
            .expect("jittered design matrix is positive definite"),
    };
    z.iter()
        .map(|v| v.dot(&chol.solve(v)))
        .collect()
}

/// Shrinks the support to at most `k(k+1)/2 + 1` points without changing
/// `G_alpha`: repeatedly finds weights `c` over `D + 2` support points with
/// `sum c_i z_i z_i' = 0` and `sum c_i = 0`, then moves along `-c` until a
/// weight hits zero.
fn caratheodory_prune(z: &[DVector<f64>], alpha: &mut [f64], k: usize) {
    let dim = k * (k + 1) / 2;
    loop {
        let support: Vec<usize> = (0..alpha.len()).filter(|&i| alpha[i] > 0.0).collect();
        if support.len() <= dim + 1 {
            return;
        }
        let cols = &support[..dim + 2];
        let mut a = DMatrix::<f64>::zeros(dim + 1, dim + 2);
        for (c, &i) in cols.iter().enumerate() {
            let v = &z[i];
            let mut r = 0;
            for p in 0..k {
                for q in p..k {
                    a[(r, c)] = v[p] * v[q];
                    r += 1;
                }
            }
            a[(dim, c)] = 1.0;
        }
        let ata = a.transpose() * &a;
        let eig = SymmetricEigen::new(ata);
        let (min_idx, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &l)| if l < acc.1 { (i, l) } else { acc });
        let mut null = eig.eigenvectors.column(min_idx).into_owned();
        if null.iter().all(|c| *c <= 0.0) {
            null = -null;
        }
        let mut step = f64::INFINITY;
        let mut hit = usize::MAX;
        for (c, &i) in cols.iter().enumerate() {
            if null[c] > 1e-14 {
                let t = alpha[i] / null[c];
                if t < step {
                    step = t;
                    hit = i;
                }
            }
        }
        if hit == usize::MAX {
            return;
        }
        for (c, &i) in cols.iter().enumerate() {
            alpha[i] = (alpha[i] - step * null[c]).max(0.0);
        }
        alpha[hit] = 0.0;
        let total: f64 = alpha.iter().sum();
        alpha.iter_mut().for_each(|a| *a /= total);
    }
}

/// One i.i.d. draw of a candidate index from the design.
pub fn sample_from_design<R: Rng + ?Sized>(weights: &DesignWeights, rng: &mut R) -> usize {
    sample_categorical(&weights.alpha, rng)
}
