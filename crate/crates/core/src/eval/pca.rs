//! Principal component analysis via cyclic Jacobi eigen-decomposition.

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Eigenvalues (descending) and matching unit eigenvectors of a symmetric
/// `n × n` matrix given row-major.
pub fn symmetric_eigen(matrix: &[f64], n: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if matrix.len() != n * n {
        return Err(Error::dim(format!(
            "expected {n}x{n} matrix, got {} values",
            matrix.len()
        )));
    }
    let mut a = matrix.to_vec();
    // v is stored column-major: column k lives at v[k*n..(k+1)*n].
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[p * n + k];
                    let vkq = v[q * n + k];
                    v[p * n + k] = c * vkp - s * vkq;
                    v[q * n + k] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&k| a[k * n + k]).collect();
    let vectors = order
        .iter()
        .map(|&k| v[k * n..(k + 1) * n].to_vec())
        .collect();
    Ok((values, vectors))
}

/// Flips `v` so that its largest-magnitude entry is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit principal directions, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Sample variance along each component.
    pub variances: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

impl Pca {
    /// Fits `n_components` directions to the rows of `data`.
    pub fn fit(data: &[Vec<f64>], n_components: usize) -> Result<Self> {
        let n = data.len();
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "PCA needs at least 2 vectors, got {n}"
            )));
        }
        let d = data[0].len();
        if data.iter().any(|r| r.len() != d) {
            return Err(Error::dim("PCA vectors must share one dimension"));
        }
        if n_components == 0 || n_components > d {
            return Err(Error::Contract(format!(
                "cannot keep {n_components} components of {d}-dimensional data"
            )));
        }
        let mut mean = vec![0.0; d];
        for r in data {
            mean.iter_mut().zip(r).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let centered: Vec<Vec<f64>> = data
            .iter()
            .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
            .collect();
        let denom = (n - 1) as f64;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

        let (values, mut components) = if d <= n {
            let mut cov = vec![0.0; d * d];
            for r in &centered {
                for i in 0..d {
                    for j in i..d {
                        cov[i * d + j] += r[i] * r[j];
                    }
                }
            }
            for i in 0..d {
                for j in i..d {
                    cov[i * d + j] /= denom;
                    cov[j * d + i] = cov[i * d + j];
                }
            }
            symmetric_eigen(&cov, d)?
        } else {
            // Eigenvectors of X Xᵀ map to those of Xᵀ X through Xᵀ u.
            let mut gram = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let g = dot(&centered[i], &centered[j]) / denom;
                    gram[i * n + j] = g;
                    gram[j * n + i] = g;
                }
            }
            let (values, us) = symmetric_eigen(&gram, n)?;
            let comps = us
                .iter()
                .map(|u| {
                    let mut w = vec![0.0; d];
                    for (r, &ui) in centered.iter().zip(u) {
                        w.iter_mut().zip(r).for_each(|(wk, x)| *wk += ui * x);
                    }
                    let norm = dot(&w, &w).sqrt();
                    if norm > 0.0 {
                        w.iter_mut().for_each(|x| *x /= norm);
                    }
                    w
                })
                .collect();
            (values, comps)
        };
        let values: Vec<f64> = values.into_iter().map(|v| v.max(0.0)).collect();
        let total: f64 = values.iter().sum();
        components.truncate(n_components);
        components.iter_mut().for_each(|c| fix_sign(c));
        let variances: Vec<f64> = values.iter().take(n_components).copied().collect();
        let explained_variance_ratio = variances
            .iter()
            .map(|v| if total > 0.0 { v / total } else { 0.0 })
            .collect();
        Ok(Self {
            mean,
            components,
            variances,
            explained_variance_ratio,
        })
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(x)
                    .zip(&self.mean)
                    .map(|((ck, xk), mk)| ck * (xk - mk))
                    .sum()
            })
            .collect()
    }

    /// Maps component coordinates back to the original (uncentered) space.
    pub fn inverse(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &a) in self.components.iter().zip(coords) {
            out.iter_mut().zip(c).for_each(|(o, ck)| *o += a * ck);
        }
        out
    }
}

/// Coordinates of every row on the leading components, plus the
/// explained-variance ratios.
pub fn pca_project(data: &[Vec<f64>], n_components: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let pca = Pca::fit(data, n_components)?;
    let coords = data.iter().map(|r| pca.project(r)).collect();
    Ok((coords, pca.explained_variance_ratio))
}

/// Mean Euclidean distance from each point to its nearest other point.
pub fn mean_nearest_neighbor_distance(points: &[Vec<f64>]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InsufficientData(
            "nearest neighbours need 2 points".into(),
        ));
    }
    let total: f64 = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    Ok(total / points.len() as f64)
}
