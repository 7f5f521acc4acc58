use nalgebra::{DMatrix, SymmetricEigen};

use crate::diffnum::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// `[N, out_dim]` coordinates.
    pub coords: Tensor,
    /// `[out_dim, d]` orthonormal principal directions.
    pub components: Tensor,
    pub mean: Vec<f64>,
    /// Fraction of total variance along each component.
    pub explained: Vec<f64>,
}

/// Principal-component projection of the rows of `x [N, d]`.
///
/// Components come from the eigendecomposition of the `d x d` covariance,
/// ordered by decreasing eigenvalue; each is signed so its largest-magnitude
/// entry is positive.
pub fn pca_project(x: &Tensor, out_dim: usize) -> Result<Projection> {
    let (n, d) = match *x.shape() {
        [n, d] => (n, d),
        ref s => return Err(Error::shape("pca_project", format!("expected [N, d], got {s:?}"))),
    };
    if n < 2 || out_dim == 0 || out_dim > d {
        return Err(Error::InvalidArgument(format!("PCA of {n} rows in {d} dims to {out_dim} components")));
    }
    let mut mean = vec![0.0; d];
    for row in x.data().chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_row_iterator(n, d, x.data().chunks_exact(d).flat_map(|r| r.iter().zip(&mean).map(|(v, m)| v - m)));
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let total: f64 = cov.diagonal().sum();
    if total <= 0.0 {
        log::warn!("PCA input has zero variance; returning zero coordinates");
        let mut comps = Tensor::zeros(&[out_dim, d]);
        for i in 0..out_dim {
            comps.data_mut()[i * d + i] = 1.0;
        }
        return Ok(Projection { coords: Tensor::zeros(&[n, out_dim]), components: comps, mean, explained: vec![0.0; out_dim] });
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut comps = Vec::with_capacity(out_dim * d);
    let mut explained = Vec::with_capacity(out_dim);
    for &j in &order[..out_dim] {
        let col = eig.eigenvectors.column(j);
        let big = (0..d).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()).then(b.cmp(&a))).unwrap();
        let sign = if col[big] < 0.0 { -1.0 } else { 1.0 };
        let norm = col.norm();
        comps.extend(col.iter().map(|v| sign * v / norm));
        explained.push(eig.eigenvalues[j].max(0.0) / total);
    }
    let comp_m = DMatrix::from_row_slice(out_dim, d, &comps);
    let coords = &centered * comp_m.transpose();
    let coords: Vec<f64> = (0..n).flat_map(|i| (0..out_dim).map(move |k| (i, k))).map(|(i, k)| coords[(i, k)]).collect();
    Ok(Projection {
        coords: Tensor::new(vec![n, out_dim], coords)?,
        components: Tensor::new(vec![out_dim, d], comps)?,
        mean,
        explained,
    })
}

/// Mean silhouette coefficient of labelled points `[N, k]` under Euclidean
/// distance. Points in singleton clusters score 0.
pub fn silhouette(points: &Tensor, labels: &[usize]) -> Result<f64> {
    let (n, k) = match *points.shape() {
        [n, k] if n == labels.len() => (n, k),
        ref s => return Err(Error::shape("silhouette", format!("{s:?} with {} labels", labels.len()))),
    };
    let clusters = labels.iter().max().map_or(0, |m| m + 1);
    let distinct = {
        let mut l = labels.to_vec();
        l.sort_unstable();
        l.dedup();
        l.len()
    };
    if distinct < 2 {
        return Err(Error::InvalidArgument("silhouette needs at least two clusters".into()));
    }
    let row = |i: usize| &points.data()[i * k..][..k];
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut total = 0.0;
    for i in 0..n {
        let mut sum = vec![0.0; clusters];
        let mut cnt = vec![0usize; clusters];
        for j in 0..n {
            if j != i {
                sum[labels[j]] += dist(row(i), row(j));
                cnt[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if cnt[own] == 0 {
            continue;
        }
        let a = sum[own] / cnt[own] as f64;
        let b = (0..clusters)
            .filter(|&c| c != own && cnt[c] > 0)
            .map(|c| sum[c] / cnt[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        total += if m > 0.0 { (b - a) / m } else { 0.0 };
    }
    Ok(total / n as f64)
}
