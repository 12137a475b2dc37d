//! Distribution-level metrics: Fréchet distance and Inception Score.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{MetricsError, Result};

/// Sample mean and unbiased covariance of row vectors.
pub fn moments(feats: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if feats.len() < 2 {
        return Err(MetricsError::InvalidInput(format!("need at least 2 samples, got {}", feats.len())));
    }
    let d = feats[0].len();
    if d == 0 || feats.iter().any(|f| f.len() != d) {
        return Err(MetricsError::Dimensions("feature vectors have differing or zero length".into()));
    }
    let n = feats.len() as f64;
    let mut mu = DVector::zeros(d);
    for f in feats {
        mu += DVector::from_column_slice(f);
    }
    mu /= n;
    let mut cov = DMatrix::zeros(d, d);
    for f in feats {
        let c = DVector::from_column_slice(f) - &mu;
        cov += &c * c.transpose();
    }
    cov /= n - 1.0;
    Ok((mu, cov))
}

/// Principal square root of a symmetric PSD matrix, negative eigenvalues clamped to 0.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussians with the given moments.
pub fn frechet_from_moments(mu_a: &DVector<f64>, cov_a: &DMatrix<f64>, mu_b: &DVector<f64>, cov_b: &DMatrix<f64>) -> f64 {
    let diff = mu_a - mu_b;
    let root_a = sqrtm_psd(cov_a);
    let inner = &root_a * cov_b * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    (diff.norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * cross).max(0.0)
}

pub fn frechet_distance(feats_a: &[Vec<f64>], feats_b: &[Vec<f64>]) -> Result<f64> {
    let (mu_a, cov_a) = moments(feats_a)?;
    let (mu_b, cov_b) = moments(feats_b)?;
    if mu_a.len() != mu_b.len() {
        return Err(MetricsError::Dimensions(format!("feature dims {} vs {}", mu_a.len(), mu_b.len())));
    }
    Ok(frechet_from_moments(&mu_a, &cov_a, &mu_b, &cov_b))
}

pub const PROB_SUM_TOL: f64 = 1e-6;

/// `exp(mean KL(p(y|x) || p(y)))`.
pub fn inception_score(probs: &[Vec<f64>]) -> Result<f64> {
    if probs.is_empty() {
        return Err(MetricsError::InvalidInput("no probability vectors".into()));
    }
    let k = probs[0].len();
    for (i, p) in probs.iter().enumerate() {
        if p.len() != k {
            return Err(MetricsError::Dimensions(format!("vector {i} has {} classes, expected {k}", p.len())));
        }
        let s: f64 = p.iter().sum();
        if p.iter().any(|v| !(*v >= 0.0)) || (s - 1.0).abs() > PROB_SUM_TOL {
            return Err(MetricsError::InvalidInput(format!("vector {i} is not a probability distribution (sum {s})")));
        }
    }
    let n = probs.len() as f64;
    let marginal: Vec<f64> = (0..k).map(|c| probs.iter().map(|p| p[c]).sum::<f64>() / n).collect();
    let mean_kl = probs
        .iter()
        .map(|p| {
            p.iter()
                .zip(&marginal)
                .filter(|(pc, _)| **pc > 0.0)
                .map(|(pc, mc)| pc * (pc / mc).ln())
                .sum::<f64>()
        })
        .sum::<f64>()
        / n;
    Ok(mean_kl.exp())
}
