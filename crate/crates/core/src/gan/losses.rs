//! Objective terms for the adversarial game.
//!
//! Each loss exists in two forms: a differentiable one built on a [`Tape`]
//! (`*_var`) used by training and gradient checks, and a plain `f64` one for
//! evaluation and reporting.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Probability clamp for log terms.
pub const PROB_EPS: f64 = 1e-7;

/// Relative Gaussian bandwidths; multiplied by the frozen median pairwise distance.
pub const DEFAULT_BANDWIDTHS: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];

fn check_bandwidths(bandwidths: &[f64]) -> Result<()> {
    if bandwidths.is_empty() || bandwidths.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidInput(format!("bandwidths must be positive, got {bandwidths:?}")));
    }
    Ok(())
}

/// Pairwise squared Euclidean distances, `n×m`.
fn sq_dists<'t>(x: Var<'t>, y: Var<'t>) -> Var<'t> {
    let xx = x.square().row_sum();
    let yy = y.square().row_sum().t();
    x.matmul(y.t()).scale(-2.0).add_col(xx).add_row(yy)
}

/// Biased squared MMD with a Gaussian kernel mixture `exp(−‖a−b‖²/(2σ²))`,
/// averaged over `bandwidths`.
pub fn mmd2_var<'t>(x: Var<'t>, y: Var<'t>, bandwidths: &[f64]) -> Var<'t> {
    let dxx = sq_dists(x, x);
    let dyy = sq_dists(y, y);
    let dxy = sq_dists(x, y);
    let mut total: Option<Var<'t>> = None;
    for &sigma in bandwidths {
        let k = -1.0 / (2.0 * sigma * sigma);
        let term = dxx
            .scale(k)
            .exp()
            .mean()
            .add(dyy.scale(k).exp().mean())
            .sub(dxy.scale(k).exp().mean().scale(2.0));
        total = Some(match total {
            Some(t) => t.add(term),
            None => term,
        });
    }
    total.expect("at least one bandwidth").scale(1.0 / bandwidths.len() as f64)
}

pub fn mmd2(features_real: &Array2<f64>, features_fake: &Array2<f64>, bandwidths: &[f64]) -> Result<f64> {
    check_bandwidths(bandwidths)?;
    if features_real.nrows() == 0 || features_fake.nrows() == 0 {
        return Err(Error::InvalidInput("mmd2 needs at least one sample per set".into()));
    }
    if features_real.ncols() != features_fake.ncols() {
        return Err(Error::Shape(format!(
            "feature widths differ: {} vs {}",
            features_real.ncols(),
            features_fake.ncols()
        )));
    }
    let tape = Tape::new();
    let x = tape.constant(features_real.clone());
    let y = tape.constant(features_fake.clone());
    Ok(mmd2_var(x, y, bandwidths).scalar())
}

/// Median of the pairwise Euclidean distances between distinct rows.
/// Falls back to 1 when undefined or zero.
pub fn median_pairwise_distance(x: &Array2<f64>) -> f64 {
    let n = x.nrows();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d.push(s.sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let m = if d.len() % 2 == 0 { 0.5 * (d[mid - 1] + d[mid]) } else { d[mid] };
    if m > 0.0 && m.is_finite() {
        m
    } else {
        1.0
    }
}

/// Batch mean of ‖ẑ − z‖².
pub fn loss_recon_var<'t>(z: Var<'t>, z_hat: Var<'t>) -> Var<'t> {
    z_hat.sub(z).square().row_sum().mean()
}

pub fn loss_recon(z: &Array2<f64>, z_hat: &Array2<f64>) -> Result<f64> {
    if z.dim() != z_hat.dim() {
        return Err(Error::Shape(format!("z {:?} vs z_hat {:?}", z.dim(), z_hat.dim())));
    }
    let tape = Tape::new();
    Ok(loss_recon_var(tape.constant(z.clone()), tape.constant(z_hat.clone())).scalar())
}

/// One-hot rows for labels in 1..=K over K+1 columns.
pub(crate) fn one_hot(labels: &[u32], width: usize) -> Array2<f64> {
    let mut m = Array2::zeros((labels.len(), width));
    for (r, &y) in labels.iter().enumerate() {
        m[[r, (y - 1) as usize]] = 1.0;
    }
    m
}

fn check_labels(labels: &[u32], num_classes: usize) -> Result<()> {
    match labels.iter().find(|&&y| y == 0 || y as usize > num_classes) {
        Some(y) => Err(Error::InvalidInput(format!("label {y} outside 1..={num_classes}"))),
        None => Ok(()),
    }
}

/// Mean log P(y | s, y ≤ K) over labeled rows. Logits have K+1 columns.
pub fn supervised_term<'t>(logits: Var<'t>, labels: &[u32]) -> Var<'t> {
    let (rows, width) = logits.shape();
    debug_assert_eq!(rows, labels.len());
    let k = width - 1;
    let mask = logits.tape().constant(one_hot(labels, width));
    let picked = logits.mul(mask).row_sum();
    picked.sub(logits.slice_cols(0, k).logsumexp_rows()).mean()
}

/// Mean log Σ_{k≤K} P(k | s) = log(1 − P(K+1 | s)) over unlabeled real rows.
pub fn unlabeled_term<'t>(logits: Var<'t>) -> Var<'t> {
    let k = logits.shape().1 - 1;
    logits.slice_cols(0, k).logsumexp_rows().sub(logits.logsumexp_rows()).mean()
}

/// Mean log P(K+1 | s̃) over generated rows.
pub fn fake_term<'t>(logits: Var<'t>) -> Var<'t> {
    let k = logits.shape().1 - 1;
    logits.slice_cols(k, k + 1).sub(logits.logsumexp_rows()).mean()
}

/// Semi-supervised discriminator objective: labeled + unlabeled + generated terms.
pub fn loss_dssl_var<'t>(
    labeled_logits: Var<'t>,
    labels: &[u32],
    unlabeled_logits: Var<'t>,
    fake_logits: Var<'t>,
) -> Var<'t> {
    supervised_term(labeled_logits, labels)
        .add(unlabeled_term(unlabeled_logits))
        .add(fake_term(fake_logits))
}

pub fn loss_dssl(
    labeled_logits: &Array2<f64>,
    labels: &[u32],
    unlabeled_logits: &Array2<f64>,
    fake_logits: &Array2<f64>,
) -> Result<f64> {
    let width = labeled_logits.ncols();
    if width < 2 || unlabeled_logits.ncols() != width || fake_logits.ncols() != width {
        return Err(Error::Shape("logit blocks must share K+1 ≥ 2 columns".into()));
    }
    if labels.len() != labeled_logits.nrows() {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), labeled_logits.nrows())));
    }
    check_labels(labels, width - 1)?;
    let tape = Tape::new();
    let l = tape.constant(labeled_logits.clone());
    let u = tape.constant(unlabeled_logits.clone());
    let f = tape.constant(fake_logits.clone());
    Ok(loss_dssl_var(l, labels, u, f).scalar())
}

/// Standard GAN value `mean log D(s) + mean log(1 − D(G(z)))` on probability vars.
pub fn loss_gan_standard_var<'t>(real_scores: Var<'t>, fake_scores: Var<'t>) -> Var<'t> {
    let real = real_scores.clamp(PROB_EPS, 1.0 - PROB_EPS).ln().mean();
    let fake = fake_scores.clamp(PROB_EPS, 1.0 - PROB_EPS).neg().offset(1.0).ln().mean();
    real.add(fake)
}

pub fn loss_gan_standard(real_scores: &[f64], fake_scores: &[f64]) -> Result<f64> {
    if real_scores.is_empty() || fake_scores.is_empty() {
        return Err(Error::InvalidInput("empty score list".into()));
    }
    if real_scores.iter().chain(fake_scores).any(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::InvalidInput("scores must be probabilities".into()));
    }
    let tape = Tape::new();
    let r = tape.constant(Array2::from_shape_vec((real_scores.len(), 1), real_scores.to_vec()).unwrap());
    let f = tape.constant(Array2::from_shape_vec((fake_scores.len(), 1), fake_scores.to_vec()).unwrap());
    Ok(loss_gan_standard_var(r, f).scalar())
}

/// Component losses of one training step and their composition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanLossBreakdown {
    /// Semi-supervised (or standard, for the TextGAN objective) discriminator term.
    pub l_dssl: f64,
    pub l_recon: f64,
    pub l_mmd2: f64,
    pub l_d: f64,
    pub l_g: f64,
    pub lambda_r: f64,
    pub lambda_m: f64,
}

impl GanLossBreakdown {
    pub fn compose(l_dssl: f64, l_recon: f64, l_mmd2: f64, lambda_r: f64, lambda_m: f64) -> Self {
        let mut parts = GanLossBreakdown { l_dssl, l_recon, l_mmd2, l_d: 0.0, l_g: 0.0, lambda_r, lambda_m };
        parts.l_d = loss_discriminator(&parts);
        parts.l_g = loss_generator(&parts);
        parts
    }
}

/// `l_dssl − λ_r·l_recon + λ_m·l_mmd2`; maximized by the discriminator.
pub fn loss_discriminator(parts: &GanLossBreakdown) -> f64 {
    parts.l_dssl - parts.lambda_r * parts.l_recon + parts.lambda_m * parts.l_mmd2
}

/// `l_mmd2`; minimized by the generator.
pub fn loss_generator(parts: &GanLossBreakdown) -> f64 {
    parts.l_mmd2
}

/// Differentiable counterpart of [`loss_discriminator`].
pub fn loss_discriminator_var<'t>(
    l_dssl: Var<'t>,
    l_recon: Var<'t>,
    l_mmd2: Var<'t>,
    lambda_r: f64,
    lambda_m: f64,
) -> Var<'t> {
    l_dssl.sub(l_recon.scale(lambda_r)).add(l_mmd2.scale(lambda_m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mmd_of_identical_sets_is_zero() {
        let x = array![[0.1, 2.0], [1.5, -0.3], [0.0, 0.7]];
        assert!(mmd2(&x, &x, &DEFAULT_BANDWIDTHS).unwrap().abs() < 1e-10);
    }

    #[test]
    fn mmd_single_points_closed_form() {
        let x = array![[1.0, 2.0]];
        let y = array![[2.5, 0.0]];
        let sigma = 1.7;
        let d2 = 1.5f64 * 1.5 + 4.0;
        let expected = 2.0 - 2.0 * (-d2 / (2.0 * sigma * sigma)).exp();
        assert!((mmd2(&x, &y, &[sigma]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn mmd_is_symmetric() {
        let x = array![[0.1, 2.0], [1.5, -0.3]];
        let y = array![[0.0, 0.7], [3.0, 1.0], [-1.0, 0.2]];
        assert_eq!(mmd2(&x, &y, &[1.0, 3.0]).unwrap(), mmd2(&y, &x, &[1.0, 3.0]).unwrap());
    }

    #[test]
    fn mmd_rejects_bad_bandwidth() {
        let x = array![[0.0]];
        assert!(mmd2(&x, &x, &[0.0]).is_err());
        assert!(mmd2(&x, &x, &[-1.0]).is_err());
    }

    #[test]
    fn recon_examples() {
        assert_eq!(loss_recon(&array![[0.3, -1.0]], &array![[0.3, -1.0]]).unwrap(), 0.0);
        assert_eq!(loss_recon(&array![[1.0, 0.0]], &array![[0.0, 0.0]]).unwrap(), 1.0);
        assert_eq!(loss_recon(&array![[3.0, 4.0]], &array![[0.0, 0.0]]).unwrap(), 25.0);
        assert!(loss_recon(&array![[3.0, 4.0]], &array![[0.0, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn dssl_saturated_labeled_term_is_zero() {
        let tape = Tape::new();
        let logits = tape.constant(array![[50.0, -50.0, -50.0]]);
        assert!(supervised_term(logits, &[1]).scalar().abs() < 1e-12);
    }

    #[test]
    fn dssl_uniform_unlabeled_term() {
        let tape = Tape::new();
        let logits = tape.constant(array![[0.3, 0.3]]);
        assert!((unlabeled_term(logits).scalar() - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dssl_label_out_of_range() {
        let l = array![[0.0, 0.0, 0.0]];
        assert!(loss_dssl(&l, &[3], &l, &l).is_err());
        assert!(loss_dssl(&l, &[0], &l, &l).is_err());
    }

    #[test]
    fn standard_gan_examples() {
        assert!(loss_gan_standard(&[1.0], &[0.0]).unwrap().abs() < 1e-6);
        let v = loss_gan_standard(&[0.5], &[0.5]).unwrap();
        assert!((v - 2.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn composition() {
        let p = GanLossBreakdown::compose(-1.3, 0.4, 0.2, 0.0, 0.0);
        assert_eq!(p.l_d, p.l_dssl);
        let p = GanLossBreakdown::compose(0.0, 0.0, 0.2, 0.0, 1.0);
        assert_eq!(p.l_d, 0.2);
        assert_eq!(p.l_g, 0.2);
    }

    #[test]
    fn median_distance() {
        let x = array![[0.0], [1.0], [3.0]];
        // distances 1, 3, 2
        assert_eq!(median_pairwise_distance(&x), 2.0);
        assert_eq!(median_pairwise_distance(&array![[1.0]]), 1.0);
    }
}
