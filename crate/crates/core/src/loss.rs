//! Composite boundary loss (weighted binary cross-entropy plus soft Jaccard)
//! and the two evaluation metrics.
//!
//! Label convention: target `1` marks a black boundary pixel, `0` the white
//! background.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Lower/upper clamp applied to probabilities before the loss.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of cross-entropy; Jaccard gets `1 - psi`.
    pub psi: f64,
    pub smooth_eps: f64,
    pub threshold: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            psi: 0.5,
            smooth_eps: 1.0,
            threshold: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.psi) {
            return Err(Error::invalid(format!(
                "psi must be in [0, 1], got {}",
                self.psi
            )));
        }
        if !(self.smooth_eps > 0.0 && self.smooth_eps.is_finite()) {
            return Err(Error::invalid(format!(
                "smooth_eps must be positive, got {}",
                self.smooth_eps
            )));
        }
        validate_threshold(self.threshold)
    }
}

fn validate_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "threshold must be in (0, 1), got {t}"
        )))
    }
}

/// A prediction tensor and its binary target, both `(N, 1, H, W)`.
#[derive(Clone, Copy, Debug)]
pub struct MaskPair<'a, T> {
    pub prediction: &'a Tensor<T>,
    pub target: &'a Tensor<T>,
}

impl<'a, T: Real> MaskPair<'a, T> {
    pub fn new(prediction: &'a Tensor<T>, target: &'a Tensor<T>) -> Result<Self> {
        if prediction.shape() != target.shape() {
            return Err(Error::shape(format!(
                "prediction {} and target {} differ",
                prediction.shape(),
                target.shape()
            )));
        }
        if prediction.shape().c != 1 {
            return Err(Error::shape(format!(
                "masks have one channel, got {}",
                prediction.shape()
            )));
        }
        if let Some(v) = target
            .data()
            .iter()
            .find(|&&v| v != T::zero() && v != T::one())
        {
            return Err(Error::invalid(format!("target must be binary, found {v}")));
        }
        prediction.ensure_finite("prediction")?;
        Ok(MaskPair { prediction, target })
    }

    fn require_open_unit(&self) -> Result<()> {
        match self
            .prediction
            .data()
            .iter()
            .position(|&p| p <= T::zero() || p >= T::one())
        {
            None => Ok(()),
            Some(i) => Err(Error::invalid(format!(
                "prediction {} at index {i} is not strictly inside (0, 1); clamp before the loss",
                self.prediction.data()[i]
            ))),
        }
    }

    fn pairs(&self) -> impl Iterator<Item = (T, T)> + '_ {
        self.prediction
            .data()
            .iter()
            .copied()
            .zip(self.target.data().iter().copied())
    }
}

/// Clamp probabilities into `[PROB_CLAMP, 1 - PROB_CLAMP]`. The loss
/// gradient is passed through the clamp unchanged.
pub fn clamp_probabilities<T: Real>(p: &Tensor<T>) -> Tensor<T> {
    let lo = T::from_f64(PROB_CLAMP);
    let hi = T::one() - lo;
    p.map(|v| v.max(lo).min(hi))
}

/// Mean binary cross-entropy over every pixel of the batch and its gradient
/// with respect to the prediction.
pub fn cross_entropy_loss<T: Real>(pair: &MaskPair<T>) -> Result<(T, Tensor<T>)> {
    pair.require_open_unit()?;
    let n = T::from_f64(pair.prediction.len() as f64);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(pair.prediction.len());
    for (p, y) in pair.pairs() {
        // ln(1 - p) via ln_1p keeps precision for p near 0.
        let term = y * p.ln() + (T::one() - y) * (-p).ln_1p();
        total = total - term;
        grad.push((p - y) / (p * (T::one() - p)) / n);
    }
    Ok((total / n, Tensor::from_vec(pair.prediction.shape(), grad)?))
}

/// Soft Jaccard loss `1 - (I + eps) / (U + eps)` with `I = sum(p*y)` and
/// `U = sum(p) + sum(y) - I`, taken over the whole batch.
pub fn jaccard_loss<T: Real>(pair: &MaskPair<T>, smooth_eps: f64) -> Result<(T, Tensor<T>)> {
    if !(smooth_eps > 0.0) {
        return Err(Error::invalid("smooth_eps must be positive"));
    }
    let eps = T::from_f64(smooth_eps);
    let (mut inter, mut total) = (T::zero(), T::zero());
    for (p, y) in pair.pairs() {
        inter = inter + p * y;
        total = total + p + y;
    }
    let union = total - inter;
    let num = inter + eps;
    let den = union + eps;
    let loss = T::one() - num / den;
    let den2 = den * den;
    let grad = pair
        .pairs()
        .map(|(_, y)| -(y * den - num * (T::one() - y)) / den2)
        .collect();
    Ok((loss, Tensor::from_vec(pair.prediction.shape(), grad)?))
}

/// `psi * cross_entropy + (1 - psi) * jaccard`, value and gradient.
pub fn composite_loss<T: Real>(pair: &MaskPair<T>, cfg: &LossConfig) -> Result<(T, Tensor<T>)> {
    cfg.validate()?;
    let (ce, ce_grad) = cross_entropy_loss(pair)?;
    let (jac, jac_grad) = jaccard_loss(pair, cfg.smooth_eps)?;
    let psi = T::from_f64(cfg.psi);
    let rest = T::from_f64(1.0 - cfg.psi);
    let grad = ce_grad
        .data()
        .iter()
        .zip(jac_grad.data())
        .map(|(&a, &b)| psi * a + rest * b)
        .collect();
    Ok((
        psi * ce + rest * jac,
        Tensor::from_vec(pair.prediction.shape(), grad)?,
    ))
}

fn binarize<T: Real>(p: T, threshold: T) -> bool {
    p >= threshold
}

/// Intersection over union of the black class after thresholding; 1.0 when
/// both prediction and target are empty.
pub fn iou_metric<T: Real>(pair: &MaskPair<T>, threshold: f64) -> Result<f64> {
    validate_threshold(threshold)?;
    let t = T::from_f64(threshold);
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, y) in pair.pairs() {
        let pb = binarize(p, t);
        let yb = y == T::one();
        inter += (pb && yb) as usize;
        union += (pb || yb) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Fraction of black target pixels predicted black (black-class recall).
pub fn black_pixel_correctness<T: Real>(pair: &MaskPair<T>, threshold: f64) -> Result<f64> {
    validate_threshold(threshold)?;
    let t = T::from_f64(threshold);
    let (mut hit, mut black) = (0usize, 0usize);
    for (p, y) in pair.pairs() {
        if y == T::one() {
            black += 1;
            hit += binarize(p, t) as usize;
        }
    }
    if black == 0 {
        return Err(Error::invalid(
            "black-pixel correctness is undefined for a target without black pixels",
        ));
    }
    Ok(hit as f64 / black as f64)
}
