//! Per-candidate classification and box-regression heads, plus the
//! four-term weighted detection loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng, Vector};
use crate::relation::RoiGeometry;

/// One affine layer per head: 2-way softmax classifier (background, mass)
/// and 4-component box offset regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub cls_weight: Matrix,
    pub cls_bias: Vector,
    pub reg_weight: Matrix,
    pub reg_bias: Vector,
}

impl HeadParams {
    pub fn init(rng: &mut Rng, d_f: usize) -> Result<Self> {
        let s = 1.0 / (d_f as f64).sqrt();
        Ok(HeadParams {
            cls_weight: crate::numerics::random_matrix(rng, 2, d_f, s)?,
            cls_bias: vec![0.0; 2],
            reg_weight: crate::numerics::random_matrix(rng, 4, d_f, s)?,
            reg_bias: vec![0.0; 4],
        })
    }

    pub fn validate(&self, d_f: usize) -> Result<()> {
        let ok = self.cls_weight.rows() == 2
            && self.cls_weight.cols() == d_f
            && self.cls_bias.len() == 2
            && self.reg_weight.rows() == 4
            && self.reg_weight.cols() == d_f
            && self.reg_bias.len() == 4;
        if !ok {
            return Err(Error::Shape(format!(
                "head tensors inconsistent with d_f={d_f}"
            )));
        }
        self.cls_weight.validate()?;
        self.reg_weight.validate()
    }
}

/// Coefficients of the loss L = L1_cls + alpha*L1_reg + beta*L2_cls + gamma*L2_reg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 2.0,
            beta: 1.0,
            gamma: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
    Ignore,
}

/// Training target for one candidate. Regression offsets exist only for
/// positives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTarget {
    pub label: Label,
    pub regression_target: Option<Vector>,
}

impl CandidateTarget {
    pub fn validate(&self) -> Result<()> {
        match (self.label, &self.regression_target) {
            (Label::Positive, Some(t)) if t.len() == 4 => Ok(()),
            (Label::Positive, _) => Err(Error::Domain(
                "positive candidate must carry a 4-component regression target".into(),
            )),
            (_, Some(_)) => Err(Error::Domain(
                "regression target is only defined for positive candidates".into(),
            )),
            (_, None) => Ok(()),
        }
    }
}

/// Stabilized softmax over the two class logits.
pub fn classify(feature: &[f64], params: &HeadParams) -> Result<Vector> {
    let mut logits = params.cls_weight.matvec(feature)?;
    crate::numerics::axpy(&mut logits, 1.0, &params.cls_bias)?;
    Ok(softmax2(&logits))
}

fn softmax2(logits: &[f64]) -> Vector {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Linear box-offset prediction in the t-parameterization.
pub fn regress(feature: &[f64], params: &HeadParams) -> Result<Vector> {
    let mut out = params.reg_weight.matvec(feature)?;
    crate::numerics::axpy(&mut out, 1.0, &params.reg_bias)?;
    Ok(out)
}

/// Standard RCNN box target: t = [(gx-ax)/aw, (gy-ay)/ah, log(gw/aw), log(gh/ah)].
pub fn encode_regression_target(anchor: &RoiGeometry, gt: &RoiGeometry) -> Result<Vector> {
    anchor.validate()?;
    gt.validate()?;
    Ok(vec![
        (gt.x - anchor.x) / anchor.w,
        (gt.y - anchor.y) / anchor.h,
        (gt.w / anchor.w).ln(),
        (gt.h / anchor.h).ln(),
    ])
}

/// Inverse of `encode_regression_target`.
pub fn decode_regression(anchor: &RoiGeometry, t: &[f64]) -> Result<RoiGeometry> {
    anchor.validate()?;
    if t.len() != 4 {
        return Err(Error::Shape(format!(
            "regression offsets must have length 4, got {}",
            t.len()
        )));
    }
    RoiGeometry::new(
        anchor.x + t[0] * anchor.w,
        anchor.y + t[1] * anchor.h,
        anchor.w * t[2].exp(),
        anchor.h * t[3].exp(),
    )
}

/// Smooth-L1 with transition at 1: 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise.
pub fn smooth_l1(d: f64) -> f64 {
    let a = d.abs();
    if a < 1.0 {
        0.5 * d * d
    } else {
        a - 0.5
    }
}

/// Derivative of `smooth_l1`.
pub fn smooth_l1_grad(d: f64) -> f64 {
    d.clamp(-1.0, 1.0)
}

/// Index of the "mass" class in classifier output.
pub const MASS_CLASS: usize = 1;

/// Per-view losses: classification is mean cross-entropy over non-ignored
/// candidates; regression is mean smooth-L1 over positives, summed over the
/// 4 offset components. Each mean is 0 when its candidate set is empty.
pub fn view_loss(
    probs: &[Vector],
    regs: &[Vector],
    targets: &[CandidateTarget],
) -> Result<(f64, f64)> {
    if probs.len() != targets.len() || regs.len() != targets.len() {
        return Err(Error::Shape(format!(
            "view_loss: got {} probs, {} regs, {} targets",
            probs.len(),
            regs.len(),
            targets.len()
        )));
    }
    let mut cls_sum = 0.0;
    let mut cls_n = 0usize;
    let mut reg_sum = 0.0;
    let mut reg_n = 0usize;
    for ((p, r), t) in probs.iter().zip(regs).zip(targets) {
        t.validate()?;
        match t.label {
            Label::Ignore => {}
            Label::Positive | Label::Negative => {
                let class = if t.label == Label::Positive { MASS_CLASS } else { 1 - MASS_CLASS };
                cls_sum += -p[class].ln();
                cls_n += 1;
            }
        }
        if t.label == Label::Positive {
            let tgt = t.regression_target.as_ref().unwrap();
            if r.len() != 4 {
                return Err(Error::Shape("regression prediction must have length 4".into()));
            }
            reg_sum += r
                .iter()
                .zip(tgt)
                .map(|(pred, want)| smooth_l1(pred - want))
                .sum::<f64>();
            reg_n += 1;
        }
    }
    let cls = if cls_n > 0 { cls_sum / cls_n as f64 } else { 0.0 };
    let reg = if reg_n > 0 { reg_sum / reg_n as f64 } else { 0.0 };
    Ok((cls, reg))
}

/// L = L1_cls + alpha*L1_reg + beta*L2_cls + gamma*L2_reg.
pub fn total_loss(view1: (f64, f64), view2: (f64, f64), wts: &LossWeights) -> f64 {
    view1.0 + wts.alpha * view1.1 + wts.beta * view2.0 + wts.gamma * view2.1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_head(d_f: usize) -> HeadParams {
        HeadParams {
            cls_weight: Matrix::zeros(2, d_f),
            cls_bias: vec![0.0; 2],
            reg_weight: Matrix::zeros(4, d_f),
            reg_bias: vec![0.0; 4],
        }
    }

    #[test]
    fn classify_uniform_for_zero_params() {
        let p = classify(&[1.0, -2.0, 3.0], &zero_head(3)).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn classify_shift_invariant() {
        let mut h = zero_head(1);
        h.cls_bias = vec![7.3, 7.3];
        let p = classify(&[0.0], &h).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!((p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn classify_hand_softmax() {
        let mut h = zero_head(1);
        h.cls_bias = vec![1.0, 0.0];
        let p = classify(&[0.0], &h).unwrap();
        let e = 1.0f64.exp();
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn regress_zero_params() {
        assert_eq!(regress(&[1.0, 2.0], &zero_head(2)).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn encode_identity_and_hand_case() {
        let a = RoiGeometry::new(0.0, 0.0, 2.0, 2.0).unwrap();
        assert_eq!(encode_regression_target(&a, &a).unwrap(), vec![0.0; 4]);
        let g = RoiGeometry::new(1.0, 0.0, 4.0, 2.0).unwrap();
        let t = encode_regression_target(&a, &g).unwrap();
        assert_eq!(t[0], 0.5);
        assert_eq!(t[1], 0.0);
        assert!((t[2] - 2.0f64.ln()).abs() < 1e-15);
        assert_eq!(t[3], 0.0);
    }

    #[test]
    fn encode_decode_round_trip() {
        let mut rng = crate::numerics::Rng::from_seed(17);
        for _ in 0..50 {
            let a = RoiGeometry::new(
                rng.uniform(-50.0, 50.0),
                rng.uniform(-50.0, 50.0),
                rng.uniform(0.5, 30.0),
                rng.uniform(0.5, 30.0),
            )
            .unwrap();
            let g = RoiGeometry::new(
                rng.uniform(-50.0, 50.0),
                rng.uniform(-50.0, 50.0),
                rng.uniform(0.5, 30.0),
                rng.uniform(0.5, 30.0),
            )
            .unwrap();
            let t = encode_regression_target(&a, &g).unwrap();
            let back = decode_regression(&a, &t).unwrap();
            assert!((back.x - g.x).abs() < 1e-12 * g.x.abs().max(1.0));
            assert!((back.y - g.y).abs() < 1e-12 * g.y.abs().max(1.0));
            assert!((back.w - g.w).abs() < 1e-12 * g.w.abs().max(1.0));
            assert!((back.h - g.h).abs() < 1e-12 * g.h.abs().max(1.0));
        }
    }

    #[test]
    fn smooth_l1_knot_continuity() {
        let eps = 1e-9;
        assert!((smooth_l1(1.0 - eps) - smooth_l1(1.0 + eps)).abs() < 1e-8);
        assert!((smooth_l1_grad(1.0 - eps) - smooth_l1_grad(1.0 + eps)).abs() < 1e-8);
        // slope by finite differences on both sides of the knot
        let h = 1e-6;
        let left = (smooth_l1(1.0 - h) - smooth_l1(1.0 - 3.0 * h)) / (2.0 * h);
        let right = (smooth_l1(1.0 + 3.0 * h) - smooth_l1(1.0 + h)) / (2.0 * h);
        assert!((left - right).abs() < 1e-5);
    }

    fn tgt(label: Label, reg: Option<Vec<f64>>) -> CandidateTarget {
        CandidateTarget {
            label,
            regression_target: reg,
        }
    }

    #[test]
    fn view_loss_perfect_predictions() {
        let probs = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let regs = vec![vec![0.1, 0.2, 0.3, 0.4], vec![0.0; 4]];
        let targets = vec![
            tgt(Label::Positive, Some(vec![0.1, 0.2, 0.3, 0.4])),
            tgt(Label::Negative, None),
        ];
        let (cls, reg) = view_loss(&probs, &regs, &targets).unwrap();
        assert_eq!(cls, 0.0);
        assert_eq!(reg, 0.0);
    }

    #[test]
    fn view_loss_uniform_classifier_is_ln2() {
        let probs = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let regs = vec![vec![0.0; 4], vec![0.0; 4]];
        let targets = vec![tgt(Label::Negative, None), tgt(Label::Negative, None)];
        let (cls, reg) = view_loss(&probs, &regs, &targets).unwrap();
        assert!((cls - 2.0f64.ln()).abs() < 1e-12);
        assert_eq!(reg, 0.0);
    }

    #[test]
    fn view_loss_ignores_and_empty_sets() {
        let probs = vec![vec![0.9, 0.1]];
        let regs = vec![vec![0.0; 4]];
        let targets = vec![tgt(Label::Ignore, None)];
        let (cls, reg) = view_loss(&probs, &regs, &targets).unwrap();
        assert_eq!((cls, reg), (0.0, 0.0));
    }

    #[test]
    fn total_loss_paper_default_combination() {
        let wts = LossWeights::default();
        let l = total_loss((1.0, 0.5), (2.0, 0.25), &wts);
        assert_eq!(l, 4.5);
        assert_eq!(total_loss((0.0, 0.0), (0.0, 0.0), &wts), 0.0);
        let zero = LossWeights { alpha: 0.0, beta: 0.0, gamma: 0.0 };
        assert_eq!(total_loss((1.25, 9.0), (9.0, 9.0), &zero), 1.25);
    }

    #[test]
    fn target_validation() {
        assert!(tgt(Label::Positive, None).validate().is_err());
        assert!(tgt(Label::Negative, Some(vec![0.0; 4])).validate().is_err());
        assert!(tgt(Label::Positive, Some(vec![0.0; 3])).validate().is_err());
        assert!(tgt(Label::Positive, Some(vec![0.0; 4])).validate().is_ok());
    }
}
