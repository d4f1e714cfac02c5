//! Exact gradients of the four-term detection loss with respect to every
//! parameter tensor, plus a central-difference verifier.
//!
//! The forward pass is the public relation-stack and head code; the backward
//! pass re-derives per-block intermediates from the stored stage features
//! and pushes upstream gradients through the residual add, the normalized
//! gated aggregation (denominator included), the ReLU gate (subgradient 0
//! at 0), the scaled bilinear affinity, and both heads. The embedded
//! geometry is a constant with respect to parameters.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::heads::{classify, regress, smooth_l1_grad, total_loss, view_loss, HeadParams, Label, LossWeights, MASS_CLASS};
use crate::model::{ModelParams, ParamGradients};
use crate::numerics::{axpy, dot, Vector};
use crate::relation::{
    embed_geometry, geometric_normalize, relation_block_forward_with, RelationBlockParams,
    RoiCandidate, DEFAULT_DENOM_EPS, DEFAULT_GEOMETRY_EPS,
};
use crate::synth::PairedSample;

/// Feature lists at every stage of the stack: `stages[t]` holds the features
/// entering stage t, `stages[n_blocks]` the final features.
struct StageFeatures {
    view1: Vec<Vec<Vector>>,
    view2: Vec<Vec<Vector>>,
}

fn check_dims(sample: &PairedSample, model: &ModelParams) -> Result<()> {
    if sample.view1.is_empty() || sample.view2.is_empty() {
        return Err(Error::Domain(
            "backward: each view needs at least one candidate".into(),
        ));
    }
    let d_f = sample.feature_len();
    if d_f != model.dims.d_f {
        return Err(Error::Shape(format!(
            "feature length mismatch: dataset has d_f={}, model has d_f={}",
            d_f, model.dims.d_f
        )));
    }
    Ok(())
}

fn cands_with_features(template: &[RoiCandidate], features: &[Vector]) -> Vec<RoiCandidate> {
    template
        .iter()
        .zip(features)
        .map(|(c, f)| RoiCandidate {
            geometry: c.geometry,
            feature: f.clone(),
            view: c.view,
        })
        .collect()
}

fn run_stages(sample: &PairedSample, model: &ModelParams) -> Result<StageFeatures> {
    let dims = &model.dims;
    let mut stages1 = vec![sample.view1.iter().map(|c| c.feature.clone()).collect::<Vec<_>>()];
    let mut stages2 = vec![sample.view2.iter().map(|c| c.feature.clone()).collect::<Vec<_>>()];
    for (block_a, block_b) in model
        .stack
        .blocks_1from2
        .iter()
        .zip(&model.stack.blocks_2from1)
    {
        let cands1 = cands_with_features(&sample.view1, stages1.last().unwrap());
        let cands2 = cands_with_features(&sample.view2, stages2.last().unwrap());
        stages1.push(relation_block_forward_with(
            &cands1,
            &cands2,
            block_a,
            DEFAULT_DENOM_EPS,
            DEFAULT_GEOMETRY_EPS,
            dims.wavelength,
        )?);
        stages2.push(relation_block_forward_with(
            &cands2,
            &cands1,
            block_b,
            DEFAULT_DENOM_EPS,
            DEFAULT_GEOMETRY_EPS,
            dims.wavelength,
        )?);
    }
    Ok(StageFeatures {
        view1: stages1,
        view2: stages2,
    })
}

/// Final-stage features of both views (the relation-stack output the heads
/// consume).
pub fn stack_features(sample: &PairedSample, model: &ModelParams) -> Result<(Vec<Vector>, Vec<Vector>)> {
    check_dims(sample, model)?;
    let mut stages = run_stages(sample, model)?;
    Ok((stages.view1.pop().unwrap(), stages.view2.pop().unwrap()))
}

fn head_outputs(features: &[Vector], head: &HeadParams) -> Result<(Vec<Vector>, Vec<Vector>)> {
    let mut probs = Vec::with_capacity(features.len());
    let mut regs = Vec::with_capacity(features.len());
    for f in features {
        probs.push(classify(f, head)?);
        regs.push(regress(f, head)?);
    }
    Ok((probs, regs))
}

/// Total loss of one sample, forward only. This is the function the
/// finite-difference verifier perturbs.
pub fn forward_loss(sample: &PairedSample, model: &ModelParams, wts: &LossWeights) -> Result<f64> {
    wts.validate()?;
    let (f1, f2) = stack_features(sample, model)?;
    let (p1, r1) = head_outputs(&f1, &model.head1)?;
    let (p2, r2) = head_outputs(&f2, &model.head2)?;
    let l1 = view_loss(&p1, &r1, &sample.targets1)?;
    let l2 = view_loss(&p2, &r2, &sample.targets2)?;
    Ok(total_loss(l1, l2, wts))
}

/// Head backward for one view: accumulates parameter gradients and returns
/// the per-candidate feature gradients.
fn head_backward(
    features: &[Vector],
    targets: &[crate::heads::CandidateTarget],
    head: &HeadParams,
    head_grad: &mut HeadParams,
    weight_cls: f64,
    weight_reg: f64,
) -> Result<Vec<Vector>> {
    let d_f = head.cls_weight.cols();
    let mut feat_grads = vec![vec![0.0; d_f]; features.len()];
    let n_cls = targets.iter().filter(|t| t.label != Label::Ignore).count();
    let n_pos = targets.iter().filter(|t| t.label == Label::Positive).count();

    for ((f, t), fg) in features.iter().zip(targets).zip(&mut feat_grads) {
        if weight_cls != 0.0 && t.label != Label::Ignore && n_cls > 0 {
            let probs = classify(f, head)?;
            let class = if t.label == Label::Positive { MASS_CLASS } else { 1 - MASS_CLASS };
            let scale = weight_cls / n_cls as f64;
            let mut dz = probs;
            dz[class] -= 1.0;
            for v in &mut dz {
                *v *= scale;
            }
            head_grad.cls_weight.add_outer(&dz, f, 1.0)?;
            axpy(&mut head_grad.cls_bias, 1.0, &dz)?;
            axpy(fg, 1.0, &head.cls_weight.matvec_transpose(&dz)?)?;
        }
        if weight_reg != 0.0 && t.label == Label::Positive && n_pos > 0 {
            let pred = regress(f, head)?;
            let want = t.regression_target.as_ref().unwrap();
            let scale = weight_reg / n_pos as f64;
            let dpred: Vector = pred
                .iter()
                .zip(want)
                .map(|(p, w)| scale * smooth_l1_grad(p - w))
                .collect();
            head_grad.reg_weight.add_outer(&dpred, f, 1.0)?;
            axpy(&mut head_grad.reg_bias, 1.0, &dpred)?;
            axpy(fg, 1.0, &head.reg_weight.matvec_transpose(&dpred)?)?;
        }
    }
    Ok(feat_grads)
}

/// Backward through one relation block's aggregate (the residual identity is
/// handled by the caller). Accumulates into `grad` and returns the gradients
/// with respect to the target and source features entering the block.
#[allow(clippy::too_many_arguments)]
fn block_backward(
    targets: &[RoiCandidate],
    sources: &[RoiCandidate],
    params: &RelationBlockParams,
    grad: &mut RelationBlockParams,
    upstream: &[Vector],
    wavelength: f64,
) -> Result<(Vec<Vector>, Vec<Vector>)> {
    let d_f = params.d_f();
    let sqrt_dk = (params.d_k as f64).sqrt();
    let mut d_targets = vec![vec![0.0; d_f]; targets.len()];
    let mut d_sources = vec![vec![0.0; d_f]; sources.len()];
    if sources.is_empty() {
        return Ok((d_targets, d_sources));
    }

    let keys: Vec<Vector> = sources
        .iter()
        .map(|s| params.w2.matvec(&s.feature))
        .collect::<Result<_>>()?;
    let values: Vec<Vector> = sources
        .iter()
        .map(|s| params.w3.matvec(&s.feature))
        .collect::<Result<_>>()?;
    // key-side gradients accumulate across targets before hitting W2
    let mut d_keys = vec![vec![0.0; params.d_k]; sources.len()];

    for (n, target) in targets.iter().enumerate() {
        let u = &upstream[n];
        if u.iter().all(|v| *v == 0.0) {
            continue;
        }
        let query = params.w1.matvec(&target.feature)?;
        let mut affinities = Vec::with_capacity(sources.len());
        let mut preacts = Vec::with_capacity(sources.len());
        let mut embeds = Vec::with_capacity(sources.len());
        for (s, key) in sources.iter().zip(&keys) {
            affinities.push(dot(&query, key)? / sqrt_dk);
            let g = geometric_normalize(&target.geometry, &s.geometry, DEFAULT_GEOMETRY_EPS)?;
            let emb = embed_geometry(&g, params.d_emb, wavelength)?;
            preacts.push(dot(&params.gate, &emb)?);
            embeds.push(emb);
        }
        let max_w = affinities
            .iter()
            .zip(&preacts)
            .filter(|(_, p)| crate::numerics::relu(**p) > 0.0)
            .map(|(w, _)| *w)
            .fold(f64::NEG_INFINITY, f64::max);
        if !max_w.is_finite() {
            continue;
        }
        let exps: Vec<f64> = affinities
            .iter()
            .zip(&preacts)
            .map(|(w, p)| if crate::numerics::relu(*p) > 0.0 { (w - max_w).exp() } else { 0.0 })
            .collect();
        let weights: Vec<f64> = exps
            .iter()
            .zip(&preacts)
            .map(|(e, p)| crate::numerics::relu(*p) * e)
            .collect();
        let denom: f64 = weights.iter().sum();
        if denom <= DEFAULT_DENOM_EPS {
            // dead aggregate: output is identically zero around this point
            continue;
        }
        let simplex: Vec<f64> = weights.iter().map(|a| a / denom).collect();
        let coeffs: Vec<f64> = values.iter().map(|v| dot(u, v)).collect::<Result<_>>()?;
        let coeff_mean: f64 = simplex.iter().zip(&coeffs).map(|(s, c)| s * c).sum();

        let w3t_u = params.w3.matvec_transpose(u)?;
        let mut d_query = vec![0.0; params.d_k];
        for m in 0..sources.len() {
            // value path
            grad.w3.add_outer(u, &sources[m].feature, simplex[m])?;
            axpy(&mut d_sources[m], simplex[m], &w3t_u)?;
            // softmax-weight path
            let centered = coeffs[m] - coeff_mean;
            let d_affinity = simplex[m] * centered;
            if preacts[m] > 0.0 {
                let d_gate_out = exps[m] / denom * centered;
                axpy(&mut grad.gate, d_gate_out, &embeds[m])?;
            }
            axpy(&mut d_query, d_affinity / sqrt_dk, &keys[m])?;
            axpy(&mut d_keys[m], d_affinity / sqrt_dk, &query)?;
        }
        grad.w1.add_outer(&d_query, &target.feature, 1.0)?;
        axpy(&mut d_targets[n], 1.0, &params.w1.matvec_transpose(&d_query)?)?;
    }

    for (m, s) in sources.iter().enumerate() {
        if d_keys[m].iter().all(|v| *v == 0.0) {
            continue;
        }
        grad.w2.add_outer(&d_keys[m], &s.feature, 1.0)?;
        axpy(&mut d_sources[m], 1.0, &params.w2.matvec_transpose(&d_keys[m])?)?;
    }
    Ok((d_targets, d_sources))
}

/// Loss and exact gradients of every learnable tensor for one paired sample.
pub fn backward(
    sample: &PairedSample,
    model: &ModelParams,
    wts: &LossWeights,
) -> Result<(f64, ParamGradients)> {
    wts.validate()?;
    check_dims(sample, model)?;
    let stages = run_stages(sample, model)?;
    let n = model.dims.n_blocks;

    let final1 = &stages.view1[n];
    let final2 = &stages.view2[n];
    let (p1, r1) = head_outputs(final1, &model.head1)?;
    let (p2, r2) = head_outputs(final2, &model.head2)?;
    let l1 = view_loss(&p1, &r1, &sample.targets1)?;
    let l2 = view_loss(&p2, &r2, &sample.targets2)?;
    let loss = total_loss(l1, l2, wts);

    let mut grads = model.zeros_like();
    let mut g1 = head_backward(
        final1,
        &sample.targets1,
        &model.head1,
        &mut grads.head1,
        1.0,
        wts.alpha,
    )?;
    let mut g2 = head_backward(
        final2,
        &sample.targets2,
        &model.head2,
        &mut grads.head2,
        wts.beta,
        wts.gamma,
    )?;

    for t in (0..n).rev() {
        let cands1 = cands_with_features(&sample.view1, &stages.view1[t]);
        let cands2 = cands_with_features(&sample.view2, &stages.view2[t]);
        let (dx_a, dy_a) = block_backward(
            &cands1,
            &cands2,
            &model.stack.blocks_1from2[t],
            &mut grads.stack.blocks_1from2[t],
            &g1,
            model.dims.wavelength,
        )?;
        let (dx_b, dy_b) = block_backward(
            &cands2,
            &cands1,
            &model.stack.blocks_2from1[t],
            &mut grads.stack.blocks_2from1[t],
            &g2,
            model.dims.wavelength,
        )?;
        // residual identity plus the two attention paths into each stage input
        for (gi, (dx, dy)) in g1.iter_mut().zip(dx_a.into_iter().zip(dy_b)) {
            axpy(gi, 1.0, &dx)?;
            axpy(gi, 1.0, &dy)?;
        }
        for (gi, (dx, dy)) in g2.iter_mut().zip(dx_b.into_iter().zip(dy_a)) {
            axpy(gi, 1.0, &dx)?;
            axpy(gi, 1.0, &dy)?;
        }
    }
    Ok((loss, grads))
}

/// Outcome of one central-difference gradient verification.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    /// Maximum relative error per parameter tensor, in tensor order.
    pub tensor_errors: Vec<(String, f64)>,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn worst_tensor(&self) -> Option<&str> {
        self.tensor_errors
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(n, _)| n.as_str())
    }
}

/// Compare `backward` against central differences for every parameter entry.
/// Relative error uses |a-b| / max(|a|, |b|, 1e-8).
pub fn finite_difference_check(
    sample: &PairedSample,
    model: &ModelParams,
    wts: &LossWeights,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    finite_difference_check_opts(sample, model, wts, step, tolerance, false)
}

/// As `finite_difference_check`; `corrupt` perturbs one analytic gradient
/// entry by 10% first (negative-control hook for the CLI).
pub fn finite_difference_check_opts(
    sample: &PairedSample,
    model: &ModelParams,
    wts: &LossWeights,
    step: f64,
    tolerance: f64,
    corrupt: bool,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::Config(format!(
            "finite-difference step must lie in [1e-7, 1e-3], got {step}"
        )));
    }
    if tolerance <= 0.0 {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    let (_, mut analytic) = backward(sample, model, wts)?;
    if corrupt {
        for (_, t) in analytic.tensors_mut() {
            if let Some(v) = t.iter_mut().find(|v| v.abs() > 1e-6) {
                *v *= 1.1;
                break;
            }
        }
    }

    let mut work = model.clone();
    let n_tensors = model.tensors().len();
    let mut tensor_errors = Vec::with_capacity(n_tensors);
    for ti in 0..n_tensors {
        let (name, analytic_t) = {
            let ts = analytic.tensors();
            (ts[ti].0.clone(), ts[ti].1.to_vec())
        };
        let len = analytic_t.len();
        let mut worst = 0.0f64;
        for i in 0..len {
            let original = work.tensors()[ti].1[i];
            work.tensors_mut()[ti].1[i] = original + step;
            let loss_plus = forward_loss(sample, &work, wts)?;
            work.tensors_mut()[ti].1[i] = original - step;
            let loss_minus = forward_loss(sample, &work, wts)?;
            work.tensors_mut()[ti].1[i] = original;
            let numeric = (loss_plus - loss_minus) / (2.0 * step);
            let a = analytic_t[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        tensor_errors.push((name, worst));
    }
    let max_relative_error = tensor_errors.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport {
        tensor_errors,
        max_relative_error,
        pass: max_relative_error < tolerance,
        tolerance,
    })
}
