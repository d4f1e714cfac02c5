//! Cross-view relation blocks: gated scaled-dot-product attention from the
//! candidates of one view onto each candidate of the paired view, with a
//! residual add, stacked N times per direction.
//!
//! A block combines a visual affinity (scaled dot product of linearly
//! transformed features) with a geometric gate (ReLU of a learned projection
//! of the sinusoidally embedded normalized box geometry). The gated,
//! exponentiated affinities are normalized to a weight simplex and used to
//! average the W3-transformed source features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, relu, Matrix, Rng, Vector};

/// Clamp inside the log of the normalized geometry, for zero positional offsets.
pub const DEFAULT_GEOMETRY_EPS: f64 = 1e-3;
/// Base wavelength of the sinusoidal geometry embedding.
pub const DEFAULT_WAVELENGTH: f64 = 1000.0;
/// Threshold under which the attention denominator is treated as all-dead.
pub const DEFAULT_DENOM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum View {
    View1,
    View2,
}

impl View {
    pub fn opposite(self) -> View {
        match self {
            View::View1 => View::View2,
            View::View2 => View::View1,
        }
    }
}

/// Box geometry as center, width and height, in image units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiGeometry {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl RoiGeometry {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let g = RoiGeometry { x, y, w, h };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0 && self.h > 0.0) {
            return Err(Error::Domain(format!(
                "box width/height must be positive, got w={} h={}",
                self.w, self.h
            )));
        }
        if ![self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("box geometry contains NaN/Inf".into()));
        }
        Ok(())
    }
}

/// One proposal in one view: geometry plus visual feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiCandidate {
    pub geometry: RoiGeometry,
    pub feature: Vector,
    pub view: View,
}

/// Learnable tensors of a single relation block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationBlockParams {
    /// d_k x d_f, transforms the target-side feature.
    pub w1: Matrix,
    /// d_k x d_f, transforms the source-side feature.
    pub w2: Matrix,
    /// d_f x d_f, transforms source features into the target feature space.
    pub w3: Matrix,
    /// Length d_emb, projects the embedded geometry to the scalar gate.
    pub gate: Vector,
    pub d_k: usize,
    pub d_emb: usize,
}

impl RelationBlockParams {
    pub fn d_f(&self) -> usize {
        self.w3.cols()
    }

    /// Random initialization, uniform in +-1/sqrt(fan_in).
    pub fn init(rng: &mut Rng, d_f: usize, d_k: usize, d_emb: usize) -> Result<Self> {
        validate_dims(d_f, d_k, d_emb)?;
        let s_f = 1.0 / (d_f as f64).sqrt();
        let s_e = 1.0 / (d_emb as f64).sqrt();
        Ok(RelationBlockParams {
            w1: crate::numerics::random_matrix(rng, d_k, d_f, s_f)?,
            w2: crate::numerics::random_matrix(rng, d_k, d_f, s_f)?,
            w3: crate::numerics::random_matrix(rng, d_f, d_f, s_f)?,
            gate: crate::numerics::random_vector(rng, d_emb, s_e)?,
            d_k,
            d_emb,
        })
    }

    pub fn validate(&self, d_f: usize) -> Result<()> {
        validate_dims(d_f, self.d_k, self.d_emb)?;
        let ok = self.w1.rows() == self.d_k
            && self.w1.cols() == d_f
            && self.w2.rows() == self.d_k
            && self.w2.cols() == d_f
            && self.w3.rows() == d_f
            && self.w3.cols() == d_f
            && self.gate.len() == self.d_emb;
        if !ok {
            return Err(Error::Shape(format!(
                "relation block tensors inconsistent with d_f={} d_k={} d_emb={}",
                d_f, self.d_k, self.d_emb
            )));
        }
        self.w1.validate()?;
        self.w2.validate()?;
        self.w3.validate()?;
        Ok(())
    }
}

fn validate_dims(d_f: usize, d_k: usize, d_emb: usize) -> Result<()> {
    if d_f == 0 || d_k == 0 {
        return Err(Error::Config("d_f and d_k must be positive".into()));
    }
    if d_emb == 0 || d_emb % 8 != 0 {
        return Err(Error::Config(format!(
            "d_emb must be a positive multiple of 8 (4 geometry components x sin/cos pairs), got {d_emb}"
        )));
    }
    Ok(())
}

/// N relation blocks per direction. Direction parameters are independent:
/// W1 and W2 play asymmetric roles, so the two flows get their own tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationStackParams {
    pub blocks_1from2: Vec<RelationBlockParams>,
    pub blocks_2from1: Vec<RelationBlockParams>,
}

impl RelationStackParams {
    pub fn init(rng: &mut Rng, n_blocks: usize, d_f: usize, d_k: usize, d_emb: usize) -> Result<Self> {
        let mut blocks_1from2 = Vec::with_capacity(n_blocks);
        let mut blocks_2from1 = Vec::with_capacity(n_blocks);
        for _ in 0..n_blocks {
            blocks_1from2.push(RelationBlockParams::init(rng, d_f, d_k, d_emb)?);
            blocks_2from1.push(RelationBlockParams::init(rng, d_f, d_k, d_emb)?);
        }
        Ok(RelationStackParams {
            blocks_1from2,
            blocks_2from1,
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks_1from2.len()
    }

    pub fn validate(&self, d_f: usize) -> Result<()> {
        if self.blocks_1from2.len() != self.blocks_2from1.len() {
            return Err(Error::Shape(
                "relation stack directions have different block counts".into(),
            ));
        }
        for b in self.blocks_1from2.iter().chain(&self.blocks_2from1) {
            b.validate(d_f)?;
        }
        Ok(())
    }
}

/// Normalized cross-view geometry vector g of a target box `a` relative to a
/// source box `b`:
/// `[log(max(|xa-xb|/wb, eps)), log(max(|ya-yb|/hb, eps)), log(wa/wb), log(ha/hb)]`.
///
/// The eps clamp keeps the log finite when the two boxes coincide.
pub fn geometric_normalize(p_a: &RoiGeometry, p_b: &RoiGeometry, eps: f64) -> Result<Vector> {
    p_a.validate()?;
    p_b.validate()?;
    if eps <= 0.0 {
        return Err(Error::Domain(format!("eps must be positive, got {eps}")));
    }
    Ok(vec![
        ((p_a.x - p_b.x).abs() / p_b.w).max(eps).ln(),
        ((p_a.y - p_b.y).abs() / p_b.h).max(eps).ln(),
        (p_a.w / p_b.w).ln(),
        (p_a.h / p_b.h).ln(),
    ])
}

/// Sinusoidal multi-frequency embedding E(g) of the 4-component geometry
/// vector. Each component contributes d_emb/4 entries as interleaved
/// sin/cos pairs at wavelengths `wavelength^(8k/d_emb)`.
pub fn embed_geometry(g: &[f64], d_emb: usize, wavelength: f64) -> Result<Vector> {
    if g.len() != 4 {
        return Err(Error::Shape(format!(
            "geometry vector must have length 4, got {}",
            g.len()
        )));
    }
    if d_emb == 0 || d_emb % 8 != 0 {
        return Err(Error::Config(format!(
            "d_emb must be a positive multiple of 8, got {d_emb}"
        )));
    }
    if wavelength <= 1.0 {
        return Err(Error::Config(format!(
            "wavelength must exceed 1, got {wavelength}"
        )));
    }
    let pairs = d_emb / 8;
    let mut out = Vec::with_capacity(d_emb);
    for &c in g {
        for k in 0..pairs {
            let freq = wavelength.powf(8.0 * k as f64 / d_emb as f64);
            let t = c / freq;
            out.push(t.sin());
            out.push(t.cos());
        }
    }
    Ok(out)
}

/// Visual affinity w_ab = (W1 f_a) . (W2 f_b) / sqrt(d_k).
pub fn visual_affinity(f_a: &[f64], f_b: &[f64], params: &RelationBlockParams) -> Result<f64> {
    let qa = params.w1.matvec(f_a)?;
    let rb = params.w2.matvec(f_b)?;
    Ok(dot(&qa, &rb)? / (params.d_k as f64).sqrt())
}

/// Geometric gate v_ab = relu(v . E(g)), always non-negative.
pub fn geometric_gate(g: &[f64], params: &RelationBlockParams, wavelength: f64) -> Result<f64> {
    let emb = embed_geometry(g, params.d_emb, wavelength)?;
    Ok(relu(dot(&params.gate, &emb)?))
}

/// Relational feature for one target: gated softmax-normalized average of the
/// W3-transformed source features. Affinities are shifted by their maximum
/// before exponentiation; the normalization makes that a no-op mathematically.
/// Returns the zero vector when the denominator vanishes (all gates dead or
/// no sources).
pub fn aggregate(
    target: &RoiCandidate,
    sources: &[RoiCandidate],
    params: &RelationBlockParams,
    eps_denom: f64,
) -> Result<Vector> {
    aggregate_with(target, sources, params, eps_denom, DEFAULT_GEOMETRY_EPS, DEFAULT_WAVELENGTH)
}

/// `aggregate` with explicit geometry-eps and embedding wavelength.
pub fn aggregate_with(
    target: &RoiCandidate,
    sources: &[RoiCandidate],
    params: &RelationBlockParams,
    eps_denom: f64,
    geom_eps: f64,
    wavelength: f64,
) -> Result<Vector> {
    if eps_denom <= 0.0 {
        return Err(Error::Domain(format!(
            "eps_denom must be positive, got {eps_denom}"
        )));
    }
    let d_f = target.feature.len();
    if sources.is_empty() {
        return Ok(vec![0.0; d_f]);
    }
    for s in sources {
        if s.view != target.view.opposite() {
            return Err(Error::Domain(
                "aggregate: sources must all come from the opposite view".into(),
            ));
        }
    }

    let mut affinities = Vec::with_capacity(sources.len());
    let mut gates = Vec::with_capacity(sources.len());
    for s in sources {
        affinities.push(visual_affinity(&target.feature, &s.feature, params)?);
        let g = geometric_normalize(&target.geometry, &s.geometry, geom_eps)?;
        gates.push(geometric_gate(&g, params, wavelength)?);
    }
    // stabilize over gated sources only: a dead-gate source contributes an
    // exact zero and must not shift anyone else's arithmetic
    let max_w = affinities
        .iter()
        .zip(&gates)
        .filter(|(_, v)| **v > 0.0)
        .map(|(w, _)| *w)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max_w.is_finite() {
        return Ok(vec![0.0; d_f]);
    }
    let weights: Vec<f64> = affinities
        .iter()
        .zip(&gates)
        .map(|(w, v)| if *v > 0.0 { v * (w - max_w).exp() } else { 0.0 })
        .collect();
    let denom: f64 = weights.iter().sum();
    if denom <= eps_denom {
        return Ok(vec![0.0; d_f]);
    }

    // normalize before accumulating: a lone active source then carries the
    // exact coefficient 1.0 and its transform passes through bit-for-bit
    let mut acc = vec![0.0; d_f];
    for (s, a) in sources.iter().zip(&weights) {
        if *a == 0.0 {
            continue;
        }
        let transformed = params.w3.matvec(&s.feature)?;
        crate::numerics::axpy(&mut acc, a / denom, &transformed)?;
    }
    Ok(acc)
}

/// One relation block over a whole target list: residual add of the
/// aggregated relational feature. Geometry passes through unchanged.
pub fn relation_block_forward(
    targets: &[RoiCandidate],
    sources: &[RoiCandidate],
    params: &RelationBlockParams,
) -> Result<Vec<Vector>> {
    relation_block_forward_with(
        targets,
        sources,
        params,
        DEFAULT_DENOM_EPS,
        DEFAULT_GEOMETRY_EPS,
        DEFAULT_WAVELENGTH,
    )
}

pub fn relation_block_forward_with(
    targets: &[RoiCandidate],
    sources: &[RoiCandidate],
    params: &RelationBlockParams,
    eps_denom: f64,
    geom_eps: f64,
    wavelength: f64,
) -> Result<Vec<Vector>> {
    if let Some(first) = targets.first() {
        if targets.iter().any(|t| t.view != first.view) {
            return Err(Error::Domain("relation block: mixed views in target list".into()));
        }
        if sources.iter().any(|s| s.view != first.view.opposite()) {
            return Err(Error::Domain(
                "relation block: sources must all come from the opposite view".into(),
            ));
        }
    }
    let mut out = Vec::with_capacity(targets.len());
    for t in targets {
        let mut f = t.feature.clone();
        let rel = aggregate_with(t, sources, params, eps_denom, geom_eps, wavelength)?;
        crate::numerics::axpy(&mut f, 1.0, &rel)?;
        out.push(f);
    }
    Ok(out)
}

/// Full stack: N synchronous stages. At stage i, both directions read the
/// features that entered the stage; geometry never changes. N = 0 is the
/// identity on both views.
pub fn relation_stack_forward(
    view1: &[RoiCandidate],
    view2: &[RoiCandidate],
    stack: &RelationStackParams,
) -> Result<(Vec<Vector>, Vec<Vector>)> {
    relation_stack_forward_with(
        view1,
        view2,
        stack,
        DEFAULT_DENOM_EPS,
        DEFAULT_GEOMETRY_EPS,
        DEFAULT_WAVELENGTH,
    )
}

pub fn relation_stack_forward_with(
    view1: &[RoiCandidate],
    view2: &[RoiCandidate],
    stack: &RelationStackParams,
    eps_denom: f64,
    geom_eps: f64,
    wavelength: f64,
) -> Result<(Vec<Vector>, Vec<Vector>)> {
    let mut cands1 = view1.to_vec();
    let mut cands2 = view2.to_vec();
    for (block_a, block_b) in stack.blocks_1from2.iter().zip(&stack.blocks_2from1) {
        let next1 =
            relation_block_forward_with(&cands1, &cands2, block_a, eps_denom, geom_eps, wavelength)?;
        let next2 =
            relation_block_forward_with(&cands2, &cands1, block_b, eps_denom, geom_eps, wavelength)?;
        for (c, f) in cands1.iter_mut().zip(next1) {
            c.feature = f;
        }
        for (c, f) in cands2.iter_mut().zip(next2) {
            c.feature = f;
        }
    }
    Ok((
        cands1.into_iter().map(|c| c.feature).collect(),
        cands2.into_iter().map(|c| c.feature).collect(),
    ))
}
