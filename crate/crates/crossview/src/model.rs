//! Full model parameter set: the relation stack plus one classification /
//! regression head per view.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::HeadParams;
use crate::numerics::{Matrix, Rng};
use crate::relation::{RelationStackParams, DEFAULT_WAVELENGTH};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_f: usize,
    pub d_k: usize,
    pub d_emb: usize,
    pub n_blocks: usize,
    pub wavelength: f64,
}

impl ModelDims {
    pub fn new(d_f: usize, d_k: usize, d_emb: usize, n_blocks: usize) -> Self {
        ModelDims {
            d_f,
            d_k,
            d_emb,
            n_blocks,
            wavelength: DEFAULT_WAVELENGTH,
        }
    }
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims::new(128, 64, 64, 3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub stack: RelationStackParams,
    /// Head applied to view-1 features after the stack.
    pub head1: HeadParams,
    /// Head applied to view-2 features after the stack.
    pub head2: HeadParams,
}

/// Gradients mirror the parameter structure tensor for tensor.
pub type ParamGradients = ModelParams;

impl ModelParams {
    /// Uniform +-1/sqrt(fan_in) initialization for weights, zeros for biases.
    pub fn init(dims: ModelDims, rng: &mut Rng) -> Result<Self> {
        let stack = RelationStackParams::init(rng, dims.n_blocks, dims.d_f, dims.d_k, dims.d_emb)?;
        let head1 = HeadParams::init(rng, dims.d_f)?;
        let head2 = HeadParams::init(rng, dims.d_f)?;
        Ok(ModelParams {
            dims,
            stack,
            head1,
            head2,
        })
    }

    /// Same shapes, all entries zero. Used for gradients and momentum state.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.tensors_mut() {
            for v in t {
                *v = 0.0;
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.stack.n_blocks() != self.dims.n_blocks {
            return Err(Error::Shape(format!(
                "stack has {} blocks, dims say {}",
                self.stack.n_blocks(),
                self.dims.n_blocks
            )));
        }
        if self.dims.wavelength <= 1.0 {
            return Err(Error::Config(format!(
                "wavelength must exceed 1, got {}",
                self.dims.wavelength
            )));
        }
        self.stack.validate(self.dims.d_f)?;
        self.head1.validate(self.dims.d_f)?;
        self.head2.validate(self.dims.d_f)
    }

    /// Named flat views of every learnable tensor, in a stable order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (dir, blocks) in [
            ("1from2", &self.stack.blocks_1from2),
            ("2from1", &self.stack.blocks_2from1),
        ] {
            for (i, b) in blocks.iter().enumerate() {
                out.push((format!("block_{dir}[{i}].w1"), b.w1.as_slice()));
                out.push((format!("block_{dir}[{i}].w2"), b.w2.as_slice()));
                out.push((format!("block_{dir}[{i}].w3"), b.w3.as_slice()));
                out.push((format!("block_{dir}[{i}].gate"), &b.gate));
            }
        }
        for (name, h) in [("head1", &self.head1), ("head2", &self.head2)] {
            out.push((format!("{name}.cls_weight"), h.cls_weight.as_slice()));
            out.push((format!("{name}.cls_bias"), &h.cls_bias));
            out.push((format!("{name}.reg_weight"), h.reg_weight.as_slice()));
            out.push((format!("{name}.reg_bias"), &h.reg_bias));
        }
        out
    }

    /// Mutable counterpart of `tensors`, same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (dir, blocks) in [
            ("1from2", &mut self.stack.blocks_1from2),
            ("2from1", &mut self.stack.blocks_2from1),
        ] {
            for (i, b) in blocks.iter_mut().enumerate() {
                out.push((format!("block_{dir}[{i}].w1"), b.w1.as_mut_slice()));
                out.push((format!("block_{dir}[{i}].w2"), b.w2.as_mut_slice()));
                out.push((format!("block_{dir}[{i}].w3"), b.w3.as_mut_slice()));
                out.push((format!("block_{dir}[{i}].gate"), b.gate.as_mut_slice()));
            }
        }
        for (name, h) in [("head1", &mut self.head1), ("head2", &mut self.head2)] {
            out.push((format!("{name}.cls_weight"), h.cls_weight.as_mut_slice()));
            out.push((format!("{name}.cls_bias"), h.cls_bias.as_mut_slice()));
            out.push((format!("{name}.reg_weight"), h.reg_weight.as_mut_slice()));
            out.push((format!("{name}.reg_bias"), h.reg_bias.as_mut_slice()));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// self += scale * other, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) -> Result<()> {
        let others = other.tensors();
        for ((name, mine), (oname, theirs)) in self.tensors_mut().into_iter().zip(others) {
            if name != oname || mine.len() != theirs.len() {
                return Err(Error::Shape(format!(
                    "parameter structures differ at {name} vs {oname}"
                )));
            }
            for (m, t) in mine.iter_mut().zip(theirs) {
                *m += scale * t;
            }
        }
        Ok(())
    }

    /// self *= scale, every entry.
    pub fn scale(&mut self, scale: f64) {
        for (_, t) in self.tensors_mut() {
            for v in t {
                *v *= scale;
            }
        }
    }

    pub fn cls_head(&self, view: crate::relation::View) -> &HeadParams {
        match view {
            crate::relation::View::View1 => &self.head1,
            crate::relation::View::View2 => &self.head2,
        }
    }
}

/// Relation block with identity W3, used by convex-hull style checks.
pub fn identity_w3_block(d_f: usize, d_k: usize, d_emb: usize, rng: &mut Rng) -> Result<crate::relation::RelationBlockParams> {
    let mut b = crate::relation::RelationBlockParams::init(rng, d_f, d_k, d_emb)?;
    b.w3 = Matrix::identity(d_f);
    Ok(b)
}
