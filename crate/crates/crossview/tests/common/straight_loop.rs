//! Straight-loop re-implementation of the gated cross-view block, written
//! from the definitions with plain nested loops and none of the library's
//! linear-algebra helpers. Shared by the oracle and acceptance suites.

use crossview::numerics::{Matrix, Rng};
use crossview::relation::{
    RelationBlockParams, RelationStackParams, RoiCandidate, RoiGeometry, View,
};

pub fn o_matvec(m: &Matrix, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.rows()];
    for i in 0..m.rows() {
        let mut acc = 0.0;
        for j in 0..m.cols() {
            acc += m.get(i, j) * x[j];
        }
        out[i] = acc;
    }
    out
}

pub fn o_geometry(a: &RoiGeometry, b: &RoiGeometry) -> [f64; 4] {
    let eps = 1e-3;
    let gx = ((a.x - b.x).abs() / b.w).max(eps).ln();
    let gy = ((a.y - b.y).abs() / b.h).max(eps).ln();
    [gx, gy, (a.w / b.w).ln(), (a.h / b.h).ln()]
}

pub fn o_embed(g: &[f64; 4], d_emb: usize, wavelength: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let pairs = d_emb / 8;
    for &component in g {
        for k in 0..pairs {
            let denom = wavelength.powf(8.0 * k as f64 / d_emb as f64);
            out.push((component / denom).sin());
            out.push((component / denom).cos());
        }
    }
    out
}

pub fn o_aggregate(
    target: &RoiCandidate,
    sources: &[RoiCandidate],
    params: &RelationBlockParams,
    wavelength: f64,
) -> Vec<f64> {
    let d_f = target.feature.len();
    if sources.is_empty() {
        return vec![0.0; d_f];
    }
    let query = o_matvec(&params.w1, &target.feature);
    let mut weights = Vec::new();
    for s in sources {
        let key = o_matvec(&params.w2, &s.feature);
        let mut affinity = 0.0;
        for (q, k) in query.iter().zip(&key) {
            affinity += q * k;
        }
        affinity /= (params.d_k as f64).sqrt();

        let emb = o_embed(&o_geometry(&target.geometry, &s.geometry), params.d_emb, wavelength);
        let mut preact = 0.0;
        for (v, e) in params.gate.iter().zip(&emb) {
            preact += v * e;
        }
        let gate = preact.max(0.0);
        weights.push(gate * affinity.exp());
    }
    let denom: f64 = weights.iter().sum();
    if denom <= 1e-12 {
        return vec![0.0; d_f];
    }
    let mut out = vec![0.0; d_f];
    for (s, w) in sources.iter().zip(&weights) {
        let transformed = o_matvec(&params.w3, &s.feature);
        for (o, t) in out.iter_mut().zip(&transformed) {
            *o += w * t;
        }
    }
    for o in &mut out {
        *o /= denom;
    }
    out
}

pub fn o_block(
    targets: &[RoiCandidate],
    sources: &[RoiCandidate],
    params: &RelationBlockParams,
    wavelength: f64,
) -> Vec<Vec<f64>> {
    targets
        .iter()
        .map(|t| {
            let agg = o_aggregate(t, sources, params, wavelength);
            t.feature.iter().zip(&agg).map(|(f, a)| f + a).collect()
        })
        .collect()
}

pub fn o_stack(
    view1: &[RoiCandidate],
    view2: &[RoiCandidate],
    stack: &RelationStackParams,
    wavelength: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut c1 = view1.to_vec();
    let mut c2 = view2.to_vec();
    for (a, b) in stack.blocks_1from2.iter().zip(&stack.blocks_2from1) {
        let n1 = o_block(&c1, &c2, a, wavelength);
        let n2 = o_block(&c2, &c1, b, wavelength);
        for (c, f) in c1.iter_mut().zip(n1) {
            c.feature = f;
        }
        for (c, f) in c2.iter_mut().zip(n2) {
            c.feature = f;
        }
    }
    (
        c1.into_iter().map(|c| c.feature).collect(),
        c2.into_iter().map(|c| c.feature).collect(),
    )
}

pub fn random_cands(rng: &mut Rng, view: View, n: usize, d_f: usize) -> Vec<RoiCandidate> {
    (0..n)
        .map(|_| RoiCandidate {
            geometry: RoiGeometry::new(
                rng.uniform(10.0, 990.0),
                rng.uniform(10.0, 990.0),
                rng.uniform(5.0, 120.0),
                rng.uniform(5.0, 120.0),
            )
            .unwrap(),
            feature: (0..d_f).map(|_| rng.uniform(-2.0, 2.0)).collect(),
            view,
        })
        .collect()
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}
