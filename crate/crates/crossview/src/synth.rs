//! Synthetic paired-view detection cases.
//!
//! Stands in for the proposal stage of a two-view detector: the same latent
//! lesions appear in both views with a correlated first coordinate (a depth
//! analog) and correlated visual features, mixed with distractor candidates
//! whose features can be made arbitrarily confusable with real lesions.
//! Single-view appearance then carries only partial signal and cross-view
//! geometry disambiguates, which is the regime the relation stack is for.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{encode_regression_target, CandidateTarget, Label};
use crate::metrics::iou;
use crate::numerics::{Rng, Vector};
use crate::relation::{RoiCandidate, RoiGeometry, View};

/// Amplitude of the alternating-sign contrast component that every lesion
/// signature carries (+ for lesions, - for background texture). It is
/// zero-mean across feature dimensions, so a linear head can separate the
/// classes without first learning a large bias. Confusability interpolates
/// distractors between the background and a real signature.
const CONTRAST_AMPLITUDE: f64 = 2.0;

fn contrast_pattern(i: usize) -> f64 {
    if i % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// IoU at or above which a candidate is a positive.
pub const IOU_POSITIVE: f64 = 0.5;
/// IoU below which a candidate is a negative; in between it is ignored.
pub const IOU_NEGATIVE: f64 = 0.3;

/// One latent lesion shared by both views.
#[derive(Debug, Clone)]
pub struct LatentLesion {
    pub identity: u64,
    pub shared_signature: Vector,
    pub size: f64,
    /// Normalized depth in [0,1]; drives the correlated first coordinate.
    pub depth: f64,
}

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: usize,
    pub max: usize,
}

impl CountRange {
    pub fn sample(&self, rng: &mut Rng) -> usize {
        self.min + rng.index(self.max - self.min + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min > self.max {
            return Err(Error::Config(format!(
                "empty count range {}..{}",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    #[serde(default = "default_extent")]
    pub image_extent: f64,
    #[serde(default = "default_lesions")]
    pub lesions_per_case: CountRange,
    #[serde(default = "default_distractors")]
    pub distractors_per_view: CountRange,
    #[serde(default = "default_feature_noise")]
    pub feature_noise_sigma: f64,
    #[serde(default = "default_geometry_noise")]
    pub geometry_noise_sigma: f64,
    #[serde(default = "default_confusability")]
    pub distractor_confusability: f64,
    #[serde(default = "default_d_f")]
    pub d_f: usize,
    #[serde(default = "default_d_sig")]
    pub d_sig: usize,
    pub seed: u64,
}

fn default_extent() -> f64 {
    1024.0
}
fn default_lesions() -> CountRange {
    CountRange { min: 1, max: 3 }
}
fn default_distractors() -> CountRange {
    CountRange { min: 4, max: 8 }
}
fn default_feature_noise() -> f64 {
    0.15
}
fn default_geometry_noise() -> f64 {
    8.0
}
fn default_confusability() -> f64 {
    0.7
}
fn default_d_f() -> usize {
    32
}
fn default_d_sig() -> usize {
    8
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            image_extent: default_extent(),
            lesions_per_case: default_lesions(),
            distractors_per_view: default_distractors(),
            feature_noise_sigma: default_feature_noise(),
            geometry_noise_sigma: default_geometry_noise(),
            distractor_confusability: default_confusability(),
            d_f: default_d_f(),
            d_sig: default_d_sig(),
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_extent <= 0.0 {
            return Err(Error::Config("image_extent must be positive".into()));
        }
        self.lesions_per_case.validate()?;
        self.distractors_per_view.validate()?;
        if self.feature_noise_sigma < 0.0 || self.geometry_noise_sigma < 0.0 {
            return Err(Error::Config("noise sigmas must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.distractor_confusability) {
            return Err(Error::Config(
                "distractor_confusability must lie in [0,1]".into(),
            ));
        }
        if self.d_f == 0 || self.d_sig == 0 || self.d_sig > self.d_f {
            return Err(Error::Config(format!(
                "need 0 < d_sig <= d_f, got d_sig={} d_f={}",
                self.d_sig, self.d_f
            )));
        }
        Ok(())
    }
}

/// Ground-truth box with its lesion identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub geometry: RoiGeometry,
    pub lesion: u64,
}

/// One two-view case: candidates, ground truth, and aligned training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub case_id: u64,
    pub view1: Vec<RoiCandidate>,
    pub view2: Vec<RoiCandidate>,
    pub gt1: Vec<GroundTruthBox>,
    pub gt2: Vec<GroundTruthBox>,
    pub targets1: Vec<CandidateTarget>,
    pub targets2: Vec<CandidateTarget>,
}

impl PairedSample {
    pub fn validate(&self) -> Result<()> {
        if self.view1.len() != self.targets1.len() || self.view2.len() != self.targets2.len() {
            return Err(Error::Shape(
                "candidate and target lists are misaligned".into(),
            ));
        }
        for (cands, view) in [(&self.view1, View::View1), (&self.view2, View::View2)] {
            for c in cands {
                if c.view != view {
                    return Err(Error::Domain("candidate stored under wrong view".into()));
                }
                c.geometry.validate()?;
            }
        }
        for t in self.targets1.iter().chain(&self.targets2) {
            t.validate()?;
        }
        let d_f = self.feature_len();
        if self
            .view1
            .iter()
            .chain(&self.view2)
            .any(|c| c.feature.len() != d_f)
        {
            return Err(Error::Shape("inconsistent feature lengths in case".into()));
        }
        let mut ids1: Vec<u64> = self.gt1.iter().map(|g| g.lesion).collect();
        let mut ids2: Vec<u64> = self.gt2.iter().map(|g| g.lesion).collect();
        ids1.sort_unstable();
        ids2.sort_unstable();
        if ids1 != ids2 {
            return Err(Error::Domain(format!(
                "case {}: lesion ids differ between views",
                self.case_id
            )));
        }
        Ok(())
    }

    pub fn feature_len(&self) -> usize {
        self.view1
            .first()
            .or_else(|| self.view2.first())
            .map_or(0, |c| c.feature.len())
    }

    pub fn candidates(&self, view: View) -> &[RoiCandidate] {
        match view {
            View::View1 => &self.view1,
            View::View2 => &self.view2,
        }
    }

    pub fn targets(&self, view: View) -> &[CandidateTarget] {
        match view {
            View::View1 => &self.targets1,
            View::View2 => &self.targets2,
        }
    }

    pub fn ground_truth(&self, view: View) -> &[GroundTruthBox] {
        match view {
            View::View1 => &self.gt1,
            View::View2 => &self.gt2,
        }
    }
}

fn tile(base: &[f64], d_f: usize) -> Vector {
    (0..d_f).map(|i| base[i % base.len()]).collect()
}

fn noisy(mut v: Vector, sigma: f64, rng: &mut Rng) -> Vector {
    if sigma > 0.0 {
        for x in &mut v {
            *x += rng.normal(sigma);
        }
    }
    v
}

/// Assign labels and regression targets by the IoU rule.
pub fn assign_targets(
    candidates: &[RoiCandidate],
    gts: &[GroundTruthBox],
) -> Result<Vec<CandidateTarget>> {
    let mut out = Vec::with_capacity(candidates.len());
    for c in candidates {
        let best = gts
            .iter()
            .map(|g| (iou(&c.geometry, &g.geometry), g))
            .max_by(|a, b| a.0.total_cmp(&b.0));
        let target = match best {
            Some((best_iou, g)) if best_iou >= IOU_POSITIVE => CandidateTarget {
                label: Label::Positive,
                regression_target: Some(encode_regression_target(&c.geometry, &g.geometry)?),
            },
            Some((best_iou, _)) if best_iou >= IOU_NEGATIVE => CandidateTarget {
                label: Label::Ignore,
                regression_target: None,
            },
            _ => CandidateTarget {
                label: Label::Negative,
                regression_target: None,
            },
        };
        out.push(target);
    }
    Ok(out)
}

fn lesion_box(lesion: &LatentLesion, cfg: &GeneratorConfig, rng: &mut Rng) -> Result<RoiGeometry> {
    let extent = cfg.image_extent;
    RoiGeometry::new(
        (lesion.depth * extent + rng.normal(cfg.geometry_noise_sigma)).clamp(0.0, extent),
        rng.uniform(0.1, 0.9) * extent,
        lesion.size * (1.0 + rng.uniform(-0.2, 0.2)),
        lesion.size * (1.0 + rng.uniform(-0.2, 0.2)),
    )
}

fn jitter_box(gt: &RoiGeometry, sigma: f64, rng: &mut Rng) -> Result<RoiGeometry> {
    RoiGeometry::new(
        gt.x + rng.normal(sigma),
        gt.y + rng.normal(sigma),
        (gt.w + rng.normal(0.5 * sigma)).max(4.0),
        (gt.h + rng.normal(0.5 * sigma)).max(4.0),
    )
}

/// Generate one paired case. All randomness comes from `rng`, so the output
/// is fully determined by (config, rng seed).
pub fn generate_case(cfg: &GeneratorConfig, rng: &mut Rng) -> Result<PairedSample> {
    cfg.validate()?;
    let n_lesions = cfg.lesions_per_case.sample(rng);
    let lesions: Vec<LatentLesion> = (0..n_lesions)
        .map(|i| LatentLesion {
            identity: i as u64,
            shared_signature: (0..cfg.d_sig)
                .map(|i| CONTRAST_AMPLITUDE * contrast_pattern(i) + rng.uniform(-1.0, 1.0))
                .collect(),
            size: rng.uniform(30.0, 80.0),
            depth: rng.uniform(0.1, 0.9),
        })
        .collect();

    let mut views: Vec<(Vec<RoiCandidate>, Vec<GroundTruthBox>)> = Vec::with_capacity(2);
    for view in [View::View1, View::View2] {
        let mut gts = Vec::with_capacity(lesions.len());
        let mut cands = Vec::new();
        for lesion in &lesions {
            let gt = lesion_box(lesion, cfg, rng)?;
            gts.push(GroundTruthBox {
                geometry: gt,
                lesion: lesion.identity,
            });
            cands.push(RoiCandidate {
                geometry: jitter_box(&gt, cfg.geometry_noise_sigma, rng)?,
                feature: noisy(
                    tile(&lesion.shared_signature, cfg.d_f),
                    cfg.feature_noise_sigma,
                    rng,
                ),
                view,
            });
        }
        let n_distractors = cfg.distractors_per_view.sample(rng);
        for _ in 0..n_distractors {
            let size = rng.uniform(30.0, 80.0);
            let geometry = RoiGeometry::new(
                rng.uniform(0.02, 0.98) * cfg.image_extent,
                rng.uniform(0.02, 0.98) * cfg.image_extent,
                size * (1.0 + rng.uniform(-0.2, 0.2)),
                size * (1.0 + rng.uniform(-0.2, 0.2)),
            )?;
            let background: Vector = (0..cfg.d_sig)
                .map(|i| -CONTRAST_AMPLITUDE * contrast_pattern(i) + rng.uniform(-1.0, 1.0))
                .collect();
            let base: Vector = if lesions.is_empty() {
                background
            } else {
                let sig = &lesions[rng.index(lesions.len())].shared_signature;
                let c = cfg.distractor_confusability;
                sig.iter()
                    .zip(&background)
                    .map(|(s, b)| c * s + (1.0 - c) * b)
                    .collect()
            };
            cands.push(RoiCandidate {
                geometry,
                feature: noisy(tile(&base, cfg.d_f), cfg.feature_noise_sigma, rng),
                view,
            });
        }
        views.push((cands, gts));
    }

    let (view2, gt2) = views.pop().unwrap();
    let (view1, gt1) = views.pop().unwrap();
    let targets1 = assign_targets(&view1, &gt1)?;
    let targets2 = assign_targets(&view2, &gt2)?;
    let sample = PairedSample {
        case_id: 0,
        view1,
        view2,
        gt1,
        gt2,
        targets1,
        targets2,
    };
    sample.validate()?;
    Ok(sample)
}

/// Generate `cases` paired cases with per-case derived seeds.
pub fn generate_dataset(cfg: &GeneratorConfig, cases: usize) -> Result<Vec<PairedSample>> {
    cfg.validate()?;
    let root = Rng::from_seed(cfg.seed);
    let mut out = Vec::with_capacity(cases);
    for i in 0..cases {
        let mut case_rng = root.derive(i as u64);
        let mut sample = generate_case(cfg, &mut case_rng)?;
        sample.case_id = i as u64;
        out.push(sample);
    }
    Ok(out)
}

// ---- serialization (line-delimited JSON records) ----

#[derive(Serialize, Deserialize)]
struct CandidateRecord {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    feature: Vec<f64>,
    label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct GtRecord {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    lesion: u64,
}

#[derive(Serialize, Deserialize)]
struct CaseRecord {
    case_id: u64,
    view1: Vec<CandidateRecord>,
    view2: Vec<CandidateRecord>,
    gt1: Vec<GtRecord>,
    gt2: Vec<GtRecord>,
}

fn to_record(sample: &PairedSample) -> CaseRecord {
    let cands = |cs: &[RoiCandidate], ts: &[CandidateTarget]| {
        cs.iter()
            .zip(ts)
            .map(|(c, t)| CandidateRecord {
                x: c.geometry.x,
                y: c.geometry.y,
                w: c.geometry.w,
                h: c.geometry.h,
                feature: c.feature.clone(),
                label: t.label,
                target: t.regression_target.clone(),
            })
            .collect()
    };
    let gts = |gs: &[GroundTruthBox]| {
        gs.iter()
            .map(|g| GtRecord {
                x: g.geometry.x,
                y: g.geometry.y,
                w: g.geometry.w,
                h: g.geometry.h,
                lesion: g.lesion,
            })
            .collect()
    };
    CaseRecord {
        case_id: sample.case_id,
        view1: cands(&sample.view1, &sample.targets1),
        view2: cands(&sample.view2, &sample.targets2),
        gt1: gts(&sample.gt1),
        gt2: gts(&sample.gt2),
    }
}

fn from_record(rec: CaseRecord) -> Result<PairedSample> {
    let cands = |rs: Vec<CandidateRecord>, view: View| -> Result<(Vec<RoiCandidate>, Vec<CandidateTarget>)> {
        let mut cs = Vec::with_capacity(rs.len());
        let mut ts = Vec::with_capacity(rs.len());
        for r in rs {
            cs.push(RoiCandidate {
                geometry: RoiGeometry::new(r.x, r.y, r.w, r.h)?,
                feature: r.feature,
                view,
            });
            ts.push(CandidateTarget {
                label: r.label,
                regression_target: r.target,
            });
        }
        Ok((cs, ts))
    };
    let gts = |rs: Vec<GtRecord>| -> Result<Vec<GroundTruthBox>> {
        rs.into_iter()
            .map(|r| {
                Ok(GroundTruthBox {
                    geometry: RoiGeometry::new(r.x, r.y, r.w, r.h)?,
                    lesion: r.lesion,
                })
            })
            .collect()
    };
    let (view1, targets1) = cands(rec.view1, View::View1)?;
    let (view2, targets2) = cands(rec.view2, View::View2)?;
    let sample = PairedSample {
        case_id: rec.case_id,
        view1,
        view2,
        gt1: gts(rec.gt1)?,
        gt2: gts(rec.gt2)?,
        targets1,
        targets2,
    };
    sample.validate()?;
    Ok(sample)
}

/// Serialize one JSON record per line. Floats use shortest round-trip
/// formatting, so read-back is lossless and output is byte-deterministic.
pub fn write_dataset(samples: &[PairedSample], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        let line = serde_json::to_string(&to_record(s)).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e.into(),
        })?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Inverse of `write_dataset`. Malformed records are reported with their
/// line number; feature-length inconsistencies across the file are schema
/// errors.
pub fn read_dataset(path: &Path) -> Result<Vec<PairedSample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut d_f: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CaseRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        let sample = from_record(rec).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        let len = sample.feature_len();
        match d_f {
            None => d_f = Some(len),
            Some(expect) if expect != len => {
                return Err(Error::Shape(format!(
                    "{}:{}: feature length {} differs from earlier records ({})",
                    path.display(),
                    i + 1,
                    len,
                    expect
                )));
            }
            _ => {}
        }
        out.push(sample);
    }
    Ok(out)
}

/// Small random sample for gradient checks: candidate 0 in each view is a
/// positive tied to lesion 0, the rest alternate negative/ignore.
pub fn random_toy_sample(rng: &mut Rng, n1: usize, n2: usize, d_f: usize) -> Result<PairedSample> {
    assert!(n1 >= 1 && n2 >= 1);
    let mk_cands = |view: View, n: usize, rng: &mut Rng| -> Result<Vec<RoiCandidate>> {
        (0..n)
            .map(|_| {
                Ok(RoiCandidate {
                    geometry: RoiGeometry::new(
                        rng.uniform(50.0, 950.0),
                        rng.uniform(50.0, 950.0),
                        rng.uniform(20.0, 80.0),
                        rng.uniform(20.0, 80.0),
                    )?,
                    feature: (0..d_f).map(|_| rng.uniform(-1.0, 1.0)).collect(),
                    view,
                })
            })
            .collect()
    };
    let view1 = mk_cands(View::View1, n1, rng)?;
    let view2 = mk_cands(View::View2, n2, rng)?;
    let mk_gt = |c: &RoiCandidate, rng: &mut Rng| -> Result<GroundTruthBox> {
        Ok(GroundTruthBox {
            geometry: RoiGeometry::new(
                c.geometry.x + rng.uniform(-2.0, 2.0),
                c.geometry.y + rng.uniform(-2.0, 2.0),
                c.geometry.w * (1.0 + rng.uniform(-0.05, 0.05)),
                c.geometry.h * (1.0 + rng.uniform(-0.05, 0.05)),
            )?,
            lesion: 0,
        })
    };
    let gt1 = vec![mk_gt(&view1[0], rng)?];
    let gt2 = vec![mk_gt(&view2[0], rng)?];
    let mk_targets = |cands: &[RoiCandidate], gt: &GroundTruthBox| -> Result<Vec<CandidateTarget>> {
        cands
            .iter()
            .enumerate()
            .map(|(i, c)| {
                Ok(if i == 0 {
                    CandidateTarget {
                        label: Label::Positive,
                        regression_target: Some(encode_regression_target(&c.geometry, &gt.geometry)?),
                    }
                } else if i % 2 == 1 {
                    CandidateTarget {
                        label: Label::Negative,
                        regression_target: None,
                    }
                } else {
                    CandidateTarget {
                        label: Label::Ignore,
                        regression_target: None,
                    }
                })
            })
            .collect()
    };
    let targets1 = mk_targets(&view1, &gt1[0])?;
    let targets2 = mk_targets(&view2, &gt2[0])?;
    let sample = PairedSample {
        case_id: 0,
        view1,
        view2,
        gt1,
        gt2,
        targets1,
        targets2,
    };
    sample.validate()?;
    Ok(sample)
}
