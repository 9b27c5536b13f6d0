//! Feature datasets: synthetic cluster generation, CSV ingestion, and
//! K-shot split construction.
//!
//! Class ids are dense integers `0..n_base + n_novel`, base ids first. All
//! values are immutable after construction; generation and sampling are pure
//! functions of their seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::prelude::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense class identifier. Base classes occupy `0..n_base`, novel classes
/// `n_base..n_base + n_novel`.
pub type ClassId = usize;

/// Distance between synthetic base cluster centers.
pub const CENTER_SCALE: f64 = 10.0;

/// One labeled feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub features: Vec<f64>,
    pub class_id: ClassId,
}

/// How a synthetic novel class center was mixed from base centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub class_id: ClassId,
    /// Base class ids mixed into this center, ascending.
    pub components: Vec<ClassId>,
    /// Convex weights aligned with `components`; all positive, sum to 1.
    pub weights: Vec<f64>,
}

/// Ground truth retained by the synthetic generator so mining quality can be
/// measured against the actual cluster structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub base_centers: Vec<Vec<f64>>,
    pub novel_centers: Vec<Vec<f64>>,
    pub mixtures: Vec<MixtureSpec>,
}

/// Labeled feature vectors partitioned into abundant base classes and K-shot
/// novel classes.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotDataset {
    /// Feature dimension.
    pub d: usize,
    pub base_classes: Vec<ClassId>,
    pub novel_classes: Vec<ClassId>,
    /// Shots per class in the fine-tuning split.
    pub k: usize,
    /// Abundant base-class instances for stage-1 training.
    pub train_base: Vec<LabeledInstance>,
    /// Balanced K-shot split over base and novel classes.
    pub finetune_set: Vec<LabeledInstance>,
    pub test_set: Vec<LabeledInstance>,
    /// Present only for generated datasets.
    pub truth: Option<SyntheticTruth>,
}

/// Parameters for the synthetic cluster generator.
///
/// Each novel class center is a convex combination of `relatedness_degree`
/// distinct base centers, so the ground-truth hierarchy is known and mining
/// output can be scored against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_base: usize,
    pub n_novel: usize,
    pub d: usize,
    pub samples_per_base_class: usize,
    pub k_shot: usize,
    pub test_per_class: usize,
    /// Test instances per base class; defaults to `test_per_class`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_test_per_class: Option<usize>,
    /// Number of base centers mixed into each novel center.
    pub relatedness_degree: usize,
    /// Standard deviation of instance noise and of the isotropic jitter added
    /// to novel centers.
    pub cluster_noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_base == 0 {
            return Err(Error::Config("n_base must be positive".into()));
        }
        if self.d == 0 {
            return Err(Error::Config("d must be positive".into()));
        }
        if self.samples_per_base_class == 0 {
            return Err(Error::Config("samples_per_base_class must be positive".into()));
        }
        if self.k_shot == 0 {
            return Err(Error::Config("k_shot must be positive".into()));
        }
        if self.test_per_class == 0 {
            return Err(Error::Config("test_per_class must be positive".into()));
        }
        if self.base_test_per_class == Some(0) {
            return Err(Error::Config("base_test_per_class must be positive".into()));
        }
        if self.n_novel > 0 && (self.relatedness_degree == 0 || self.relatedness_degree > self.n_base) {
            return Err(Error::Config(format!(
                "relatedness_degree must be in 1..={} (got {})",
                self.n_base, self.relatedness_degree
            )));
        }
        if !(self.cluster_noise > 0.0) || !self.cluster_noise.is_finite() {
            return Err(Error::Config(format!(
                "cluster_noise must be a positive finite number (got {})",
                self.cluster_noise
            )));
        }
        Ok(())
    }
}

impl FewShotDataset {
    pub fn n_classes(&self) -> usize {
        self.base_classes.len() + self.novel_classes.len()
    }

    pub fn is_base(&self, class_id: ClassId) -> bool {
        class_id < self.base_classes.len()
    }

    /// Fine-tuning shots of each novel class, keyed by class id.
    pub fn novel_shots(&self) -> BTreeMap<ClassId, Vec<LabeledInstance>> {
        let mut map: BTreeMap<ClassId, Vec<LabeledInstance>> = BTreeMap::new();
        for inst in &self.finetune_set {
            if !self.is_base(inst.class_id) {
                map.entry(inst.class_id).or_default().push(inst.clone());
            }
        }
        map
    }

    /// Check the structural invariants: dense disjoint class partition, all
    /// instances labeled within it, finite features of length `d`, and exactly
    /// `k` fine-tuning shots per novel class.
    pub fn validate(&self) -> Result<()> {
        let nb = self.base_classes.len();
        let nn = self.novel_classes.len();
        for (i, &c) in self.base_classes.iter().enumerate() {
            if c != i {
                return Err(Error::Contract(format!(
                    "base class ids must be dense 0..{nb}, found {c} at position {i}"
                )));
            }
        }
        for (i, &c) in self.novel_classes.iter().enumerate() {
            if c != nb + i {
                return Err(Error::Contract(format!(
                    "novel class ids must be dense {nb}..{}, found {c} at position {i}",
                    nb + nn
                )));
            }
        }
        let n_total = nb + nn;
        let splits = [
            ("train_base", &self.train_base),
            ("finetune_set", &self.finetune_set),
            ("test_set", &self.test_set),
        ];
        for (name, split) in splits {
            for inst in split.iter() {
                if inst.class_id >= n_total {
                    return Err(Error::Contract(format!(
                        "{name} instance has class {} outside 0..{n_total}",
                        inst.class_id
                    )));
                }
                if inst.features.len() != self.d {
                    return Err(Error::Shape(format!(
                        "{name} instance of class {} has {} features, expected {}",
                        inst.class_id,
                        inst.features.len(),
                        self.d
                    )));
                }
                if inst.features.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Contract(format!(
                        "{name} instance of class {} has non-finite features",
                        inst.class_id
                    )));
                }
            }
        }
        let mut shots: BTreeMap<ClassId, usize> = BTreeMap::new();
        for inst in &self.finetune_set {
            *shots.entry(inst.class_id).or_default() += 1;
        }
        for &c in &self.novel_classes {
            let got = shots.get(&c).copied().unwrap_or(0);
            if got != self.k {
                return Err(Error::Contract(format!(
                    "novel class {c} has {got} fine-tuning shots, expected exactly {}",
                    self.k
                )));
            }
        }
        Ok(())
    }
}

fn standard_normal_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Draw base centers. With `n_base <= d` the centers are orthonormal
/// directions scaled by [`CENTER_SCALE`], which makes each novel center's
/// nearest base centers provably equal to its mixing set; otherwise random
/// unit directions are used and that guarantee becomes statistical.
fn draw_base_centers(rng: &mut ChaCha8Rng, n_base: usize, d: usize) -> Result<Vec<Vec<f64>>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(n_base);
    let orthonormal = n_base <= d;
    for i in 0..n_base {
        let mut attempts = 0;
        loop {
            attempts += 1;
            if attempts > 100 {
                return Err(Error::Config(format!(
                    "could not draw a non-degenerate center for base class {i}"
                )));
            }
            let mut v = standard_normal_vec(rng, d);
            if orthonormal {
                for prev in &centers {
                    // prev has norm CENTER_SCALE; remove the component along it.
                    let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
                    let scale = dot / (CENTER_SCALE * CENTER_SCALE);
                    for (vj, pj) in v.iter_mut().zip(prev) {
                        *vj -= scale * pj;
                    }
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-6 {
                continue;
            }
            for vj in v.iter_mut() {
                *vj *= CENTER_SCALE / norm;
            }
            centers.push(v);
            break;
        }
    }
    Ok(centers)
}

/// Generate a synthetic few-shot dataset with known cluster structure.
///
/// Deterministic: the same spec (including seed) always produces a
/// bit-identical dataset.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<FewShotDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_total = spec.n_base + spec.n_novel;

    let base_centers = draw_base_centers(&mut rng, spec.n_base, spec.d)?;

    let mut mixtures = Vec::with_capacity(spec.n_novel);
    let mut novel_centers = Vec::with_capacity(spec.n_novel);
    for j in 0..spec.n_novel {
        let mut pairs = sample_distinct(&mut rng, spec.n_base, spec.relatedness_degree)
            .into_iter()
            .map(|c| (c, rng.random_range(0.25..1.0)))
            .collect::<Vec<(usize, f64)>>();
        pairs.sort_by_key(|&(c, _)| c);
        let total: f64 = pairs.iter().map(|&(_, w)| w).sum();
        let components: Vec<ClassId> = pairs.iter().map(|&(c, _)| c).collect();
        let weights: Vec<f64> = pairs.iter().map(|&(_, w)| w / total).collect();

        let mut center = vec![0.0; spec.d];
        for (&c, &w) in components.iter().zip(&weights) {
            for (cj, bj) in center.iter_mut().zip(&base_centers[c]) {
                *cj += w * bj;
            }
        }
        let jitter = standard_normal_vec(&mut rng, spec.d);
        for (cj, nj) in center.iter_mut().zip(&jitter) {
            *cj += spec.cluster_noise * nj;
        }
        mixtures.push(MixtureSpec {
            class_id: spec.n_base + j,
            components,
            weights,
        });
        novel_centers.push(center);
    }

    let center_of = |class_id: ClassId| -> &Vec<f64> {
        if class_id < spec.n_base {
            &base_centers[class_id]
        } else {
            &novel_centers[class_id - spec.n_base]
        }
    };
    let mut draw_instance = |rng: &mut ChaCha8Rng, class_id: ClassId| -> LabeledInstance {
        let noise = standard_normal_vec(rng, spec.d);
        let features = center_of(class_id)
            .iter()
            .zip(&noise)
            .map(|(c, n)| c + spec.cluster_noise * n)
            .collect();
        LabeledInstance { features, class_id }
    };

    let mut train_base = Vec::with_capacity(spec.n_base * spec.samples_per_base_class);
    for c in 0..spec.n_base {
        for _ in 0..spec.samples_per_base_class {
            train_base.push(draw_instance(&mut rng, c));
        }
    }
    let mut finetune_set = Vec::with_capacity(n_total * spec.k_shot);
    for c in 0..n_total {
        for _ in 0..spec.k_shot {
            finetune_set.push(draw_instance(&mut rng, c));
        }
    }
    let base_test = spec.base_test_per_class.unwrap_or(spec.test_per_class);
    let mut test_set = Vec::new();
    for c in 0..n_total {
        let per = if c < spec.n_base { base_test } else { spec.test_per_class };
        for _ in 0..per {
            test_set.push(draw_instance(&mut rng, c));
        }
    }

    let ds = FewShotDataset {
        d: spec.d,
        base_classes: (0..spec.n_base).collect(),
        novel_classes: (spec.n_base..n_total).collect(),
        k: spec.k_shot,
        train_base,
        finetune_set,
        test_set,
        truth: Some(SyntheticTruth {
            base_centers,
            novel_centers,
            mixtures,
        }),
    };
    ds.validate()?;
    Ok(ds)
}

fn sample_distinct(rng: &mut ChaCha8Rng, n: usize, amount: usize) -> Vec<usize> {
    let pool: Vec<usize> = (0..n).collect();
    pool.choose_multiple(rng, amount).copied().collect()
}

/// Draw exactly `k` instances per class from `pool` without replacement,
/// deterministically in `seed`. Output is ordered by class id, then by the
/// instance's position in the pool.
pub fn sample_k_shot(pool: &[LabeledInstance], k: usize, seed: u64) -> Result<Vec<LabeledInstance>> {
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (idx, inst) in pool.iter().enumerate() {
        by_class.entry(inst.class_id).or_default().push(idx);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (&class, indices) in &by_class {
        if indices.len() < k {
            return Err(Error::InsufficientData {
                class,
                available: indices.len(),
                needed: k,
            });
        }
        let mut chosen: Vec<usize> = indices.choose_multiple(&mut rng, k).copied().collect();
        chosen.sort_unstable();
        out.extend(chosen.into_iter().map(|i| pool[i].clone()));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Persistence: manifest.json + one CSV per split.
// ---------------------------------------------------------------------------

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAIN_BASE_FILE: &str = "train_base.csv";
pub const FINETUNE_FILE: &str = "finetune.csv";
pub const TEST_FILE: &str = "test.csv";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    d: usize,
    k: usize,
    base_classes: Vec<ClassId>,
    novel_classes: Vec<ClassId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    synthetic_truth: Option<SyntheticTruth>,
}

fn features_to_csv(instances: &[LabeledInstance], d: usize) -> String {
    let mut out = String::from("class_id");
    for j in 0..d {
        let _ = write!(out, ",f{j}");
    }
    out.push('\n');
    for inst in instances {
        let _ = write!(out, "{}", inst.class_id);
        for v in &inst.features {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Parse one feature CSV. `line` in errors is 1-based over the whole file,
/// header included.
pub fn parse_features_csv(text: &str, d: usize, n_classes: usize) -> Result<Vec<LabeledInstance>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;
    let mut expect = String::from("class_id");
    for j in 0..d {
        let _ = write!(expect, ",f{j}");
    }
    if header.trim_end() != expect {
        return Err(Error::Parse {
            line: 1,
            msg: format!("header mismatch: expected `{expect}`"),
        });
    }
    let mut out = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != d + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", d + 1, fields.len()),
            });
        }
        let class_id: ClassId = fields[0].trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("invalid class id `{}`", fields[0]),
        })?;
        if class_id >= n_classes {
            return Err(Error::Parse {
                line,
                msg: format!("unknown class id {class_id} (dataset has {n_classes} classes)"),
            });
        }
        let mut features = Vec::with_capacity(d);
        for f in &fields[1..] {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("invalid feature value `{f}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("non-finite feature value `{f}`"),
                });
            }
            features.push(v);
        }
        out.push(LabeledInstance { features, class_id });
    }
    Ok(out)
}

/// Write a dataset as `manifest.json` plus three CSV splits.
/// Byte-reproducible: saving the same dataset twice yields identical files.
pub fn save_dataset(ds: &FewShotDataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        d: ds.d,
        k: ds.k,
        base_classes: ds.base_classes.clone(),
        novel_classes: ds.novel_classes.clone(),
        synthetic_truth: ds.truth.clone(),
    };
    let mut manifest_json = serde_json::to_string_pretty(&manifest)?;
    manifest_json.push('\n');
    fs::write(dir.join(MANIFEST_FILE), manifest_json)?;
    fs::write(dir.join(TRAIN_BASE_FILE), features_to_csv(&ds.train_base, ds.d))?;
    fs::write(dir.join(FINETUNE_FILE), features_to_csv(&ds.finetune_set, ds.d))?;
    fs::write(dir.join(TEST_FILE), features_to_csv(&ds.test_set, ds.d))?;
    Ok(())
}

/// Load a dataset saved by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<FewShotDataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    let n_classes = manifest.base_classes.len() + manifest.novel_classes.len();
    let read_split = |file: &str| -> Result<Vec<LabeledInstance>> {
        let text = fs::read_to_string(dir.join(file))?;
        parse_features_csv(&text, manifest.d, n_classes)
    };
    let ds = FewShotDataset {
        d: manifest.d,
        base_classes: manifest.base_classes,
        novel_classes: manifest.novel_classes,
        k: manifest.k,
        train_base: read_split(TRAIN_BASE_FILE)?,
        finetune_set: read_split(FINETUNE_FILE)?,
        test_set: read_split(TEST_FILE)?,
        truth: manifest.synthetic_truth,
    };
    ds.validate()?;
    Ok(ds)
}
