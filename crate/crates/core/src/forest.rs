//! Bagged ensemble of randomized decision trees (Gini splits, `sqrt(d)`
//! candidate features per node).

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureBank;
use crate::grid::{Dims, ProbabilityField};

pub const PIXEL_TREES: usize = 100;
pub const BOUNDARY_TREES: usize = 255;

const MAGIC: &[u8; 4] = b"ASRF";
const BINARY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub tree_count: usize,
    pub seed: u64,
    pub max_depth: Option<usize>,
    /// Nodes with fewer samples become leaves.
    pub min_samples_split: usize,
}

impl ForestConfig {
    pub fn new(tree_count: usize, seed: u64) -> Self {
        ForestConfig { tree_count, seed, max_depth: None, min_samples_split: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
    Leaf { counts: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn leaf(&self, x: &[f64]) -> &[u32] {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Split { feature, threshold, left, right } => {
                    at = if x[*feature as usize] <= *threshold { *left } else { *right } as usize;
                }
                Node::Leaf { counts } => return counts,
            }
        }
    }

    fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Sidecar metadata written next to the binary model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub v: u32,
    pub tree_count: usize,
    pub k: usize,
    pub d: usize,
    pub seed: u64,
    pub max_depth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    trees: Vec<Tree>,
    k: usize,
    d: usize,
    config: ForestConfig,
}

/// Trains on `labels[i] in 0..k`. A single-class training set gives a
/// constant predictor.
pub fn train(bank: &FeatureBank, labels: &[usize], k: usize, cfg: &ForestConfig) -> Result<EnsembleModel> {
    if bank.n() == 0 {
        return Err(Error::Empty("training set is empty".into()));
    }
    if labels.len() != bank.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} samples",
            labels.len(),
            bank.n()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} outside {k} classes")));
    }
    if cfg.tree_count == 0 {
        return Err(Error::InvalidArgument("tree_count must be positive".into()));
    }
    let trees = (0..cfg.tree_count)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64);
            grow_tree(bank, labels, k, cfg, &mut rng)
        })
        .collect();
    Ok(EnsembleModel { trees, k, d: bank.d(), config: *cfg })
}

fn grow_tree(bank: &FeatureBank, labels: &[usize], k: usize, cfg: &ForestConfig, rng: &mut ChaCha8Rng) -> Tree {
    let n = bank.n();
    let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mut nodes = vec![Node::Leaf { counts: Vec::new() }];
    // (node slot, samples, depth)
    let mut stack = vec![(0usize, sample, 0usize)];
    let mtry = ((bank.d() as f64).sqrt().floor() as usize).max(1);
    let mut features: Vec<usize> = (0..bank.d()).collect();
    while let Some((slot, samples, depth)) = stack.pop() {
        let mut counts = vec![0u32; k];
        for &i in &samples {
            counts[labels[i]] += 1;
        }
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_ok = cfg.max_depth.is_none_or(|m| depth < m);
        let split = if !pure && depth_ok && samples.len() >= cfg.min_samples_split.max(2) {
            features.shuffle(rng);
            best_split(bank, labels, k, &samples, &features, mtry)
        } else {
            None
        };
        match split {
            Some((feature, threshold)) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    samples.iter().partition(|&&i| bank.row(i)[feature] <= threshold);
                let (left, right) = (nodes.len(), nodes.len() + 1);
                nodes.push(Node::Leaf { counts: Vec::new() });
                nodes.push(Node::Leaf { counts: Vec::new() });
                nodes[slot] =
                    Node::Split { feature: feature as u32, threshold, left: left as u32, right: right as u32 };
                stack.push((right, r, depth + 1));
                stack.push((left, l, depth + 1));
            }
            None => nodes[slot] = Node::Leaf { counts },
        }
    }
    Tree { nodes }
}

fn gini(counts: &[u32], total: u32) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

/// Lowest weighted Gini over the first `mtry` usable features of `order`;
/// constant features do not count toward `mtry`.
fn best_split(
    bank: &FeatureBank,
    labels: &[usize],
    k: usize,
    samples: &[usize],
    order: &[usize],
    mtry: usize,
) -> Option<(usize, f64)> {
    let total = samples.len() as u32;
    let mut all = vec![0u32; k];
    for &i in samples {
        all[labels[i]] += 1;
    }
    let mut best: Option<(f64, usize, f64)> = None;
    let mut tried = 0;
    let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(samples.len());
    for &f in order {
        if tried == mtry {
            break;
        }
        sorted.clear();
        sorted.extend(samples.iter().map(|&i| (bank.row(i)[f], labels[i])));
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        if sorted[0].0 == sorted[sorted.len() - 1].0 {
            continue;
        }
        tried += 1;
        let mut left = vec![0u32; k];
        for s in 0..sorted.len() - 1 {
            left[sorted[s].1] += 1;
            if sorted[s].0 == sorted[s + 1].0 {
                continue;
            }
            let nl = s as u32 + 1;
            let right: Vec<u32> = all.iter().zip(&left).map(|(a, l)| a - l).collect();
            let score = (nl as f64 * gini(&left, nl) + (total - nl) as f64 * gini(&right, total - nl))
                / total as f64;
            if best.is_none_or(|(b, _, _)| score < b) {
                let mid = 0.5 * (sorted[s].0 + sorted[s + 1].0);
                // guard against the midpoint rounding onto the upper value
                let threshold = if mid < sorted[s + 1].0 { mid } else { sorted[s].0 };
                best = Some((score, f, threshold));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

impl EnsembleModel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn tree_count(&self) -> usize {
        self.trees.len()
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn max_tree_depth(&self) -> usize {
        self.trees.iter().map(Tree::depth).max().unwrap_or(0)
    }

    /// Mean of normalized leaf histograms for one sample.
    pub fn predict_row(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.k];
        for tree in &self.trees {
            let counts = tree.leaf(x);
            let total: u32 = counts.iter().sum();
            for (pc, &c) in p.iter_mut().zip(counts) {
                *pc += c as f64 / total as f64;
            }
        }
        let sum: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= sum);
        p
    }

    /// Row-major `n x k` class probabilities.
    pub fn predict_proba(&self, bank: &FeatureBank) -> Result<Vec<f64>> {
        if bank.d() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} features, bank has {}",
                self.d,
                bank.d()
            )));
        }
        let rows: Vec<Vec<f64>> = (0..bank.n()).into_par_iter().map(|i| self.predict_row(bank.row(i))).collect();
        Ok(rows.concat())
    }

    pub fn predict_field(&self, bank: &FeatureBank, dims: Dims) -> Result<ProbabilityField> {
        if bank.n() != dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for a grid of {} voxels",
                bank.n(),
                dims.len()
            )));
        }
        ProbabilityField::new(dims, self.k, self.predict_proba(bank)?)
    }

    pub fn predict(&self, bank: &FeatureBank) -> Result<Vec<usize>> {
        let p = self.predict_proba(bank)?;
        Ok(p.chunks(self.k).map(crate::labelprop::argmax).collect())
    }

    pub fn info(&self) -> ModelInfo {
        ModelInfo {
            v: BINARY_VERSION,
            tree_count: self.trees.len(),
            k: self.k,
            d: self.d,
            seed: self.config.seed,
            max_depth: self.config.max_depth,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.k as u32).to_le_bytes());
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        out.extend_from_slice(&self.config.seed.to_le_bytes());
        out.extend_from_slice(&(self.config.max_depth.map_or(0, |m| m as u32 + 1)).to_le_bytes());
        out.extend_from_slice(&(self.config.min_samples_split as u32).to_le_bytes());
        out.extend_from_slice(&(self.trees.len() as u32).to_le_bytes());
        for tree in &self.trees {
            out.extend_from_slice(&(tree.nodes.len() as u32).to_le_bytes());
            for node in &tree.nodes {
                match node {
                    Node::Split { feature, threshold, left, right } => {
                        out.push(0);
                        out.extend_from_slice(&feature.to_le_bytes());
                        out.extend_from_slice(&threshold.to_le_bytes());
                        out.extend_from_slice(&left.to_le_bytes());
                        out.extend_from_slice(&right.to_le_bytes());
                    }
                    Node::Leaf { counts } => {
                        out.push(1);
                        for c in counts {
                            out.extend_from_slice(&c.to_le_bytes());
                        }
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::ModelFormat("not a forest model file".into()));
        }
        let version = r.u32()?;
        if version != BINARY_VERSION {
            return Err(Error::ModelFormat(format!("unsupported model version {version}")));
        }
        let k = r.u32()? as usize;
        let d = r.u32()? as usize;
        let seed = r.u64()?;
        let max_depth = match r.u32()? {
            0 => None,
            m => Some(m as usize - 1),
        };
        let min_samples_split = r.u32()? as usize;
        let tree_count = r.u32()? as usize;
        let mut trees = Vec::with_capacity(tree_count);
        for _ in 0..tree_count {
            let count = r.u32()? as usize;
            let mut nodes = Vec::with_capacity(count.min(1 << 20));
            for _ in 0..count {
                let node = match r.take(1)?[0] {
                    0 => Node::Split { feature: r.u32()?, threshold: r.f64()?, left: r.u32()?, right: r.u32()? },
                    1 => Node::Leaf { counts: (0..k).map(|_| r.u32()).collect::<Result<_>>()? },
                    tag => return Err(Error::ModelFormat(format!("bad node tag {tag}"))),
                };
                nodes.push(node);
            }
            let tree = Tree { nodes };
            validate_tree(&tree, k, d)?;
            trees.push(tree);
        }
        if r.at != bytes.len() {
            return Err(Error::ModelFormat("trailing bytes after model".into()));
        }
        Ok(EnsembleModel {
            trees,
            k,
            d,
            config: ForestConfig { tree_count, seed, max_depth, min_samples_split },
        })
    }

    /// Writes the binary model and a `.json` sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        crate::io::write_json(&path.with_extension("json"), &self.info())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let model = Self::from_bytes(&bytes)?;
        let sidecar = path.with_extension("json");
        if sidecar.exists() {
            let info: ModelInfo = crate::io::read_json(&sidecar)?;
            if info != model.info() {
                return Err(Error::ModelFormat(format!("{} disagrees with the model", sidecar.display())));
            }
        }
        Ok(model)
    }
}

fn validate_tree(tree: &Tree, k: usize, d: usize) -> Result<()> {
    let n = tree.nodes.len();
    if n == 0 {
        return Err(Error::ModelFormat("empty tree".into()));
    }
    for (at, node) in tree.nodes.iter().enumerate() {
        match node {
            Node::Split { feature, left, right, .. } => {
                let ok = (*feature as usize) < d
                    && (*left as usize) > at
                    && (*right as usize) > at
                    && (*left as usize) < n
                    && (*right as usize) < n;
                if !ok {
                    return Err(Error::ModelFormat(format!("corrupt split node {at}")));
                }
            }
            Node::Leaf { counts } => {
                if counts.len() != k || counts.iter().all(|&c| c == 0) {
                    return Err(Error::ModelFormat(format!("corrupt leaf node {at}")));
                }
            }
        }
    }
    Ok(())
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl ByteReader<'_> {
    fn take(&mut self, len: usize) -> Result<&[u8]> {
        let end = self.at.checked_add(len).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::ModelFormat("truncated model file".into()))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
