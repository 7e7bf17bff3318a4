//! Datasets: synthetic generators, an IDX reader and a CSV feature format.
//!
//! CSV datasets have one sample per line, `f1,f2,...,fn,label`, with an
//! integer class label in the last column. Blank lines and lines starting
//! with `#` are skipped.

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes {
        labels: Vec<usize>,
        classes: usize,
    },
    /// Regression targets, `dims` values per sample.
    Values {
        values: Vec<f32>,
        dims: usize,
    },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Values { values, dims } => values.len() / dims.max(&1),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> Option<usize> {
        match self {
            Targets::Classes { classes, .. } => Some(*classes),
            Targets::Values { .. } => None,
        }
    }

    pub fn select(&self, indices: &[usize]) -> Targets {
        match self {
            Targets::Classes { labels, classes } => Targets::Classes {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
            },
            Targets::Values { values, dims } => Targets::Values {
                values: indices
                    .iter()
                    .flat_map(|&i| values[i * dims..(i + 1) * dims].iter().copied())
                    .collect(),
                dims: *dims,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    sample_shape: Vec<usize>,
    features: Vec<f32>,
    targets: Targets,
}

impl Dataset {
    pub fn new(sample_shape: Vec<usize>, features: Vec<f32>, targets: Targets) -> Result<Self, HarnessError> {
        let per: usize = sample_shape.iter().product();
        if per == 0 || sample_shape.is_empty() {
            return Err(HarnessError::Data(format!("bad sample shape {sample_shape:?}")));
        }
        if !features.len().is_multiple_of(per) || features.len() / per != targets.len() {
            return Err(HarnessError::Data(format!(
                "{} feature values do not make {} samples of shape {sample_shape:?}",
                features.len(),
                targets.len()
            )));
        }
        if let Targets::Classes { labels, classes } = &targets {
            if let Some(&bad) = labels.iter().find(|&&l| l >= *classes) {
                return Err(HarnessError::Data(format!("label {bad} outside {classes} classes")));
            }
        }
        if let Targets::Values { dims: 0, .. } = targets {
            return Err(HarnessError::Data("regression targets need dims >= 1".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(HarnessError::Data("non-finite feature value".into()));
        }
        Ok(Self {
            sample_shape,
            features,
            targets,
        })
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Features and targets of the given samples, in order.
    pub fn batch(&self, indices: &[usize]) -> (Vec<f32>, Targets) {
        let n = self.sample_len();
        let x = indices
            .iter()
            .flat_map(|&i| self.features[i * n..(i + 1) * n].iter().copied())
            .collect();
        (x, self.targets.select(indices))
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let (features, targets) = self.batch(indices);
        Dataset {
            sample_shape: self.sample_shape.clone(),
            features,
            targets,
        }
    }

    /// Seeded shuffle, then the last `fraction` of samples become the
    /// validation set.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), HarnessError> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(HarnessError::Data(format!(
                "validation fraction {fraction} not in [0, 1)"
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = (self.len() as f64 * fraction).round() as usize;
        let (train, val) = idx.split_at(self.len() - n_val);
        Ok((self.subset(train), self.subset(val)))
    }

    /// Isotropic unit-variance Gaussian clusters whose centres lie at
    /// distance `separation / 2` from the origin in random directions.
    pub fn gaussian_blobs(n: usize, features: usize, classes: usize, separation: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centres: Vec<Vec<f64>> = (0..classes)
            .map(|_| {
                let dir: Vec<f64> = (0..features).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                dir.iter().map(|v| v / norm * separation / 2.0).collect()
            })
            .collect();
        let mut x = Vec::with_capacity(n * features);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % classes;
            for &m in &centres[c] {
                let noise: f64 = StandardNormal.sample(&mut rng);
                x.push((m + noise) as f32);
            }
            labels.push(c);
        }
        Self::new(vec![features], x, Targets::Classes { labels, classes }).expect("consistent by construction")
    }

    /// 2-D concentric rings: class `c` at radius `c + 1` with Gaussian
    /// radial noise.
    pub fn rings(n: usize, classes: usize, noise: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = Normal::new(0.0, noise).expect("noise >= 0");
        let mut x = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % classes;
            let r = (c + 1) as f64 + jitter.sample(&mut rng);
            let t = rng.random::<f64>() * TAU;
            x.push((r * t.cos()) as f32);
            x.push((r * t.sin()) as f32);
            labels.push(c);
        }
        Self::new(vec![2], x, Targets::Classes { labels, classes }).expect("consistent by construction")
    }

    /// `[1, size, size]` images with a bright horizontal (class 0) or
    /// vertical (class 1) bar at a random position, plus Gaussian noise.
    pub fn bars(n: usize, size: usize, noise: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = Normal::new(0.0, noise).expect("noise >= 0");
        let mut x = Vec::with_capacity(n * size * size);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 2;
            let at = rng.random_range(0..size);
            for y in 0..size {
                for xx in 0..size {
                    let on = if c == 0 { y == at } else { xx == at };
                    let v = if on { 1.0 } else { 0.0 } + jitter.sample(&mut rng);
                    x.push(v as f32);
                }
            }
            labels.push(c);
        }
        Self::new(vec![1, size, size], x, Targets::Classes { labels, classes: 2 }).expect("consistent by construction")
    }

    /// `y = W x + noise` with `x ~ N(0, 1)` and `W` drawn from the seed.
    /// Returns the dataset and `W` (`[outputs, inputs]`).
    pub fn linear(n: usize, inputs: usize, outputs: usize, noise: f64, seed: u64) -> (Self, Vec<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = Normal::new(0.0, noise).expect("noise >= 0");
        let w: Vec<f64> = (0..inputs * outputs).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut x = Vec::with_capacity(n * inputs);
        let mut y = Vec::with_capacity(n * outputs);
        for _ in 0..n {
            let xs: Vec<f64> = (0..inputs).map(|_| StandardNormal.sample(&mut rng)).collect();
            for o in 0..outputs {
                let dot: f64 = (0..inputs).map(|i| w[o * inputs + i] * xs[i]).sum();
                y.push((dot + jitter.sample(&mut rng)) as f32);
            }
            x.extend(xs.iter().map(|&v| v as f32));
        }
        let ds = Self::new(
            vec![inputs],
            x,
            Targets::Values {
                values: y,
                dims: outputs,
            },
        )
        .expect("consistent by construction");
        (ds, w.iter().map(|&v| v as f32).collect())
    }

    /// Parse the CSV feature format (see the module docs).
    pub fn from_csv(text: &str) -> Result<Self, HarnessError> {
        let mut width = None;
        let mut x = Vec::new();
        let mut labels = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = |what: &str| HarnessError::Data(format!("line {}: {what}", lineno + 1));
            if fields.len() < 2 {
                return Err(bad("need at least one feature and a label"));
            }
            match width {
                None => width = Some(fields.len()),
                Some(w) if w != fields.len() => return Err(bad(&format!("{} fields, expected {w}", fields.len()))),
                _ => {}
            }
            let (label, feats) = fields.split_last().expect("len >= 2");
            for f in feats {
                x.push(f.parse::<f32>().map_err(|_| bad(&format!("`{f}` is not a number")))?);
            }
            labels.push(
                label
                    .parse::<usize>()
                    .map_err(|_| bad(&format!("`{label}` is not a class label")))?,
            );
        }
        let width = width.ok_or_else(|| HarnessError::Data("no samples".into()))?;
        let classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
        Self::new(vec![width - 1], x, Targets::Classes { labels, classes })
    }

    /// Read an IDX image file (`u8`, rank 3: `[n, rows, cols]`) and an IDX
    /// label file (`u8`, rank 1). Pixels are scaled to `[0, 1]`.
    pub fn from_idx(images: &[u8], labels: &[u8]) -> Result<Self, HarnessError> {
        let (img_shape, pixels) = parse_idx(images, "images")?;
        let (lab_shape, labs) = parse_idx(labels, "labels")?;
        let [n, rows, cols] = img_shape[..] else {
            return Err(HarnessError::Data(format!(
                "image file has rank {}, expected 3",
                img_shape.len()
            )));
        };
        if lab_shape != [n] {
            return Err(HarnessError::Data(format!(
                "label file shape {lab_shape:?} does not match {n} images"
            )));
        }
        let labels: Vec<usize> = labs.iter().map(|&b| usize::from(b)).collect();
        let classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
        let x = pixels.iter().map(|&p| f32::from(p) / 255.0).collect();
        Self::new(vec![1, rows, cols], x, Targets::Classes { labels, classes })
    }
}

fn parse_idx<'a>(bytes: &'a [u8], what: &str) -> Result<(Vec<usize>, &'a [u8]), HarnessError> {
    let bad = |msg: String| HarnessError::Data(format!("IDX {what}: {msg}"));
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(bad("missing IDX magic".into()));
    }
    if bytes[2] != 0x08 {
        return Err(bad(format!("element type 0x{:02x} unsupported, only u8", bytes[2])));
    }
    let rank = usize::from(bytes[3]);
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(bad("truncated dimension list".into()));
    }
    let shape: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count: usize = shape.iter().product();
    let payload = &bytes[header..];
    if payload.len() != count {
        return Err(bad(format!(
            "payload is {} bytes, shape {shape:?} needs {count}",
            payload.len()
        )));
    }
    Ok((shape, payload))
}
