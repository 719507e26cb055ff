use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{DomainEntry, Domains, Manifest};
use crate::error::{Error, Result};
use crate::io::{write_embeddings, write_index_csv, write_json};
use crate::numeric::linalg::cholesky;
use crate::numeric::Matrix;
use crate::rng::{stream, Stream};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Covariate shift applied to target features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Shift {
    /// Angle in degrees applied in every rotation plane.
    pub rotation_deg: f64,
    /// Length of the translation vector.
    pub translation: f64,
    /// Multiplier on the rotated prototypes.
    pub scale: f64,
}

impl Default for Shift {
    fn default() -> Self {
        Self {
            rotation_deg: 60.0,
            translation: 0.5,
            scale: 1.5,
        }
    }
}

impl Shift {
    pub fn none() -> Self {
        Self {
            rotation_deg: 0.0,
            translation: 0.0,
            scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub feature_dim: usize,
    pub anchor_dim: usize,
    pub caption_dim: usize,
    pub samples_per_class_per_domain: usize,
    pub shift: Shift,
    pub noise_sigma_features: f64,
    pub noise_sigma_captions: f64,
    /// Pairwise cosine between distinct reference anchors, in (-1/(N-1), 1).
    pub anchor_cosine: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 10,
            feature_dim: 32,
            anchor_dim: 16,
            caption_dim: 24,
            samples_per_class_per_domain: 100,
            shift: Shift::default(),
            noise_sigma_features: 0.5,
            noise_sigma_captions: 0.05,
            anchor_cosine: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_classes;
        if n < 2 {
            return Err(Error::InvalidConfig("need at least 2 classes".into()));
        }
        for (name, dim) in [
            ("feature_dim", self.feature_dim),
            ("anchor_dim", self.anchor_dim),
            ("caption_dim", self.caption_dim),
        ] {
            if dim < n {
                return Err(Error::InvalidConfig(format!("{name} {dim} < {n} classes")));
            }
        }
        if self.feature_dim < self.anchor_dim || self.caption_dim < self.anchor_dim {
            return Err(Error::InvalidConfig(
                "feature_dim and caption_dim must be >= anchor_dim".into(),
            ));
        }
        if self.samples_per_class_per_domain == 0 {
            return Err(Error::InvalidConfig("samples_per_class_per_domain must be >= 1".into()));
        }
        if !(self.noise_sigma_features >= 0.0) || !(self.noise_sigma_captions >= 0.0) {
            return Err(Error::InvalidConfig("noise sigmas must be >= 0".into()));
        }
        if !(0.0..=180.0).contains(&self.shift.rotation_deg) {
            return Err(Error::InvalidConfig(format!(
                "rotation {} deg outside [0, 180]",
                self.shift.rotation_deg
            )));
        }
        if !(self.shift.scale > 0.0) || !(self.shift.translation >= 0.0) {
            return Err(Error::InvalidConfig("shift scale must be > 0 and translation >= 0".into()));
        }
        let lo = -1.0 / (n as f64 - 1.0);
        if !(self.anchor_cosine > lo && self.anchor_cosine < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "anchor_cosine {} outside ({lo}, 1)",
                self.anchor_cosine
            )));
        }
        Ok(())
    }
}

/// Everything `generate` writes, kept in memory.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub anchors: Matrix<f64>,
    pub source_features: Matrix<f64>,
    pub source_captions: Matrix<f64>,
    pub target_features: Matrix<f64>,
    pub target_captions: Matrix<f64>,
    /// Shared by both domains: sample `i` has class `i mod N_c`.
    pub labels: Vec<usize>,
}

fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Haar-ish random orthogonal matrix by Gram–Schmidt on a Gaussian draw.
pub fn random_orthogonal(n: usize, rng: &mut impl Rng) -> Matrix<f64> {
    let g = gaussian(n, n, rng);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut v = g.row(i).to_vec();
        // two passes keep the basis orthogonal to machine precision
        for _ in 0..2 {
            for u in &q {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        q.push(v);
    }
    Matrix::from_rows(&q).expect("square")
}

/// Unit rows with every pairwise cosine equal to `c`, randomly rotated into `dim`.
fn structured_anchors(n: usize, dim: usize, c: f64, rng: &mut impl Rng) -> Matrix<f64> {
    let gram = Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { c });
    let l = cholesky(&gram).expect("equicorrelation matrix is PD in the valid range");
    let padded = Matrix::from_fn(n, dim, |i, j| if j < n { l.get(i, j) } else { 0.0 });
    padded.matmul(&random_orthogonal(dim, rng)).expect("shapes agree")
}

/// `rows × cols` matrix with orthonormal rows (`rows ≤ cols`).
fn isometry(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix<f64> {
    let q = random_orthogonal(cols, rng);
    q.select_rows(&(0..rows).collect::<Vec<_>>())
}

/// Rotates every plane of a random basis by `theta` radians.
fn plane_rotation(dim: usize, theta: f64, rng: &mut impl Rng) -> Matrix<f64> {
    let q = random_orthogonal(dim, rng);
    let (s, c) = theta.sin_cos();
    let block = Matrix::from_fn(dim, dim, |i, j| {
        let pair = i / 2;
        if 2 * pair + 1 >= dim {
            return if i == j { 1.0 } else { 0.0 };
        }
        match (i % 2, j) {
            (0, j) if j == i => c,
            (0, j) if j == i + 1 => -s,
            (1, j) if j == i - 1 => s,
            (1, j) if j == i => c,
            _ => 0.0,
        }
    });
    q.transpose().matmul(&block).and_then(|m| m.matmul(&q)).expect("square")
}

fn add_noise(m: &Matrix<f64>, sigma: f64, rng: &mut impl Rng) -> Matrix<f64> {
    if sigma == 0.0 {
        return m.clone();
    }
    m.add(&gaussian(m.rows(), m.cols(), rng).scale(sigma)).expect("same shape")
}

/// Builds the benchmark in memory. Deterministic in `cfg`.
pub fn synthesize(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let n = cfg.n_classes;
    let total = n * cfg.samples_per_class_per_domain;
    let labels: Vec<usize> = (0..total).map(|i| i % n).collect();

    let anchors = structured_anchors(n, cfg.anchor_dim, cfg.anchor_cosine, &mut stream(cfg.seed, Stream::SynthAnchors));
    let prototypes = anchors
        .matmul(&isometry(cfg.anchor_dim, cfg.feature_dim, &mut stream(cfg.seed, Stream::SynthPrototypes)))?;

    let mut shift_rng = stream(cfg.seed, Stream::SynthShift);
    let rot = plane_rotation(cfg.feature_dim, cfg.shift.rotation_deg.to_radians(), &mut shift_rng);
    let dir = gaussian(1, cfg.feature_dim, &mut shift_rng);
    let dir_norm = dir.frobenius_sq().sqrt();
    let translation = dir.scale(cfg.shift.translation / dir_norm);
    let target_protos = prototypes
        .matmul(&rot.transpose())?
        .scale(cfg.shift.scale)
        .zip_map(
            &Matrix::from_fn(n, cfg.feature_dim, |_, j| translation.get(0, j)),
            "translate",
            |a, b| a + b,
        )?;

    let src_mean = prototypes.select_rows(&labels);
    let tgt_mean = target_protos.select_rows(&labels);
    let source_features = add_noise(&src_mean, cfg.noise_sigma_features, &mut stream(cfg.seed, Stream::SynthSourceNoise));
    let target_features = add_noise(&tgt_mean, cfg.noise_sigma_features, &mut stream(cfg.seed, Stream::SynthTargetNoise));

    // captions: anchor row plus noise in anchor space, embedded into caption space
    let cap_map = isometry(cfg.anchor_dim, cfg.caption_dim, &mut stream(cfg.seed, Stream::SynthCaptionMap));
    let mut cap_rng = stream(cfg.seed, Stream::SynthCaptionNoise);
    let anchor_rows = anchors.select_rows(&labels);
    let source_captions = add_noise(&anchor_rows, cfg.noise_sigma_captions, &mut cap_rng).matmul(&cap_map)?;
    let target_captions = add_noise(&anchor_rows, cfg.noise_sigma_captions, &mut cap_rng).matmul(&cap_map)?;

    Ok(SynthData {
        anchors,
        source_features,
        source_captions,
        target_features,
        target_captions,
        labels,
    })
}

/// Writes the benchmark into `out_dir` and returns the manifest path.
pub fn generate(cfg: &SynthConfig, out_dir: &Path) -> Result<PathBuf> {
    let data = synthesize(cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_embeddings(&out_dir.join("anchors.emb"), &data.anchors)?;
    write_embeddings(&out_dir.join("source_features.emb"), &data.source_features)?;
    write_embeddings(&out_dir.join("source_captions.emb"), &data.source_captions)?;
    write_embeddings(&out_dir.join("target_features.emb"), &data.target_features)?;
    write_embeddings(&out_dir.join("target_captions.emb"), &data.target_captions)?;
    let rows: Vec<(usize, usize)> = data.labels.iter().copied().enumerate().collect();
    write_index_csv(&out_dir.join("source_labels.csv"), "label_id", &rows)?;
    write_index_csv(&out_dir.join("target_labels.csv"), "label_id", &rows)?;
    write_json(&out_dir.join("synth_config.json"), cfg)?;

    let manifest = Manifest {
        classes: (0..cfg.n_classes).map(|c| format!("class_{c:02}")).collect(),
        anchors: "anchors.emb".into(),
        domains: Domains {
            source: DomainEntry {
                features: "source_features.emb".into(),
                captions: "source_captions.emb".into(),
                labels: Some("source_labels.csv".into()),
            },
            target: DomainEntry {
                features: "target_features.emb".into(),
                captions: "target_captions.emb".into(),
                labels: Some("target_labels.csv".into()),
            },
        },
    };
    let path = out_dir.join(MANIFEST_FILE);
    write_json(&path, &manifest)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_manifest;

    #[test]
    fn anchors_have_requested_cosine() {
        let d = synthesize(&SynthConfig::default()).unwrap();
        let a = &d.anchors;
        for i in 0..a.rows() {
            for j in 0..a.rows() {
                let dot: f64 = a.row(i).iter().zip(a.row(j)).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.3 };
                assert!((dot - want).abs() < 1e-12, "{i},{j}: {dot}");
            }
        }
    }

    #[test]
    fn rotation_is_orthogonal_with_requested_angle() {
        let mut rng = stream(3, Stream::SynthShift);
        let r = plane_rotation(7, 1.0, &mut rng);
        let rrt = r.matmul(&r.transpose()).unwrap();
        assert!(rrt.sub(&Matrix::identity(7)).unwrap().max_abs() < 1e-12);
        // trace = 1 + 3·2cos θ for three planes plus one fixed axis
        let tr: f64 = (0..7).map(|i| r.get(i, i)).sum();
        assert!((tr - (1.0 + 6.0 * 1f64.cos())).abs() < 1e-12);
    }

    #[test]
    fn zero_shift_and_noise_give_identical_domains() {
        let cfg = SynthConfig {
            shift: Shift::none(),
            noise_sigma_features: 0.0,
            noise_sigma_captions: 0.0,
            ..SynthConfig::default()
        };
        let d = synthesize(&cfg).unwrap();
        assert!(d.source_features.sub(&d.target_features).unwrap().max_abs() < 1e-12);
        assert_eq!(d.source_captions, d.target_captions);
    }

    #[test]
    fn generate_is_byte_reproducible_and_loadable() {
        let cfg = SynthConfig {
            samples_per_class_per_domain: 5,
            ..SynthConfig::default()
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = generate(&cfg, a.path()).unwrap();
        generate(&cfg, b.path()).unwrap();
        let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert_eq!(names.len(), 9);
        for name in names {
            assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap());
        }
        let d = load_manifest::<f64>(&ma).unwrap();
        assert_eq!((d.n_classes(), d.feature_dim(), d.caption_dim()), (10, 32, 24));
        assert_eq!(d.source_samples.len(), 50);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            SynthConfig { anchor_dim: 4, ..SynthConfig::default() },
            SynthConfig { noise_sigma_features: -1.0, ..SynthConfig::default() },
            SynthConfig {
                shift: Shift { rotation_deg: 200.0, ..Shift::default() },
                ..SynthConfig::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(synthesize(&cfg), Err(Error::InvalidConfig(_))));
        }
    }
}
