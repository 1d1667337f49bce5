//! Synthetic inputs `x = Σ^{1/2} x̄` with independent unit-variance
//! coordinates, the two label recipes used by the experiments, concentration
//! diagnostics, and CSV ingestion for external data.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::spectral_norm;
use crate::network::TwoLayerNet;
use crate::rng::{self, Domain};

/// Largest admissible covariance eigenvalue unless overridden.
pub const DEFAULT_SPECTRUM_BOUND: f64 = 10.0;

/// Diagonal covariance normalized to `Tr[Σ] = d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CovarianceSpec {
    Identity { d: usize },
    Diagonal { spectrum: Vec<f64> },
}

impl CovarianceSpec {
    pub fn identity(d: usize) -> Self {
        CovarianceSpec::Identity { d }
    }

    /// Diagonal covariance; the spectrum must be positive, sum to `d` (within
    /// 1e-9) and stay below [`DEFAULT_SPECTRUM_BOUND`].
    pub fn diagonal(spectrum: Vec<f64>) -> Result<Self> {
        let spec = CovarianceSpec::Diagonal { spectrum };
        spec.validate(DEFAULT_SPECTRUM_BOUND)?;
        Ok(spec)
    }

    /// Rescale an arbitrary positive spectrum so its trace equals its length.
    pub fn normalized_diagonal(raw: &[f64]) -> Result<Self> {
        let total: f64 = raw.iter().sum();
        if raw.is_empty() || !(total > 0.0) {
            return Err(Error::Covariance(
                "spectrum must be non-empty and positive".into(),
            ));
        }
        let scale = raw.len() as f64 / total;
        Self::diagonal(raw.iter().map(|v| v * scale).collect())
    }

    pub fn validate(&self, bound: f64) -> Result<()> {
        match self {
            CovarianceSpec::Identity { d } => {
                if *d == 0 {
                    return Err(Error::Covariance("d must be at least 1".into()));
                }
            }
            CovarianceSpec::Diagonal { spectrum } => {
                if spectrum.is_empty() {
                    return Err(Error::Covariance("empty spectrum".into()));
                }
                if let Some(bad) = spectrum.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
                    return Err(Error::Covariance(format!(
                        "spectrum entries must be positive, got {bad}"
                    )));
                }
                let d = spectrum.len() as f64;
                let trace: f64 = spectrum.iter().sum();
                if (trace - d).abs() > 1e-9 * d.max(1.0) {
                    return Err(Error::Covariance(format!(
                        "trace must equal d={d}, got {trace}"
                    )));
                }
                let top = spectrum.iter().copied().fold(0.0, f64::max);
                if top > bound {
                    return Err(Error::Covariance(format!(
                        "largest eigenvalue {top} exceeds bound {bound}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            CovarianceSpec::Identity { d } => *d,
            CovarianceSpec::Diagonal { spectrum } => spectrum.len(),
        }
    }

    /// Tr[Σ²].
    pub fn trace_of_square(&self) -> f64 {
        match self {
            CovarianceSpec::Identity { d } => *d as f64,
            CovarianceSpec::Diagonal { spectrum } => spectrum.iter().map(|v| v * v).sum(),
        }
    }

    /// Per-coordinate scale √Σⱼⱼ.
    pub fn scales(&self) -> Vec<f64> {
        match self {
            CovarianceSpec::Identity { d } => vec![1.0; *d],
            CovarianceSpec::Diagonal { spectrum } => spectrum.iter().map(|v| v.sqrt()).collect(),
        }
    }
}

/// Distribution of the whitened coordinates x̄ (mean 0, variance 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseDistribution {
    #[default]
    Gaussian,
    Rademacher,
    /// Unif[−√3, √3].
    UniformScaled,
}

impl std::str::FromStr for BaseDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "rademacher" => Ok(Self::Rademacher),
            "uniform-scaled" | "uniform" => Ok(Self::UniformScaled),
            other => Err(Error::Config(format!(
                "unknown base distribution `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub covariance: CovarianceSpec,
    pub base: BaseDistribution,
    pub n: usize,
    pub seed: u64,
}

impl DataSpec {
    pub fn gaussian(n: usize, d: usize, seed: u64) -> Self {
        DataSpec {
            covariance: CovarianceSpec::identity(d),
            base: BaseDistribution::Gaussian,
            n,
            seed,
        }
    }

    pub fn d(&self) -> usize {
        self.covariance.dim()
    }
}

/// Inputs with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Free-form provenance: the generating spec as JSON, or the source path.
    pub provenance: String,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, provenance: impl Into<String>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Shape(format!(
                "{} inputs but {} labels",
                x.nrows(),
                y.len()
            )));
        }
        Ok(Dataset {
            x,
            y,
            provenance: provenance.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }
}

/// Generate the `n × d` input matrix for `spec`. Row `i` depends only on
/// `(spec.seed, i)`.
pub fn generate_inputs(spec: &DataSpec) -> DMatrix<f64> {
    generate_rows(spec, Domain::Inputs)
}

/// Same as [`generate_inputs`] but drawn from an independent family of
/// streams, for held-out data sharing the training seed.
pub fn generate_test_inputs(spec: &DataSpec) -> DMatrix<f64> {
    generate_rows(spec, Domain::TestInputs)
}

fn generate_rows(spec: &DataSpec, domain: Domain) -> DMatrix<f64> {
    let d = spec.d();
    let scales = spec.covariance.scales();
    let row = |i: usize| -> Vec<f64> {
        let mut rng = rng::stream(spec.seed, domain, i as u64);
        scales
            .iter()
            .map(|s| s * draw_base(spec.base, &mut rng))
            .collect()
    };
    let rows = crate::par::map_range(spec.n, row);
    DMatrix::from_fn(spec.n, d, |i, j| rows[i][j])
}

fn draw_base<R: Rng>(base: BaseDistribution, rng: &mut R) -> f64 {
    match base {
        BaseDistribution::Gaussian => rng.sample(StandardNormal),
        BaseDistribution::Rademacher => {
            if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        }
        BaseDistribution::UniformScaled => {
            let s3 = 3f64.sqrt();
            Uniform::new_inclusive(-s3, s3)
                .expect("finite bounds")
                .sample(rng)
        }
    }
}

/// `n × d` matrix with i.i.d. uniform ±1 entries.
pub fn generate_hypercube(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    generate_inputs(&DataSpec {
        covariance: CovarianceSpec::identity(d),
        base: BaseDistribution::Rademacher,
        n,
        seed,
    })
}

/// Labels `sign(f*(x))` of a teacher network, with sign(0) = +1.
pub fn labels_teacher_sign(x: &DMatrix<f64>, teacher: &TwoLayerNet) -> Result<DVector<f64>> {
    let out = teacher.forward(x)?;
    Ok(out.map(|v| if v >= 0.0 { 1.0 } else { -1.0 }))
}

/// Labels of the norm-dependent target together with the number of labels
/// that fall outside [−1, 1]. The raw labels are kept; the count is a warning.
#[derive(Debug, Clone, PartialEq)]
pub struct NormLabels {
    pub y: DVector<f64>,
    pub out_of_range: usize,
}

/// `y = ‖x‖/√d + ReLU(aᵀx)`.
pub fn labels_norm_dependent(x: &DMatrix<f64>, a: &DVector<f64>) -> Result<NormLabels> {
    if a.len() != x.ncols() {
        return Err(Error::Shape(format!(
            "direction has length {}, inputs have d={}",
            a.len(),
            x.ncols()
        )));
    }
    let sqrt_d = (x.ncols() as f64).sqrt();
    let proj = x * a;
    let y = DVector::from_fn(x.nrows(), |i, _| {
        x.row(i).norm() / sqrt_d + proj[i].max(0.0)
    });
    let out_of_range = y.iter().filter(|v| v.abs() > 1.0).count();
    Ok(NormLabels { y, out_of_range })
}

/// Random direction of the given Euclidean norm.
pub fn random_direction(d: usize, norm: f64, seed: u64) -> DVector<f64> {
    let mut rng = rng::stream(seed, Domain::LabelDirection, 0);
    let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let len = v.norm();
    if len == 0.0 {
        return v;
    }
    v * (norm / len)
}

/// Concentration diagnostics of a data matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConcentrationReport {
    /// maxᵢ |‖xᵢ‖²/d − 1|
    pub max_norm_dev: f64,
    /// max_{i≠j} |⟨xᵢ, xⱼ⟩|/d
    pub max_offdiag: f64,
    /// ‖XXᵀ‖/n
    pub gram_spectral_over_n: f64,
}

pub fn concentration_report(x: &DMatrix<f64>) -> Result<ConcentrationReport> {
    let (n, d) = x.shape();
    let df = d as f64;
    let gram = x * x.transpose();
    let mut max_norm_dev: f64 = 0.0;
    let mut max_offdiag: f64 = 0.0;
    for j in 0..n {
        for i in 0..n {
            let v = gram[(i, j)] / df;
            if i == j {
                max_norm_dev = max_norm_dev.max((v - 1.0).abs());
            } else {
                max_offdiag = max_offdiag.max(v.abs());
            }
        }
    }
    // XXᵀ and XᵀX share their nonzero spectrum; the d×d side is cheaper.
    let small = x.transpose() * x;
    let top = spectral_norm(&small, 1e-9, 100_000)?;
    Ok(ConcentrationReport {
        max_norm_dev,
        max_offdiag,
        gram_spectral_over_n: if n == 0 { 0.0 } else { top / n as f64 },
    })
}

/// Write `x1,...,xd,y` with 17 significant digits.
pub fn save_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let d = data.d();
    let header: Vec<String> = (1..=d)
        .map(|j| format!("x{j}"))
        .chain(std::iter::once("y".into()))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for i in 0..data.n() {
        let mut line = String::with_capacity(24 * (d + 1));
        for j in 0..d {
            line.push_str(&fmt_f64(data.x[(i, j)]));
            line.push(',');
        }
        line.push_str(&fmt_f64(data.y[i]));
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Float with 17 significant digits; round-trips exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Read a dataset written by [`save_csv`] (or any CSV with a header row, `d`
/// feature columns and a trailing label column). Labels must lie in [−1, 1].
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let width = reader.headers()?.len();
    if width < 2 {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            msg: format!(
                "need at least one feature and a label column, header has {width} field(s)"
            ),
        });
    }
    let d = width - 1;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != width {
            return Err(Error::Parse {
                path: path.into(),
                line,
                msg: format!(
                    "expected {width} fields (d={d} plus label), found {}",
                    record.len()
                ),
            });
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                path: path.into(),
                line,
                msg: format!("column {}: `{field}` is not a number", col + 1),
            })?;
            if col == d {
                if !(v.abs() <= 1.0) {
                    return Err(Error::LabelRange {
                        path: path.into(),
                        line,
                        value: v,
                    });
                }
                labels.push(v);
            } else {
                values.push(v);
            }
        }
    }
    let n = labels.len();
    let x = DMatrix::from_row_slice(n, d, &values);
    Dataset::new(x, DVector::from_vec(labels), path.display().to_string())
}
