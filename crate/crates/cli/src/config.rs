//! Per-subcommand configuration: flat JSON objects whose keys mirror the
//! fields below. Missing keys take defaults; unknown keys and type errors are
//! reported with JSON-pointer paths.

use std::fmt;
use std::str::FromStr;

use earlylin::activations::Activation;
use earlylin::datagen::{BaseDistribution, CovarianceSpec, DataSpec};
use earlylin::Mode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Moments,
    SpectralDecay,
    Agreement,
    DiscrepancySweep,
    CnnNtk,
    Concentration,
    NormAblation,
    Decompose,
}

impl Subcommand {
    pub const ALL: [Subcommand; 8] = [
        Subcommand::Moments,
        Subcommand::SpectralDecay,
        Subcommand::Agreement,
        Subcommand::DiscrepancySweep,
        Subcommand::CnnNtk,
        Subcommand::Concentration,
        Subcommand::NormAblation,
        Subcommand::Decompose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Moments => "moments",
            Subcommand::SpectralDecay => "spectral-decay",
            Subcommand::Agreement => "agreement",
            Subcommand::DiscrepancySweep => "discrepancy-sweep",
            Subcommand::CnnNtk => "cnn-ntk",
            Subcommand::Concentration => "concentration",
            Subcommand::NormAblation => "norm-ablation",
            Subcommand::Decompose => "decompose",
        }
    }

    pub fn about(self) -> &'static str {
        match self {
            Subcommand::Moments => "Gaussian moments of an activation (prints JSON)",
            Subcommand::SpectralDecay => "norms of Θ₁(W(0)) − Θ^lin1 across d, with log-log fits",
            Subcommand::Agreement => "train a network and its linear model side by side",
            Subcommand::DiscrepancySweep => "largest early-time gap as a function of d",
            Subcommand::CnnNtk => "infinite-width CNN kernel vs. 2ζ²XXᵀ/d on hypercube data",
            Subcommand::Concentration => "norm/inner-product concentration of generated inputs",
            Subcommand::NormAblation => "full vs. naive linear model on a norm-dependent target",
            Subcommand::Decompose => {
                "split a test residual between span(X_test) and its complement"
            }
        }
    }
}

impl FromStr for Subcommand {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Subcommand::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown subcommand '{s}'"))
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A problem with one configuration entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// JSON pointer to the offending entry (`""` for the whole document).
    pub pointer: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.pointer.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.pointer, self.message)
        }
    }
}

fn err(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        pointer: format!("/{key}"),
        message: message.into(),
    }
}

/// A configuration with defaults filled in, plus regime warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct Validated {
    pub subcommand: Subcommand,
    /// The full configuration as JSON.
    pub normalized: Value,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentsConfig {
    pub act: Activation,
    /// Quadrature order; `null` uses the activation's default.
    pub order: Option<usize>,
}

impl Default for MomentsConfig {
    fn default() -> Self {
        MomentsConfig {
            act: Activation::Erf,
            order: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralDecayConfig {
    pub act: Activation,
    pub n: usize,
    pub m: usize,
    pub ds: Vec<usize>,
    pub seed: u64,
    pub n_seeds: usize,
    pub order: Option<usize>,
    pub max_spectral_slope: Option<f64>,
    pub min_frobenius_slope: Option<f64>,
    pub min_r_squared: Option<f64>,
}

impl Default for SpectralDecayConfig {
    fn default() -> Self {
        SpectralDecayConfig {
            act: Activation::Erf,
            n: 2000,
            m: 4000,
            ds: vec![16, 32, 64, 128],
            seed: 1,
            n_seeds: 3,
            order: None,
            max_spectral_slope: Some(-1.05),
            min_frobenius_slope: Some(-0.95),
            min_r_squared: Some(0.95),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelKind {
    TeacherSign,
    NormDependent,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgreementConfig {
    pub mode: Mode,
    pub act: Activation,
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub seed: u64,
    /// Runs seeds `seed, seed+1, …`.
    pub n_seeds: usize,
    pub base: BaseDistribution,
    /// Diagonal covariance spectrum (length d, trace d); `null` is Σ = I.
    pub spectrum: Option<Vec<f64>>,
    pub labels: LabelKind,
    pub teacher_width: usize,
    pub a_norm: f64,
    pub eta: Option<f64>,
    pub steps: Option<usize>,
    pub horizon_c: f64,
    pub n_test: usize,
    pub stride: usize,
    pub order: Option<usize>,
    pub max_train_gap: Option<f64>,
    pub max_test_gap: Option<f64>,
    /// Require `‖W(t)−W(0)‖_F` and `‖β(t)‖` to stay within `√(d ln d)`.
    pub check_radius: bool,
}

impl Default for AgreementConfig {
    fn default() -> Self {
        AgreementConfig {
            mode: Mode::Both,
            act: Activation::Erf,
            n: 5000,
            d: 50,
            m: 256,
            seed: 0,
            n_seeds: 1,
            base: BaseDistribution::Gaussian,
            spectrum: None,
            labels: LabelKind::TeacherSign,
            teacher_width: 5,
            a_norm: 0.5,
            eta: None,
            steps: None,
            horizon_c: 0.25,
            n_test: 2000,
            stride: 1,
            order: None,
            max_train_gap: Some(0.05),
            max_test_gap: Some(0.1),
            check_radius: true,
        }
    }
}

impl AgreementConfig {
    pub fn covariance(&self) -> Result<CovarianceSpec, earlylin::Error> {
        match &self.spectrum {
            None => Ok(CovarianceSpec::identity(self.d)),
            Some(s) => CovarianceSpec::diagonal(s.clone()),
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64).map(|k| self.seed + k).collect()
    }

    /// The coupled-run configuration for one seed.
    pub fn coupled(
        &self,
        seed: u64,
    ) -> Result<earlylin::harness::CoupledRunConfig, earlylin::Error> {
        use earlylin::harness::{CoupledRunConfig, LabelSpec};
        let labels = match self.labels {
            LabelKind::TeacherSign => LabelSpec::TeacherSign {
                width: self.teacher_width,
            },
            LabelKind::NormDependent => LabelSpec::NormDependent {
                a_norm: self.a_norm,
            },
            LabelKind::Zero => LabelSpec::Zero,
        };
        Ok(CoupledRunConfig {
            data: DataSpec {
                covariance: self.covariance()?,
                base: self.base,
                n: self.n,
                seed,
            },
            labels,
            act: self.act,
            eta: self.eta,
            steps: self.steps,
            horizon_c: self.horizon_c,
            n_test: self.n_test,
            stride: self.stride,
            quad_order: self.order,
            ..CoupledRunConfig::new(self.mode, self.n, self.d, self.m, seed)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscrepancySweepConfig {
    pub mode: Mode,
    pub act: Activation,
    pub n: usize,
    /// Width at the first dimension of `ds`.
    pub m: usize,
    /// Width grows as `m·(d/ds[0])^width_exponent`.
    pub width_exponent: f64,
    pub ds: Vec<usize>,
    pub seed: u64,
    pub n_seeds: usize,
    pub eta: Option<f64>,
    pub steps: Option<usize>,
    pub horizon_c: f64,
    pub n_test: usize,
    pub teacher_width: usize,
    pub require_decreasing: bool,
}

impl Default for DiscrepancySweepConfig {
    fn default() -> Self {
        DiscrepancySweepConfig {
            mode: Mode::First,
            act: Activation::Erf,
            n: 2000,
            m: 256,
            width_exponent: 1.1,
            ds: vec![10, 30, 50],
            seed: 1,
            n_seeds: 5,
            eta: None,
            steps: None,
            horizon_c: 0.25,
            n_test: 1000,
            teacher_width: 5,
            require_decreasing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnNtkConfig {
    pub act: Activation,
    pub d: usize,
    pub q: usize,
    pub n: usize,
    pub seed: u64,
    pub order: Option<usize>,
    /// Also evaluate at `2d` with `n·2^{1.1}` points and require a smaller ratio.
    pub compare_double: bool,
    pub max_ratio: Option<f64>,
    pub write_kernel: bool,
}

impl Default for CnnNtkConfig {
    fn default() -> Self {
        CnnNtkConfig {
            act: Activation::Erf,
            d: 64,
            q: 16,
            n: 512,
            seed: 0,
            order: None,
            compare_double: true,
            max_ratio: Some(0.15),
            write_kernel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConcentrationConfig {
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub base: BaseDistribution,
    pub spectrum: Option<Vec<f64>>,
    /// Bounds are `constant·√(ln n / d)`.
    pub constant: f64,
    pub gram_range: [f64; 2],
}

impl Default for ConcentrationConfig {
    fn default() -> Self {
        ConcentrationConfig {
            n: 2000,
            d: 200,
            seed: 0,
            base: BaseDistribution::Gaussian,
            spectrum: None,
            constant: 5.0,
            gram_range: [0.5, 20.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormAblationConfig {
    pub act: Activation,
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub n_test: usize,
    pub a_norm: f64,
    pub seed: u64,
    pub eta: Option<f64>,
    pub steps: Option<usize>,
    pub horizon_c: f64,
    pub stride: usize,
    pub min_fraction: Option<f64>,
}

impl Default for NormAblationConfig {
    fn default() -> Self {
        NormAblationConfig {
            act: Activation::Relu,
            n: 2000,
            d: 50,
            m: 512,
            n_test: 1000,
            a_norm: 0.5,
            seed: 0,
            eta: None,
            steps: None,
            horizon_c: 0.25,
            stride: 1,
            min_fraction: Some(0.8),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeConfig {
    /// Test set as `x1,...,xd,y`.
    pub data: Option<String>,
    /// Optional single-column CSV (header `prediction`); the residual is
    /// `y − prediction`, or `y` itself when absent.
    pub predictions: Option<String>,
    pub seed: u64,
}

/// The default configuration of `cmd` as JSON.
pub fn defaults(cmd: Subcommand) -> Value {
    let v = match cmd {
        Subcommand::Moments => serde_json::to_value(MomentsConfig::default()),
        Subcommand::SpectralDecay => serde_json::to_value(SpectralDecayConfig::default()),
        Subcommand::Agreement => serde_json::to_value(AgreementConfig::default()),
        Subcommand::DiscrepancySweep => serde_json::to_value(DiscrepancySweepConfig::default()),
        Subcommand::CnnNtk => serde_json::to_value(CnnNtkConfig::default()),
        Subcommand::Concentration => serde_json::to_value(ConcentrationConfig::default()),
        Subcommand::NormAblation => serde_json::to_value(NormAblationConfig::default()),
        Subcommand::Decompose => serde_json::to_value(DecomposeConfig::default()),
    };
    v.expect("default configurations serialize")
}

fn check_type<T: DeserializeOwned>(
    defaults: &Map<String, Value>,
    key: &str,
    value: &Value,
) -> Option<String> {
    let mut probe = defaults.clone();
    probe.insert(key.to_string(), value.clone());
    serde_json::from_value::<T>(Value::Object(probe))
        .err()
        .map(|e| e.to_string())
}

fn typed_errors(
    cmd: Subcommand,
    defaults: &Map<String, Value>,
    key: &str,
    value: &Value,
) -> Option<String> {
    match cmd {
        Subcommand::Moments => check_type::<MomentsConfig>(defaults, key, value),
        Subcommand::SpectralDecay => check_type::<SpectralDecayConfig>(defaults, key, value),
        Subcommand::Agreement => check_type::<AgreementConfig>(defaults, key, value),
        Subcommand::DiscrepancySweep => check_type::<DiscrepancySweepConfig>(defaults, key, value),
        Subcommand::CnnNtk => check_type::<CnnNtkConfig>(defaults, key, value),
        Subcommand::Concentration => check_type::<ConcentrationConfig>(defaults, key, value),
        Subcommand::NormAblation => check_type::<NormAblationConfig>(defaults, key, value),
        Subcommand::Decompose => check_type::<DecomposeConfig>(defaults, key, value),
    }
}

/// Fills defaults, checks every key's type and the cross-field constraints,
/// and collects warnings about settings outside the theory's regime.
pub fn validate_config(json: &Value, cmd: Subcommand) -> Result<Validated, Vec<ConfigError>> {
    let Value::Object(given) = json else {
        return Err(vec![ConfigError {
            pointer: String::new(),
            message: "configuration must be a JSON object".into(),
        }]);
    };
    let Value::Object(defaults) = defaults(cmd) else {
        unreachable!("configs are structs")
    };
    let mut errors = Vec::new();
    let mut merged = defaults.clone();
    for (key, value) in given {
        if !defaults.contains_key(key) {
            let known: Vec<&str> = defaults.keys().map(String::as_str).collect();
            errors.push(err(
                key,
                format!("unknown key for '{cmd}' (known: {})", known.join(", ")),
            ));
            continue;
        }
        if let Some(msg) = typed_errors(cmd, &defaults, key, value) {
            errors.push(err(key, msg));
            continue;
        }
        merged.insert(key.clone(), value.clone());
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    let normalized = Value::Object(merged);
    let mut warnings = Vec::new();
    semantic_checks(cmd, &normalized, &mut errors, &mut warnings);
    if errors.is_empty() {
        Ok(Validated {
            subcommand: cmd,
            normalized,
            warnings,
        })
    } else {
        Err(errors)
    }
}

fn positive(errors: &mut Vec<ConfigError>, key: &str, v: usize) {
    if v == 0 {
        errors.push(err(key, "must be positive"));
    }
}

fn even_width(errors: &mut Vec<ConfigError>, m: usize) {
    if m == 0 || !m.is_multiple_of(2) {
        errors.push(err(
            "m",
            format!("width must be even (symmetric initialization), got {m}"),
        ));
    }
}

fn positive_real(errors: &mut Vec<ConfigError>, key: &str, v: Option<f64>) {
    if let Some(v) = v {
        if !(v > 0.0 && v.is_finite()) {
            errors.push(err(key, format!("must be a positive number, got {v}")));
        }
    }
}

fn regime_warning(warnings: &mut Vec<String>, what: &str, count: usize, d: usize) {
    let need = (d as f64).powf(1.1);
    if (count as f64) < need {
        warnings.push(format!(
            "{what}={count} is below d^1.1 = {need:.0} for d={d}; the guarantees assume n ≳ d^(1+α) and m ≳ d^(1+α)"
        ));
    }
}

fn spectrum_errors(errors: &mut Vec<ConfigError>, spectrum: &Option<Vec<f64>>, d: usize) {
    if let Some(s) = spectrum {
        if s.len() != d {
            errors.push(err(
                "spectrum",
                format!("has {} entries but d={d}", s.len()),
            ));
        } else if let Err(e) = CovarianceSpec::diagonal(s.clone()) {
            errors.push(err("spectrum", e.to_string()));
        }
    }
}

fn dims(errors: &mut Vec<ConfigError>, ds: &[usize]) {
    if ds.is_empty() {
        errors.push(err("ds", "needs at least one dimension"));
    }
    if ds.contains(&0) {
        errors.push(err("ds", "dimensions must be positive"));
    }
}

fn semantic_checks(
    cmd: Subcommand,
    v: &Value,
    errors: &mut Vec<ConfigError>,
    warnings: &mut Vec<String>,
) {
    let parse = |v: &Value| v.clone();
    match cmd {
        Subcommand::Moments => {
            let c: MomentsConfig = serde_json::from_value(parse(v)).expect("checked");
            if let Some(o) = c.order {
                if !(1..=256).contains(&o) {
                    errors.push(err("order", format!("must be in 1..=256, got {o}")));
                }
            }
        }
        Subcommand::SpectralDecay => {
            let c: SpectralDecayConfig = serde_json::from_value(parse(v)).expect("checked");
            even_width(errors, c.m);
            positive(errors, "n", c.n);
            positive(errors, "n_seeds", c.n_seeds);
            dims(errors, &c.ds);
            if c.ds.len() < 3 {
                errors.push(err("ds", "a log-log fit needs at least 3 dimensions"));
            }
            if let Some(&dmax) = c.ds.iter().max() {
                regime_warning(warnings, "n", c.n, dmax);
                regime_warning(warnings, "m", c.m, dmax);
            }
        }
        Subcommand::Agreement => {
            let c: AgreementConfig = serde_json::from_value(parse(v)).expect("checked");
            even_width(errors, c.m);
            positive(errors, "n", c.n);
            positive(errors, "d", c.d);
            positive(errors, "stride", c.stride);
            positive(errors, "n_seeds", c.n_seeds);
            positive(errors, "teacher_width", c.teacher_width);
            positive_real(errors, "eta", c.eta);
            positive_real(errors, "horizon_c", Some(c.horizon_c));
            spectrum_errors(errors, &c.spectrum, c.d);
            regime_warning(warnings, "n", c.n, c.d);
            regime_warning(warnings, "m", c.m, c.d);
        }
        Subcommand::DiscrepancySweep => {
            let c: DiscrepancySweepConfig = serde_json::from_value(parse(v)).expect("checked");
            even_width(errors, c.m);
            positive(errors, "n", c.n);
            positive(errors, "n_seeds", c.n_seeds);
            dims(errors, &c.ds);
            positive_real(errors, "eta", c.eta);
            positive_real(errors, "horizon_c", Some(c.horizon_c));
            if !c.width_exponent.is_finite() || c.width_exponent < 0.0 {
                errors.push(err("width_exponent", "must be a non-negative number"));
            }
            if let Some(&dmax) = c.ds.iter().max() {
                regime_warning(warnings, "n", c.n, dmax);
            }
        }
        Subcommand::CnnNtk => {
            let c: CnnNtkConfig = serde_json::from_value(parse(v)).expect("checked");
            positive(errors, "n", c.n);
            positive(errors, "q", c.q);
            if c.q > c.d {
                errors.push(err("q", format!("filter size {} exceeds d={}", c.q, c.d)));
            }
        }
        Subcommand::Concentration => {
            let c: ConcentrationConfig = serde_json::from_value(parse(v)).expect("checked");
            positive(errors, "n", c.n);
            positive(errors, "d", c.d);
            spectrum_errors(errors, &c.spectrum, c.d);
            regime_warning(warnings, "n", c.n, c.d);
        }
        Subcommand::NormAblation => {
            let c: NormAblationConfig = serde_json::from_value(parse(v)).expect("checked");
            even_width(errors, c.m);
            positive(errors, "n", c.n);
            positive(errors, "d", c.d);
            positive(errors, "n_test", c.n_test);
            positive(errors, "stride", c.stride);
            positive_real(errors, "eta", c.eta);
            regime_warning(warnings, "n", c.n, c.d);
            regime_warning(warnings, "m", c.m, c.d);
            if c.act.is_smooth() {
                warnings.push(format!(
                    "act={} is smooth; the ablation is meant for ReLU-type activations",
                    c.act
                ));
            }
        }
        Subcommand::Decompose => {
            let c: DecomposeConfig = serde_json::from_value(parse(v)).expect("checked");
            if c.data.is_none() {
                errors.push(err("data", "a test-set CSV is required"));
            }
        }
    }
}

/// Deserializes a validated configuration.
pub fn typed<T: DeserializeOwned>(v: &Validated) -> T {
    serde_json::from_value(v.normalized.clone()).expect("validated configuration deserializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn empty_object_gives_defaults() {
        for cmd in Subcommand::ALL {
            if cmd == Subcommand::Decompose {
                continue;
            }
            let v = validate_config(&json!({}), cmd).unwrap();
            assert_eq!(v.normalized, defaults(cmd), "{cmd}");
        }
        let v = validate_config(&json!({}), Subcommand::Agreement).unwrap();
        let c: AgreementConfig = typed(&v);
        assert_eq!(c, AgreementConfig::default());
    }

    #[test]
    fn odd_width_is_an_error() {
        let e = validate_config(&json!({"m": 255}), Subcommand::Agreement).unwrap_err();
        assert_eq!(e[0].pointer, "/m");
        assert!(e[0]
            .message
            .contains("width must be even (symmetric initialization)"));
    }

    #[test]
    fn small_n_warns_about_regime() {
        let v = validate_config(
            &json!({"n": 100, "d": 100, "m": 100000}),
            Subcommand::Agreement,
        )
        .unwrap();
        assert_eq!(v.warnings.len(), 1);
        assert!(v.warnings[0].contains("d^(1+α)"));
    }

    #[test]
    fn type_errors_carry_pointers() {
        let e = validate_config(
            &json!({"n": "many", "act": "swish", "bogus": 1}),
            Subcommand::Agreement,
        )
        .unwrap_err();
        let pointers: Vec<&str> = e.iter().map(|x| x.pointer.as_str()).collect();
        assert_eq!(e.len(), 3, "{e:?}");
        for p in ["/n", "/act", "/bogus"] {
            assert!(pointers.contains(&p), "{pointers:?}");
        }
        assert!(validate_config(&json!([1, 2]), Subcommand::Moments).is_err());
    }

    #[test]
    fn spectrum_must_match_dimension() {
        let e = validate_config(
            &json!({"d": 3, "spectrum": [1.0, 1.0]}),
            Subcommand::Concentration,
        )
        .unwrap_err();
        assert_eq!(e[0].pointer, "/spectrum");
        assert!(validate_config(
            &json!({"d": 3, "spectrum": [1.5, 1.0, 0.5]}),
            Subcommand::Concentration
        )
        .is_ok());
    }

    #[test]
    fn subcommand_names_round_trip() {
        for cmd in Subcommand::ALL {
            assert_eq!(cmd.name().parse::<Subcommand>().unwrap(), cmd);
        }
    }
}
