//! Subcommand bodies. Each writes its CSVs and `summary.csv` into the output
//! directory and returns the manifest (already written) with its checks.

use std::io::Write;
use std::path::{Path, PathBuf};

use earlylin::datagen::{self, DataSpec};
use earlylin::harness::{self, AblationConfig, CoupledRunConfig};
use earlylin::io::{self as eio, Assertion, Manifest};
use earlylin::{activations, Error, Result};
use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{self, Subcommand, Validated};

pub struct Context {
    pub out_dir: PathBuf,
    pub verbosity: u8,
}

impl Context {
    fn note(&self, err: &mut dyn Write, msg: impl AsRef<str>) {
        if self.verbosity > 1 {
            let _ = writeln!(err, "{}", msg.as_ref());
        }
    }
}

/// One line of `summary.csv`. Informational rows leave `threshold` and
/// `passed` empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub check: String,
    pub value: f64,
    pub threshold: String,
    pub passed: String,
}

struct Report {
    manifest: Manifest,
    summary: Vec<SummaryRow>,
    dir: PathBuf,
}

impl Report {
    fn info(&mut self, name: &str, value: f64) {
        self.summary.push(SummaryRow {
            check: name.into(),
            value,
            threshold: String::new(),
            passed: String::new(),
        });
    }

    fn check_max(&mut self, name: &str, value: f64, bound: Option<f64>) {
        match bound {
            Some(b) => self.check(name, value, format!("<= {b}"), value <= b),
            None => self.info(name, value),
        }
    }

    fn check_min(&mut self, name: &str, value: f64, bound: Option<f64>) {
        match bound {
            Some(b) => self.check(name, value, format!(">= {b}"), value >= b),
            None => self.info(name, value),
        }
    }

    fn check(&mut self, name: &str, value: f64, threshold: String, passed: bool) {
        self.manifest.assertions.push(Assertion {
            name: name.into(),
            passed,
            detail: format!("{value} (required {threshold})"),
        });
        self.summary.push(SummaryRow {
            check: name.into(),
            value,
            threshold,
            passed: passed.to_string(),
        });
    }

    fn rows<T: Serialize>(&mut self, file: &str, rows: &[T]) -> Result<()> {
        eio::write_rows(&self.dir.join(file), rows)?;
        self.manifest.outputs.push(file.into());
        Ok(())
    }

    fn finish(mut self) -> Result<Manifest> {
        eio::write_rows(&self.dir.join("summary.csv"), &self.summary)?;
        self.manifest.outputs.push("summary.csv".into());
        self.manifest.write(&self.dir)?;
        Ok(self.manifest)
    }
}

/// Runs a validated configuration. `given` is the configuration file as read
/// (echoed into the manifest verbatim) and `overrides` the command-line
/// settings applied on top of it.
pub fn execute(
    v: &Validated,
    given: &Value,
    overrides: &Value,
    ctx: &Context,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<Manifest> {
    let mut manifest = Manifest::new(v.subcommand.name(), given.clone(), v.normalized.clone());
    manifest.overrides = overrides.clone();
    manifest.warnings = v.warnings.clone();
    let mut r = Report {
        manifest,
        summary: Vec::new(),
        dir: ctx.out_dir.clone(),
    };
    match v.subcommand {
        Subcommand::Moments => moments(v, &mut r, out)?,
        Subcommand::SpectralDecay => spectral_decay(v, &mut r, ctx, err)?,
        Subcommand::Agreement => agreement(v, &mut r, ctx, err)?,
        Subcommand::DiscrepancySweep => discrepancy_sweep(v, &mut r)?,
        Subcommand::CnnNtk => cnn_ntk(v, &mut r)?,
        Subcommand::Concentration => concentration(v, &mut r)?,
        Subcommand::NormAblation => norm_ablation(v, &mut r)?,
        Subcommand::Decompose => decompose(v, &mut r)?,
    }
    r.finish()
}

fn moments(v: &Validated, r: &mut Report, out: &mut dyn Write) -> Result<()> {
    let c: config::MomentsConfig = config::typed(v);
    let order = c.order.unwrap_or_else(|| c.act.default_order());
    let m = activations::moments(c.act, order)?;
    let mut doc = serde_json::to_value(m)?;
    doc["act"] = json!(c.act.to_string());
    let text = serde_json::to_string_pretty(&doc)?;
    writeln!(out, "{text}")?;
    std::fs::write(r.dir.join("moments.json"), text + "\n")?;
    r.manifest.outputs.push("moments.json".into());
    for (name, value) in [
        ("zeta", m.zeta),
        ("theta0", m.theta0),
        ("theta1", m.theta1()),
        ("theta2", m.theta2),
        ("gamma", m.gamma),
    ] {
        r.info(name, value);
    }
    Ok(())
}

#[derive(Serialize)]
struct DecayRow {
    d: usize,
    seed: u64,
    spectral: f64,
    frobenius: f64,
}

#[derive(Serialize)]
struct FitRow {
    norm: &'static str,
    slope: f64,
    intercept: f64,
    r_squared: f64,
}

fn spectral_decay(v: &Validated, r: &mut Report, ctx: &Context, err: &mut dyn Write) -> Result<()> {
    let c: config::SpectralDecayConfig = config::typed(v);
    let seeds: Vec<u64> = (0..c.n_seeds as u64).map(|k| c.seed + k).collect();
    r.manifest.seeds = seeds.clone();
    ctx.note(err, format!("spectral decay over d = {:?}", c.ds));
    let res = harness::spectral_decay_experiment(&c.ds, c.n, c.m, c.act, &seeds, c.order)?;
    let rows: Vec<DecayRow> = res
        .points
        .iter()
        .flat_map(|p| {
            seeds.iter().enumerate().map(move |(k, &seed)| DecayRow {
                d: p.d,
                seed,
                spectral: p.spectral[k],
                frobenius: p.frobenius[k],
            })
        })
        .collect();
    r.rows("decay.csv", &rows)?;
    let fits = [
        ("spectral", res.spectral_fit),
        ("frobenius", res.frobenius_fit),
    ];
    let fit_rows: Vec<FitRow> = fits
        .iter()
        .map(|(norm, f)| FitRow {
            norm,
            slope: f.slope,
            intercept: f.intercept,
            r_squared: f.r_squared,
        })
        .collect();
    r.rows("fits.csv", &fit_rows)?;
    r.check_max(
        "spectral_slope",
        res.spectral_fit.slope,
        c.max_spectral_slope,
    );
    r.check_min(
        "frobenius_slope",
        res.frobenius_fit.slope,
        c.min_frobenius_slope,
    );
    r.check_min(
        "spectral_r_squared",
        res.spectral_fit.r_squared,
        c.min_r_squared,
    );
    r.check_min(
        "frobenius_r_squared",
        res.frobenius_fit.r_squared,
        c.min_r_squared,
    );
    Ok(())
}

#[derive(Serialize)]
struct SeededRecord {
    seed: u64,
    step: usize,
    train_mse_net: f64,
    train_mse_lin: f64,
    train_gap: f64,
    test_gap_clipped: f64,
    w_move_fro: f64,
    v_move_l2: f64,
    beta_norm: f64,
}

impl SeededRecord {
    fn new(seed: u64, r: &harness::AgreementRecord) -> Self {
        SeededRecord {
            seed,
            step: r.step,
            train_mse_net: r.train_mse_net,
            train_mse_lin: r.train_mse_lin,
            train_gap: r.train_gap,
            test_gap_clipped: r.test_gap_clipped,
            w_move_fro: r.w_move_fro,
            v_move_l2: r.v_move_l2,
            beta_norm: r.beta_norm,
        }
    }
}

fn agreement(v: &Validated, r: &mut Report, ctx: &Context, err: &mut dyn Write) -> Result<()> {
    let c: config::AgreementConfig = config::typed(v);
    let seeds = c.seeds();
    r.manifest.seeds = seeds.clone();
    let mut rows = Vec::new();
    let (mut train, mut test, mut w_move, mut beta) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut resolved = Vec::new();
    for &seed in &seeds {
        let cfg: CoupledRunConfig = c.coupled(seed)?;
        let run = harness::coupled_run(&cfg)?;
        ctx.note(
            err,
            format!("seed {seed}: eta = {}, steps = {}", run.eta, run.steps),
        );
        resolved.push(
            json!({"seed": seed, "eta": run.eta, "steps": run.steps, "nu": run.nu,
                             "labels_out_of_range": run.labels_out_of_range}),
        );
        for rec in &run.records {
            train = train.max(rec.train_gap);
            test = test.max(rec.test_gap_clipped);
            w_move = w_move.max(rec.w_move_fro);
            beta = beta.max(rec.beta_norm);
            rows.push(SeededRecord::new(seed, rec));
        }
    }
    r.manifest.derived["runs"] = Value::Array(resolved);
    r.rows("records.csv", &rows)?;
    r.check_max("max_train_gap", train, c.max_train_gap);
    r.check_max("max_test_gap_clipped", test, c.max_test_gap);
    let radius = c.check_radius.then(|| {
        let d = c.d as f64;
        (d * d.ln()).sqrt()
    });
    r.check_max("max_w_move_fro", w_move, radius);
    r.check_max("max_beta_norm", beta, radius);
    Ok(())
}

#[derive(Serialize)]
struct GapRow {
    d: usize,
    m: usize,
    seed: u64,
    max_gap: f64,
}

#[derive(Serialize)]
struct MedianRow {
    d: usize,
    m: usize,
    median: f64,
}

fn discrepancy_sweep(v: &Validated, r: &mut Report) -> Result<()> {
    let c: config::DiscrepancySweepConfig = config::typed(v);
    let seeds: Vec<u64> = (0..c.n_seeds as u64).map(|k| c.seed + k).collect();
    r.manifest.seeds = seeds.clone();
    let d0 = c.ds[0];
    let base = CoupledRunConfig {
        act: c.act,
        eta: c.eta,
        steps: c.steps,
        horizon_c: c.horizon_c,
        n_test: c.n_test,
        labels: harness::LabelSpec::TeacherSign {
            width: c.teacher_width,
        },
        ..CoupledRunConfig::new(c.mode, c.n, d0, c.m, c.seed)
    };
    let sweep = harness::discrepancy_vs_dimension(&c.ds, &base, &seeds, c.width_exponent)?;
    let gaps: Vec<GapRow> = sweep
        .points
        .iter()
        .flat_map(|p| {
            seeds.iter().zip(&p.max_gaps).map(|(&seed, &g)| GapRow {
                d: p.d,
                m: p.m,
                seed,
                max_gap: g,
            })
        })
        .collect();
    r.rows("gaps.csv", &gaps)?;
    let medians: Vec<MedianRow> = sweep
        .points
        .iter()
        .map(|p| MedianRow {
            d: p.d,
            m: p.m,
            median: p.median,
        })
        .collect();
    r.rows("medians.csv", &medians)?;
    for p in &sweep.points {
        r.info(&format!("median_gap_d{}", p.d), p.median);
    }
    let flag = if sweep.strictly_decreasing { 1.0 } else { 0.0 };
    if c.require_decreasing {
        r.check(
            "strictly_decreasing",
            flag,
            "= 1".into(),
            sweep.strictly_decreasing,
        );
    } else {
        r.info("strictly_decreasing", flag);
    }
    Ok(())
}

#[derive(Serialize)]
struct RatioRow {
    d: usize,
    n: usize,
    q: usize,
    ratio: f64,
}

fn cnn_ntk(v: &Validated, r: &mut Report) -> Result<()> {
    let c: config::CnnNtkConfig = config::typed(v);
    r.manifest.seeds = vec![c.seed];
    let base = harness::cnn_linear_comparison(c.n, c.d, c.q, c.act, c.seed, c.order)?;
    if c.write_kernel {
        eio::write_kernel(&base.kernel, &r.dir.join("kernel.csv"))?;
        r.manifest
            .outputs
            .extend(["kernel.csv".into(), "kernel.csv.json".into()]);
    }
    let mut rows = vec![RatioRow {
        d: base.d,
        n: base.n,
        q: base.q,
        ratio: base.ratio,
    }];
    r.check_max("ratio", base.ratio, c.max_ratio);
    if c.compare_double {
        let n2 = (c.n as f64 * 2f64.powf(1.1)).round() as usize;
        let doubled = harness::cnn_linear_comparison(n2, 2 * c.d, c.q, c.act, c.seed, c.order)?;
        rows.push(RatioRow {
            d: doubled.d,
            n: doubled.n,
            q: doubled.q,
            ratio: doubled.ratio,
        });
        r.info("ratio_doubled_d", doubled.ratio);
        r.check(
            "ratio_decreases",
            doubled.ratio - base.ratio,
            "< 0".into(),
            doubled.ratio < base.ratio,
        );
    }
    r.rows("ratios.csv", &rows)
}

fn concentration(v: &Validated, r: &mut Report) -> Result<()> {
    let c: config::ConcentrationConfig = config::typed(v);
    r.manifest.seeds = vec![c.seed];
    let covariance = match &c.spectrum {
        None => datagen::CovarianceSpec::identity(c.d),
        Some(s) => datagen::CovarianceSpec::diagonal(s.clone())?,
    };
    let x = datagen::generate_inputs(&DataSpec {
        covariance,
        base: c.base,
        n: c.n,
        seed: c.seed,
    });
    let rep = datagen::concentration_report(&x)?;
    r.rows("report.csv", &[rep])?;
    let bound = c.constant * ((c.n as f64).ln() / c.d as f64).sqrt();
    r.check_max("max_norm_dev", rep.max_norm_dev, Some(bound));
    r.check_max("max_offdiag", rep.max_offdiag, Some(bound));
    let [lo, hi] = c.gram_range;
    let g = rep.gram_spectral_over_n;
    r.check(
        "gram_spectral_over_n",
        g,
        format!("in [{lo}, {hi}]"),
        (lo..=hi).contains(&g),
    );
    Ok(())
}

fn norm_ablation(v: &Validated, r: &mut Report) -> Result<()> {
    let c: config::NormAblationConfig = config::typed(v);
    r.manifest.seeds = vec![c.seed];
    let cfg = AblationConfig {
        act: c.act,
        n_test: c.n_test,
        a_norm: c.a_norm,
        eta: c.eta,
        steps: c.steps,
        horizon_c: c.horizon_c,
        stride: c.stride,
        ..AblationConfig::new(c.n, c.d, c.m, c.seed)
    };
    let rep = harness::norm_feature_ablation_experiment(&cfg)?;
    r.manifest.derived["run"] = json!({"eta": rep.eta, "steps": rep.steps});
    r.rows("ablation.csv", &rep.points)?;
    r.info("labels_out_of_range", rep.labels_out_of_range as f64);
    r.check_min(
        "fraction_full_better",
        rep.fraction_full_better,
        c.min_fraction,
    );
    Ok(())
}

#[derive(Serialize)]
struct EnergyRow {
    in_span: f64,
    complement: f64,
    total: f64,
    complement_fraction: f64,
}

#[derive(serde::Deserialize)]
struct PredictionRow {
    prediction: f64,
}

fn decompose(v: &Validated, r: &mut Report) -> Result<()> {
    let c: config::DecomposeConfig = config::typed(v);
    let data_path = PathBuf::from(c.data.as_deref().expect("validated"));
    let data = datagen::load_csv(&data_path)?;
    let residual = match &c.predictions {
        None => data.y.clone(),
        Some(p) => {
            let preds: Vec<PredictionRow> = read_predictions(Path::new(p))?;
            if preds.len() != data.n() {
                return Err(Error::Shape(format!(
                    "{} predictions for {} test points",
                    preds.len(),
                    data.n()
                )));
            }
            &data.y - DVector::from_iterator(preds.len(), preds.iter().map(|p| p.prediction))
        }
    };
    let e = harness::residual_subspace_decomposition(&residual, &data.x)?;
    let total = residual.norm_squared();
    let frac = if total > 0.0 {
        e.complement / total
    } else {
        0.0
    };
    r.rows(
        "energy.csv",
        &[EnergyRow {
            in_span: e.in_span,
            complement: e.complement,
            total,
            complement_fraction: frac,
        }],
    )?;
    r.info("complement_fraction", frac);
    let rel = if total > 0.0 {
        (e.in_span + e.complement - total).abs() / total
    } else {
        0.0
    };
    r.check_max("energy_conservation_rel_error", rel, Some(1e-10));
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    eio::read_rows(path).map_err(|e| match e {
        Error::Parse { .. } => e,
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: other.to_string(),
        },
    })
}
