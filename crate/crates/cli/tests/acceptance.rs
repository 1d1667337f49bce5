//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. The experiment criteria go through the command-line front end; the
//! rest check the library against independent oracles built here.

use std::path::Path;
use std::time::{Duration, Instant};

use earlylin::activations::{self, Activation};
use earlylin::datagen::{self, DataSpec, Dataset};
use earlylin::io::Manifest;
use earlylin::kernels;
use earlylin::linmodel::{lin_gd_train, ClosedFormDynamics, FeatureMap};
use earlylin::network::{Cnn1D, StepView, TwoLayerNet};
use earlylin::Mode;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

/// Runs the CLI into a fresh directory and returns its exit code and manifest.
fn cli(dir: &Path, args: &[&str]) -> (i32, Manifest, String) {
    let mut argv: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    argv.extend([
        "--out".to_string(),
        dir.to_string_lossy().into_owned(),
        "-q".to_string(),
    ]);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = earlylin_cli::run_to(&argv, &mut out, &mut err);
    let manifest = std::fs::read_to_string(dir.join("manifest.json"))
        .map(|t| serde_json::from_str(&t).expect("manifest parses"))
        .unwrap_or_else(|_| panic!("no manifest: {}", String::from_utf8_lossy(&err)));
    (code, manifest, String::from_utf8_lossy(&out).into_owned())
}

fn describe(m: &Manifest) -> String {
    m.assertions
        .iter()
        .map(|a| format!("{} {}", a.name, a.detail))
        .collect::<Vec<_>>()
        .join("; ")
}

fn cli_outcome(tmp: &Path, name: &str, args: &[&str]) -> Outcome {
    let (code, m, _) = cli(&tmp.join(name), args);
    outcome(
        code == 0 && m.all_passed() && !m.assertions.is_empty(),
        describe(&m),
    )
}

fn c1_moments(tmp: &Path) -> Outcome {
    let (code, _, out) = cli(&tmp.join("c1-erf"), &["moments", "erf"]);
    let erf: serde_json::Value = serde_json::from_str(&out).unwrap();
    let thetas: Vec<f64> = ["theta0", "theta1", "theta2"]
        .iter()
        .map(|k| erf[k].as_f64().unwrap())
        .collect();
    let (code2, _, out) = cli(&tmp.join("c1-relu"), &["moments", "relu"]);
    let relu: serde_json::Value = serde_json::from_str(&out).unwrap();
    let (zeta, gamma) = (
        relu["zeta"].as_f64().unwrap(),
        relu["gamma"].as_f64().unwrap(),
    );
    let passed = code == 0
        && code2 == 0
        && thetas.iter().all(|t| t.abs() <= 1e-10)
        && (zeta - 0.5).abs() <= 1e-6
        && (gamma - 0.5).abs() <= 1e-6;
    outcome(
        passed,
        format!(
            "erf ϑ = [{:.1e}, {:.1e}, {:.1e}]; relu ζ = {zeta}, γ = {gamma}",
            thetas[0], thetas[1], thetas[2]
        ),
    )
}

fn c2_spectral_decay(tmp: &Path) -> Outcome {
    cli_outcome(
        tmp,
        "c2",
        &[
            "spectral-decay",
            "--act",
            "erf",
            "--n",
            "2000",
            "--m",
            "4000",
            "--ds",
            "16,32,64,128",
            "--n-seeds",
            "3",
            "--max-spectral-slope",
            "-1.05",
            "--min-frobenius-slope",
            "-0.95",
            "--min-r-squared",
            "0.95",
        ],
    )
}

fn c3_agreement(tmp: &Path) -> Outcome {
    cli_outcome(
        tmp,
        "c3",
        &[
            "agreement",
            "--act",
            "erf",
            "--mode",
            "both",
            "--d",
            "50",
            "--n",
            "5000",
            "--m",
            "256",
            "--labels",
            "teacher-sign",
            "--horizon-c",
            "0.25",
            "--n-seeds",
            "3",
            "--max-train-gap",
            "0.05",
            "--max-test-gap",
            "0.1",
            "--check-radius",
            "false",
        ],
    )
}

fn c4_sweep(tmp: &Path) -> Outcome {
    let (code, m, _) = cli(
        &tmp.join("c4"),
        &[
            "discrepancy-sweep",
            "--ds",
            "10,30,50",
            "--n-seeds",
            "5",
            "--require-decreasing",
            "true",
        ],
    );
    let medians = std::fs::read_to_string(tmp.join("c4/medians.csv")).unwrap_or_default();
    let medians: Vec<&str> = medians.lines().skip(1).collect();
    outcome(
        code == 0 && m.all_passed(),
        format!("(d,m,median) = {medians:?}"),
    )
}

fn c5_closed_form() -> Outcome {
    let mut worst: f64 = 0.0;
    for inst in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + inst);
        let n = rng.random_range(8..=256usize);
        let d = rng.random_range(2..=12usize);
        let mode = Mode::ALL[inst as usize % 3];
        let act = [
            Activation::Erf,
            Activation::Tanh,
            Activation::Relu,
            Activation::Softplus,
        ][inst as usize % 4];
        let x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
        let data = Dataset::new(x, y, "random").unwrap();
        let mo = activations::moments(act, act.default_order()).unwrap();
        let nu = activations::nu(&mo, &datagen::CovarianceSpec::identity(d));
        let map = FeatureMap::new(mode, mo, nu, d);
        let k = map.kernel(&data.x);
        let top = kernels::spectral_norm_default(&k.values).unwrap();
        let eta = rng.random_range(0.2..1.8) * n as f64 / top;
        let dynamics = ClosedFormDynamics::new(&k, &data.y, eta).unwrap();
        lin_gd_train(map, &data, eta, 500, &mut |v: &StepView<'_>| {
            worst = worst.max((v.predictions - dynamics.predictions(v.step)).amax());
        })
        .unwrap();
    }
    outcome(
        worst <= 1e-8,
        format!("max |GD − closed form| = {worst:.2e} over 20 instances, t ≤ 500"),
    )
}

fn c6_expected_ntk() -> Outcome {
    let (n, d, samples) = (5, 6, 100_000);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut worst_z: f64 = 0.0;
    for act in [Activation::Erf, Activation::Relu] {
        let k1 = kernels::expected_ntk_first(&x, act, act.default_order())
            .unwrap()
            .values;
        let k2 = kernels::expected_ntk_second(&x, act, act.default_order())
            .unwrap()
            .values;
        let (mut s1, mut q1) = (DMatrix::<f64>::zeros(n, n), DMatrix::<f64>::zeros(n, n));
        let (mut s2, mut q2) = (DMatrix::<f64>::zeros(n, n), DMatrix::<f64>::zeros(n, n));
        let gram = &x * x.transpose() / d as f64;
        for _ in 0..samples {
            let w = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let z = &x * &w / (d as f64).sqrt();
            for i in 0..n {
                for j in 0..n {
                    let a = act.phi_prime(z[i]) * act.phi_prime(z[j]) * gram[(i, j)];
                    let b = act.phi(z[i]) * act.phi(z[j]);
                    s1[(i, j)] += a;
                    q1[(i, j)] += a * a;
                    s2[(i, j)] += b;
                    q2[(i, j)] += b * b;
                }
            }
        }
        let ns = samples as f64;
        for (k, s, q) in [(&k1, &s1, &q1), (&k2, &s2, &q2)] {
            for i in 0..n {
                for j in 0..n {
                    let mean = s[(i, j)] / ns;
                    let se = ((q[(i, j)] / ns - mean * mean).max(0.0) / ns).sqrt();
                    let diff = (k[(i, j)] - mean).abs();
                    let z = if se > 0.0 {
                        diff / se
                    } else if diff < 1e-12 {
                        0.0
                    } else {
                        f64::INFINITY
                    };
                    worst_z = worst_z.max(z);
                }
            }
        }
    }
    outcome(
        worst_z <= 3.0,
        format!("largest deviation {worst_z:.2} standard errors (erf, relu; 5×5, 1e5 samples)"),
    )
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn c7_gradients() -> Outcome {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut normal =
        |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let smooth: Vec<Activation> = Activation::ALL_SMOOTH.to_vec();
    for (k, &act) in smooth.iter().cycle().take(20).enumerate() {
        let (n, d, m, q) = (6, 8, 10, 3);
        let x = normal(n, d);
        let y = normal(n, 1).column(0).into_owned();
        // Fully connected.
        let net = TwoLayerNet::new(normal(m, d), normal(m, 1).column(0).into_owned(), act).unwrap();
        let (gw, gv) = net.loss_gradients(&x, &y).unwrap();
        let (dw, dv) = (normal(m, d), normal(m, 1).column(0).into_owned());
        let shifted = |s: f64| {
            TwoLayerNet::new(&net.w + &dw * s, &net.v + &dv * s, act)
                .unwrap()
                .loss(&x, &y)
                .unwrap()
        };
        let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
        worst = worst.max(rel(gw.dot(&dw) + gv.dot(&dv), fd));
        // Convolutional, with ±1 inputs on odd probes.
        let xc = if k % 2 == 1 {
            x.map(|v| v.signum())
        } else {
            x.clone()
        };
        let cnn = Cnn1D {
            w: normal(m, q),
            v: normal(m, d),
            act,
        };
        let (cw, cv) = cnn.loss_gradients(&xc, &y).unwrap();
        let (dw, dv) = (normal(m, q), normal(m, d));
        let shifted = |s: f64| {
            Cnn1D {
                w: &cnn.w + &dw * s,
                v: &cnn.v + &dv * s,
                act,
            }
            .loss(&xc, &y)
            .unwrap()
        };
        let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
        worst = worst.max(rel(cw.dot(&dw) + cv.dot(&dv), fd));
    }
    outcome(
        worst <= 1e-5,
        format!("max relative error {worst:.2e} over 20 probes (FC and CNN)"),
    )
}

fn c8_symmetric_zero() -> Outcome {
    let (m, d) = (512, 20);
    let x = datagen::generate_inputs(&DataSpec::gaussian(1000, d, 8));
    let mut acts = Activation::ALL_SMOOTH.to_vec();
    acts.extend([Activation::Relu, Activation::LeakyRelu(0.1)]);
    let mut worst: f64 = 0.0;
    for act in acts {
        let net = TwoLayerNet::symmetric_init(m, d, act, 8).unwrap();
        worst = worst.max(net.forward(&x).unwrap().amax());
    }
    let bound = 1e-12 * (m as f64).sqrt();
    outcome(
        worst <= bound,
        format!("max |f(x)| = {worst:.2e} (bound {bound:.2e}) over 7 activations"),
    )
}

fn c9_cnn(tmp: &Path) -> Outcome {
    let (code, m, _) = cli(
        &tmp.join("c9"),
        &[
            "cnn-ntk",
            "--act",
            "erf",
            "--d",
            "64",
            "--q",
            "16",
            "--n",
            "512",
            "--max-ratio",
            "0.15",
            "--compare-double",
            "true",
        ],
    );
    let ratios = std::fs::read_to_string(tmp.join("c9/ratios.csv")).unwrap_or_default();
    let ratios: Vec<&str> = ratios.lines().skip(1).collect();
    outcome(
        code == 0 && m.all_passed(),
        format!("(d,n,q,ratio) = {ratios:?}"),
    )
}

fn c10_ablation(tmp: &Path) -> Outcome {
    cli_outcome(
        tmp,
        "c10",
        &[
            "norm-ablation",
            "--act",
            "relu",
            "--d",
            "50",
            "--min-fraction",
            "0.8",
        ],
    )
}

fn c11_radius(tmp: &Path) -> Outcome {
    cli_outcome(
        tmp,
        "c11",
        &[
            "agreement",
            "--act",
            "erf",
            "--mode",
            "first",
            "--d",
            "64",
            "--n",
            "4096",
            "--m",
            "1024",
            "--n-seeds",
            "5",
            "--n-test",
            "200",
            "--max-train-gap",
            "null",
            "--max-test-gap",
            "null",
            "--check-radius",
            "true",
        ],
    )
}

fn c12_concentration(tmp: &Path) -> Outcome {
    cli_outcome(
        tmp,
        "c12",
        &[
            "concentration",
            "--n",
            "2000",
            "--d",
            "200",
            "--base",
            "gaussian",
            "--constant",
            "5",
            "--gram-range",
            "0.5,20",
        ],
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let tmp = tmp.path();
    type Criterion<'a> = (&'a str, Duration, Box<dyn Fn() -> Outcome + 'a>);
    let secs = Duration::from_secs;
    let criteria: Vec<Criterion> = vec![
        ("1 moment identities", secs(1), Box::new(|| c1_moments(tmp))),
        (
            "2 spectral-decay separation",
            secs(600),
            Box::new(|| c2_spectral_decay(tmp)),
        ),
        (
            "3 early-time agreement",
            secs(300),
            Box::new(|| c3_agreement(tmp)),
        ),
        ("4 dimension sweep", secs(600), Box::new(|| c4_sweep(tmp))),
        (
            "5 closed-form/iterative equivalence",
            secs(30),
            Box::new(c5_closed_form),
        ),
        ("6 expected-NTK oracle", secs(60), Box::new(c6_expected_ntk)),
        ("7 gradient correctness", secs(30), Box::new(c7_gradients)),
        (
            "8 symmetric-init zero output",
            secs(5),
            Box::new(c8_symmetric_zero),
        ),
        ("9 CNN NTK", secs(300), Box::new(|| c9_cnn(tmp))),
        (
            "10 norm-feature ablation",
            secs(300),
            Box::new(|| c10_ablation(tmp)),
        ),
        (
            "11 parameter radius",
            secs(300),
            Box::new(|| c11_radius(tmp)),
        ),
        (
            "12 concentration report",
            secs(60),
            Box::new(|| c12_concentration(tmp)),
        ),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, budget, check) in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let elapsed = start.elapsed();
        let passed = o.passed && elapsed <= *budget;
        if !passed {
            failed += 1;
        }
        println!(
            "{} criterion {name}: {} [{:.1}s of {}s]",
            if passed { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
