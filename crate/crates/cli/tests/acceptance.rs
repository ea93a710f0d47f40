//! Acceptance suite. Runs every criterion at its stated tolerance, prints
//! one PASS/FAIL line per criterion and exits non-zero if any failed.

use std::path::Path;
use std::time::Instant;

use rand::Rng;

use binconv::bootstrap::{bootstrap_se, m_out_of_n_scale, BootstrapPlan, MRule, Scheme};
use binconv::gmm::{moment_vector, GmmParams};
use binconv::model::{pmf_dft_all, pmf_direct_all};
use binconv::regression::{fit_ols, ols_closed_form_equal_n};
use binconv::rng::substream;
use binconv::simstudy::{
    compare_models_aic_bic, generate_dataset, run_rmse_study, run_variance_ratio_study, seed_cells,
    Misspec, Model, RmseRow, ScenarioConfig, SeMethod, StudyOptions,
};
use binconv::{Estimator, PairedDataset, PairedObs, RateParams};
use binconv_cli::args::SimulateArgs;
use binconv_cli::{Cli, Command};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rates(tp: f64, tn: f64) -> RateParams {
    RateParams::new(tp, tn).unwrap()
}

/// Binomial pmf by the multiplicative recurrence, independent of the
/// library's log-factorial code.
fn binomial_pmf(n: u32, p: f64) -> Vec<f64> {
    let mut out = vec![0.0; n as usize + 1];
    if p == 0.0 {
        out[0] = 1.0;
        return out;
    }
    if p == 1.0 {
        out[n as usize] = 1.0;
        return out;
    }
    let mut c = 1.0f64;
    for k in 0..=n {
        if k > 0 {
            c *= (n - k + 1) as f64 / k as f64;
        }
        out[k as usize] = c * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32);
    }
    out
}

fn pmf_correctness() -> Outcome {
    let grid = [0.0, 0.1, 0.5, 0.9, 0.98, 1.0];
    let (mut worst_sum, mut worst_diff) = (0.0f64, 0.0f64);
    for n in 1..=64u32 {
        for x in 0..=n {
            for &tp in &grid {
                for &tn in &grid {
                    let r = rates(tp, tn);
                    let direct = pmf_direct_all(x, n, r).map_err(|e| e.to_string())?;
                    let dft = pmf_dft_all(x, n, r).map_err(|e| e.to_string())?;
                    worst_sum = worst_sum.max((direct.iter().sum::<f64>() - 1.0).abs());
                    for (a, b) in direct.iter().zip(&dft) {
                        worst_diff = worst_diff.max((a - b).abs());
                    }
                }
            }
        }
    }
    check(
        worst_sum <= 1e-12 && worst_diff < 1e-10,
        format!("max |sum - 1| = {worst_sum:.2e}, max |dft - direct| = {worst_diff:.2e}"),
    )
}

fn moment_identities() -> Outcome {
    let mut rng = substream(7, &[2]);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n: u32 = rng.random_range(2..=70);
        let p: f64 = rng.random_range(0.05..0.95);
        let r = rates(rng.random_range(0.5..1.0), rng.random_range(0.3..1.0));
        let params = GmmParams {
            mu_x: n as f64 * p,
            var_x: n as f64 * p * (1.0 - p),
            rates: r,
        };
        let px = binomial_pmf(n, p);
        let mut expect = [0.0f64; 5];
        for x in 0..=n {
            // conditional pmf of Y as the convolution of the two binomials
            let tp = binomial_pmf(x, r.tp());
            let fp = binomial_pmf(n - x, 1.0 - r.tn());
            let mut py = vec![0.0; n as usize + 1];
            for (i, a) in tp.iter().enumerate() {
                for (j, b) in fp.iter().enumerate() {
                    py[i + j] += a * b;
                }
            }
            for (y, w) in py.iter().enumerate() {
                let g = moment_vector(&PairedObs::new(x, y as u32, n).unwrap(), &params);
                for k in 0..5 {
                    expect[k] += px[x as usize] * w * g[k];
                }
            }
        }
        worst = expect.iter().fold(worst, |m, e| m.max(e.abs()));
    }
    check(
        worst <= 1e-9,
        format!("max |E g_k| over 20 settings = {worst:.2e}"),
    )
}

fn baseline_rmse_rows(misspec: Misspec, seed: u64) -> Vec<RmseRow> {
    let mut cfg = ScenarioConfig::baseline();
    cfg.misspec = misspec;
    let mut grid = vec![cfg];
    seed_cells(&mut grid, seed);
    run_rmse_study(&grid, &Estimator::ALL, &StudyOptions::default())
        .unwrap()
        .rmse
}

fn row(rows: &[RmseRow], est: Estimator) -> &RmseRow {
    rows.iter().find(|r| r.estimator == est.name()).unwrap()
}

fn consistency() -> Outcome {
    let mut cfg = ScenarioConfig::baseline();
    cfg.n = 100_000;
    let data = generate_dataset(&cfg, &mut substream(3, &[])).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for est in Estimator::ALL {
        let r = est.fit_rates(&data).map_err(|e| format!("{est}: {e}"))?;
        worst = worst.max((r.tp() - 0.98).abs()).max((r.tn() - 0.70).abs());
        detail.push(format!("{est}=({:.4}, {:.4})", r.tp(), r.tn()));
    }
    check(
        worst < 0.01,
        format!("{}; max abs error {worst:.4}", detail.join(" ")),
    )
}

fn rmse_ordering() -> Outcome {
    let rows = baseline_rmse_rows(Misspec::None, 41);
    let (m, g, o) = (
        row(&rows, Estimator::Mle).rmse_tn,
        row(&rows, Estimator::Gmm).rmse_tn,
        row(&rows, Estimator::Ols).rmse_tn,
    );
    check(
        m < g && g < o && o / m > 1.2,
        format!(
            "RMSE(pi_tn): mle {m:.4} < gmm {g:.4} < ols {o:.4}; ols/mle = {:.3}",
            o / m
        ),
    )
}

fn misspecification() -> Outcome {
    let tp = baseline_rmse_rows(Misspec::OverdispersedTp(0.06), 51);
    let (bm, bo, bg) = (
        row(&tp, Estimator::Mle).bias_tn.abs(),
        row(&tp, Estimator::Ols).bias_tn.abs(),
        row(&tp, Estimator::Gmm).bias_tn.abs(),
    );
    let tn = baseline_rmse_rows(Misspec::OverdispersedTn(0.06), 52);
    let best_tn = |f: fn(&RmseRow) -> f64| {
        let m = f(row(&tn, Estimator::Mle));
        m < f(row(&tn, Estimator::Ols)) && m < f(row(&tn, Estimator::Gmm))
    };
    let mle_best = best_tn(|r| r.rmse_tp) && best_tn(|r| r.rmse_tn);
    check(
        bm > bo && bm > bg && mle_best,
        format!(
            "overdispersed_tp |bias(pi_tn)|: mle {bm:.4}, ols {bo:.4}, gmm {bg:.4}; \
             overdispersed_tn RMSE(tp, tn): mle ({:.4}, {:.4}) ols ({:.4}, {:.4}) gmm ({:.4}, {:.4})",
            row(&tn, Estimator::Mle).rmse_tp,
            row(&tn, Estimator::Mle).rmse_tn,
            row(&tn, Estimator::Ols).rmse_tp,
            row(&tn, Estimator::Ols).rmse_tn,
            row(&tn, Estimator::Gmm).rmse_tp,
            row(&tn, Estimator::Gmm).rmse_tn,
        ),
    )
}

fn variance_ratios() -> Outcome {
    let mut cfg = ScenarioConfig::baseline();
    cfg.n_trials = 44;
    cfg.p = 0.96;
    cfg.rates = rates(0.98, 0.75);
    let mut grid = vec![cfg];
    seed_cells(&mut grid, 61);
    let opts = StudyOptions {
        bootstrap_replicates: 50,
        parallel: true,
    };
    let rows = run_variance_ratio_study(&grid, &Estimator::ALL, &[SeMethod::PlugIn], &opts)
        .map_err(|e| e.to_string())?
        .ratios;
    let get = |e: Estimator| rows.iter().find(|r| r.estimator == e.name()).unwrap();
    let (mle, ols, gmm) = (
        get(Estimator::Mle),
        get(Estimator::Ols),
        get(Estimator::Gmm),
    );
    let mle_ok = (mle.ratio_tp - 0.9785).abs() <= 0.15 && (mle.ratio_tn - 0.9903).abs() <= 0.15;
    let ols_ok = (ols.ratio_tp - 0.9659).abs() <= 0.15;
    let gmm_ok = gmm.ratio_tn < 0.6;
    check(
        mle_ok && ols_ok && gmm_ok,
        format!(
            "mle ({:.4}, {:.4}) [{}], ols pi_tp {:.4} [{}], gmm pi_tn {:.4} [{}]",
            mle.ratio_tp,
            mle.ratio_tn,
            if mle_ok { "ok" } else { "off" },
            ols.ratio_tp,
            if ols_ok { "ok" } else { "off" },
            gmm.ratio_tn,
            if gmm_ok { "ok" } else { "not below 0.6" },
        ),
    )
}

fn bootstrap_scaling() -> Outcome {
    let mut cfg = ScenarioConfig::baseline();
    cfg.n = 50;
    let data = generate_dataset(&cfg, &mut substream(71, &[])).map_err(|e| e.to_string())?;
    let classic = bootstrap_se(
        &data,
        Estimator::Ols,
        &BootstrapPlan::new(Scheme::Nonparametric, 200, 9),
    )
    .map_err(|e| e.to_string())?;
    let full = bootstrap_se(
        &data,
        Estimator::Ols,
        &BootstrapPlan::new(Scheme::MOutOfN, 200, 9).with_m_rule(MRule::Explicit(50)),
    )
    .map_err(|e| e.to_string())?;
    let factor = m_out_of_n_scale(50, 14);
    let mrule = MRule::TwoSqrtN.subsample_size(50);
    check(
        classic.se == full.se && (factor - 1.8898).abs() < 1e-4 && mrule == 14,
        format!(
            "m = n SE {:?} vs classic {:?}; sqrt(50/14) = {factor:.6}; floor(2 sqrt 50) = {mrule}",
            full.se, classic.se
        ),
    )
}

fn ols_equivalence() -> Outcome {
    let mut rng = substream(81, &[]);
    let mut worst = 0.0f64;
    let mut used = 0;
    while used < 100 {
        let n_trials: u32 = rng.random_range(5..=80);
        let n: usize = rng.random_range(5..=200);
        let p: f64 = rng.random_range(0.2..0.98);
        let obs: Vec<PairedObs> = (0..n)
            .map(|_| {
                let x = (0..n_trials).filter(|_| rng.random_bool(p)).count() as u32;
                let y = rng.random_range(0..=n_trials);
                PairedObs::new(x, y, n_trials).unwrap()
            })
            .collect();
        let data = PairedDataset::new(obs).unwrap();
        let (Ok(a), Ok(b)) = (fit_ols(&data), ols_closed_form_equal_n(&data)) else {
            continue;
        };
        used += 1;
        worst = worst
            .max((a.beta[0] - b.beta[0]).abs())
            .max((a.beta[1] - b.beta[1]).abs());
    }
    check(
        worst <= 1e-9,
        format!("max |beta_matrix - beta_closed| over 100 datasets = {worst:.2e}"),
    )
}

/// Ten labelled groups of 50 with trial counts spread over 44..=69.
fn grouped_dataset(tn_of_group: impl Fn(usize) -> f64, seed: u64, rep: u64) -> PairedDataset {
    let mut obs = Vec::new();
    let mut labels = Vec::new();
    for g in 0..10usize {
        let mut cfg = ScenarioConfig::baseline();
        cfg.n_trials = 44 + (g as u32 * 25) / 9;
        cfg.rates = rates(0.98, tn_of_group(g));
        let d = generate_dataset(&cfg, &mut substream(seed, &[rep, g as u64])).unwrap();
        obs.extend_from_slice(d.obs());
        labels.extend(std::iter::repeat_n(format!("g{g:02}"), d.len()));
    }
    PairedDataset::with_labels(obs, labels).unwrap()
}

fn model_selection() -> Outcome {
    let reps = 200u64;
    let mut pooled_by_bic = 0;
    let mut specific_by_aic = 0;
    for r in 0..reps {
        let homo = grouped_dataset(|_| 0.70, 91, r);
        if compare_models_aic_bic(&homo)
            .map_err(|e| e.to_string())?
            .preferred_by_bic
            == Model::Pooled
        {
            pooled_by_bic += 1;
        }
        let hetero = grouped_dataset(|g| 0.55 + 0.4 * g as f64 / 9.0, 92, r);
        if compare_models_aic_bic(&hetero)
            .map_err(|e| e.to_string())?
            .preferred_by_aic
            == Model::GroupSpecific
        {
            specific_by_aic += 1;
        }
    }
    let (a, b) = (
        pooled_by_bic as f64 / reps as f64,
        specific_by_aic as f64 / reps as f64,
    );
    check(
        a >= 0.95 && b >= 0.95,
        format!("homogeneous: pooled by BIC {a:.3}; heterogeneous: group-specific by AIC {b:.3}"),
    )
}

fn simulate_once(
    config: &Path,
    out: &Path,
    threads: usize,
) -> Result<Vec<(String, Vec<u8>)>, String> {
    let args = SimulateArgs {
        config: config.to_path_buf(),
        out_dir: out.to_path_buf(),
        parallelism: Some(threads),
        seed: Some(1234),
        replications: None,
        boot_reps: None,
    };
    binconv_cli::run(Cli {
        command: Command::Simulate(args),
    })
    .map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for name in [
        "rmse.csv",
        "variance_ratios.csv",
        "variance_ratio_table.csv",
    ] {
        if let Ok(b) = std::fs::read(out.join(name)) {
            files.push((name.to_string(), b));
        }
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let configs = [
        (
            "rmse.toml",
            "kind = \"rmse\"\nseed = 5\nreplications = 12\n\
             [[sweep]]\nfactor = \"n\"\nvalues = [30, 50]\n\
             [[cells]]\nmisspec = \"overdispersed_both\"\nmisspec_rho = 0.03\n",
        ),
        (
            "ratio.toml",
            "kind = \"variance_ratio\"\nseed = 6\nreplications = 8\nboot_reps = 6\n\
             [[factorial]]\nfactor = \"n_trials\"\nvalues = [44, 69]\n",
        ),
    ];
    let mut compared = 0;
    for (name, body) in configs {
        let cfg = dir.path().join(name);
        std::fs::write(&cfg, body).map_err(|e| e.to_string())?;
        let runs = [(1, "a"), (8, "b"), (1, "c"), (8, "d")]
            .iter()
            .map(|(t, tag)| simulate_once(&cfg, &dir.path().join(format!("{name}-{tag}")), *t))
            .collect::<Result<Vec<_>, _>>()?;
        if runs[0].is_empty() || runs.iter().any(|r| r != &runs[0]) {
            return Err(format!(
                "{name}: reports differ between runs or thread counts"
            ));
        }
        compared += runs[0].len();
    }
    check(
        true,
        format!("{compared} CSV reports byte-identical across 4 runs at parallelism 1 and 8"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("pmf correctness", pmf_correctness),
        ("moment identities", moment_identities),
        ("estimator consistency", consistency),
        ("RMSE ordering", rmse_ordering),
        ("misspecification sensitivity", misspecification),
        ("variance-ratio reproduction", variance_ratios),
        ("bootstrap scaling", bootstrap_scaling),
        ("OLS closed-form equivalence", ols_equivalence),
        ("model selection", model_selection),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {:>2} PASS  {name} ({secs:.1}s): {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name} ({secs:.1}s): {d}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
