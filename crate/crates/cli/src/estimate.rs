use serde::Serialize;

use binconv::bootstrap::{bootstrap_se_from, BootstrapPlan, MRule, Scheme};
use binconv::gmm::{fit_gmm_auto_with, GmmOptions};
use binconv::mle::{self, Param};
use binconv::regression;
use binconv::rng::derive_seed;
use binconv::simstudy::{agreement_summary, AgreementSummary};
use binconv::{Estimator, PairedDataset, RateParams};

use crate::args::{EstimateArgs, EstimatorChoice, Format, SeChoice};
use crate::dataset::read_dataset;
use crate::provenance::Provenance;
use crate::{emit, output_err, CliResult, Failure};

const PARAMS: [&str; 2] = ["pi_tp", "pi_tn"];

#[derive(Debug, Clone, Serialize)]
pub struct ResultDocument {
    pub provenance: Provenance,
    pub level: f64,
    pub dataset: DatasetInfo,
    pub agreement: AgreementSummary,
    pub fits: Vec<FitResult>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetInfo {
    pub n_obs: usize,
    pub trial_counts: Vec<u32>,
    pub groups: Vec<GroupInfo>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupInfo {
    pub label: String,
    pub n_obs: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    /// `all` for the full dataset, otherwise the group label.
    pub scope: String,
    pub estimator: String,
    pub ok: bool,
    pub error: Option<String>,
    pub pi_tp: Option<f64>,
    pub pi_tn: Option<f64>,
    pub converged: Option<bool>,
    pub loglik: Option<f64>,
    pub standard_errors: Vec<SeResult>,
    pub intervals: Vec<IntervalResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeResult {
    pub method: String,
    pub pi_tp: Option<f64>,
    pub pi_tn: Option<f64>,
    pub replicates: Option<usize>,
    pub failures: Option<usize>,
    /// Resample size for the m-out-of-n scheme.
    pub m: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IntervalResult {
    pub parameter: &'static str,
    /// `profile` or `percentile-<bootstrap method>`.
    pub method: String,
    pub lo: f64,
    pub hi: f64,
    pub contains_estimate: bool,
    /// The estimate sits on the edge of `[0, 1]`.
    pub boundary: bool,
}

struct Settings<'a> {
    args: &'a EstimateArgs,
    m_rule: MRule,
}

/// Point estimate plus plug-in variances, with estimator-specific extras.
struct PointFit {
    rates: RateParams,
    plugin_se: Option<[f64; 2]>,
    converged: bool,
    mle: Option<mle::MleFit>,
}

fn point_fit(
    est: Estimator,
    data: &PairedDataset,
    iterate_weights: usize,
) -> binconv::Result<PointFit> {
    match est {
        Estimator::Mle => {
            let f = mle::fit_mle(data, None, mle::DEFAULT_TOL)?;
            Ok(PointFit {
                rates: f.rates,
                plugin_se: f.se,
                converged: f.converged,
                mle: Some(f),
            })
        }
        Estimator::Ols => {
            let f = regression::fit_ols(data)?;
            Ok(PointFit {
                rates: f.rates,
                plugin_se: Some(f.se()),
                converged: true,
                mle: None,
            })
        }
        Estimator::Gmm => {
            let opts = GmmOptions {
                iterate_weights,
                ..GmmOptions::default()
            };
            let f = fit_gmm_auto_with(data, opts)?;
            let se = f
                .rate_variances()
                .filter(|v| v.iter().all(|x| x.is_finite() && *x >= 0.0))
                .map(|v| v.map(f64::sqrt));
            Ok(PointFit {
                rates: f.rates,
                plugin_se: se,
                converged: f.converged,
                mle: None,
            })
        }
    }
}

fn se_choice_name(c: SeChoice) -> &'static str {
    match c {
        SeChoice::Plugin => "plugin",
        SeChoice::Semipar => "semipar",
        SeChoice::Boot => "boot",
        SeChoice::Moon => "moon",
    }
}

fn interval(
    parameter: &'static str,
    method: String,
    lo: f64,
    hi: f64,
    estimate: f64,
) -> IntervalResult {
    IntervalResult {
        parameter,
        method,
        lo,
        hi,
        contains_estimate: lo <= estimate && estimate <= hi,
        boundary: estimate <= 0.0 || estimate >= 1.0,
    }
}

fn fit_scope(
    scope: &str,
    scope_index: u64,
    est: Estimator,
    est_index: u64,
    data: &PairedDataset,
    s: &Settings<'_>,
    warnings: &mut Vec<String>,
) -> FitResult {
    let mut out = FitResult {
        scope: scope.to_string(),
        estimator: est.name().to_string(),
        ok: false,
        error: None,
        pi_tp: None,
        pi_tn: None,
        converged: None,
        loglik: None,
        standard_errors: Vec::new(),
        intervals: Vec::new(),
    };
    let fit = match point_fit(est, data, s.args.iterate_weights) {
        Ok(f) => f,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    out.ok = true;
    out.pi_tp = Some(fit.rates.tp());
    out.pi_tn = Some(fit.rates.tn());
    out.converged = Some(fit.converged);
    if !fit.converged {
        warnings.push(format!(
            "{scope}/{est}: optimizer did not converge; best iterate reported"
        ));
    }
    let estimates = fit.rates.as_array();

    if let Some(m) = &fit.mle {
        out.loglik = Some(m.loglik);
        for (k, which) in [Param::Tp, Param::Tn].into_iter().enumerate() {
            match mle::profile_ci(data, m, which, s.args.level) {
                Ok(ci) => out.intervals.push(interval(
                    PARAMS[k],
                    "profile".into(),
                    ci.lo,
                    ci.hi,
                    estimates[k],
                )),
                Err(e) => warnings.push(format!(
                    "{scope}/{est}: no profile interval for {}: {e}",
                    PARAMS[k]
                )),
            }
        }
    }

    for (j, choice) in s.args.se.iter().enumerate() {
        let name = se_choice_name(*choice);
        let scheme = match choice {
            SeChoice::Plugin => {
                out.standard_errors.push(SeResult {
                    method: name.into(),
                    pi_tp: fit.plugin_se.map(|v| v[0]),
                    pi_tn: fit.plugin_se.map(|v| v[1]),
                    replicates: None,
                    failures: None,
                    m: None,
                    error: fit
                        .plugin_se
                        .is_none()
                        .then(|| "plug-in variance unavailable at this estimate".to_string()),
                });
                continue;
            }
            SeChoice::Semipar => Scheme::SemiParametric,
            SeChoice::Boot => Scheme::Nonparametric,
            SeChoice::Moon => Scheme::MOutOfN,
        };
        let seed = derive_seed(s.args.seed, &[scope_index, est_index, j as u64]);
        let plan = BootstrapPlan::new(scheme, s.args.boot_reps, seed)
            .with_m_rule(s.m_rule)
            .with_level(s.args.level);
        match bootstrap_se_from(data, est, &plan, Some(fit.rates)) {
            Ok(b) => {
                for k in 0..2 {
                    let ci = b.percentile_ci[k];
                    let iv = interval(
                        PARAMS[k],
                        format!("percentile-{name}"),
                        ci.lo,
                        ci.hi,
                        estimates[k],
                    );
                    if !iv.contains_estimate && !iv.boundary {
                        warnings.push(format!(
                            "{scope}/{est}: {name} percentile interval for {} excludes the estimate",
                            PARAMS[k]
                        ));
                    }
                    out.intervals.push(iv);
                }
                out.standard_errors.push(SeResult {
                    method: name.into(),
                    pi_tp: Some(b.se[0]),
                    pi_tn: Some(b.se[1]),
                    replicates: Some(s.args.boot_reps),
                    failures: Some(b.failures),
                    m: Some(b.m),
                    error: None,
                });
            }
            Err(e) => out.standard_errors.push(SeResult {
                method: name.into(),
                pi_tp: None,
                pi_tn: None,
                replicates: Some(s.args.boot_reps),
                failures: None,
                m: None,
                error: Some(e.to_string()),
            }),
        }
    }
    out
}

/// Fits the selected estimators to the full dataset and to every labelled
/// group. Failures on groups are reported in the document; a failure on
/// the full dataset also makes the command fail after writing it.
pub fn estimate_document(
    data: &PairedDataset,
    raw: &[u8],
    args: &EstimateArgs,
) -> CliResult<ResultDocument> {
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(Failure::Input(format!(
            "--level {} must lie in (0, 1)",
            args.level
        )));
    }
    if args.se.iter().any(|c| *c != SeChoice::Plugin) && args.boot_reps < 2 {
        return Err(Failure::Input("--boot-reps must be at least 2".into()));
    }
    let settings = Settings {
        args,
        m_rule: args.m_rule().map_err(Failure::Input)?,
    };
    let estimators = EstimatorChoice::expand(&args.estimator);
    let mut warnings = Vec::new();
    let label_groups = data.label_groups();

    let mut scopes: Vec<(String, PairedDataset)> = vec![("all".into(), data.clone())];
    if !args.no_groups && label_groups.len() > 1 {
        for (label, idx) in &label_groups {
            let sub = data
                .subset(idx)
                .map_err(|e| Failure::Input(e.to_string()))?;
            scopes.push((label.clone(), sub));
        }
    }

    let mut fits = Vec::new();
    for (si, (scope, d)) in scopes.iter().enumerate() {
        for (ei, est) in estimators.iter().enumerate() {
            fits.push(fit_scope(
                scope,
                si as u64,
                *est,
                ei as u64,
                d,
                &settings,
                &mut warnings,
            ));
        }
    }

    Ok(ResultDocument {
        provenance: Provenance::new("estimate", Some(args.seed), raw),
        level: args.level,
        dataset: DatasetInfo {
            n_obs: data.len(),
            trial_counts: data.groups().keys().copied().collect(),
            groups: label_groups
                .iter()
                .map(|(label, idx)| GroupInfo {
                    label: label.clone(),
                    n_obs: idx.len(),
                })
                .collect(),
        },
        agreement: agreement_summary(data).map_err(|e| Failure::Input(e.to_string()))?,
        fits,
        warnings,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Long-format summary: one row per fit, parameter and SE method or
/// interval.
pub fn document_to_csv(doc: &ResultDocument) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "scope",
        "estimator",
        "parameter",
        "estimate",
        "method",
        "se",
        "ci_lo",
        "ci_hi",
        "error",
    ])
    .map_err(output_err)?;
    for f in &doc.fits {
        if !f.ok {
            w.write_record([
                &f.scope,
                &f.estimator,
                "",
                "",
                "",
                "",
                "",
                "",
                f.error.as_deref().unwrap_or(""),
            ])
            .map_err(output_err)?;
            continue;
        }
        for (k, p) in PARAMS.iter().enumerate() {
            let est = if k == 0 { f.pi_tp } else { f.pi_tn };
            for s in &f.standard_errors {
                let se = if k == 0 { s.pi_tp } else { s.pi_tn };
                let ci = f
                    .intervals
                    .iter()
                    .find(|i| i.parameter == *p && i.method == format!("percentile-{}", s.method));
                w.write_record([
                    f.scope.as_str(),
                    &f.estimator,
                    p,
                    &opt(est),
                    &s.method,
                    &opt(se),
                    &opt(ci.map(|c| c.lo)),
                    &opt(ci.map(|c| c.hi)),
                    s.error.as_deref().unwrap_or(""),
                ])
                .map_err(output_err)?;
            }
            for i in f
                .intervals
                .iter()
                .filter(|i| i.parameter == *p && i.method == "profile")
            {
                w.write_record([
                    f.scope.as_str(),
                    &f.estimator,
                    p,
                    &opt(est),
                    "profile",
                    "",
                    &i.lo.to_string(),
                    &i.hi.to_string(),
                    "",
                ])
                .map_err(output_err)?;
            }
        }
    }
    String::from_utf8(w.into_inner().map_err(output_err)?).map_err(output_err)
}

pub fn cmd_estimate(args: &EstimateArgs) -> CliResult<()> {
    let loaded = read_dataset(&args.input)?;
    let raw = std::fs::read(&args.input).map_err(|e| Failure::Input(e.to_string()))?;
    let mut doc = estimate_document(&loaded.data, &raw, args)?;
    let mut warnings = loaded.warnings;
    warnings.append(&mut doc.warnings);
    doc.warnings = warnings;
    for w in &doc.warnings {
        eprintln!("warning: {w}");
    }
    let text = match args.format {
        Format::Json => serde_json::to_string_pretty(&doc).map_err(output_err)? + "\n",
        Format::Csv => document_to_csv(&doc)?,
    };
    emit(args.output.as_deref(), &text)?;

    let failed: Vec<String> = doc
        .fits
        .iter()
        .filter(|f| f.scope == "all" && !f.ok)
        .map(|f| {
            format!(
                "{}: {}",
                f.estimator,
                f.error.as_deref().unwrap_or("unknown")
            )
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Estimation(failed.join("; ")))
    }
}
