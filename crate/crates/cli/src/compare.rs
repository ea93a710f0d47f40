use serde::Serialize;

use binconv::gmm::{leave_one_out_influence, Influence};
use binconv::simstudy::{
    agreement_summary, compare_models_aic_bic, AgreementSummary, Comparison, Model,
};
use binconv::RateParams;

use crate::args::{CompareArgs, Format};
use crate::dataset::read_dataset;
use crate::provenance::Provenance;
use crate::{emit, output_err, CliResult, Failure};

#[derive(Debug, Serialize)]
pub struct CompareDocument {
    pub provenance: Provenance,
    pub comparison: Comparison,
    pub agreement: AgreementSummary,
    pub warnings: Vec<String>,
}

fn model_name(m: Model) -> &'static str {
    match m {
        Model::Pooled => "pooled",
        Model::GroupSpecific => "group_specific",
    }
}

pub fn cmd_compare(args: &CompareArgs) -> CliResult<()> {
    let loaded = read_dataset(&args.input)?;
    let raw = std::fs::read(&args.input).map_err(|e| Failure::Input(e.to_string()))?;
    let data = &loaded.data;
    let mut warnings = loaded.warnings;
    let comparison =
        compare_models_aic_bic(data).map_err(|e| Failure::Estimation(e.to_string()))?;
    if comparison.n_groups < 2 {
        warnings.push("single group: the pooled model is preferred trivially".into());
    }
    let agreement = agreement_summary(data).map_err(|e| Failure::Input(e.to_string()))?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }

    let text = match args.format {
        Format::Json => {
            let doc = CompareDocument {
                provenance: Provenance::new("compare", None, &raw),
                comparison,
                agreement,
                warnings,
            };
            serde_json::to_string_pretty(&doc).map_err(output_err)? + "\n"
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["model", "k", "loglik", "aic", "bic", "preferred_by"])
                .map_err(output_err)?;
            let mut rows = vec![("pooled", comparison.pooled)];
            if let Some(g) = comparison.group_specific {
                rows.push(("group_specific", g));
            }
            for (name, s) in rows {
                let mut by = Vec::new();
                if model_name(comparison.preferred_by_aic) == name {
                    by.push("aic");
                }
                if model_name(comparison.preferred_by_bic) == name {
                    by.push("bic");
                }
                w.write_record([
                    name,
                    &s.k.to_string(),
                    &s.loglik.to_string(),
                    &s.aic.to_string(),
                    &s.bic.to_string(),
                    &by.join("+"),
                ])
                .map_err(output_err)?;
            }
            String::from_utf8(w.into_inner().map_err(output_err)?).map_err(output_err)?
                + &format!(
                    "\nexact,one_off,more_than_one_off\n{},{},{}\n",
                    agreement.exact, agreement.one_off, agreement.more_than_one_off
                )
        }
    };
    emit(args.output.as_deref(), &text)
}

#[derive(Debug, Serialize)]
pub struct InfluenceDocument {
    pub provenance: Provenance,
    pub full_rates: RateParams,
    /// Observations ordered by the size of the shift they cause, largest first.
    pub observations: Vec<Influence>,
}

fn shift_size(i: &Influence) -> f64 {
    i.shift
        .map(|[a, b]| a.abs().max(b.abs()))
        .unwrap_or(f64::INFINITY)
}

pub fn cmd_influence(args: &CompareArgs) -> CliResult<()> {
    let loaded = read_dataset(&args.input)?;
    let raw = std::fs::read(&args.input).map_err(|e| Failure::Input(e.to_string()))?;
    let (full, mut obs) =
        leave_one_out_influence(&loaded.data).map_err(|e| Failure::Estimation(e.to_string()))?;
    obs.sort_by(|a, b| {
        shift_size(b)
            .total_cmp(&shift_size(a))
            .then(a.index.cmp(&b.index))
    });

    let text = match args.format {
        Format::Json => {
            let doc = InfluenceDocument {
                provenance: Provenance::new("influence", None, &raw),
                full_rates: full.rates,
                observations: obs,
            };
            serde_json::to_string_pretty(&doc).map_err(output_err)? + "\n"
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "row", "x", "y", "n_trials", "pi_tp", "pi_tn", "shift_tp", "shift_tn",
            ])
            .map_err(output_err)?;
            let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            for i in &obs {
                w.write_record([
                    (i.index + 1).to_string(),
                    i.obs.x.to_string(),
                    i.obs.y.to_string(),
                    i.obs.n_trials.to_string(),
                    f(i.rates.map(|r| r.tp())),
                    f(i.rates.map(|r| r.tn())),
                    f(i.shift.map(|s| s[0])),
                    f(i.shift.map(|s| s[1])),
                ])
                .map_err(output_err)?;
            }
            String::from_utf8(w.into_inner().map_err(output_err)?).map_err(output_err)?
        }
    };
    emit(args.output.as_deref(), &text)
}
