//! Paired-count CSV files: header `x,y,n_trials[,group]`, one observation
//! per row.

use std::collections::BTreeMap;
use std::path::Path;

use binconv::{PairedDataset, PairedObs};

use crate::{CliResult, Failure};

/// A dataset read from disk together with non-fatal findings.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub data: PairedDataset,
    pub warnings: Vec<String>,
}

pub fn read_dataset(path: &Path) -> CliResult<LoadedDataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    parse_dataset(&text).map_err(|e| match e {
        Failure::Input(m) => Failure::Input(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_dataset(text: &str) -> CliResult<LoadedDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Failure::Input(format!("header: {e}")))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    let has_group = match names.as_slice() {
        ["x", "y", "n_trials"] => false,
        ["x", "y", "n_trials", "group"] => true,
        _ => {
            return Err(Failure::Input(format!(
                "header must be 'x,y,n_trials' or 'x,y,n_trials,group', found '{}'",
                names.join(",")
            )))
        }
    };

    let mut obs = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Failure::Input(format!("row {row}: {e}")))?;
        let field = |k: usize, name: &str| -> CliResult<u32> {
            let raw = rec.get(k).unwrap_or("");
            raw.parse::<u32>().map_err(|_| {
                Failure::Input(format!(
                    "row {row}: column {name}: '{raw}' is not a non-negative integer"
                ))
            })
        };
        let (x, y, n) = (field(0, "x")?, field(1, "y")?, field(2, "n_trials")?);
        let o = PairedObs::new(x, y, n).map_err(|e| Failure::Input(format!("row {row}: {e}")))?;
        obs.push(o);
        if has_group {
            let g = rec.get(3).unwrap_or("");
            if g.is_empty() {
                return Err(Failure::Input(format!("row {row}: empty group label")));
            }
            labels.push(g.to_string());
        }
    }
    if obs.is_empty() {
        return Err(Failure::Input("no data rows".into()));
    }

    let mut warnings = Vec::new();
    if has_group {
        let mut trials: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
        for (o, l) in obs.iter().zip(&labels) {
            let t = trials.entry(l.as_str()).or_default();
            if !t.contains(&o.n_trials) {
                t.push(o.n_trials);
            }
        }
        for (label, t) in trials {
            if t.len() > 1 {
                warnings.push(format!(
                    "group '{label}' mixes trial counts {t:?}; GMM groups are re-derived from n_trials"
                ));
            }
        }
    }
    let data = if has_group {
        PairedDataset::with_labels(obs, labels)
    } else {
        PairedDataset::new(obs)
    }
    .map_err(|e| Failure::Input(e.to_string()))?;
    Ok(LoadedDataset { data, warnings })
}

pub fn dataset_to_csv(data: &PairedDataset) -> String {
    let mut out = String::new();
    match data.labels() {
        Some(labels) => {
            out.push_str("x,y,n_trials,group\n");
            for (o, l) in data.obs().iter().zip(labels) {
                out.push_str(&format!("{},{},{},{}\n", o.x, o.y, o.n_trials, l));
            }
        }
        None => {
            out.push_str("x,y,n_trials\n");
            for o in data.obs() {
                out.push_str(&format!("{},{},{}\n", o.x, o.y, o.n_trials));
            }
        }
    }
    out
}
