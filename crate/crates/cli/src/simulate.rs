use std::path::{Path, PathBuf};

use serde::Serialize;

use binconv::simstudy::{
    run_rmse_study, run_variance_ratio_study, seed_cells, RatioRow, StudyOptions, StudyReport,
};

use crate::args::SimulateArgs;
use crate::config::{parse_config, StudyKind, StudyPlan};
use crate::provenance::Provenance;
use crate::{output_err, CliResult, Failure};

pub const RMSE_FILE: &str = "rmse.csv";
pub const RATIO_FILE: &str = "variance_ratios.csv";
pub const RATIO_TABLE_FILE: &str = "variance_ratio_table.csv";
pub const JSON_FILE: &str = "report.json";

#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub files: Vec<PathBuf>,
    pub cells: usize,
    pub failures: usize,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    provenance: Provenance,
    kind: &'static str,
    cells: usize,
    replications: usize,
    bootstrap_replicates: usize,
    #[serde(flatten)]
    report: &'a StudyReport,
}

fn to_csv<T: Serialize>(rows: &[T]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(output_err)?;
    }
    w.into_inner().map_err(output_err)
}

/// Wide layout: one row per cell, estimator and parameter with
/// one column of variance ratios per standard-error method.
pub fn ratio_table(rows: &[RatioRow]) -> CliResult<Vec<u8>> {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = [
        "cell",
        "n",
        "n_trials",
        "p",
        "rho_x",
        "pi_tp",
        "pi_tn",
        "estimator",
        "parameter",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(methods.iter().map(|m| m.to_string()));
    w.write_record(&header).map_err(output_err)?;

    let mut i = 0;
    while i < rows.len() {
        let head = &rows[i];
        let block: Vec<&RatioRow> = rows[i..]
            .iter()
            .take_while(|r| r.cell == head.cell && r.estimator == head.estimator)
            .collect();
        for param in ["pi_tp", "pi_tn"] {
            let mut rec = vec![
                head.cell.to_string(),
                head.n.to_string(),
                head.n_trials.to_string(),
                head.p.to_string(),
                head.rho_x.to_string(),
                head.pi_tp.to_string(),
                head.pi_tn.to_string(),
                head.estimator.clone(),
                param.to_string(),
            ];
            for m in &methods {
                let v = block.iter().find(|r| r.method == *m).map(|r| {
                    if param == "pi_tp" {
                        r.ratio_tp
                    } else {
                        r.ratio_tn
                    }
                });
                rec.push(v.map(|x| x.to_string()).unwrap_or_default());
            }
            w.write_record(&rec).map_err(output_err)?;
        }
        i += block.len();
    }
    w.into_inner().map_err(output_err)
}

fn write(dir: &Path, name: &str, bytes: &[u8], files: &mut Vec<PathBuf>) -> CliResult<()> {
    let p = dir.join(name);
    std::fs::write(&p, bytes).map_err(|e| output_err(format!("{}: {e}", p.display())))?;
    files.push(p);
    Ok(())
}

/// Runs the planned study and returns its report.
pub fn run_plan(plan: &StudyPlan) -> CliResult<StudyReport> {
    let mut grid = plan.grid.clone();
    seed_cells(&mut grid, plan.seed);
    let opts = StudyOptions {
        bootstrap_replicates: plan.boot_reps,
        parallel: true,
    };
    match plan.kind {
        StudyKind::Rmse => run_rmse_study(&grid, &plan.estimators, &opts),
        StudyKind::VarianceRatio => {
            run_variance_ratio_study(&grid, &plan.estimators, &plan.se_methods, &opts)
        }
    }
    .map_err(|e| Failure::Input(e.to_string()))
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<SimulationOutcome> {
    let raw = std::fs::read(&args.config)
        .map_err(|e| Failure::Input(format!("{}: {e}", args.config.display())))?;
    let text = String::from_utf8(raw.clone())
        .map_err(|_| Failure::Input(format!("{}: not UTF-8", args.config.display())))?;
    let mut cfg = parse_config(&text)
        .map_err(|e| Failure::Input(format!("{}: {e}", args.config.display())))?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(r) = args.replications {
        cfg.replications = r;
    }
    if let Some(b) = args.boot_reps {
        cfg.boot_reps = b;
    }
    let plan = cfg
        .plan()
        .map_err(|e| Failure::Input(format!("{}: {e}", args.config.display())))?;
    let report = run_plan(&plan)?;

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| output_err(format!("{}: {e}", args.out_dir.display())))?;
    let mut files = Vec::new();
    let failures = match plan.kind {
        StudyKind::Rmse => {
            write(&args.out_dir, RMSE_FILE, &to_csv(&report.rmse)?, &mut files)?;
            report.rmse.iter().map(|r| r.failures).sum::<usize>()
        }
        StudyKind::VarianceRatio => {
            write(
                &args.out_dir,
                RATIO_FILE,
                &to_csv(&report.ratios)?,
                &mut files,
            )?;
            write(
                &args.out_dir,
                RATIO_TABLE_FILE,
                &ratio_table(&report.ratios)?,
                &mut files,
            )?;
            report
                .ratios
                .iter()
                .map(|r| r.estimates.abs_diff(r.replications))
                .sum::<usize>()
        }
    };
    let json = JsonReport {
        provenance: Provenance::new("simulate", Some(plan.seed), &raw),
        kind: match plan.kind {
            StudyKind::Rmse => "rmse",
            StudyKind::VarianceRatio => "variance_ratio",
        },
        cells: plan.grid.len(),
        replications: cfg.replications,
        bootstrap_replicates: plan.boot_reps,
        report: &report,
    };
    let body = serde_json::to_string_pretty(&json).map_err(output_err)? + "\n";
    write(&args.out_dir, JSON_FILE, body.as_bytes(), &mut files)?;

    eprintln!(
        "{} cells x {} replications; {} failed estimates; wrote {}",
        plan.grid.len(),
        cfg.replications,
        failures,
        files
            .iter()
            .map(|f| f.display().to_string())
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(SimulationOutcome {
        files,
        cells: plan.grid.len(),
        failures,
    })
}
