use binconv::rng::substream;
use binconv::simstudy::{generate_dataset, Misspec, ScenarioConfig};
use binconv::RateParams;

use crate::args::GenerateArgs;
use crate::dataset::dataset_to_csv;
use crate::{emit, CliResult, Failure};

pub fn scenario_from_args(a: &GenerateArgs) -> CliResult<ScenarioConfig> {
    let input = |e: binconv::Error| Failure::Input(e.to_string());
    let cfg = ScenarioConfig {
        n: a.n,
        n_trials: a.n_trials,
        p: a.p,
        rho_x: a.rho_x,
        rates: RateParams::new(a.pi_tp, a.pi_tn).map_err(input)?,
        misspec: Misspec::from_parts(&a.misspec, a.misspec_rho).map_err(input)?,
        replications: 1,
        seed: a.seed,
    };
    cfg.validate().map_err(input)?;
    Ok(cfg)
}

pub fn cmd_generate(a: &GenerateArgs) -> CliResult<()> {
    let cfg = scenario_from_args(a)?;
    let data = generate_dataset(&cfg, &mut substream(cfg.seed, &[0]))
        .map_err(|e| Failure::Input(e.to_string()))?;
    emit(a.output.as_deref(), &dataset_to_csv(&data))
}
