use std::path::PathBuf;

use clap::Args;
use pairsurv_core::io::{sim_config_from, write_infections, write_pair_rows, write_population, KeyValues};
use pairsurv_core::simulate::{analysis_dataset, simulate};
use pairsurv_core::{Infector, SimConfig, StudyDesign, WiwMode};

use crate::{create, Context, Status};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Key-value config file; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub(crate) fn run(ctx: &Context, args: &SimulateArgs) -> anyhow::Result<Status> {
    let (mut cfg, designs, modes) = match &args.config {
        Some(path) => {
            let mut kv = KeyValues::from_file(path)?;
            let cfg = sim_config_from(&mut kv)?;
            let designs = kv.parsed_list::<StudyDesign>("designs", StudyDesign::ALL.to_vec(), "a study design")?;
            let modes = kv.parsed_list::<WiwMode>("wiw", WiwMode::ALL.to_vec(), "observed or unobserved")?;
            kv.finish()?;
            (cfg, designs, modes)
        }
        None => (SimConfig::default(), StudyDesign::ALL.to_vec(), WiwMode::ALL.to_vec()),
    };
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    let out = simulate(&cfg)?;

    write_population(create(&ctx.output("population.csv"))?, &out.population)?;
    write_infections(create(&ctx.output("infections.csv"))?, &out.infections)?;
    for &design in &designs {
        for &wiw in &modes {
            let ds = analysis_dataset(&out, &cfg.covariate, design, wiw)?;
            write_pair_rows(create(&ctx.output(&format!("pairs_{design}_{wiw}.csv")))?, &ds)?;
        }
    }

    let external = out.infections.iter().filter(|r| r.infector == Infector::External).count();
    println!("seed: {}", cfg.seed);
    println!("individuals: {}", out.population.len());
    println!("infections: {} ({} external, {} internal)", out.infections.len(), external, out.infections.len() - external);
    println!("end time: {}", out.end_time);
    if !out.complete {
        log::warn!("stopping rule never fired; observation ended at the configured limit");
    }
    Ok(Status::Success)
}
