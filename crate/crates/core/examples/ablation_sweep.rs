//! Runs both ablation tables on a synthetic corpus and prints the CSV.
//!
//! Usage: `ablation_sweep [seed] [scenes] [epochs] [lambda_fea]`.

use std::time::Instant;

use hmjnd::ablation::{run_ablation, sweep_train_config, table_rows, AblationResult};
use hmjnd::io::{synth_corpus, Modality};
use hmjnd::model::ModelConfig;

fn main() -> hmjnd::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize| args.get(i).map(|s| s.parse::<f64>().expect("numeric argument"));
    let seed = arg(0).unwrap_or(0.0) as u64;
    let scenes = arg(1).unwrap_or(20.0) as usize;
    let mut cfg = sweep_train_config();
    cfg.seed = seed;
    cfg.epochs = arg(2).map_or(cfg.epochs, |e| e as usize);
    cfg.lambda_fea = arg(3).unwrap_or(cfg.lambda_fea);

    let data = synth_corpus(seed, scenes, 32, 32)?;
    let start = Instant::now();
    println!("{}", AblationResult::CSV_HEADER);
    run_ablation(
        &data,
        &data,
        &table_rows(),
        &ModelConfig::toy(),
        &cfg,
        Modality::Saliency,
        |r| {
            println!("{}  # {:.1?}", r.csv_row(), start.elapsed());
            Ok(())
        },
    )?;
    Ok(())
}
