use std::path::Path;

use serde::{Deserialize, Serialize};

use aode::checkpoint::write_checkpoint;
use aode::par::par_map;
use aode::render;
use aode::toy::{run_experiment, ExperimentConfig, ExperimentReport, ExperimentRun};

use crate::failure::{io_failure, Failure};
use crate::ToyArgs;

/// Aggregate across seeds: per-procedure mean of the geometric means.
#[derive(Debug, Serialize, Deserialize)]
struct Summary {
    seeds: Vec<u64>,
    procedures: Vec<ProcedureSummary>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProcedureSummary {
    procedure: String,
    mean_geometric_mean: f64,
    per_seed_geometric_mean: Vec<f64>,
}

pub fn run(args: &ToyArgs) -> Result<(), Failure> {
    let json = std::fs::read_to_string(&args.config)
        .map_err(|e| io_failure("reading config", &args.config, e))?;
    let cfg = ExperimentConfig::from_json(&json)?;
    let seeds = parse_seeds(&args.seeds)?;

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| io_failure("creating output directory", &args.out_dir, e))?;

    let runs = par_map(seeds.clone(), |seed| -> Result<ExperimentRun, Failure> {
        let run = run_experiment(&cfg, seed)?;
        write_seed_outputs(&args.out_dir, &run)?;
        Ok(run)
    });
    let mut reports: Vec<ExperimentReport> = Vec::with_capacity(runs.len());
    for run in runs {
        reports.push(run?.report);
    }

    let summary = summarize(&seeds, &reports);
    let summary_path = args.out_dir.join("summary.json");
    let summary_json =
        serde_json::to_string_pretty(&summary).expect("summary serialization cannot fail");
    std::fs::write(&summary_path, summary_json + "\n")
        .map_err(|e| io_failure("writing summary", &summary_path, e))?;

    for report in &reports {
        println!("seed {}", report.seed);
        print!("{}", report.render_table());
        println!();
    }
    println!("mean geometric mean across seeds {:?}", seeds);
    let header = vec!["procedure".to_string(), "mean geo mean".to_string()];
    let rows: Vec<Vec<String>> = summary
        .procedures
        .iter()
        .map(|p| vec![p.procedure.clone(), render::sig3(p.mean_geometric_mean)])
        .collect();
    print!("{}", render::table(&header, &rows));
    println!("wrote {}", summary_path.display());
    Ok(())
}

fn parse_seeds(raw: &str) -> Result<Vec<u64>, Failure> {
    let seeds: Vec<u64> = raw
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Failure::usage(format!("--seeds entry {s:?} is not an integer")))
        })
        .collect::<Result<_, _>>()?;
    if seeds.is_empty() {
        return Err(Failure::usage("--seeds must list at least one seed"));
    }
    Ok(seeds)
}

fn write_seed_outputs(out_dir: &Path, run: &ExperimentRun) -> Result<(), Failure> {
    let seed_dir = out_dir.join(format!("seed_{}", run.report.seed));
    std::fs::create_dir_all(&seed_dir)
        .map_err(|e| io_failure("creating seed directory", &seed_dir, e))?;

    let report_path = seed_dir.join("report.json");
    let json =
        serde_json::to_string_pretty(&run.report).expect("report serialization cannot fail");
    std::fs::write(&report_path, json + "\n")
        .map_err(|e| io_failure("writing report", &report_path, e))?;

    for (name, ckpt) in &run.artifacts {
        let path = seed_dir.join(format!("{}.aode", sanitize(name)));
        write_checkpoint(ckpt, &path)?;
    }
    Ok(())
}

fn summarize(seeds: &[u64], reports: &[ExperimentReport]) -> Summary {
    let mut procedures = Vec::new();
    if let Some(first) = reports.first() {
        for row in &first.rows {
            let per_seed: Vec<f64> = reports
                .iter()
                .filter_map(|r| r.row(&row.procedure).map(|x| x.geometric_mean))
                .collect();
            procedures.push(ProcedureSummary {
                procedure: row.procedure.clone(),
                mean_geometric_mean: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
                per_seed_geometric_mean: per_seed,
            });
        }
    }
    Summary {
        seeds: seeds.to_vec(),
        procedures,
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_alphanumeric() { c } else { '_' })
        .collect()
}
