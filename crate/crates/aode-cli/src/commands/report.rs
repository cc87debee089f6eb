use std::path::Path;

use aode::eval::ReportJson;
use aode::render;
use aode::toy::ExperimentReport;

use crate::failure::{io_failure, Failure};
use crate::{ReportArgs, ReportFormat};

/// A report row ready for rendering: procedure/model name, one error or WER
/// percentage per domain, and the geometric mean.
struct Row {
    name: String,
    values_pct: Vec<f64>,
    geometric_mean: Option<f64>,
}

pub fn run(args: &ReportArgs) -> Result<(), Failure> {
    let mut domains: Option<Vec<String>> = None;
    let mut rows: Vec<Row> = Vec::new();

    for path in &args.inputs {
        let json = std::fs::read_to_string(path)
            .map_err(|e| io_failure("reading report", path, e))?;
        let (file_domains, file_rows) = parse_report(path, &json)?;
        match &domains {
            None => domains = Some(file_domains),
            Some(existing) => {
                if *existing != file_domains {
                    return Err(Failure::data(format!(
                        "{}: domain set {:?} conflicts with {:?}",
                        path.display(),
                        file_domains,
                        existing
                    )));
                }
            }
        }
        rows.extend(file_rows);
    }
    let domains = domains.expect("clap enforces at least one input");

    match args.format {
        ReportFormat::Table => {
            let mut header = vec!["procedure".to_string()];
            header.extend(domains.iter().cloned());
            header.push("geo mean".to_string());
            let cells: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    let mut row = vec![r.name.clone()];
                    row.extend(r.values_pct.iter().map(|&v| render::sig3(v)));
                    row.push(
                        r.geometric_mean
                            .map_or("undefined".to_string(), render::sig3),
                    );
                    row
                })
                .collect();
            print!("{}", render::table(&header, &cells));
        }
        ReportFormat::Csv => {
            println!("procedure,{},geometric_mean", domains.join(","));
            for r in &rows {
                let values = r
                    .values_pct
                    .iter()
                    .map(f64::to_string)
                    .collect::<Vec<_>>()
                    .join(",");
                let geo = r
                    .geometric_mean
                    .map_or("undefined".to_string(), |g| g.to_string());
                println!("{},{values},{geo}", r.name);
            }
        }
    }
    Ok(())
}

/// Accepts either an experiment report ({seed, domains, rows}) or a WER
/// report ({domains: {...}, geometric_mean}); anything else is a schema
/// mismatch.
fn parse_report(path: &Path, json: &str) -> Result<(Vec<String>, Vec<Row>), Failure> {
    if let Ok(report) = serde_json::from_str::<ExperimentReport>(json) {
        let rows = report
            .rows
            .iter()
            .map(|r| Row {
                name: r.procedure.clone(),
                values_pct: r.errors_pct.clone(),
                geometric_mean: Some(r.geometric_mean),
            })
            .collect();
        return Ok((report.domains, rows));
    }
    if let Ok(report) = serde_json::from_str::<ReportJson>(json) {
        let domains: Vec<String> = report.domains.keys().cloned().collect();
        let values_pct = report.domains.values().map(|b| 100.0 * b.wer).collect();
        let name = path
            .file_stem()
            .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        let rows = vec![Row {
            name,
            values_pct,
            geometric_mean: report.geometric_mean,
        }];
        return Ok((domains, rows));
    }
    Err(Failure::data(format!(
        "{}: not a recognized report schema (expected experiment or WER report JSON)",
        path.display()
    )))
}
