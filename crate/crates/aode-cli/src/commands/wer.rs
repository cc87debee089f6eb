use std::collections::BTreeMap;

use aode::eval::{
    corpus_wer, eval_report, join_transcripts, prepare_pairs, read_transcripts,
    NormalizationConfig,
};

use crate::failure::{io_failure, Failure};
use crate::WerArgs;

pub fn run(args: &WerArgs) -> Result<(), Failure> {
    let cfg = match args.normalize.as_str() {
        "default" => NormalizationConfig::default(),
        "none" => NormalizationConfig::none(),
        path => {
            let json = std::fs::read_to_string(path)
                .map_err(|e| io_failure("reading normalization config", path.as_ref(), e))?;
            NormalizationConfig::from_json(&json)?
        }
    };

    let refs = read_transcripts(&args.reference)?;
    let hyps = read_transcripts(&args.hyp)?;
    let joined = join_transcripts(&refs, &hyps)?;
    let pairs = prepare_pairs(&joined, &cfg);
    let breakdown = corpus_wer(&pairs)?;

    println!(
        "WER {} over {} utterances: S={} D={} I={} N={}",
        aode::render::sig3(100.0 * breakdown.wer()) + "%",
        joined.len(),
        breakdown.substitutions,
        breakdown.deletions,
        breakdown.insertions,
        breakdown.ref_len
    );

    let mut per_domain = BTreeMap::new();
    per_domain.insert(args.domain.clone(), breakdown);
    let report = eval_report(per_domain)?;
    print!("{}", report.render_table());

    if let Some(json_path) = &args.json {
        let json = serde_json::to_string_pretty(&report.to_json())
            .expect("report serialization cannot fail");
        std::fs::write(json_path, json + "\n")
            .map_err(|e| io_failure("writing report", json_path, e))?;
    }
    Ok(())
}
