use aode::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use aode::merge::{average_experts, diff_norm, MergeSpec};

use crate::failure::Failure;
use crate::MergeArgs;

pub fn run(args: &MergeArgs) -> Result<(), Failure> {
    let weights = parse_weights(&args.weights, args.inputs.len())?;

    let mut checkpoints = Vec::with_capacity(args.inputs.len());
    for path in &args.inputs {
        let ckpt = read_checkpoint(path)
            .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        checkpoints.push(ckpt);
    }
    let refs: Vec<&Checkpoint> = checkpoints.iter().collect();

    let spec = MergeSpec {
        weights,
        include: args.include.clone(),
        base_index: 0,
    };
    let mut merged = average_experts(&refs, &spec)?;
    merged.set_metadata(
        "merge.inputs",
        args.inputs
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(";"),
    );

    // The merge itself cannot produce NaN from finite inputs, but if it ever
    // did, refusing to write is an invariant violation, not bad input data.
    write_checkpoint(&merged, &args.output).map_err(|e| match e {
        aode::checkpoint::CheckpointError::NonFiniteValue { .. } => {
            Failure::invariant(e.to_string())
        }
        other => Failure::data(format!("{}: {other}", args.output.display())),
    })?;

    let diff = diff_norm(&merged, refs[0])?;
    println!(
        "merged {} checkpoints -> {}",
        refs.len(),
        args.output.display()
    );
    println!("tensor distance to {}:", args.inputs[0].display());
    for (name, dist) in &diff.per_tensor {
        println!("  {name}: {dist}");
    }
    println!("  (global): {}", diff.global);
    Ok(())
}

fn parse_weights(raw: &str, inputs: usize) -> Result<Vec<f64>, Failure> {
    if raw == "equal" {
        return Ok(MergeSpec::equal(inputs).weights);
    }
    let weights: Vec<f64> = raw
        .split(',')
        .map(|w| {
            w.trim().parse::<f64>().map_err(|_| {
                Failure::usage(format!("--weights entry {w:?} is not a number"))
            })
        })
        .collect::<Result<_, _>>()?;
    if weights.len() != inputs {
        return Err(Failure::usage(format!(
            "--weights lists {} values for {} inputs",
            weights.len(),
            inputs
        )));
    }
    Ok(weights)
}
