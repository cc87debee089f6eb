use aode::schedules::{
    llrd_multipliers, multipliers_csv, schedule_csv, LayerClass, LayerRule, StlrConfig,
};

use crate::failure::Failure;
use crate::ScheduleArgs;

pub fn run(args: &ScheduleArgs) -> Result<(), Failure> {
    let cfg = StlrConfig::with_shape(args.lr_max, args.cut_frac, args.ratio, args.total_steps)?;
    print!("{}", schedule_csv(&cfg)?);

    if let Some(decay) = args.llrd_decay {
        let layers = args.layers.ok_or_else(|| {
            Failure::usage("--llrd-decay needs --layers to size the encoder ladder")
        })?;
        if layers == 0 {
            return Err(Failure::usage("--layers must be positive"));
        }
        // Generic layer names: one per encoder layer plus a non-encoder row.
        let mut names: Vec<String> = (0..layers).map(|i| format!("enc.{i}")).collect();
        names.push("non_encoder".to_string());
        let mut rules: Vec<(String, LayerClass)> = (0..layers)
            .map(|i| (format!("enc.{i}"), LayerClass::Encoder(i)))
            .collect();
        rules.push(("non_encoder".to_string(), LayerClass::NonEncoder));
        let rates = llrd_multipliers(&names, &LayerRule::new(rules), decay, layers)?;
        println!();
        print!("{}", multipliers_csv(&rates));
    } else if args.layers.is_some() {
        return Err(Failure::usage("--layers only makes sense with --llrd-decay"));
    }
    Ok(())
}
