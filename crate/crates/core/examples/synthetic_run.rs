//! A resumable experiment against the synthetic rater, then the usage report.

use repalign::cohort::TaskKind;
use repalign::pipeline::{cmd_report, cmd_run, CohortSpec, ExperimentConfig};

fn main() -> repalign::Result<()> {
    let out = std::env::temp_dir().join("repalign-example-run");
    let stimuli = concat!(env!("CARGO_MANIFEST_DIR"), "/data/stimuli.tsv");
    let cohort = CohortSpec {
        surnames: vec![],
        honorifics: vec![],
        anonymous_repeats: Some(4),
    };
    let mut cfg = ExperimentConfig::new(stimuli, TaskKind::WordWord, cohort, &out);
    cfg.items = Some(["hand", "ear", "dog", "cow", "house", "chair"].iter().map(|s| s.to_string()).collect());
    cfg.temperatures = vec![0.7, 1.5];
    cfg.synthetic.noncompliance_rate = 0.02;
    cfg.base_seed = 1;
    cfg.validate()?;

    let first = cmd_run(&cfg)?;
    println!("first pass: {} requests, complete {}", first.new_requests, first.complete);
    let again = cmd_run(&cfg)?;
    println!("resumed: {} new requests", again.new_requests);

    let report = cmd_report(&out, None)?;
    print!("{}", report.to_markdown());
    Ok(())
}
