//! Two synthetic cohorts, a human-format cohort and an embedding baseline,
//! compared in one report.

use std::fmt::Write as _;

use repalign::backend::random_latent;
use repalign::cohort::TaskKind;
use repalign::pipeline::{
    cmd_analyze, cmd_baseline, cmd_ingest_human, cmd_run, AnalyzeOptions, BaselineOptions, CohortSpec,
    ExperimentConfig, IngestOptions, LatentSource, SystemInput, SystemSource,
};
use repalign::viz::{write_text, TsneParams};

fn main() -> repalign::Result<()> {
    let root = std::env::temp_dir().join("repalign-example-analysis");
    let _ = std::fs::remove_dir_all(&root);
    let stimuli = concat!(env!("CARGO_MANIFEST_DIR"), "/data/stimuli.tsv");
    let items: Vec<String> = repalign::corpus::StimulusSet::builtin().ids().into_iter().step_by(4).take(12).collect();

    let truth = random_latent(&items, 4, 5);
    let truth_path = root.join("truth.csv");
    truth.save_csv(&truth_path)?;

    let mut systems = Vec::new();
    for (name, offset, noise) in [("consistent", 1.0, 2.0), ("variable", 10.0, 12.0)] {
        let cohort = CohortSpec {
            surnames: vec!["Olson".into(), "Garcia".into(), "Nguyen".into()],
            honorifics: vec![repalign::cohort::Honorific::Ms, repalign::cohort::Honorific::Mr],
            anonymous_repeats: None,
        };
        let mut cfg = ExperimentConfig::new(stimuli, TaskKind::WordWord, cohort, root.join(name));
        cfg.items = Some(items.clone());
        cfg.synthetic.latent = LatentSource::DsmFile { path: truth_path.clone() };
        cfg.synthetic.persona_offset_scale = offset;
        cfg.synthetic.noise_scale = noise;
        cmd_run(&cfg)?;
        systems.push(SystemInput::new(name, SystemSource::Run(root.join(name))));
    }

    // human-format slider ratings (0-50), one order per pair
    let mut csv = String::from("participant,item_a,item_b,raw_0_50\n");
    for p in 0..3 {
        for i in 0..items.len() {
            for j in (i + 1)..items.len() {
                let d = truth.get(i, j).unwrap_or(0.5);
                let raw = (50.0 * (1.0 - d) + ((i * 7 + j * 3 + p * 5) % 9) as f64 - 4.0).clamp(0.0, 50.0);
                let _ = writeln!(csv, "p{p},{},{},{raw:.0}", items[i], items[j]);
            }
        }
    }
    let ratings = root.join("human.csv");
    write_text(&ratings, &csv)?;
    cmd_ingest_human(&IngestOptions {
        ratings,
        labels: Some(items.clone()),
        out_dir: root.join("human"),
    })?;
    systems.push(SystemInput::new("human", SystemSource::Cohort(root.join("human"))));

    let mut vectors = String::new();
    for (k, item) in items.iter().enumerate() {
        let _ = writeln!(vectors, "{item} {} {} {}", 1.0 + k as f64 % 3.0, 0.5 + (k % 4) as f64, 2.0 - (k % 2) as f64);
    }
    let vec_path = root.join("vectors.txt");
    write_text(&vec_path, &vectors)?;
    cmd_baseline(&BaselineOptions {
        embeddings: vec_path,
        format: None,
        labels: items.clone(),
        out: root.join("embedding.csv"),
        strict: true,
    })?;
    systems.push(SystemInput::new("embedding", SystemSource::Dsm(root.join("embedding.csv"))));

    let mut opts = AnalyzeOptions::new(systems, root.join("report"));
    opts.stimuli = Some(stimuli.into());
    opts.tsne = Some(TsneParams {
        perplexity: 5.0,
        max_iter: 1000,
        ..TsneParams::default()
    });
    let report = cmd_analyze(&opts)?;
    print!("{}", report.to_markdown());
    println!("wrote {}", root.join("report").display());
    Ok(())
}
