//! Build a named cohort and render each task's prompts for one participant.

use std::path::PathBuf;

use repalign::cohort::{build_cohort, render_intro, render_trial, Honorific, ImageRef, Payload, TaskKind};

fn main() -> repalign::Result<()> {
    let surnames = vec!["Olson".to_string(), "Garcia".to_string()];
    let cohort = build_cohort(&surnames, &[Honorific::Ms, Honorific::Dr], None, 7)?;
    println!("cohort: {}", cohort.iter().map(|c| c.key.as_str()).collect::<Vec<_>>().join(", "));

    let who = &cohort[0];
    let anon = &build_cohort(&[], &[], Some(1), 7)?[0];
    let image = |id: &str| ImageRef {
        id: id.into(),
        path: PathBuf::from(format!("{id}.jpg")),
    };
    let samples = [
        (TaskKind::WordWord, Payload::WordPair("dog".into(), "cat".into())),
        (TaskKind::ImageImage, Payload::ImagePair(image("dog"), image("cat"))),
        (TaskKind::ImageDescription, Payload::Describe(image("dog"))),
        (
            TaskKind::WordSentenceRating,
            Payload::WordSentence {
                sentence: "The dog slept by the fire.".into(),
                word: "cat".into(),
            },
        ),
    ];
    for (task, payload) in &samples {
        println!("== {} ==", task.name());
        println!("intro: {}", render_intro(*task, who));
        println!("anonymous intro: {}", render_intro(*task, anon));
        let msg = render_trial(*task, who, payload)?;
        println!("trial: {} ({} images)", msg.text, msg.images.len());
    }
    Ok(())
}
