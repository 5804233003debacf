//! One rating trial against an OpenAI-compatible endpoint.
//!
//! Needs `REPALIGN_ENDPOINT` (e.g. `https://api.openai.com/v1/chat/completions`)
//! and, unless the server is open, `OPENAI_API_KEY`. `REPALIGN_MODEL` picks
//! the model.

use repalign::backend::{BackendConfig, BackendKind, ChatBackend, ChatMessage, ChatRequest, HttpBackend, RequestMeta};
use repalign::cohort::{render_intro, render_trial, Honorific, Identity, Payload, TaskKind};
use repalign::parse::extract_rating;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let Ok(endpoint) = std::env::var("REPALIGN_ENDPOINT") else {
        println!("set REPALIGN_ENDPOINT to run this example");
        return Ok(());
    };
    let cfg = BackendConfig {
        kind: BackendKind::Http,
        endpoint: Some(endpoint),
        model: std::env::var("REPALIGN_MODEL").unwrap_or_else(|_| "gpt-4o".into()),
        api_key_env: std::env::var("OPENAI_API_KEY").ok().map(|_| "OPENAI_API_KEY".into()),
        ..BackendConfig::default()
    };
    let backend = HttpBackend::from_config(&cfg)?;

    let who = Identity::named(Honorific::Dr, "Olson", 0);
    let payload = Payload::WordPair("garlic".into(), "radish".into());
    let trial = render_trial(TaskKind::WordWord, &who, &payload)?;
    let request = ChatRequest {
        messages: vec![
            ChatMessage::user(render_intro(TaskKind::WordWord, &who)),
            ChatMessage::user(trial.text),
        ],
        temperature: 0.7,
        max_tokens: Some(10),
        meta: RequestMeta {
            identity: who,
            task: TaskKind::WordWord,
            trial_index: 0,
            item_ids: vec!["garlic".into(), "radish".into()],
            payload,
        },
    };
    let reply = backend.send(&request)?;
    let parsed = extract_rating(&reply.text);
    println!("{:?} -> {:?} ({:?}), {} retries", reply.text, parsed.rating, parsed.compliance, reply.retries);
    Ok(())
}
