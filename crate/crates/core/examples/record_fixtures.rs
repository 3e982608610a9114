//! Regenerates the mock-provider fixtures under `fixtures/earth_science/mock`.
//!
//! A scripted provider plays the model: it answers identification prompts
//! from a per-sentence table and filtering prompts from a per-audience set of
//! known terms. Every exchange of a general replay and of one personalized
//! replay per audience profile is recorded and written out as fixtures.
//!
//! The known-term set of each audience is an assumption of the fixture and
//! decides what the filter step keeps.
//!
//!     cargo run -p jargon-core --example record_fixtures

use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use async_trait::async_trait;
use jargon_core::eval::{run_replay_file, ReplayOptions};
use jargon_core::gateway::{
    ChatMessages, CompletionParams, CompletionProvider, FixtureEntry, Gateway, ProviderError,
    ProviderErrorKind, RecordingProvider, TermList,
};
use jargon_core::pipeline::{normalize_term, UserProfile};

const DEFINITIONS: [(&str, &str); 6] = [
    ("Benchmarking", "Comparing methods by running them on the same standard tests and scoring them."),
    ("Foundation Models", "Very large AI models trained on broad data that can be adapted to many different tasks."),
    ("Remote Sensing", "Collecting information about the Earth from a distance, usually with satellites or aircraft."),
    ("Pre-training", "A first round of training on large amounts of general data before a model is tuned for a specific task."),
    ("Satellite Data", "Images and measurements of the Earth captured by instruments on satellites."),
    ("Self-supervised Learning", "A way of training AI where the model learns from unlabeled data by predicting hidden parts of it."),
];

/// Terms the model names for each sentence, before session-level dedupe.
const SENTENCES: [(&str, &[&str]); 6] = [
    (
        "Today I will talk about deep learning for earth science.",
        &[],
    ),
    (
        "We started by benchmarking several foundation models on climate tasks.",
        &["Benchmarking", "Foundation Models"],
    ),
    (
        "Most of our inputs come from remote sensing, mainly satellite data from public missions.",
        &["Remote Sensing", "Satellite Data"],
    ),
    (
        "The key idea is pre-training on unlabeled imagery with self-supervised learning.",
        &["Pre-training", "Self-supervised Learning"],
    ),
    // The model repeats an earlier term; the pipeline must not define it twice.
    (
        "After that, the foundation models need only a small labeled set.",
        &["Foundation Models"],
    ),
    ("Thanks, and I am happy to take questions!", &[]),
];

/// Terms each audience is taken to know already.
const AUDIENCES: [(&str, &[&str]); 2] = [
    (
        "profile_ml_engineer.json",
        &["Benchmarking", "Pre-training", "Self-supervised Learning"],
    ),
    (
        "profile_earth_scientist.json",
        &["Benchmarking", "Remote Sensing", "Satellite Data"],
    ),
];

struct ScriptedModel {
    audiences: Vec<(String, Vec<String>)>,
}

impl ScriptedModel {
    fn definition(term: &str) -> &'static str {
        DEFINITIONS
            .iter()
            .find(|(t, _)| *t == term)
            .map(|(_, d)| *d)
            .expect("known term")
    }

    fn identify(&self, user: &str) -> Option<String> {
        let transcript = user
            .strip_prefix("Transcript: ")?
            .split(", Previously define terms: ")
            .next()?;
        let (_, terms) = SENTENCES.iter().find(|(s, _)| *s == transcript)?;
        let list = TermList::from_pairs(terms.iter().map(|t| (*t, Self::definition(t))));
        Some(list.to_prompt_json())
    }

    fn filter(&self, system: &str, user: &str) -> Option<String> {
        let (_, known) = self
            .audiences
            .iter()
            .find(|(bg, _)| system.contains(bg.as_str()))?;
        let items: Vec<serde_json::Map<String, serde_json::Value>> =
            serde_json::from_str(user).ok()?;
        let mut understood = Vec::new();
        let mut refined = Vec::new();
        for item in items {
            for (term, def) in item {
                if known
                    .iter()
                    .any(|k| normalize_term(k) == normalize_term(&term))
                {
                    understood.push(term);
                } else {
                    refined.push(serde_json::json!({ term: def }));
                }
            }
        }
        Some(
            serde_json::json!({"understood_terms": understood, "refined_glossary": refined})
                .to_string(),
        )
    }
}

#[async_trait]
impl CompletionProvider for ScriptedModel {
    async fn complete(
        &self,
        messages: &ChatMessages,
        _: &CompletionParams,
    ) -> Result<String, ProviderError> {
        let reply = if messages.system.starts_with("A previous agent") {
            self.filter(&messages.system, &messages.user)
        } else {
            self.identify(&messages.user)
        };
        reply.ok_or_else(|| {
            ProviderError::new(ProviderErrorKind::MalformedResponse, "unscripted prompt")
        })
    }
}

fn note_for(entry: &FixtureEntry) -> String {
    let system = entry.system.as_deref().unwrap_or_default();
    let user = entry.user.as_deref().unwrap_or_default();
    if let Some(rest) = system.split("The audience's background is \"").nth(1) {
        let background = rest
            .split("\". The input glossary")
            .next()
            .unwrap_or_default();
        format!("filter for \"{background}\": {user}")
    } else {
        let transcript = user
            .split(", Previously define terms")
            .next()
            .unwrap_or_default();
        format!("identify {transcript}")
    }
}

#[tokio::main(flavor = "current_thread")]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/earth_science");
    let transcript = dir.join("transcript.jsonl");

    let mut profiles = Vec::new();
    let mut audiences = Vec::new();
    for (file, known) in AUDIENCES {
        let profile: UserProfile = serde_json::from_str(&fs::read_to_string(dir.join(file))?)?;
        audiences.push((
            profile.background_text.clone(),
            known.iter().map(|s| s.to_string()).collect(),
        ));
        profiles.push(profile);
    }
    let recorder = Arc::new(RecordingProvider::new(Arc::new(ScriptedModel {
        audiences,
    })));
    let gateway = Gateway::new(recorder.clone());

    let general = run_replay_file(&transcript, &gateway, &ReplayOptions::general()).await?;
    println!("general: {} terms", general.term_count);
    for profile in profiles {
        let report =
            run_replay_file(&transcript, &gateway, &ReplayOptions::personalized(profile)).await?;
        println!("personalized: {} terms", report.term_count);
    }
    if gateway.stats().failures > 0 {
        return Err("scripted model was asked an unscripted prompt".into());
    }

    let mut entries = recorder.entries();
    for entry in &mut entries {
        entry.note = Some(note_for(entry));
    }
    let out = dir.join("mock/responses.json");
    fs::create_dir_all(out.parent().expect("has parent"))?;
    fs::write(&out, serde_json::to_string_pretty(&entries)? + "\n")?;
    println!("wrote {} fixtures to {}", entries.len(), out.display());
    Ok(())
}
