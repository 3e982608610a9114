//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `cargo test -p jargon-service --test acceptance`

mod common;

use std::collections::{HashMap, HashSet, VecDeque};
use std::future::Future;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use indexmap::IndexMap;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use serde_json::json;

use common::*;
use jargon_core::eval::{
    compare_modes, compute_helpful_rate, run_replay, Rating, RatingSheet, ReplayOptions,
};
use jargon_core::gateway::{
    parse_filter_result, parse_term_list, render_filter_prompt, render_identify_prompt,
    render_preferences, request_body, ChatMessages, CompletionParams, CompletionProvider, Gateway,
    OpenAiProvider, ProviderConfig, ProviderError, ProviderErrorKind, RetryPolicy, TermList,
};
use jargon_core::pipeline::{glossary_json, normalize_term, Mode, UserProfile};
use jargon_core::scheduler::{DisplayChange, DisplayState};
use jargon_service::protocol::{ClientMessage, ServerEvent};
use jargon_service::session::{Session, SessionSettings};
use jargon_service::SqliteStore;

const CASES: u32 = 1000;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

struct Criterion {
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn block_on<F: Future>(future: F) -> F::Output {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .unwrap()
        .block_on(future)
}

fn outcome(result: Result<String, String>) -> Outcome {
    match result {
        Ok(detail) => Outcome::Pass(detail),
        Err(detail) => Outcome::Fail(detail),
    }
}

fn ensure(cond: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(message())
    }
}

// ---------------------------------------------------------------- prompts

fn golden(name: &str) -> String {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/golden")
        .join(format!("{name}.golden"));
    std::fs::read_to_string(path).unwrap()
}

fn golden_prompts() -> Outcome {
    outcome((|| {
        let prefs = render_preferences(&["fno"], &[]);
        let identify =
            render_identify_prompt("We use remote sensing.", &["FNO", "remote sensing"], &prefs)
                .map_err(|e| e.to_string())?;
        ensure(identify.system == golden("identify_system"), || {
            "identify system prompt differs".into()
        })?;
        ensure(identify.user == golden("identify_user"), || {
            "identify user prompt differs".into()
        })?;
        ensure(identify.user.contains("Previously define terms: "), || {
            "wording lost".into()
        })?;

        let glossary = TermList::from_pairs([
            ("qubit", "The basic unit of quantum information."),
            (
                "FNO",
                "Fourier Neural Operator, a neural network that learns in frequency space.",
            ),
        ]);
        let filter = render_filter_prompt(
            "I am a quantum computing researcher and hold a Physics PhD.",
            &glossary,
        )
        .map_err(|e| e.to_string())?;
        ensure(filter.system == golden("filter_system"), || {
            "filter system prompt differs".into()
        })?;
        ensure(filter.user == golden("filter_user"), || {
            "filter user prompt differs".into()
        })?;
        ensure(
            filter.system.contains(r#"{"understood_terms": ["term1", "term2", ...], "refined_glossary": [{"term": "definition"}, ...]}"#),
            || "filter JSON shape lost".into(),
        )?;

        let body = request_body(&filter, &CompletionParams::default());
        ensure(body["temperature"].as_f64() == Some(0.1), || {
            format!("temperature {}", body["temperature"])
        })?;
        ensure(body["max_tokens"].as_u64() == Some(1000), || {
            format!("max_tokens {}", body["max_tokens"])
        })?;
        Ok("4 prompts byte-identical; temperature 0.1, max_tokens 1000".into())
    })())
}

// ---------------------------------------------------------------- once-only

const VOCAB: [&str; 8] = [
    "FNO",
    "remote sensing",
    "Lidar",
    "pre-training",
    "GPU",
    "transformer",
    "Satellite Data",
    "self-supervised learning",
];

fn spelling(idx: usize, style: u8) -> String {
    let base = VOCAB[idx];
    match style % 4 {
        0 => base.to_string(),
        1 => base.to_uppercase(),
        2 => format!(" {}  ", base.replace(' ', "  ")),
        _ => base
            .chars()
            .enumerate()
            .map(|(i, c)| {
                if i % 2 == 0 {
                    c.to_ascii_uppercase()
                } else {
                    c
                }
            })
            .collect(),
    }
}

/// Identify replies come from a queue; filter replies keep input terms by bitmask.
struct Scripted {
    identify: Mutex<VecDeque<Option<String>>>,
    masks: Mutex<VecDeque<u32>>,
}

#[async_trait]
impl CompletionProvider for Scripted {
    async fn complete(
        &self,
        messages: &ChatMessages,
        _: &CompletionParams,
    ) -> Result<String, ProviderError> {
        let failure = || ProviderError::new(ProviderErrorKind::Transport, "injected");
        if messages.system.starts_with("A previous agent") {
            let mask = self.masks.lock().unwrap().pop_front().unwrap_or(u32::MAX);
            let input = parse_term_list(&messages.user).unwrap();
            let (mut understood, mut refined) = (Vec::new(), Vec::new());
            for (i, pair) in input.iter().enumerate() {
                if mask & (1 << (i % 32)) != 0 {
                    refined.push(json!({ pair.term.clone(): "rewritten" }));
                } else {
                    understood.push(pair.term.clone());
                }
            }
            Ok(json!({"understood_terms": understood, "refined_glossary": refined}).to_string())
        } else {
            self.identify
                .lock()
                .unwrap()
                .pop_front()
                .unwrap_or(Some("[]".into()))
                .ok_or_else(failure)
        }
    }
}

/// Chunk texts, identify replies (`None` fails the call), filter masks, personalized.
type OnceOnlyCase = (Vec<String>, Vec<Option<Vec<(usize, u8)>>>, Vec<u32>, bool);

fn once_only_case() -> impl Strategy<Value = OnceOnlyCase> {
    let chunk = prop::collection::vec(
        prop_oneof![
            "[a-z]{1,7}".prop_map(String::from),
            Just("FNO".to_string()),
            Just("remote sensing".to_string()),
            Just(".".to_string()),
            Just("?".to_string()),
            Just(" ".to_string()),
        ],
        0..6,
    )
    .prop_map(|p| p.join(" "));
    let reply = prop_oneof![
        1 => Just(None),
        8 => prop::collection::vec((0..VOCAB.len(), any::<u8>()), 0..5).prop_map(Some),
    ];
    (
        prop::collection::vec(chunk, 1..16),
        prop::collection::vec(reply, 0..16),
        prop::collection::vec(any::<u32>(), 16),
        any::<bool>(),
    )
}

fn once_only() -> Outcome {
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .unwrap();
    let mut runner = TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    });
    let result = runner.run(
        &once_only_case(),
        |(chunks, replies, masks, personalized)| {
            let identify = replies
                .iter()
                .map(|r| {
                    r.as_ref().map(|terms| {
                        TermList::from_pairs(
                            terms
                                .iter()
                                .map(|(i, s)| (spelling(*i, *s), format!("about {}", VOCAB[*i]))),
                        )
                        .to_prompt_json()
                    })
                })
                .collect();
            let gateway = Gateway::new(Arc::new(Scripted {
                identify: Mutex::new(identify),
                masks: Mutex::new(masks.into()),
            }))
            .with_retry(RetryPolicy::no_retry());
            let profile = if personalized {
                UserProfile::with_background("I build ML systems.")
            } else {
                UserProfile::default()
            };
            let mut session = Session::new(
                "p".into(),
                0,
                profile,
                SessionSettings {
                    min_display_ms: 7000,
                    silence_flush_ms: 5000,
                },
            );
            let mut announced = Vec::new();
            rt.block_on(async {
                for (i, text) in chunks.iter().enumerate() {
                    let t = i as u64 * 1700;
                    let out = session
                        .handle(ClientMessage::caption(text.clone(), t), &gateway, t)
                        .await
                        .unwrap();
                    announced.extend(out.into_iter().filter_map(|m| match m.event {
                        ServerEvent::NewTerm(e) => Some(e.key),
                        _ => None,
                    }));
                }
                let out = session
                    .handle(ClientMessage::end_session(), &gateway, 100_000)
                    .await
                    .unwrap();
                announced.extend(out.into_iter().filter_map(|m| match m.event {
                    ServerEvent::NewTerm(e) => Some(e.key),
                    _ => None,
                }));
            });
            let export = session.export();
            let keys: Vec<String> = export
                .glossary
                .iter()
                .map(|r| normalize_term(&r.term))
                .collect();
            let distinct: HashSet<&String> = keys.iter().collect();
            prop_assert_eq!(distinct.len(), keys.len(), "duplicate key in {:?}", keys);
            prop_assert_eq!(&announced, &keys);
            Ok(())
        },
    );
    match result {
        Ok(()) => Outcome::Pass(format!("{CASES} cases, no duplicate normalized keys")),
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

// ---------------------------------------------------------------- filter partition

#[derive(Debug, Clone)]
struct FilterCase {
    input: Vec<(usize, String)>,
    understood: Vec<(usize, u8)>,
    refined: Vec<(usize, u8, String)>,
    invented: Vec<String>,
    wrapper: u8,
    drop_key: u8,
}

fn filter_case() -> impl Strategy<Value = FilterCase> {
    (
        prop::sample::subsequence((0..VOCAB.len()).collect::<Vec<_>>(), 1..=VOCAB.len()),
        prop::collection::vec("[ -~]{1,40}", VOCAB.len()),
        prop::collection::vec((0..VOCAB.len(), any::<u8>()), 0..10),
        prop::collection::vec((0..VOCAB.len(), any::<u8>(), "[ -~]{0,20}"), 0..10),
        prop::collection::vec("[A-Z][a-z]{2,9}", 0..3),
        any::<u8>(),
        any::<u8>(),
    )
        .prop_map(
            |(idx, defs, understood, refined, invented, wrapper, drop_key)| FilterCase {
                input: idx
                    .into_iter()
                    .map(|i| (i, format!("d{i} {}", defs[i].trim())))
                    .collect(),
                understood,
                refined,
                invented,
                wrapper,
                drop_key,
            },
        )
}

fn render_filter_response(case: &FilterCase) -> String {
    let mut understood: Vec<serde_json::Value> = case
        .understood
        .iter()
        .map(|(i, s)| json!(spelling(*i, *s)))
        .collect();
    let mut refined: Vec<serde_json::Value> = case
        .refined
        .iter()
        .map(|(i, s, d)| json!({ spelling(*i, *s): d }))
        .collect();
    for (n, name) in case.invented.iter().enumerate() {
        if n % 2 == 0 {
            understood.push(json!(name));
        } else {
            refined.push(json!({ name.clone(): "invented" }));
        }
    }
    let mut object = serde_json::Map::new();
    if case.drop_key % 5 != 1 {
        object.insert("understood_terms".into(), understood.into());
    }
    if case.drop_key % 5 != 2 {
        object.insert("refined_glossary".into(), refined.into());
    }
    if object.is_empty() {
        object.insert("understood_terms".into(), json!([]));
    }
    let body = serde_json::Value::Object(object).to_string();
    match case.wrapper % 4 {
        0 => body,
        1 => format!("```json\n{body}\n```"),
        2 => format!("Here is the result: {body} Hope this helps."),
        _ => format!("[note] {{oops}} {body}"),
    }
}

fn filter_partition() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    });
    let result = runner.run(&filter_case(), |case| {
        let input = TermList::from_pairs(case.input.iter().map(|(i, d)| (VOCAB[*i], d.clone())));
        let raw = render_filter_response(&case);
        let result = parse_filter_result(&raw, &input)
            .map_err(|e| TestCaseError::fail(format!("{e} for {raw}")))?;
        let defs: HashMap<&str, &str> = input
            .iter()
            .map(|p| (p.term.as_str(), p.definition.as_str()))
            .collect();
        let mut seen = HashSet::new();
        for term in &result.understood_terms {
            prop_assert!(
                defs.contains_key(term.as_str()),
                "invented understood {}",
                term
            );
            prop_assert!(seen.insert(term.clone()), "{} placed twice", term);
        }
        for pair in result.refined_glossary.iter() {
            prop_assert_eq!(
                defs.get(pair.term.as_str()).copied(),
                Some(pair.definition.as_str())
            );
            prop_assert!(seen.insert(pair.term.clone()), "{} placed twice", pair.term);
        }
        prop_assert_eq!(seen.len(), input.len());
        Ok(())
    });
    match result {
        Ok(()) => Outcome::Pass(format!(
            "{CASES} cases, always a partition with input definitions"
        )),
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

// ---------------------------------------------------------------- scheduler

const MIN_DISPLAY_MS: u64 = 7000;
const TICK_MS: u64 = 250;

fn scheduler_timing() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    });
    let gaps = prop::collection::vec(0u64..20_000, 1..25);
    let result = runner.run(&gaps, |gaps| {
        let mut state = DisplayState::new(MIN_DISPLAY_MS);
        let mut pushes: Vec<(String, u64)> = Vec::new();
        let mut timeline: Vec<DisplayChange> = Vec::new();
        let mut clock = 0u64;
        let mut t = 0u64;
        for (i, gap) in gaps.iter().enumerate() {
            t += gap;
            while clock + TICK_MS <= t {
                clock += TICK_MS;
                timeline.extend(state.tick(clock));
            }
            let key = format!("k{i}");
            pushes.push((key.clone(), t));
            timeline.extend(state.push_term(key, t).unwrap());
        }
        let deadline = t + (pushes.len() as u64 + 1) * (MIN_DISPLAY_MS + TICK_MS);
        while state.queue_depth() > 0 && clock < deadline {
            clock += TICK_MS;
            timeline.extend(state.tick(clock));
        }

        let shown: Vec<&str> = timeline.iter().map(|c| c.key.as_str()).collect();
        let pushed: Vec<&str> = pushes.iter().map(|(k, _)| k.as_str()).collect();
        prop_assert_eq!(&shown, &pushed, "FIFO order or starvation");
        for (i, pair) in timeline.windows(2).enumerate() {
            let held = pair[1].shown_at_ms - pair[0].shown_at_ms;
            prop_assert!(held >= MIN_DISPLAY_MS, "{} held {}ms", pair[0].key, held);
            let pushed_at = pushes[i + 1].1;
            let eligible = pushed_at.max(pair[0].shown_at_ms + MIN_DISPLAY_MS);
            prop_assert!(
                pair[1].shown_at_ms <= eligible + TICK_MS,
                "{} shown at {} though eligible at {}",
                pair[1].key,
                pair[1].shown_at_ms,
                eligible
            );
        }
        Ok(())
    });
    match result {
        Ok(()) => Outcome::Pass(format!(
            "{CASES} cases, hold >= {MIN_DISPLAY_MS}ms, promotion within {TICK_MS}ms, FIFO, no starvation"
        )),
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

// ---------------------------------------------------------------- table 6

fn fixture_replay() -> Outcome {
    block_on(async {
        let gateway = mock_gateway();
        let records = transcript();
        let general = run_replay("transcript", &records, &gateway, &ReplayOptions::general()).await;
        let personal = run_replay(
            "transcript",
            &records,
            &gateway,
            &ReplayOptions::personalized(profile("profile_ml_engineer.json")),
        )
        .await;
        outcome((|| {
            let general = general.map_err(|e| e.to_string())?;
            let personal = personal.map_err(|e| e.to_string())?;
            let terms: Vec<&str> = personal.glossary.iter().map(|r| r.term.as_str()).collect();
            ensure(personal.term_count < general.term_count, || {
                format!(
                    "{} personalized vs {} general",
                    personal.term_count, general.term_count
                )
            })?;
            for keep in ["Remote Sensing", "Satellite Data"] {
                ensure(terms.contains(&keep), || {
                    format!("{keep} missing from {terms:?}")
                })?;
            }
            for drop in ["Pre-training", "Self-supervised Learning"] {
                ensure(!terms.contains(&drop), || {
                    format!("{drop} retained in {terms:?}")
                })?;
            }
            let diff = compare_modes(&general, &personal).map_err(|e| e.to_string())?;
            ensure(diff.anomalies.is_empty(), || {
                format!("anomalies {:?}", diff.anomalies)
            })?;
            Ok(format!(
                "general {} terms, personalized {} {:?}, 0 anomalies",
                general.term_count, personal.term_count, terms
            ))
        })())
    })
}

// ---------------------------------------------------------------- helpful rate

fn sheet(session: &str, helpful: usize, not: usize) -> RatingSheet {
    let ratings: IndexMap<String, Rating> = (0..helpful)
        .map(|i| (format!("h{i}"), Rating::Helpful))
        .chain((0..not).map(|i| (format!("n{i}"), Rating::NotHelpful)))
        .collect();
    RatingSheet {
        session: session.into(),
        ratings,
    }
}

fn helpful_rate() -> Outcome {
    outcome((|| {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
        let one = compute_helpful_rate(&[sheet("a", 2, 1)]).map_err(|e| e.to_string())?;
        ensure(
            close(one.macro_rate, 2.0 / 3.0) && close(one.micro_rate, 2.0 / 3.0),
            || {
                format!(
                    "single sheet macro {} micro {}",
                    one.macro_rate, one.micro_rate
                )
            },
        )?;
        let two = compute_helpful_rate(&[sheet("a", 1, 1), sheet("b", 4, 0)])
            .map_err(|e| e.to_string())?;
        ensure(close(two.macro_rate, 0.75), || {
            format!("macro {}", two.macro_rate)
        })?;
        ensure(close(two.micro_rate, 5.0 / 6.0), || {
            format!("micro {}", two.micro_rate)
        })?;
        ensure(
            two.note.contains("10.29/22.57")
                && two.note.contains("0.456")
                && two.note.contains("47.03%"),
            || format!("note lacks reference figures: {}", two.note),
        )?;
        println!("      note: {}", two.note);
        Ok(format!(
            "[2/3] -> {:.4}/{:.4}; [0.5, 1.0] sizes [2, 4] -> macro {:.4}, micro {:.4}",
            one.macro_rate, one.micro_rate, two.macro_rate, two.micro_rate
        ))
    })())
}

// ---------------------------------------------------------------- end to end

async fn e2e_run(dir: &std::path::Path) -> Result<(String, String, u64), String> {
    let store = Arc::new(SqliteStore::open(db_path(dir)).map_err(|e| e.to_string())?);
    let server = Server::start(store, REPLAY_SETTINGS).await;
    let created = server
        .create(json!({"profile": profile("profile_ml_engineer.json")}))
        .await;
    let records = transcript();
    ensure(records.len() == 20, || {
        format!("fixture has {} chunks", records.len())
    })?;
    let messages = stream_transcript(&server, &created.session_id, &records).await;
    ensure(is_gapless(&messages), || {
        "server sequence numbers have gaps".into()
    })?;
    ensure(
        matches!(
            messages.last().map(|m| &m.event),
            Some(ServerEvent::SessionEnded { .. })
        ),
        || "stream did not end".into(),
    )?;
    let export = server.export(&created.session_id).await;
    server.stop().await;
    ensure(!export.glossary.is_empty(), || "empty glossary".into())?;
    Ok((
        created.session_id,
        glossary_json(&export.glossary),
        messages.len() as u64,
    ))
}

fn end_to_end() -> Outcome {
    block_on(async {
        let result: Result<String, String> = async {
            let first_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let second_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let (id, first, count) = e2e_run(first_dir.path()).await?;
            let (_, second, _) = e2e_run(second_dir.path()).await?;
            ensure(first == second, || format!("exports differ:\n{first}\n---\n{second}"))?;

            let store = Arc::new(SqliteStore::open(db_path(first_dir.path())).map_err(|e| e.to_string())?);
            let restarted = Server::start(store, REPLAY_SETTINGS).await;
            let after = restarted.export(&id).await;
            restarted.stop().await;
            ensure(glossary_json(&after.glossary) == first, || "export changed across restart".into())?;
            ensure(after.status == jargon_service::SessionStatus::Ended, || "status lost".into())?;
            ensure(after.mode == Mode::Personalized, || "mode lost".into())?;
            Ok(format!(
                "2 runs x 20 chunks, {count} gapless messages each, {} byte export identical, restart round-trip equal",
                first.len()
            ))
        }
        .await;
        outcome(result)
    })
}

// ---------------------------------------------------------------- live

fn live_provider() -> Outcome {
    block_on(async {
        let Some(config) = ProviderConfig::from_env() else {
            return Outcome::Skip("no provider key in the environment".into());
        };
        let params = match &config.model_name {
            Some(model) => CompletionParams::with_model(model.clone()),
            None => CompletionParams::default(),
        };
        let gateway = Gateway::new(Arc::new(OpenAiProvider::new(config))).with_params(params);
        let records = transcript();
        let mut smaller = 0;
        let mut counts = Vec::new();
        for _ in 0..5 {
            let general =
                run_replay("transcript", &records, &gateway, &ReplayOptions::general()).await;
            let personal = run_replay(
                "transcript",
                &records,
                &gateway,
                &ReplayOptions::personalized(profile("profile_ml_engineer.json")),
            )
            .await;
            match (general, personal) {
                (Ok(g), Ok(p)) => {
                    counts.push((g.term_count, p.term_count));
                    if p.term_count < g.term_count {
                        smaller += 1;
                    }
                }
                (Err(e), _) | (_, Err(e)) => return Outcome::Fail(e.to_string()),
            }
        }
        let detail = format!("{smaller}/5 runs smaller; (general, personalized) = {counts:?}");
        if smaller >= 4 {
            Outcome::Pass(detail)
        } else {
            Outcome::Fail(detail)
        }
    })
}

fn main() {
    let criteria = [
        Criterion {
            name: "golden prompts and sampling parameters",
            limit: Duration::from_secs(1),
            run: golden_prompts,
        },
        Criterion {
            name: "once-only glossary invariant",
            limit: Duration::from_secs(30),
            run: once_only,
        },
        Criterion {
            name: "filter partition invariant",
            limit: Duration::from_secs(30),
            run: filter_partition,
        },
        Criterion {
            name: "scheduler timing",
            limit: Duration::from_secs(30),
            run: scheduler_timing,
        },
        Criterion {
            name: "personalization fixture replay",
            limit: Duration::from_secs(10),
            run: fixture_replay,
        },
        Criterion {
            name: "helpful-rate arithmetic",
            limit: Duration::from_secs(1),
            run: helpful_rate,
        },
        Criterion {
            name: "end-to-end determinism and restart",
            limit: Duration::from_secs(30),
            run: end_to_end,
        },
        Criterion {
            name: "live provider personalization (optional)",
            limit: Duration::from_secs(600),
            run: live_provider,
        },
    ];
    let mut failed = 0;
    for criterion in &criteria {
        let started = Instant::now();
        let result = (criterion.run)();
        let elapsed = started.elapsed();
        let (label, detail) = match result {
            Outcome::Pass(d) if elapsed <= criterion.limit => ("PASS", d),
            Outcome::Pass(d) => (
                "FAIL",
                format!("{d}; took longer than {:?}", criterion.limit),
            ),
            Outcome::Fail(d) => ("FAIL", d),
            Outcome::Skip(d) => ("SKIP", d),
        };
        if label == "FAIL" {
            failed += 1;
        }
        println!(
            "{label} {} ({:.2}s): {detail}",
            criterion.name,
            elapsed.as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {} criteria failed",
        failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
