use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::executor::{EpisodeLog, ExecError, GroundingSetup};
use crate::gsl::{GslProgram, IssueCode};
use crate::sim::tests::buttons3;
use crate::sim::{self, TaskSpec};

const ORDERED: &str = include_str!("../../../../fixtures/gsl/ordered_buttons.gsl");

fn fenced(src: &str) -> String {
    alloc::format!("Here is the guidance code.\n```\n{src}```\nNEXT: robotic_agent")
}

fn transcript(turns: &[(Agent, &str)]) -> Transcript {
    Transcript { turns: turns.iter().map(|(role, text)| TranscriptTurn { role: *role, text: text.to_string() }).collect() }
}

fn golden_turns() -> Vec<(Agent, String)> {
    vec![
        (
            Agent::Advisor,
            "Steps: press maroon, then green, then navy, each from above.\nCan you find the maroon button, the green button and the navy button?\nNEXT: perception_agent".into(),
        ),
        (
            Agent::Grounding,
            "in_the_image(\"maroon button\")\nin_the_image(\"green button\")\nin_the_image(\"navy button\")\nNEXT: perception_agent".into(),
        ),
        (Agent::Grounding, "All three buttons are visible. NEXT: supervisor_agent".into()),
        (Agent::Advisor, fenced(ORDERED)),
        (Agent::Robotic, "TERMINATE".into()),
    ]
}

fn owned(turns: &[(Agent, String)]) -> Transcript {
    Transcript { turns: turns.iter().map(|(role, text)| TranscriptTurn { role: *role, text: text.clone() }).collect() }
}

struct Fixture {
    task: TaskSpec,
    obs: crate::scene::Observation,
    grounding: GroundingSetup,
    prompts: Prompts,
}

fn fixture() -> Fixture {
    let task = buttons3();
    let (_, obs) = sim::reset(&task, 0).unwrap();
    Fixture { task, obs, grounding: GroundingSetup::default(), prompts: Prompts::default() }
}

impl Fixture {
    fn session(&self) -> Session<'_> {
        Session::new(&self.task, &self.obs, &self.grounding, &self.prompts)
    }
}

#[test]
fn routing_examples() {
    assert_eq!(route_message("...found the handle NEXT: supervisor_agent").route, Route::To(Agent::Advisor));
    assert_eq!(route_message("TERMINATE"), Routing { route: Route::Terminate, warning: None });
    let none = route_message("I found nothing of interest.");
    assert_eq!(none.route, Route::To(Agent::Advisor));
    assert!(none.warning.is_some());
}

#[test]
fn routing_details() {
    assert_eq!(route_message("in_the_image('door handle') -> no NEXT: perception agent").route, Route::To(Agent::Grounding));
    assert_eq!(route_message("Looks fine.\nNEXT: robotic_agent.").route, Route::To(Agent::Robotic));
    assert_eq!(route_message("NEXT: 'perception_agent'").route, Route::To(Agent::Grounding));
    assert_eq!(route_message("Done.\n\nTERMINATE\n\n").route, Route::Terminate);
    // Only the final line counts.
    assert_eq!(route_message("TERMINATE\nNEXT: robotic_agent").route, Route::To(Agent::Robotic));
    assert_eq!(route_message("NEXT: robotic_agent\nthanks").route, Route::To(Agent::Advisor));
    let unknown = route_message("NEXT: monitor_agent");
    assert_eq!(unknown.route, Route::To(Agent::Advisor));
    assert!(unknown.warning.unwrap().contains("monitor_agent"));
    assert!(route_message("NOT TERMINATED").warning.is_some());
}

#[test]
fn code_block_extraction() {
    let one = "plan\n```\n#gsl 1\nfn guidance(state, prev) { return (1, prev); }\n```\nNEXT: robotic_agent";
    assert_eq!(extract_code_block(one).unwrap(), "#gsl 1\nfn guidance(state, prev) { return (1, prev); }\n");

    let two = "```gsl\n#gsl 1\nlet a = 1;\n```\nrevised:\n```\n#gsl 1\nlet b = 2;\n```";
    assert_eq!(extract_code_block(two).unwrap(), "#gsl 1\nlet b = 2;\n");

    assert_eq!(extract_code_block("no code here"), None);
    assert_eq!(extract_code_block("```\nunterminated"), None);

    let headless = "```\nfn guidance(state, prev) { return (0, prev); }\n```";
    assert_eq!(extract_code_block(headless).unwrap(), "#gsl 1\nfn guidance(state, prev) { return (0, prev); }\n");
}

#[test]
fn tool_call_parsing() {
    let calls = conversation::parse_tool_calls(
        "in_the_image('door handle') -> no\nin_the_image(\"img.png\", 'handle', 'gate')\nmulti_granular_search(\"x\")\nsearch(\"knight\") in_the_image(handle)",
    );
    let got: Vec<(String, Vec<String>)> = calls.into_iter().map(|c| (c.name, c.args)).collect();
    assert_eq!(
        got,
        vec![
            ("in_the_image".to_string(), vec!["door handle".to_string()]),
            ("in_the_image".to_string(), vec!["img.png".into(), "handle".into(), "gate".into()]),
            ("search".to_string(), vec!["knight".to_string()]),
        ]
    );
}

#[test]
fn scripted_backend_plays_back_per_role() {
    let t = transcript(&[(Agent::Advisor, "plan A"), (Agent::Robotic, "TERMINATE"), (Agent::Advisor, "plan B")]);
    let mut b = ScriptedBackend::new(&t);
    assert_eq!(b.complete(Agent::Advisor, &[]).unwrap(), "plan A");
    assert_eq!(b.complete(Agent::Advisor, &[]).unwrap(), "plan B");
    assert_eq!(b.complete(Agent::Robotic, &[]).unwrap(), "TERMINATE");
    assert_eq!(b.complete(Agent::Advisor, &[]), Err(BackendError::TranscriptExhausted { agent: Agent::Advisor, turn: 2 }));
    assert_eq!(b.complete(Agent::Monitor, &[]), Err(BackendError::TranscriptExhausted { agent: Agent::Monitor, turn: 0 }));
    assert_eq!(b.requests.len(), 3);
}

#[test]
fn backend_config_fixes_sampling() {
    let cfg = BackendConfig::default();
    assert_eq!(cfg.temperature, 0.0);
    assert_eq!(cfg.max_tokens, 2000);
    assert_eq!(cfg.retries, 3);
    assert_eq!(cfg.backoff_base_ms, 1000);
    let hot = BackendConfig { temperature: 0.7, transcript: Some("t.toml".into()), ..BackendConfig::default() };
    assert!(hot.validate().is_err());
    let http = BackendConfig { kind: BackendKind::Http, ..BackendConfig::default() };
    assert!(http.validate().is_err());
}

#[test]
fn prompts_carry_the_amendment() {
    let p = Prompts::default();
    for role in [Agent::Advisor, Agent::Grounding, Agent::Robotic] {
        let s = p.system_prompt(role);
        assert!(s.starts_with(p.base(role)));
        assert!(s.ends_with(GSL_AMENDMENT));
    }
    assert_eq!(p.system_prompt(Agent::Monitor), p.monitor);
    assert_eq!(p.role(Agent::Grounding).tools, vec![Tool::InTheImage]);
    assert!(p.role(Agent::Advisor).tools.is_empty());
}

#[test]
fn golden_session_terminates_with_a_valid_program() {
    let f = fixture();
    let mut backend = ScriptedBackend::new(&owned(&golden_turns()));
    let (prog, state) = generate_guidance_function(&f.task.task.instruction, &f.session(), None, &mut backend).unwrap();
    assert_eq!(prog.source, ORDERED);
    assert!(state.terminated());
    assert_eq!(state.turn, 5);
    assert!(state.turn <= DEFAULT_TURN_BUDGET);
    assert_eq!(
        state.routes(),
        vec![
            (Agent::Advisor, Route::To(Agent::Grounding)),
            (Agent::Grounding, Route::To(Agent::Grounding)),
            (Agent::Grounding, Route::To(Agent::Advisor)),
            (Agent::Advisor, Route::To(Agent::Robotic)),
            (Agent::Robotic, Route::Terminate),
        ]
    );
    assert!(state.artifacts.queries.iter().all(|q| q.found));
    assert_eq!(state.artifacts.queries.len(), 3);
    assert_eq!(state.artifacts.sources.len(), 1);
    assert!(state.artifacts.reports[0].ok, "{}", state.artifacts.reports[0]);
    assert!(state.artifacts.warnings.is_empty());

    // Robotic saw the validator output before answering.
    let (agent, msgs) = backend.requests.last().unwrap();
    assert_eq!(*agent, Agent::Robotic);
    assert!(msgs.last().unwrap().content.contains("test_guidance_code_format()"));
    assert!(msgs.last().unwrap().content.contains("ok: true"));
    assert_eq!(msgs[0].role, ChatRole::System);
}

#[test]
fn every_non_final_message_routes_to_an_agent() {
    let f = fixture();
    let mut backend = ScriptedBackend::new(&owned(&golden_turns()));
    let (_, state) = generate_guidance_function(&f.task.task.instruction, &f.session(), None, &mut backend).unwrap();
    let n = state.messages.len();
    for (i, m) in state.messages.iter().enumerate() {
        if i + 1 < n {
            assert!(matches!(m.to, Route::To(_)), "message {i} routes to {:?}", m.to);
        }
    }
}

#[test]
fn wrong_shape_gets_one_critique_loop() {
    let f = fixture();
    let bad = "#gsl 1\nfn guidance(state, prev = {\"done\": false}) {\n    return (1.0, 2.0);\n}\n";
    let mut turns = golden_turns();
    turns.truncate(3);
    turns.push((Agent::Advisor, fenced(bad)));
    turns.push((Agent::Robotic, "The second return value must be the flag map. NEXT: supervisor_agent".into()));
    turns.push((Agent::Advisor, fenced(ORDERED)));
    turns.push((Agent::Robotic, "TERMINATE".into()));
    let mut backend = ScriptedBackend::new(&owned(&turns));
    let (prog, state) = generate_guidance_function(&f.task.task.instruction, &f.session(), None, &mut backend).unwrap();
    assert_eq!(prog.source, ORDERED);
    assert_eq!(state.artifacts.sources.len(), 2);
    assert!(state.artifacts.reports[0].issues.iter().any(|i| i.code == IssueCode::WrongReturnShape));
    assert!(state.artifacts.reports[1].ok);
    let critiques = state.routes().iter().filter(|r| **r == (Agent::Robotic, Route::To(Agent::Advisor))).count();
    assert_eq!(critiques, 1);
}

#[test]
fn missing_object_is_reported_before_coding() {
    let f = fixture();
    let turns = [
        (Agent::Advisor, "Can you find the red button and the green button? NEXT: perception_agent".to_string()),
        (Agent::Grounding, "search(\"red button\")\nin_the_image(\"green button\")\nNEXT: supervisor_agent".into()),
        (Agent::Advisor, "No red button; the first one is maroon. Can you find the maroon button? NEXT: perception_agent".into()),
        (Agent::Grounding, "in_the_image(\"maroon button\")\nin_the_image(\"navy button\")\nNEXT: supervisor_agent".into()),
        (Agent::Advisor, fenced(ORDERED)),
        (Agent::Robotic, "TERMINATE".into()),
    ];
    let mut backend = ScriptedBackend::new(&owned(&turns));
    let (prog, state) = generate_guidance_function(&f.task.task.instruction, &f.session(), None, &mut backend).unwrap();
    assert_eq!(state.artifacts.searches.len(), 1);
    assert!(!state.artifacts.searches[0].found());
    let tool_msgs: Vec<&str> = state.messages.iter().filter(|m| m.from == Speaker::Tool).map(|m| m.content.as_str()).collect();
    assert!(tool_msgs[0].contains("search(\"red button\") -> not_found"));
    assert!(tool_msgs[0].contains("in_the_image(\"green button\") -> yes"));
    assert!(!prog.referenced_objects().iter().any(|o| o.contains("red")));
}

#[test]
fn budget_exhaustion_without_code_is_a_protocol_failure() {
    let f = fixture();
    let chatter: Vec<(Agent, String)> = (0..30)
        .flat_map(|_| {
            [
                (Agent::Advisor, "Where is it? NEXT: perception_agent".to_string()),
                (Agent::Grounding, "Still looking. NEXT: supervisor_agent".to_string()),
            ]
        })
        .collect();
    let mut backend = ScriptedBackend::new(&owned(&chatter));
    let err = generate_guidance_function("press", &f.session(), None, &mut backend).unwrap_err();
    assert_eq!(err, AgentError::ProtocolFailure { reason: "turn budget exhausted without a validated program".into(), turns: 20 });
    assert_eq!(backend.requests.len(), 20);
}

#[test]
fn budget_exhaustion_keeps_the_latest_valid_program() {
    let f = fixture();
    let mut turns = vec![(Agent::Advisor, fenced(ORDERED))];
    for _ in 0..20 {
        turns.push((Agent::Robotic, "Could be better. NEXT: supervisor_agent".into()));
        turns.push((Agent::Advisor, "Thinking. NEXT: robotic_agent".into()));
    }
    let mut backend = ScriptedBackend::new(&owned(&turns));
    let mut session = f.session();
    session.turn_budget = 6;
    let (prog, state) = generate_guidance_function("press", &session, None, &mut backend).unwrap();
    assert_eq!(prog.source, ORDERED);
    assert_eq!(state.turn, 6);
    assert!(!state.terminated());
}

#[test]
fn terminate_without_valid_code_fails() {
    let f = fixture();
    let turns = [
        (Agent::Advisor, fenced("fn guidance(state, prev) { return (1.0, 2.0); }\n")),
        (Agent::Robotic, "TERMINATE".to_string()),
    ];
    let mut backend = ScriptedBackend::new(&owned(&turns));
    let err = generate_guidance_function("press", &f.session(), None, &mut backend).unwrap_err();
    assert!(matches!(err, AgentError::ProtocolFailure { turns: 2, .. }));
}

#[test]
fn missing_directive_routes_to_advisor_with_warning() {
    let f = fixture();
    let turns = [
        (Agent::Advisor, "Thinking about the plan.".to_string()),
        (Agent::Advisor, fenced(ORDERED)),
        (Agent::Robotic, "TERMINATE".into()),
    ];
    let mut backend = ScriptedBackend::new(&owned(&turns));
    let (_, state) = generate_guidance_function("press", &f.session(), None, &mut backend).unwrap();
    assert_eq!(state.artifacts.warnings.len(), 1);
    assert_eq!(state.routes()[0], (Agent::Advisor, Route::To(Agent::Advisor)));
}

#[test]
fn scripted_sessions_are_deterministic() {
    let f = fixture();
    let run = || {
        let mut backend = ScriptedBackend::new(&owned(&golden_turns()));
        let (p, s) = generate_guidance_function("press", &f.session(), Some("be careful"), &mut backend).unwrap();
        (p.source, s, backend.requests)
    };
    assert_eq!(run(), run());
}

#[test]
fn feedback_is_a_labelled_user_turn() {
    let f = fixture();
    let mut backend = ScriptedBackend::new(&owned(&golden_turns()));
    let (_, state) = generate_guidance_function("press", &f.session(), Some("approach from above"), &mut backend).unwrap();
    assert_eq!(state.messages[1].from, Speaker::User);
    assert_eq!(state.messages[1].content, "monitor feedback:\napproach from above");
    assert_eq!(state.artifacts.feedback.as_deref(), Some("approach from above"));
    let first = &backend.requests[0].1;
    assert_eq!(first[2], ChatMessage::new(ChatRole::User, "monitor feedback:\napproach from above"));
}

// ---- keyframes ----

fn plateaus(seed: u64, per: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels = [0.0, 1.0, 2.0];
    let mut frames = Vec::new();
    for (c, level) in levels.iter().enumerate() {
        for _ in 0..per {
            frames.push(
                (0..dim)
                    .map(|j| if j % 3 == c { level * 1.0 } else { 0.0 } + level * 0.5 + rng.random_range(-0.05..0.05))
                    .collect(),
            );
        }
    }
    frames
}

#[test]
fn singleton_trajectory() {
    let set = extract_keyframes(&[vec![1.0, 2.0]], KeyframeParams::default()).unwrap();
    assert_eq!(set.indices, vec![0]);
    assert_eq!(extract_keyframes(&[], KeyframeParams::default()), Err(KeyframeError::EmptyTrajectory));
    assert!(matches!(
        extract_keyframes(&[vec![1.0], vec![1.0, 2.0]], KeyframeParams::default()),
        Err(KeyframeError::RaggedFrames { index: 1, .. })
    ));
}

#[test]
fn one_keyframe_per_plateau() {
    for seed in 0..20 {
        let frames = plateaus(seed, 10, 5);
        let set = extract_keyframes(&frames, KeyframeParams { k: 3, p: 8, seed }).unwrap();
        let plateau: Vec<usize> = set.indices.iter().map(|i| i / 10).collect();
        assert_eq!(plateau, vec![0, 1, 2], "seed {seed}: {:?}", set.indices);
    }
}

#[test]
fn full_rank_projection_preserves_distances() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let frames: Vec<Vec<f64>> = (0..15).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let y = pca_project(&frames, 2).unwrap();
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    for i in 0..frames.len() {
        for j in 0..frames.len() {
            assert!((d(&frames[i], &frames[j]) - d(&y[i], &y[j])).abs() < 1e-9);
        }
    }
}

/// Global SSE minimum over every assignment of points to `k` non-empty
/// clusters, labels canonicalized by first appearance.
fn brute_force_partition(points: &[Vec<f64>], k: usize) -> BTreeSet<Vec<usize>> {
    let t = points.len();
    let mut labels = vec![0usize; t];
    let mut best: Option<(f64, Vec<usize>)> = None;
    fn sse(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
        let dim = points[0].len();
        let mut total = 0.0;
        for c in 0..k {
            let members: Vec<&Vec<f64>> = points.iter().zip(labels).filter(|(_, l)| **l == c).map(|(p, _)| p).collect();
            let mean: Vec<f64> = (0..dim).map(|j| members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64).collect();
            total += members.iter().map(|m| m.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).sum::<f64>();
        }
        total
    }
    fn rec(i: usize, used: usize, k: usize, points: &[Vec<f64>], labels: &mut Vec<usize>, best: &mut Option<(f64, Vec<usize>)>) {
        if i == points.len() {
            if used == k {
                let s = sse(points, labels, k);
                if best.as_ref().is_none_or(|(b, _)| s < *b) {
                    *best = Some((s, labels.clone()));
                }
            }
            return;
        }
        if k - used > points.len() - i {
            return;
        }
        for l in 0..(used + 1).min(k) {
            labels[i] = l;
            rec(i + 1, used.max(l + 1), k, points, labels, best);
        }
    }
    rec(0, 0, k, points, &mut labels, &mut best);
    partition_of(&best.unwrap().1, k)
}

fn partition_of(labels: &[usize], k: usize) -> BTreeSet<Vec<usize>> {
    (0..k).map(|c| (0..labels.len()).filter(|i| labels[*i] == c).collect::<Vec<_>>()).filter(|m| !m.is_empty()).collect()
}

#[test]
fn kmeans_matches_brute_force_on_small_instances() {
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let t = 6 + (seed as usize % 7);
        let centers = [[0.0, 0.0], [3.0, 0.5], [1.0, 4.0]];
        let frames: Vec<Vec<f64>> = (0..t)
            .map(|i| {
                let c = centers[i % 3];
                vec![c[0] + rng.random_range(-0.6..0.6), c[1] + rng.random_range(-0.6..0.6)]
            })
            .collect();
        let projected = pca_project(&frames, 8).unwrap();
        let (assign, _) = kmeans(&projected, 3, seed);
        assert_eq!(partition_of(&assign, 3), brute_force_partition(&frames, 3), "seed {seed}");

        // Keyframes are the members nearest each oracle centroid.
        let oracle = brute_force_partition(&frames, 3);
        let mut want: Vec<usize> = oracle
            .iter()
            .map(|members| {
                let mean: Vec<f64> = (0..2).map(|j| members.iter().map(|&m| frames[m][j]).sum::<f64>() / members.len() as f64).collect();
                let d = |m: usize| frames[m].iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                // Two-member clusters tie exactly; the earliest frame within rounding wins.
                let min = members.iter().map(|&m| d(m)).fold(f64::INFINITY, f64::min);
                *members.iter().find(|&&m| d(m) <= min + 1e-9 * (1.0 + min)).unwrap()
            })
            .collect();
        want.sort_unstable();
        let got = extract_keyframes(&frames, KeyframeParams { k: 3, p: 8, seed }).unwrap();
        assert_eq!(got.indices, want, "seed {seed}");
    }
}

#[test]
fn duplicate_frames_still_fill_k() {
    let frames = vec![vec![1.0, 1.0]; 5];
    let set = extract_keyframes(&frames, KeyframeParams { k: 3, p: 2, seed: 1 }).unwrap();
    assert_eq!(set.indices, vec![0, 1, 2]);
}

proptest! {
    #[test]
    fn keyframe_indices_are_well_formed(
        t in 1usize..25,
        d in 1usize..6,
        k in 0usize..8,
        p in 0usize..10,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames: Vec<Vec<f64>> = (0..t).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let set = extract_keyframes(&frames, KeyframeParams { k, p, seed }).unwrap();
        prop_assert_eq!(set.indices.len(), k.min(t));
        prop_assert!(set.indices.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(set.indices.iter().all(|&i| i < t));
    }

    #[test]
    fn keyframes_ignore_feature_order(seed in any::<u64>(), perm_seed in any::<u64>()) {
        let frames = plateaus(seed % 1000, 6, 5);
        let mut perm: Vec<usize> = (0..5).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permuted: Vec<Vec<f64>> = frames.iter().map(|f| perm.iter().map(|&j| f[j]).collect()).collect();
        let params = KeyframeParams { k: 4, p: 8, seed };
        prop_assert_eq!(
            extract_keyframes(&frames, params).unwrap().indices,
            extract_keyframes(&permuted, params).unwrap().indices
        );
    }
}

// ---- monitor and improve ----

fn failed_log(task: &TaskSpec, seed: u64, moves: &[[f64; 3]]) -> EpisodeLog {
    use crate::executor::StepTrace;
    use crate::types::RobotState;
    let steps = moves
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let action = RobotState::new(*p, [180.0, 0.0, 0.0], 0.0);
            StepTrace {
                step: i as u32,
                state: action,
                candidates: vec![],
                base_raw: vec![1.0],
                base_norm: vec![1.0],
                guidance_raw: vec![1.0],
                guidance_norm: vec![1.0],
                combined: vec![1.0],
                chosen: 0,
                action,
                hidden_before: Default::default(),
                hidden_after: Default::default(),
                fallback: false,
                error: None,
                reached: None,
                reevaluated: false,
            }
        })
        .collect();
    EpisodeLog {
        task_id: task.id().into(),
        seed,
        steps,
        success: false,
        failure_class: Some(crate::sim::FailureClass::Timeout),
        guidance_version: None,
        policy: "random".into(),
        alpha: 1.0,
        searches: vec![],
        pressed: vec![],
        final_state: None,
    }
}

#[test]
fn monitor_payload_is_deterministic_and_counts_keyframes() {
    let f = fixture();
    let prog = crate::gsl::parse(ORDERED).unwrap();
    let moves: Vec<[f64; 3]> = (0..12).map(|i| [0.02 * i as f64, 0.0, 0.3 - 0.01 * i as f64]).collect();
    let log = failed_log(&f.task, 4, &moves);
    let t = transcript(&[(Agent::Monitor, "The arm never descended onto a button."), (Agent::Monitor, "same")]);
    let mut backend = ScriptedBackend::new(&t);
    let params = KeyframeParams { k: 6, p: 8, seed: 0 };
    let a = monitor_feedback(&log, &prog, &f.task, &f.prompts, params, &mut backend).unwrap();
    let b = monitor_feedback(&log, &prog, &f.task, &f.prompts, params, &mut backend).unwrap();
    assert_eq!(a.payload, b.payload);
    assert_eq!(a.feedback, "The arm never descended onto a button.");
    assert_eq!(a.keyframes.indices.len(), 6);
    let frame_lines = a.payload.lines().filter(|l| l.starts_with("frame ")).count();
    assert_eq!(frame_lines, a.keyframes.indices.len());
    assert!(a.payload.contains("keyframes: 6 of 13 frames"));
    assert!(a.payload.contains(ORDERED));
    let (agent, msgs) = &backend.requests[0];
    assert_eq!(*agent, Agent::Monitor);
    assert_eq!(msgs[0].content, f.prompts.monitor);
    assert_eq!(msgs[1].content, a.payload);
}

/// Succeeds on every seed iff the program mentions `marker`.
struct MarkerRunner<'a> {
    task: &'a TaskSpec,
    marker: &'a str,
}

impl BatchRunner for MarkerRunner<'_> {
    fn run(&self, program: &GslProgram, seeds: &[u64]) -> Result<Vec<EpisodeLog>, ExecError> {
        Ok(seeds
            .iter()
            .map(|&s| {
                let mut log = failed_log(self.task, s, &[[0.0, 0.0, 0.2]]);
                if program.source.contains(self.marker) {
                    log.success = true;
                    log.failure_class = None;
                }
                log
            })
            .collect())
    }
}

const NAIVE: &str = "#gsl 1\nfn guidance(state, prev = {\"near\": false}) {\n    let vars = prev;\n    let d = dist(state[0:3], get_position(\"maroon_button\"));\n    vars[\"near\"] = d < 0.05;\n    return (2.0 - d, vars);\n}\n";

fn improve_turns(programs: &[&str]) -> Vec<(Agent, String)> {
    let mut turns = Vec::new();
    for (i, p) in programs.iter().enumerate() {
        turns.push((Agent::Advisor, fenced(p)));
        turns.push((Agent::Robotic, "TERMINATE".into()));
        turns.push((Agent::Monitor, alloc::format!("feedback {i}: press the buttons in order")));
    }
    turns
}

#[test]
fn improve_stops_early_when_all_seeds_succeed() {
    let f = fixture();
    let runner = MarkerRunner { task: &f.task, marker: "navy" };
    let mut backend = ScriptedBackend::new(&owned(&improve_turns(&[ORDERED])));
    let report = improve(&f.session(), &runner, 5, &[0, 1, 2], KeyframeParams::default(), &mut backend).unwrap();
    assert_eq!(report.iterations.len(), 1);
    assert!(report.stopped_early);
    assert_eq!(report.rates(), vec![100.0]);
    assert_eq!(backend.remaining(Agent::Monitor), 1);
}

#[test]
fn improve_feeds_monitor_output_into_the_next_round() {
    let f = fixture();
    let runner = MarkerRunner { task: &f.task, marker: "navy" };
    let mut backend = ScriptedBackend::new(&owned(&improve_turns(&[NAIVE, ORDERED])));
    let report = improve(&f.session(), &runner, 2, &[0, 1], KeyframeParams::default(), &mut backend).unwrap();
    assert_eq!(report.rates(), vec![0.0, 100.0]);
    assert_eq!(report.iterations[0].guidance_source.as_deref(), Some(NAIVE));
    assert_eq!(report.iterations[0].feedback.as_deref(), Some("feedback 0: press the buttons in order"));
    assert_eq!(report.best_source(), Some(ORDERED));
    // The second advisor session opens with the task and the feedback turn.
    let second_advisor = backend.requests.iter().filter(|(a, _)| *a == Agent::Advisor).nth(1).unwrap();
    assert!(second_advisor.1[2].content.starts_with("monitor feedback:\nfeedback 0: press the buttons in order"));
    assert!(second_advisor.1[2].content.contains(NAIVE));
}

#[test]
fn improve_runs_every_iteration_when_nothing_succeeds() {
    let f = fixture();
    let runner = MarkerRunner { task: &f.task, marker: "never present" };
    let mut backend = ScriptedBackend::new(&owned(&improve_turns(&[NAIVE, ORDERED, NAIVE])));
    let report = improve(&f.session(), &runner, 3, &[0], KeyframeParams::default(), &mut backend).unwrap();
    assert_eq!(report.iterations.len(), 3);
    assert!(!report.stopped_early);
    assert_eq!(report.best, Some(0));
    for r in &report.iterations {
        let (_, v) = crate::gsl::validate_source(r.guidance_source.as_deref().unwrap(), &Default::default(), None);
        assert!(v.ok);
    }
}

#[test]
fn protocol_failure_marks_the_iteration_and_continues() {
    let f = fixture();
    let runner = MarkerRunner { task: &f.task, marker: "navy" };
    let mut turns = vec![
        (Agent::Advisor, fenced("fn guidance(state, prev) { return (1.0, 2.0); }\n")),
        (Agent::Robotic, "TERMINATE".to_string()),
    ];
    turns.extend(improve_turns(&[ORDERED]));
    let mut backend = ScriptedBackend::new(&owned(&turns));
    let report = improve(&f.session(), &runner, 3, &[0], KeyframeParams::default(), &mut backend).unwrap();
    assert_eq!(report.iterations.len(), 2);
    assert!(report.iterations[0].error.is_some());
    assert!(report.iterations[0].guidance_source.is_none());
    assert_eq!(report.best, Some(1));
}
