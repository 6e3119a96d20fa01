//! End-to-end acceptance checks, one per criterion, run in sequence so the
//! timings are not skewed by each other. Each prints a PASS or FAIL line.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use guidance_cli::io::{load_logs, load_task, load_thesaurus, load_transcript};
use guidance_core::agents::{
    extract_keyframes, generate_guidance_function, kmeans, pca_project, Agent, KeyframeParams, Prompts, Route,
    ScriptedBackend, Session,
};
use guidance_core::executor::{
    combine_distributions, guided_step, run_episode, EpisodeOptions, FallbackMode, GroundingSetup,
    GuidanceContext,
};
use guidance_core::grounding::{
    ground_objects, multi_granular_search, Detector, DetectorConfig, GeometryKind, GroundingError, Perception,
    SceneBinding, SearchLimits, SearchTrace, TrackRegistry,
};
use guidance_core::gsl::{evaluate, parse, validate_source, EvalBudget, EvalError, GslProgram, ValidationOptions};
use guidance_core::policy::{DynamicsModel, Policy, PolicySpec};
use guidance_core::sim::{self, TaskSpec};
use guidance_core::types::{normalize_scores, select_best, HiddenState, RobotState, ScoreVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

fn buttons() -> TaskSpec {
    load_task(&fixture("buttons3.json")).unwrap()
}

fn program(rel: &str) -> GslProgram {
    parse(&std::fs::read_to_string(fixture(rel)).unwrap()).unwrap()
}

fn cli(args: &[&str]) -> String {
    let mut out = Vec::new();
    let mut argv = vec!["guidance"];
    argv.extend_from_slice(args);
    guidance_cli::execute(argv, &mut out).unwrap_or_else(|e| panic!("{args:?}: {e}"));
    String::from_utf8(out).unwrap()
}

/// (successes, episodes) over every log in `<dir>/episodes`.
fn tally(dir: &Path) -> (usize, usize) {
    let mut ok = 0;
    let mut total = 0;
    for entry in std::fs::read_dir(dir.join("episodes")).unwrap() {
        for log in load_logs(&entry.unwrap().path()).unwrap() {
            total += 1;
            ok += log.success as usize;
        }
    }
    (ok, total)
}

fn registry_for(obs: &guidance_core::scene::Observation) -> TrackRegistry {
    let mut det = Detector::new(DetectorConfig::default());
    let mut reg = TrackRegistry::new(0.0, 0);
    let names = obs.object_names();
    ground_objects(&mut det, obs, &mut reg, names.iter().map(String::as_str), &Default::default(), Default::default());
    reg
}

fn ctx<'a>(program: Option<&'a GslProgram>, alpha: f64, n: usize, task: &TaskSpec) -> GuidanceContext<'a> {
    GuidanceContext {
        program,
        alpha,
        n,
        dynamics: DynamicsModel::clamped(task.workspace().clone()),
        budget: EvalBudget::default(),
        fallback: FallbackMode::BaseOnly,
    }
}

fn random_scores(rng: &mut ChaCha8Rng, n: usize) -> ScoreVector {
    ScoreVector::new(
        (0..n)
            .map(|_| if rng.random::<f64>() < 0.1 { 0.0 } else { rng.random::<f64>() * 10.0 })
            .collect(),
    )
}

fn random_state(rng: &mut ChaCha8Rng, task: &TaskSpec) -> RobotState {
    let b = task.workspace().bounds;
    let mut s = task.workspace().home;
    for i in 0..3 {
        s.position[i] = rng.random_range(b[i][0]..=b[i][1]);
    }
    s
}

fn ac1() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let n = rng.random_range(1..=64);
        let mut pi_raw = random_scores(&mut rng, n);
        if pi_raw.sum() == 0.0 {
            pi_raw.0[0] = 1.0;
        }
        let mut g_raw = random_scores(&mut rng, n);
        if g_raw.sum() == 0.0 {
            g_raw.0[0] = 1.0;
        }
        let pi_hat = normalize_scores(&pi_raw).unwrap();
        let g_hat = normalize_scores(&g_raw).unwrap();
        let combined = combine_distributions(&pi_hat, &g_hat, 0.0).unwrap();
        assert_eq!(combined, pi_hat);
        assert_eq!(select_best(&combined).unwrap(), select_best(&pi_hat).unwrap());
    }

    let task = buttons();
    let policy = PolicySpec::Gaussian { sigmas: Default::default(), predictor: Default::default() }
        .build(&task)
        .unwrap();
    let prog = program("gsl/ordered_buttons.gsl");
    let grounding = GroundingSetup::default();
    let opts = EpisodeOptions { record_candidates: true, record_scores: true };
    for seed in 0..50 {
        let guided = run_episode(&task, policy.as_ref(), &ctx(Some(&prog), 0.0, 64, &task), &grounding, seed, opts).unwrap();
        let base = run_episode(&task, policy.as_ref(), &ctx(None, 0.0, 64, &task), &grounding, seed, opts).unwrap();
        assert_eq!(guided.steps.len(), base.steps.len(), "seed {seed}");
        for (g, b) in guided.steps.iter().zip(&base.steps) {
            assert_eq!(g.state, b.state);
            assert_eq!(g.candidates, b.candidates);
            assert_eq!(g.base_norm, b.base_norm);
            assert_eq!(g.combined, b.combined);
            assert_eq!(g.chosen, b.chosen);
            assert_eq!(g.action, b.action);
            assert_eq!(g.reached, b.reached);
        }
        assert_eq!(guided.success, base.success);
        assert_eq!(guided.pressed, base.pressed);
        assert_eq!(guided.final_state, base.final_state);
    }
}

fn ac2() {
    let dir = tempfile::tempdir().unwrap();
    let unguided = dir.path().join("unguided");
    let guided = dir.path().join("guided");
    let task = fixture("buttons3.json");
    cli(&[
        "run", "--task", task.to_str().unwrap(), "--policy", "random", "--n", "4000", "--seeds", "0..49",
        "--out", unguided.to_str().unwrap(),
    ]);
    let config = fixture("configs/ac2_random_scratch.toml");
    cli(&["run", "--config", config.to_str().unwrap(), "--out", guided.to_str().unwrap()]);
    let (u, un) = tally(&unguided);
    let (g, gn) = tally(&guided);
    assert_eq!((u, un), (0, 50), "unguided");
    assert_eq!(gn, 50);
    assert!(g >= 45, "guided {g}/50");
    let source = std::fs::read_to_string(guided.join("guidance.gsl")).unwrap();
    let golden = std::fs::read_to_string(fixture("gsl/ordered_buttons.gsl")).unwrap();
    assert_eq!(source, golden, "agents produced a different program");
    for entry in std::fs::read_dir(guided.join("episodes")).unwrap() {
        for log in load_logs(&entry.unwrap().path()).unwrap() {
            assert!(log.steps.len() <= 20);
        }
    }
}

fn ac3() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture("configs/ac3_degraded_gaussian.toml");
    let mut rate = BTreeMap::new();
    for alpha in ["0", "0.01", "0.1"] {
        let out = dir.path().join(alpha);
        cli(&["run", "--config", config.to_str().unwrap(), "--alpha", alpha, "--out", out.to_str().unwrap()]);
        let (ok, total) = tally(&out);
        assert_eq!(total, 100);
        rate.insert(alpha, ok);
    }
    let (r0, r1, r10) = (rate["0"], rate["0.01"], rate["0.1"]);
    println!("  success: alpha=0 {r0}%, alpha=0.01 {r1}%, alpha=0.1 {r10}%");
    assert!((20..=60).contains(&r0), "baseline {r0}% outside [20, 60]");
    assert!(r1 >= r0 && r10 >= r0, "{rate:?}");
    assert!(r1 >= r0 + 10, "1% guidance gained only {} points", r1 as i64 - r0 as i64);
}

fn ac4() {
    let task = load_task(&fixture("chess_knight.json")).unwrap();
    let thesaurus = load_thesaurus(Some(&fixture("grounding/chess_thesaurus.json"))).unwrap();
    let golden: SearchTrace =
        serde_json::from_str(&std::fs::read_to_string(fixture("grounding/chess_golden_trace.json")).unwrap()).unwrap();
    let target = "white knight";
    let limits = SearchLimits::default();
    for seed in 0..20 {
        let (_, obs) = sim::reset(&task, seed).unwrap();
        let cfg = DetectorConfig { seed, ..DetectorConfig::default() };
        assert!(obs.object("wn").unwrap().min_dimension() < cfg.min_apparent_size);

        let mut det = Detector::new(cfg.clone());
        let mut reg = TrackRegistry::new(0.0, seed);
        assert_eq!(det.in_the_image(&obs, &reg, target, None), Ok(None));
        let flat = multi_granular_search(&mut det, &obs, &mut reg, target, &thesaurus.synonyms(target), &[], limits);
        assert!(!flat.found(), "flat search found the target on seed {seed}");
        assert!(!reg.is_tracked(target));

        let mut det = Detector::new(cfg);
        let mut reg = TrackRegistry::new(0.0, seed);
        let trace = multi_granular_search(
            &mut det,
            &obs,
            &mut reg,
            target,
            &thesaurus.synonyms(target),
            &thesaurus.parents(target),
            limits,
        );
        assert!(trace.found() && trace.depth <= 3, "seed {seed}: {trace:?}");
        assert_eq!(trace, golden, "seed {seed}");
        assert_eq!(reg.track(target).unwrap().via, vec!["chessboard".to_string()]);
        assert_eq!(reg.geometry(&obs, target, GeometryKind::Position).unwrap(), obs.object("wn").unwrap().pose);
    }
}

/// Fixed geometry per name; records every lookup.
struct Table {
    calls: RefCell<Vec<(GeometryKind, String)>>,
}

impl Perception for Table {
    fn geometry(&self, name: &str, which: GeometryKind) -> Result<[f64; 3], GroundingError> {
        self.calls.borrow_mut().push((which, name.to_string()));
        let h = name.bytes().fold(0u32, |a, b| a.wrapping_mul(31).wrapping_add(b as u32));
        let u = |k: u32| ((h >> k) % 100) as f64 / 100.0;
        Ok(match which {
            GeometryKind::Position => [0.4 * u(0) - 0.2, 0.4 * u(7) - 0.2, 0.015],
            GeometryKind::Size => [0.03, 0.05, 0.05],
            GeometryKind::Orientation => [0.0, 0.0, 90.0 * u(3)],
        })
    }
}

fn ac5() {
    let task = buttons();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let states: Vec<RobotState> = (0..10).map(|_| random_state(&mut rng, &task)).collect();
    let budget = EvalBudget::default();
    let mut corpus: Vec<PathBuf> = std::fs::read_dir(fixture("gsl"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "gsl"))
        .collect();
    corpus.sort();
    assert!(corpus.len() >= 5);
    for path in &corpus {
        let prog = parse(&std::fs::read_to_string(path).unwrap()).unwrap();
        let mut hidden = prog.default_hidden().unwrap();
        for state in &states {
            let table = Table { calls: RefCell::new(Vec::new()) };
            let first = evaluate(&prog, state, &hidden, &table, &budget).unwrap();
            let log: Vec<(GeometryKind, String)> = first.effects.iter().map(|e| (e.kind, e.object.clone())).collect();
            assert_eq!(log, *table.calls.borrow(), "{}", path.display());
            let fingerprint = format!("{:?}", first.next_hidden);
            for _ in 0..99 {
                table.calls.borrow_mut().clear();
                let again = evaluate(&prog, state, &hidden, &table, &budget).unwrap();
                assert_eq!(again.score.to_bits(), first.score.to_bits(), "{}", path.display());
                assert_eq!(format!("{:?}", again.next_hidden), fingerprint);
                assert_eq!(again.effects, first.effects);
                assert_eq!(log, *table.calls.borrow());
            }
            hidden = first.next_hidden;
        }
    }

    let spin = parse("#gsl 1\nfn guidance(state, prev) {\n  let s = 0;\n  for i in 0..1000000 { s = s + 1; }\n  return (s, prev);\n}\n").unwrap();
    let table = Table { calls: RefCell::new(Vec::new()) };
    let err = evaluate(&spin, &states[0], &HiddenState::new(), &table, &budget).unwrap_err();
    assert!(matches!(err, EvalError::BudgetExceeded(_)), "{err:?}");
}

fn ac6() {
    let task = buttons();
    let prog = program("gsl/ordered_buttons_listing.gsl");
    let budget = EvalBudget::default();
    for seed in 0..5 {
        let (mut state, obs) = sim::reset(&task, seed).unwrap();
        let reg = registry_for(&obs);
        let binding = SceneBinding { registry: &reg, snapshot: &obs };

        // Hover above each button, drop onto its top, rise again.
        let mut waypoints = Vec::new();
        for id in &task.task.order {
            let top = obs.object(id).unwrap().top_center();
            let hover = [top[0], top[1], top[2] + 0.09];
            waypoints.extend([hover, top, hover]);
        }
        waypoints.pop();
        let mut trajectory = Vec::new();
        let mut press_steps = Vec::new();
        for w in waypoints {
            let action = state.ee.with_position(w);
            while state.ee.position != w {
                let before = state.pressed.len();
                state.step(&task, &action).unwrap();
                trajectory.push(state.ee);
                if state.pressed.len() > before {
                    press_steps.push(trajectory.len() - 1);
                }
            }
        }
        assert!(state.task_satisfied(&task), "seed {seed}: hand trajectory must succeed");
        assert_eq!(press_steps.len(), 3);

        let mut hidden = prog.default_hidden().unwrap();
        let mut prev_score = evaluate(&prog, &task.workspace().home, &hidden, &binding, &budget).unwrap().score;
        let mut prev_flags = 0;
        let mut flips = Vec::new();
        for (t, s) in trajectory.iter().enumerate() {
            let ev = evaluate(&prog, s, &hidden, &binding, &budget).unwrap();
            let flags = ev.next_hidden.values().filter(|v| v.as_bool() == Some(true)).count();
            assert!(flags >= prev_flags, "seed {seed}: a flag unflipped at step {t}");
            for (k, v) in &hidden {
                if v.as_bool() == Some(true) {
                    assert_eq!(ev.next_hidden[k].as_bool(), Some(true), "seed {seed}: {k} unflipped at step {t}");
                }
            }
            if flags > prev_flags {
                assert_eq!(flags, prev_flags + 1);
                assert!(ev.score - prev_score >= 1.0, "seed {seed}: step {t} gained {}", ev.score - prev_score);
                flips.push(t);
            }
            prev_flags = flags;
            prev_score = ev.score;
            hidden = ev.next_hidden;
        }
        assert_eq!(flips, press_steps, "seed {seed}");
    }
}

/// Three well-separated plateaus with small noise; returns frames and plateau lengths.
fn plateaus(rng: &mut ChaCha8Rng, t: usize, min_len: usize) -> (Vec<Vec<f64>>, [usize; 3]) {
    let d = 7;
    let levels: Vec<Vec<f64>> = loop {
        let l: Vec<Vec<f64>> = (0..3).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let sep = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        if sep(&l[0], &l[1]) > 0.8 && sep(&l[1], &l[2]) > 0.8 && sep(&l[0], &l[2]) > 0.8 {
            break l;
        }
    };
    let a = rng.random_range(min_len..=t - 2 * min_len);
    let b = rng.random_range(min_len..=t - a - min_len);
    let lens = [a, b, t - a - b];
    let mut frames = Vec::with_capacity(t);
    for (p, &len) in lens.iter().enumerate() {
        for _ in 0..len {
            frames.push(levels[p].iter().map(|v| v + rng.random_range(-0.01..0.01)).collect());
        }
    }
    (frames, lens)
}

fn plateau_of(i: usize, lens: &[usize; 3]) -> usize {
    if i < lens[0] {
        0
    } else if i < lens[0] + lens[1] {
        1
    } else {
        2
    }
}

/// Labels renumbered by first appearance.
fn canonical(labels: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Minimum within-cluster sum of squares over every partition into exactly
/// `k` non-empty clusters, by enumerating restricted growth strings.
fn brute_force_kmeans(points: &[Vec<f64>], k: usize) -> Vec<usize> {
    fn sse(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
        let d = points[0].len();
        let mut total = 0.0;
        for c in 0..k {
            let members: Vec<&Vec<f64>> = points.iter().zip(labels).filter(|(_, l)| **l == c).map(|(p, _)| p).collect();
            let mut mean = vec![0.0; d];
            for m in &members {
                for j in 0..d {
                    mean[j] += m[j] / members.len() as f64;
                }
            }
            total += members.iter().map(|m| m.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).sum::<f64>();
        }
        total
    }
    fn rec(points: &[Vec<f64>], k: usize, labels: &mut Vec<usize>, used: usize, best: &mut (f64, Vec<usize>)) {
        let i = labels.len();
        if i == points.len() {
            if used == k {
                let s = sse(points, labels, k);
                if s < best.0 {
                    *best = (s, labels.clone());
                }
            }
            return;
        }
        if k - used > points.len() - i {
            return;
        }
        for l in 0..(used + 1).min(k) {
            labels.push(l);
            rec(points, k, labels, used.max(l + 1), best);
            labels.pop();
        }
    }
    let mut best = (f64::INFINITY, Vec::new());
    rec(points, k, &mut Vec::new(), 0, &mut best);
    best.1
}

fn ac7() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..100 {
        let (frames, lens) = plateaus(&mut rng, 30, 4);
        let params = KeyframeParams { k: 3, p: 8, seed: trial };
        let set = extract_keyframes(&frames, params).unwrap();
        let mut hit: Vec<usize> = set.indices.iter().map(|&i| plateau_of(i, &lens)).collect();
        hit.sort();
        assert_eq!(hit, vec![0, 1, 2], "trial {trial}: {:?} over {lens:?}", set.indices);
    }
    for trial in 0..30 {
        let t = rng.random_range(6..=12);
        let (frames, lens) = plateaus(&mut rng, t, 2);
        let oracle = canonical(&brute_force_kmeans(&frames, 3));
        let params = KeyframeParams { k: 3, p: 8, seed: trial };
        let (assign, _) = kmeans(&pca_project(&frames, params.p).unwrap(), 3, params.seed);
        assert_eq!(canonical(&assign), oracle, "trial {trial}, T={t}");
        let set = extract_keyframes(&frames, params).unwrap();
        let mut clusters: Vec<usize> = set.indices.iter().map(|&i| oracle[i]).collect();
        clusters.sort();
        assert_eq!(clusters, vec![0, 1, 2]);
        let truth: Vec<usize> = (0..t).map(|i| plateau_of(i, &lens)).collect();
        assert_eq!(oracle, canonical(&truth));
    }
}

fn ac8() {
    let task = buttons();
    let (_, obs) = sim::reset(&task, 0).unwrap();
    let grounding = GroundingSetup::default();
    let prompts = Prompts::default();
    let session = Session::new(&task, &obs, &grounding, &prompts);

    let golden = load_transcript(&fixture("transcripts/golden_buttons.toml")).unwrap();
    let mut backend = ScriptedBackend::new(&golden);
    let (prog, state) = generate_guidance_function(&task.task.instruction, &session, None, &mut backend).unwrap();
    assert!(state.terminated());
    assert_eq!(state.routes().last().unwrap().1, Route::Terminate);
    assert!(state.turn <= 20, "{} turns", state.turn);
    let routes: Vec<String> = state
        .routes()
        .iter()
        .map(|(from, to)| match to {
            Route::To(a) => format!("{from} -> {a}"),
            Route::Terminate => format!("{from} -> TERMINATE"),
        })
        .collect();
    let expected: Vec<String> = std::fs::read_to_string(fixture("transcripts/golden_routes.txt"))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().to_string())
        .collect();
    assert_eq!(routes, expected);
    let reg = registry_for(&obs);
    let mut opts = ValidationOptions::for_workspace(task.workspace());
    opts.known_objects = Some(reg.names().map(str::to_string).collect());
    let binding = SceneBinding { registry: &reg, snapshot: &obs };
    let (_, report) = validate_source(&prog.source, &opts, Some(&binding));
    assert!(report.ok, "{report}");

    let corrupted = load_transcript(&fixture("transcripts/corrupted_code.toml")).unwrap();
    let mut backend = ScriptedBackend::new(&corrupted);
    let (prog, state) = generate_guidance_function(&task.task.instruction, &session, None, &mut backend).unwrap();
    assert!(state.terminated());
    let critiques = state.routes().iter().filter(|r| **r == (Agent::Robotic, Route::To(Agent::Advisor))).count();
    assert_eq!(critiques, 1);
    assert_eq!(state.artifacts.reports.len(), 2);
    assert!(!state.artifacts.reports[0].ok && state.artifacts.reports[1].ok);
    let (_, report) = validate_source(&prog.source, &opts, Some(&binding));
    assert!(report.ok, "{report}");
}

fn ac9() {
    let task = buttons();
    let scaled = |c: &str| {
        parse(&format!(
            "#gsl 1\nfn guidance(state, prev) {{\n  return ({c} / (0.01 + dist(state[0:3], get_position(\"maroon_button\"))), prev);\n}}\n"
        ))
        .unwrap()
    };
    let programs = [scaled("0.001"), scaled("1.0"), scaled("1000.0")];
    let policies: Vec<Box<dyn Policy>> = vec![
        PolicySpec::Random.build(&task).unwrap(),
        PolicySpec::Gaussian { sigmas: Default::default(), predictor: Default::default() }.build(&task).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut steps = 0;
    let mut changed = 0;
    while steps < 1000 {
        let seed = rng.random::<u64>() % 1000;
        let (_, obs) = sim::reset(&task, seed).unwrap();
        let reg = registry_for(&obs);
        let binding = SceneBinding { registry: &reg, snapshot: &obs };
        let state = random_state(&mut rng, &task);
        let alpha = if rng.random::<f64>() < 0.2 { 1.0 } else { rng.random_range(0.001..1.0) };
        let policy = policies[steps % 2].as_ref();
        let hidden = HiddenState::new();
        let chosen: Vec<usize> = programs
            .iter()
            .map(|p| guided_step(&ctx(Some(p), alpha, 32, &task), policy, &obs, &state, &hidden, &binding, seed).unwrap().1)
            .map(|trace| {
                assert!(!trace.fallback);
                trace.chosen
            })
            .collect();
        assert!(chosen.iter().all(|&c| c == chosen[0]), "step {steps}: {chosen:?}");
        let base = guided_step(&ctx(None, 0.0, 32, &task), policy, &obs, &state, &hidden, &binding, seed).unwrap().1;
        changed += (base.chosen != chosen[0]) as usize;
        steps += 1;
    }
    // The guidance must matter for the check to mean anything.
    assert!(changed > 100, "guidance changed only {changed} choices");
}

fn ac10() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture("configs/improve_buttons.toml");
    cli(&["improve", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    let curve = std::fs::read_to_string(dir.path().join("success_curve.csv")).unwrap();
    let rates: Vec<f64> = curve.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    println!("  success curve: {rates:?}");
    assert_eq!(rates.len(), 2);
    assert!(rates.windows(2).all(|w| w[1] > w[0]), "{rates:?}");
    let g1 = std::fs::read_to_string(dir.path().join("guidance_iter1.gsl")).unwrap();
    let g2 = std::fs::read_to_string(dir.path().join("guidance_iter2.gsl")).unwrap();
    assert_ne!(g1, g2);
    assert!(parse(&g1).is_ok() && parse(&g2).is_ok());
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, &str, Duration, fn()); 10] = [
        ("AC1", "alpha=0 equivalence", Duration::from_secs(10), ac1),
        ("AC2", "learning from scratch", Duration::from_secs(60), ac2),
        ("AC3", "guidance sweep direction", Duration::from_secs(180), ac3),
        ("AC4", "multi-granular search", Duration::from_secs(5), ac4),
        ("AC5", "script determinism and sandbox", Duration::from_secs(10), ac5),
        ("AC6", "listing semantics", Duration::from_secs(1), ac6),
        ("AC7", "keyframe extraction", Duration::from_secs(30), ac7),
        ("AC8", "agent protocol", Duration::from_secs(5), ac8),
        ("AC9", "scale invariance", Duration::from_secs(5), ac9),
        ("AC10", "iterative improvement", Duration::from_secs(60), ac10),
    ];
    let mut failed = Vec::new();
    for (id, name, limit, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check));
        let took = start.elapsed();
        let verdict = match &result {
            Err(_) => "FAIL",
            Ok(()) if took > limit => "FAIL (too slow)",
            Ok(()) => "PASS",
        };
        if verdict != "PASS" {
            failed.push(id);
        }
        // Written straight to stdout so the lines survive output capture.
        let _ = writeln!(
            std::io::stdout(),
            "{id} {verdict}: {name} in {:.2}s (limit {}s)",
            took.as_secs_f64(),
            limit.as_secs()
        );
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
