//! The subcommands. Each writes human-readable output to `out` and returns
//! a `CliError` whose variant picks the exit code.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use guidance_core::agents::{
    generate_guidance_function, improve, AgentError, Backend, BackendError, BackendKind, ScriptedBackend, Session,
};
use guidance_core::executor::{
    emit_heatmap, replay_log, EpisodeLog, EpisodeOptions, GridSpec, GroundingSetup, GuidanceContext,
};
use guidance_core::grounding::{ground_objects, Detector, SceneBinding, TrackRegistry};
use guidance_core::gsl::{validate_source, EvalBudget, GslProgram, ValidationOptions};
use guidance_core::policy::{DynamicsModel, Policy};
use guidance_core::sim::{self, TaskSpec};

use crate::config::{GuidanceSource, RunConfig};
use crate::error::CliError;
use crate::http::HttpBackend;
use crate::io::{load_logs, load_prompts, load_task, load_thesaurus, load_transcript, log_line, OutputDir};
use crate::metrics::MetricsTable;
use crate::runner::ParallelRunner;

fn say(out: &mut dyn Write, text: impl AsRef<str>) {
    let _ = writeln!(out, "{}", text.as_ref());
}

fn agent_error(e: AgentError) -> CliError {
    match e {
        AgentError::ProtocolFailure { .. } | AgentError::Backend(_) => CliError::backend(e.to_string()),
        other => CliError::config(other.to_string()),
    }
}

pub fn make_backend(cfg: &RunConfig) -> Result<Box<dyn Backend>, CliError> {
    cfg.backend.validate().map_err(|e| CliError::config(format!("backend: {e}")))?;
    match cfg.backend.kind {
        BackendKind::Scripted => {
            let path = cfg.backend.transcript.as_deref().expect("validated");
            Ok(Box::new(ScriptedBackend::new(&load_transcript(Path::new(path))?)))
        }
        BackendKind::Http => match HttpBackend::from_env(&cfg.backend) {
            Ok(b) => Ok(Box::new(b)),
            Err(BackendError::Config(m)) => Err(CliError::config(format!("backend: {m}"))),
            Err(e) => Err(CliError::backend(e.to_string())),
        },
    }
}

/// Everything a run or improvement needs, loaded and checked.
struct Prepared {
    task: TaskSpec,
    policy: Box<dyn Policy>,
    grounding: GroundingSetup,
    seeds: Vec<u64>,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared, CliError> {
    cfg.validate()?;
    let task = load_task(cfg.task.as_deref().expect("validated"))?;
    let policy = cfg.policy.build(&task).map_err(|e| CliError::config(format!("policy: {e}")))?;
    let grounding = GroundingSetup {
        detector: cfg.detector.clone(),
        thesaurus: load_thesaurus(cfg.grounding.thesaurus.as_deref())?,
        limits: cfg.grounding.limits,
    };
    Ok(Prepared { task, policy, grounding, seeds: cfg.seed_list()? })
}

fn runner<'a>(cfg: &RunConfig, p: &'a Prepared) -> ParallelRunner<'a> {
    ParallelRunner {
        task: &p.task,
        policy: p.policy.as_ref(),
        alpha: cfg.alpha,
        n: cfg.n,
        dynamics: cfg.dynamics,
        budget: EvalBudget::default(),
        fallback: cfg.fallback,
        grounding: &p.grounding,
        opts: EpisodeOptions { record_candidates: cfg.record_candidates, record_scores: cfg.record_scores },
    }
}

/// Parses and validates a guidance file; any issue is a validation failure.
pub fn load_program(path: &Path, task: Option<&TaskSpec>) -> Result<GslProgram, CliError> {
    let source = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read guidance {}: {e}", path.display())))?;
    let opts = match task {
        Some(t) => ValidationOptions::for_workspace(t.workspace()),
        None => ValidationOptions::default(),
    };
    let (prog, report) = validate_source(&source, &opts, None);
    match prog {
        Some(p) if report.ok => Ok(p),
        _ => Err(CliError::validation(format!("{}:\n{report}", path.display()))),
    }
}

fn write_logs(dir: &mut OutputDir, prefix: &str, logs: &[EpisodeLog]) -> Result<(), CliError> {
    for log in logs {
        dir.write(format!("episodes/{prefix}seed_{:04}.jsonl", log.seed), log_line(log).as_bytes())?;
    }
    Ok(())
}

pub fn cmd_run(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let prepared = prepare(cfg)?;
    let task = &prepared.task;
    let program = match cfg.guidance.effective_source() {
        GuidanceSource::None => None,
        GuidanceSource::File => Some(load_program(cfg.guidance.path.as_deref().expect("validated"), Some(task))?),
        GuidanceSource::Agents => {
            let mut backend = make_backend(cfg)?;
            let prompts = load_prompts(cfg.guidance.prompts.as_deref())?;
            let (_, obs) = sim::reset(task, prepared.seeds[0]).map_err(|e| CliError::config(e.to_string()))?;
            let mut session = Session::new(task, &obs, &prepared.grounding, &prompts);
            if let Some(b) = cfg.guidance.turn_budget {
                session.turn_budget = b;
            }
            let (prog, _) = generate_guidance_function(&task.task.instruction, &session, None, backend.as_mut())
                .map_err(agent_error)?;
            Some(prog)
        }
    };

    let logs = runner(cfg, &prepared)
        .run_with(program.as_ref(), &prepared.seeds)
        .map_err(|e| CliError::config(e.to_string()))?;
    let mut dir = OutputDir::create(&cfg.out)?;
    write_logs(&mut dir, "", &logs)?;
    dir.write("metrics.csv", MetricsTable::from_logs(&logs).to_csv().as_bytes())?;
    if let Some(p) = &program {
        dir.write("guidance.gsl", p.source.as_bytes())?;
    }
    dir.finish()?;

    let successes = logs.iter().filter(|l| l.success).count();
    say(
        out,
        format!(
            "{} policy={} alpha={} n={}: {successes}/{} succeeded ({:.1}%)",
            task.id(),
            prepared.policy.name(),
            cfg.alpha,
            cfg.n,
            logs.len(),
            100.0 * successes as f64 / logs.len() as f64
        ),
    );
    say(out, format!("wrote {}", cfg.out.display()));
    Ok(())
}

pub fn cmd_improve(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let prepared = prepare(cfg)?;
    let task = &prepared.task;
    let mut backend = make_backend(cfg)?;
    let prompts = load_prompts(cfg.guidance.prompts.as_deref())?;
    let (_, obs) = sim::reset(task, prepared.seeds[0]).map_err(|e| CliError::config(e.to_string()))?;
    let mut session = Session::new(task, &obs, &prepared.grounding, &prompts);
    if let Some(b) = cfg.guidance.turn_budget {
        session.turn_budget = b;
    }
    let runner = runner(cfg, &prepared);
    let report = improve(&session, &runner, cfg.iterations, &prepared.seeds, cfg.keyframes, backend.as_mut())
        .map_err(agent_error)?;

    let mut dir = OutputDir::create(&cfg.out)?;
    let mut curve = String::from("iteration,status,successes,episodes,success_rate\n");
    for r in &report.iterations {
        let k = r.iteration;
        let status = if r.error.is_some() { "protocol_failure" } else { "ok" };
        let _ = writeln!(curve, "{k},{status},{},{},{:.1}", r.successes, r.episodes, r.success_rate());
        if let Some(src) = &r.guidance_source {
            dir.write(format!("guidance_iter{k}.gsl"), src.as_bytes())?;
        }
        if let Some(fb) = &r.feedback {
            dir.write(format!("feedback_iter{k}.txt"), fb.as_bytes())?;
        }
        write_logs(&mut dir, &format!("iter{k}_"), &r.logs)?;
        let line = match &r.error {
            Some(e) => format!("iteration {k}: protocol failure after {} turns: {e}", r.turns),
            None => format!("iteration {k}: {}/{} succeeded ({:.1}%)", r.successes, r.episodes, r.success_rate()),
        };
        say(out, line);
    }
    dir.write("success_curve.csv", curve.as_bytes())?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    dir.write("improvement.json", json.as_bytes())?;
    dir.finish()?;
    if report.stopped_early {
        say(out, "stopped early: every seed succeeded");
    }
    if report.iterations.iter().all(|r| r.error.is_some()) {
        return Err(CliError::backend("every iteration ended in a protocol failure"));
    }
    say(out, format!("wrote {}", cfg.out.display()));
    Ok(())
}

pub fn cmd_validate(path: &Path, task: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let source = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read guidance {}: {e}", path.display())))?;
    let task = task.map(load_task).transpose()?;
    let mut opts = match &task {
        Some(t) => ValidationOptions::for_workspace(t.workspace()),
        None => ValidationOptions::default(),
    };
    let report = match &task {
        Some(t) => {
            let (_, obs) = sim::reset(t, 0).map_err(|e| CliError::config(e.to_string()))?;
            let names: Vec<String> = obs.object_names();
            let mut detector = Detector::new(Default::default());
            let mut registry = TrackRegistry::new(0.0, 0);
            ground_objects(
                &mut detector,
                &obs,
                &mut registry,
                names.iter().map(String::as_str),
                &Default::default(),
                Default::default(),
            );
            opts.known_objects = Some(registry.names().map(str::to_string).collect());
            let binding = SceneBinding { registry: &registry, snapshot: &obs };
            validate_source(&source, &opts, Some(&binding)).1
        }
        None => validate_source(&source, &opts, None).1,
    };
    let _ = write!(out, "{report}");
    if report.ok {
        Ok(())
    } else {
        let codes: Vec<String> = report.issues.iter().map(|i| i.code.to_string()).collect();
        Err(CliError::validation(format!("{}: {}", path.display(), codes.join(", "))))
    }
}

pub struct HeatmapRequest {
    pub seed: u64,
    pub guidance: Option<PathBuf>,
    pub nx: usize,
    pub ny: usize,
    /// Height of the grid plane; the reset end-effector height when unset.
    pub z: Option<f64>,
    pub csv: Option<PathBuf>,
}

pub fn cmd_heatmap(cfg: &RunConfig, req: &HeatmapRequest, out: &mut dyn Write) -> Result<(), CliError> {
    let prepared = prepare(cfg)?;
    let task = &prepared.task;
    let program = req.guidance.as_deref().or(cfg.guidance.path.as_deref()).map(|p| load_program(p, Some(task))).transpose()?;
    let (state, obs) = sim::reset(task, req.seed).map_err(|e| CliError::config(e.to_string()))?;

    let mut detector_cfg = prepared.grounding.detector.clone();
    detector_cfg.seed = detector_cfg.seed.wrapping_add(req.seed);
    let mut detector = Detector::new(detector_cfg.clone());
    let mut registry = TrackRegistry::new(detector_cfg.dropout_rate, detector_cfg.seed);
    let mut hidden = Default::default();
    if let Some(p) = &program {
        hidden = p.default_hidden().unwrap_or_default();
        let names = p.referenced_objects();
        ground_objects(
            &mut detector,
            &obs,
            &mut registry,
            names.iter().map(String::as_str),
            &prepared.grounding.thesaurus,
            prepared.grounding.limits,
        );
    }
    let ws = task.workspace().clone();
    let ctx = GuidanceContext {
        program: program.as_ref(),
        alpha: cfg.alpha,
        n: cfg.n,
        dynamics: DynamicsModel::identity(ws.clone()),
        budget: EvalBudget::default(),
        fallback: cfg.fallback,
    };
    let grid = GridSpec::over_workspace(&ws, req.z.unwrap_or(state.ee.position[2]), req.nx, req.ny);
    let binding = SceneBinding { registry: &registry, snapshot: &obs };
    let heat = emit_heatmap(&ctx, prepared.policy.as_ref(), &obs, &state.ee, &hidden, &binding, &grid)
        .map_err(|e| CliError::config(e.to_string()))?;

    let csv = heat.to_csv();
    match &req.csv {
        Some(path) => {
            std::fs::write(path, &csv).map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))?
        }
        None => {
            let _ = write!(out, "{csv}");
        }
    }
    let (col, row) = heat.argmax;
    let (x, y) = heat.argmax_xy();
    let mut summary = format!(
        "argmax cell col={col} row={row} at x={x:.4} y={y:.4} z={:.4} value={:.6e}",
        heat.z, heat.values[row][col]
    );
    if heat.fallback {
        summary.push_str(" (guidance failed; base policy only)");
    }
    say(out, summary);
    Ok(())
}

/// Episode logs under `<dir>/episodes/`, or directly in `dir`.
fn dir_logs(dir: &Path) -> Result<Vec<EpisodeLog>, CliError> {
    let episodes = dir.join("episodes");
    let root = if episodes.is_dir() { episodes } else { dir.to_path_buf() };
    let entries = std::fs::read_dir(&root)
        .map_err(|e| CliError::config(format!("cannot read run directory {}: {e}", root.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut logs = Vec::new();
    for f in files {
        logs.extend(load_logs(&f)?);
    }
    if logs.is_empty() {
        return Err(CliError::config(format!("no episode logs in {}", dir.display())));
    }
    Ok(logs)
}

pub fn cmd_report(dirs: &[PathBuf], csv: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    if dirs.is_empty() {
        return Err(CliError::config("report needs at least one run directory"));
    }
    let mut logs = Vec::new();
    for d in dirs {
        logs.extend(dir_logs(d)?);
    }
    let table = MetricsTable::from_logs(&logs);
    let _ = write!(out, "{}", table.render_text());
    if let Some(path) = csv {
        std::fs::write(path, table.to_csv())
            .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

/// Re-executes each logged episode and checks the final state, the press
/// sequence and the outcome.
pub fn cmd_replay(task: &Path, log: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let task = load_task(task)?;
    let logs = load_logs(log)?;
    let mut bad = 0;
    for l in &logs {
        let verdict = match replay_log(&task, l) {
            Err(e) => Some(format!("replay failed: {e}")),
            Ok(s) => {
                let success = s.success(&task).success;
                if l.final_state.is_some_and(|f| f != s.ee) {
                    Some("final state differs".to_string())
                } else if s.pressed != l.pressed {
                    Some(format!("pressed {:?}, log says {:?}", s.pressed, l.pressed))
                } else if success != l.success {
                    Some(format!("success {success}, log says {}", l.success))
                } else {
                    None
                }
            }
        };
        match verdict {
            None => say(out, format!("seed {}: ok ({} steps)", l.seed, l.steps.len())),
            Some(why) => {
                bad += 1;
                say(out, format!("seed {}: MISMATCH {why}", l.seed));
            }
        }
    }
    if bad > 0 {
        return Err(CliError::validation(format!("{bad} of {} episodes did not replay", logs.len())));
    }
    Ok(())
}
