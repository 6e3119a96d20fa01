use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{extract_code_block, route_message, Agent, AgentError, Backend, ChatMessage, ChatRole, Prompts, Route};
use crate::executor::GroundingSetup;
use crate::grounding::{
    multi_granular_search, Detector, GroundingError, QueryRecord, SceneBinding, SearchOutcome, SearchTrace,
    TrackRegistry,
};
use crate::gsl::{validate_source, GslProgram, ValidationOptions, ValidationReport};
use crate::scene::Observation;
use crate::sim::TaskSpec;

pub const DEFAULT_TURN_BUDGET: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    User,
    Tool,
    Agent(Agent),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub from: Speaker,
    pub content: String,
    /// Agent messages: the parsed directive. User and tool messages: the
    /// agent that reads them next.
    pub to: Route,
}

/// Everything the engine produced besides the messages themselves.
/// `sources[i]` was checked into `reports[i]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub sources: Vec<String>,
    pub reports: Vec<ValidationReport>,
    pub queries: Vec<QueryRecord>,
    pub searches: Vec<SearchTrace>,
    pub warnings: Vec<String>,
    pub feedback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationState {
    pub messages: Vec<Message>,
    /// Backend calls made so far. Never exceeds `budget`.
    pub turn: usize,
    pub budget: usize,
    pub artifacts: Artifacts,
}

impl ConversationState {
    pub fn new(budget: usize) -> Self {
        Self { messages: Vec::new(), turn: 0, budget, artifacts: Artifacts::default() }
    }

    /// (speaker, directive) for every agent message, in order.
    pub fn routes(&self) -> Vec<(Agent, Route)> {
        self.messages
            .iter()
            .filter_map(|m| match m.from {
                Speaker::Agent(a) => Some((a, m.to)),
                _ => None,
            })
            .collect()
    }

    pub fn terminated(&self) -> bool {
        self.messages.last().is_some_and(|m| matches!(m.from, Speaker::Agent(_)) && m.to == Route::Terminate)
    }

    /// The prompt seen by `agent`: its system prompt, its own messages as
    /// assistant turns and everything else as labelled user turns.
    pub fn view(&self, agent: Agent, prompts: &Prompts) -> Vec<ChatMessage> {
        let mut out = alloc::vec![ChatMessage::new(ChatRole::System, prompts.system_prompt(agent))];
        for m in &self.messages {
            out.push(match m.from {
                Speaker::Agent(a) if a == agent => ChatMessage::new(ChatRole::Assistant, m.content.clone()),
                Speaker::Agent(a) => ChatMessage::new(ChatRole::User, format!("[{}] {}", a.wire_name(), m.content)),
                Speaker::Tool => ChatMessage::new(ChatRole::User, format!("[tool] {}", m.content)),
                Speaker::User => ChatMessage::new(ChatRole::User, m.content.clone()),
            });
        }
        out
    }

    fn push(&mut self, from: Speaker, content: String, to: Route) {
        self.messages.push(Message { from, content, to });
    }
}

/// Fixed inputs of one conversation.
#[derive(Debug, Clone)]
pub struct Session<'a> {
    pub task: &'a TaskSpec,
    pub obs: &'a Observation,
    pub grounding: &'a GroundingSetup,
    pub prompts: &'a Prompts,
    pub turn_budget: usize,
}

impl<'a> Session<'a> {
    pub fn new(task: &'a TaskSpec, obs: &'a Observation, grounding: &'a GroundingSetup, prompts: &'a Prompts) -> Self {
        Self { task, obs, grounding, prompts, turn_budget: DEFAULT_TURN_BUDGET }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolCall {
    pub name: String,
    pub args: Vec<String>,
}

const TOOLS: [&str; 2] = ["in_the_image", "search"];

/// Tool calls written inline as `in_the_image("obj"[, "parent"])` or
/// `search("obj")`. Calls with non-string arguments are ignored.
pub(crate) fn parse_tool_calls(text: &str) -> Vec<ToolCall> {
    let mut calls = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < text.len() {
        let Some(name) = TOOLS.iter().find(|t| text[i..].starts_with(&format!("{t}("))) else {
            i += text[i..].chars().next().map_or(1, char::len_utf8);
            continue;
        };
        let boundary = i == 0 || !(bytes[i - 1].is_ascii_alphanumeric() || bytes[i - 1] == b'_');
        let start = i + name.len() + 1;
        i = start;
        if !boundary {
            continue;
        }
        if let Some((args, end)) = string_args(&text[start..]) {
            calls.push(ToolCall { name: name.to_string(), args });
            i = start + end;
        }
    }
    calls
}

/// Parses `"a", 'b')` and returns the strings and the offset past `)`.
fn string_args(s: &str) -> Option<(Vec<String>, usize)> {
    let mut args = Vec::new();
    let mut chars = s.char_indices().peekable();
    loop {
        while chars.next_if(|(_, c)| c.is_whitespace()).is_some() {}
        let (_, c) = chars.next()?;
        match c {
            ')' if args.is_empty() => return Some((args, 1)),
            '"' | '\'' => {
                let quote = c;
                let mut arg = String::new();
                loop {
                    let (_, ch) = chars.next()?;
                    if ch == quote {
                        break;
                    }
                    if ch == '\n' {
                        return None;
                    }
                    arg.push(ch);
                }
                args.push(arg);
            }
            _ => return None,
        }
        while chars.next_if(|(_, c)| c.is_whitespace()).is_some() {}
        match chars.next()? {
            (_, ',') => continue,
            (j, ')') => return Some((args, j + 1)),
            _ => return None,
        }
    }
}

struct Engine<'s, 'a> {
    session: &'s Session<'a>,
    detector: Detector,
    registry: TrackRegistry,
    state: ConversationState,
    latest_valid: Option<GslProgram>,
}

impl Engine<'_, '_> {
    fn run_tools(&mut self, calls: &[ToolCall]) -> String {
        let mut lines = Vec::new();
        for call in calls {
            let shown = call.args.iter().map(|a| format!("\"{a}\"")).collect::<Vec<_>>().join(", ");
            let result = match call.name.as_str() {
                "in_the_image" => self.in_the_image(&call.args),
                _ => self.search(&call.args),
            };
            lines.push(format!("{}({shown}) -> {result}", call.name));
        }
        lines.join("\n")
    }

    /// Accepts (object), (object, parent) or (image, object, parent).
    fn in_the_image(&mut self, args: &[String]) -> String {
        let (object, parent) = match args {
            [o] => (o.as_str(), None),
            [o, p] => (o.as_str(), Some(p.as_str())),
            [_, o, p] => (o.as_str(), Some(p.as_str())),
            _ => return "error: expected 1 to 3 string arguments".into(),
        };
        let obs = self.session.obs;
        let hit = self.detector.in_the_image(obs, &self.registry, object, parent);
        let found = matches!(hit, Ok(Some(_)));
        self.state.artifacts.queries.push(QueryRecord {
            object: object.to_string(),
            parent: parent.map(str::to_string),
            found,
        });
        match hit {
            Ok(Some(id)) => {
                let via = match parent.and_then(|p| self.registry.track(p)) {
                    Some(t) => {
                        let mut v = t.via.clone();
                        v.push(parent.unwrap_or_default().to_string());
                        v
                    }
                    None => Vec::new(),
                };
                self.registry.register(object, &id, via);
                "yes".into()
            }
            Ok(None) => "no".into(),
            Err(GroundingError::UnknownParent(p)) => format!("no (parent \"{p}\" has not been found yet)"),
            Err(e) => format!("no ({e})"),
        }
    }

    fn search(&mut self, args: &[String]) -> String {
        let [target] = args else {
            return "error: expected one string argument".into();
        };
        let g = self.session.grounding;
        let trace = multi_granular_search(
            &mut self.detector,
            self.session.obs,
            &mut self.registry,
            target,
            &g.thesaurus.synonyms(target),
            &g.thesaurus.parents(target),
            g.limits,
        );
        let result = match &trace.outcome {
            SearchOutcome::Found { path } => format!("found via {} (depth {})", path.join(" > "), trace.depth),
            SearchOutcome::NotFound => format!("not_found after {} queries", trace.queries.len()),
        };
        self.state.artifacts.searches.push(trace);
        result
    }

    fn check_code(&mut self, source: String) {
        let mut opts = ValidationOptions::for_workspace(self.session.task.workspace());
        opts.known_objects = Some(self.registry.names().map(str::to_string).collect());
        let binding = SceneBinding { registry: &self.registry, snapshot: self.session.obs };
        let (prog, report) = validate_source(&source, &opts, Some(&binding));
        if report.ok {
            self.latest_valid = prog;
        }
        self.state.artifacts.sources.push(source);
        self.state.artifacts.reports.push(report);
    }

    fn format_report(&self) -> String {
        match self.state.artifacts.reports.last() {
            Some(r) => format!("test_guidance_code_format() on the latest code:\n{r}"),
            None => "test_guidance_code_format(): no code has been provided yet".into(),
        }
    }

    fn finish(self, reason: &str) -> Result<(GslProgram, ConversationState), AgentError> {
        match self.latest_valid {
            Some(p) => Ok((p, self.state)),
            None => Err(AgentError::ProtocolFailure { reason: reason.to_string(), turns: self.state.turn }),
        }
    }
}

/// Runs the conversation until the Robotic agent (or anyone) says
/// TERMINATE or the turn budget runs out. Either way the result is the
/// latest program that passed validation.
pub fn generate_guidance_function(
    task_text: &str,
    session: &Session<'_>,
    feedback: Option<&str>,
    backend: &mut dyn Backend,
) -> Result<(GslProgram, ConversationState), AgentError> {
    let mut cfg = session.grounding.detector.clone();
    cfg.dropout_rate = 0.0;
    let mut engine = Engine {
        session,
        detector: Detector::new(cfg),
        registry: TrackRegistry::new(0.0, session.grounding.detector.seed),
        state: ConversationState::new(session.turn_budget),
        latest_valid: None,
    };
    let advisor = Route::To(Agent::Advisor);
    engine.state.push(Speaker::User, format!("Task: {task_text}"), advisor);
    if let Some(text) = feedback {
        engine.state.artifacts.feedback = Some(text.to_string());
        engine.state.push(Speaker::User, format!("monitor feedback:\n{text}"), advisor);
    }

    let mut speaker = Agent::Advisor;
    loop {
        if engine.state.turn >= engine.state.budget {
            return engine.finish("turn budget exhausted without a validated program");
        }
        if speaker == Agent::Robotic {
            let report = engine.format_report();
            engine.state.push(Speaker::Tool, report, Route::To(Agent::Robotic));
        }
        let view = engine.state.view(speaker, session.prompts);
        let reply = backend.complete(speaker, &view)?;
        engine.state.turn += 1;
        let routing = route_message(&reply);
        if let Some(w) = routing.warning {
            engine.state.artifacts.warnings.push(format!("turn {} ({speaker}): {w}", engine.state.turn));
        }
        let code = (speaker == Agent::Advisor).then(|| extract_code_block(&reply)).flatten();
        let calls = if speaker == Agent::Grounding { parse_tool_calls(&reply) } else { Vec::new() };
        engine.state.push(Speaker::Agent(speaker), reply, routing.route);

        if let Some(src) = code {
            engine.check_code(src);
        }
        if let (false, Route::To(_)) = (calls.is_empty(), routing.route) {
            let results = engine.run_tools(&calls);
            engine.state.push(Speaker::Tool, results, routing.route);
        }
        match routing.route {
            Route::Terminate => return engine.finish("conversation terminated without a validated program"),
            Route::To(next) => speaker = next,
        }
    }
}
