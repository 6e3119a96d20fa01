use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Agent;

const ADVISOR: &str = include_str!("../../prompts/advisor.txt");
const GROUNDING: &str = include_str!("../../prompts/grounding.txt");
const ROBOTIC: &str = include_str!("../../prompts/robotic.txt");
const MONITOR: &str = include_str!("../../prompts/monitor.txt");

/// Appended to the advisor, grounding and robotic prompts.
pub const GSL_AMENDMENT: &str = include_str!("../../prompts/gsl_amendment.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tool {
    InTheImage,
    ValidateFormat,
    DryRun,
    Keyframes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRole {
    pub role: Agent,
    pub system_prompt: String,
    pub tools: Vec<Tool>,
}

impl AgentRole {
    pub fn tools_for(role: Agent) -> Vec<Tool> {
        match role {
            Agent::Advisor => Vec::new(),
            Agent::Grounding => alloc::vec![Tool::InTheImage],
            Agent::Robotic => alloc::vec![Tool::ValidateFormat, Tool::DryRun],
            Agent::Monitor => alloc::vec![Tool::Keyframes],
        }
    }
}

/// System prompts per role. The shipped texts are used unless a caller
/// loads replacements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompts {
    pub advisor: String,
    pub grounding: String,
    pub robotic: String,
    pub monitor: String,
    pub amendment: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Self {
            advisor: ADVISOR.to_string(),
            grounding: GROUNDING.to_string(),
            robotic: ROBOTIC.to_string(),
            monitor: MONITOR.to_string(),
            amendment: GSL_AMENDMENT.to_string(),
        }
    }
}

impl Prompts {
    /// Base prompt only, without the amendment.
    pub fn base(&self, role: Agent) -> &str {
        match role {
            Agent::Advisor => &self.advisor,
            Agent::Grounding => &self.grounding,
            Agent::Robotic => &self.robotic,
            Agent::Monitor => &self.monitor,
        }
    }

    pub fn system_prompt(&self, role: Agent) -> String {
        let mut s = self.base(role).to_string();
        if role != Agent::Monitor {
            s.push_str(&self.amendment);
        }
        s
    }

    pub fn role(&self, role: Agent) -> AgentRole {
        AgentRole { role, system_prompt: self.system_prompt(role), tools: AgentRole::tools_for(role) }
    }
}
