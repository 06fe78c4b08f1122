use std::fmt;

/// Pipeline step that failed; printed with every diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Arguments,
    LoadHardware,
    LoadModel,
    LoadScenario,
    LoadAreaParams,
    LoadCostParams,
    ParseOperator,
    Override,
    Map,
    Simulate,
    Cost,
    Output,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Arguments => "arguments",
            Stage::LoadHardware => "load-hardware",
            Stage::LoadModel => "load-model",
            Stage::LoadScenario => "load-scenario",
            Stage::LoadAreaParams => "load-area-params",
            Stage::LoadCostParams => "load-cost-params",
            Stage::ParseOperator => "parse-operator",
            Stage::Override => "override",
            Stage::Map => "map",
            Stage::Simulate => "simulate",
            Stage::Cost => "cost",
            Stage::Output => "output",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Infeasible,
    Internal,
}

impl Kind {
    pub fn exit_code(self) -> u8 {
        match self {
            Kind::Config => 2,
            Kind::Infeasible => 3,
            Kind::Internal => 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Failure {
    pub stage: Stage,
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn config(stage: Stage, message: impl Into<String>) -> Self {
        Failure {
            stage,
            kind: Kind::Config,
            message: message.into(),
        }
    }

    pub fn core(stage: Stage, e: archsim_core::Error) -> Self {
        let kind = if e.is_config_error() {
            Kind::Config
        } else if e.is_infeasible() {
            Kind::Infeasible
        } else {
            Kind::Internal
        };
        Failure {
            stage,
            kind,
            message: e.to_string(),
        }
    }

    pub fn output(message: impl Into<String>) -> Self {
        Failure {
            stage: Stage::Output,
            kind: Kind::Config,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}` failed: {}", self.stage.name(), self.message)
    }
}
