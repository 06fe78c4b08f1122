use std::path::PathBuf;

/// Errors produced by the models. Every variant names the module that raised it.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration document does not match the schema.
    #[error("{module}: schema violation at `{field}`: {reason}")]
    Schema {
        module: &'static str,
        field: String,
        reason: String,
    },

    /// A parsed or constructed value breaks a documented invariant.
    #[error("{module}: invariant violated: {what}")]
    Invariant { module: &'static str, what: String },

    /// The request is well-formed but cannot be executed on the described hardware.
    #[error("{module}: infeasible: {what}")]
    Infeasible { module: &'static str, what: String },

    /// Parameters, KV cache and activations do not fit device memory.
    #[error(
        "inference: memory capacity exceeded: need {required} bytes, have {capacity} bytes (deficit {deficit} bytes)"
    )]
    CapacityExceeded { required: u64, capacity: u64, deficit: u64 },

    /// A model-internal consistency check failed.
    #[error("{module}: internal invariant failure: {what}")]
    Internal { module: &'static str, what: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn schema(module: &'static str, field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema {
            module,
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn invariant(module: &'static str, what: impl Into<String>) -> Self {
        Error::Invariant {
            module,
            what: what.into(),
        }
    }

    pub(crate) fn infeasible(module: &'static str, what: impl Into<String>) -> Self {
        Error::Infeasible {
            module,
            what: what.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the input documents rather than the hardware/workload pairing.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Schema { .. } | Error::Invariant { .. } | Error::Io { .. })
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Infeasible { .. } | Error::CapacityExceeded { .. })
    }
}
