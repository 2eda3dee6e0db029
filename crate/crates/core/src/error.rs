use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{solver} did not converge after {iterations} iterations (last residual {residual:.3e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("residual certificate failed: {0}")]
    Certificate(String),

    #[error("at time node {node}: {source}")]
    AtNode {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("in perturbed problem n={n}: {source}")]
    AtMember {
        n: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("at control q={q:?}: {source}")]
    AtControl {
        q: Vec<f64>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn at_node(self, node: usize) -> Self {
        Error::AtNode {
            node,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_member(self, n: usize) -> Self {
        Error::AtMember {
            n,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_control(self, q: &[f64]) -> Self {
        Error::AtControl {
            q: q.to_vec(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with node/member/control context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtNode { source, .. }
            | Error::AtMember { source, .. }
            | Error::AtControl { source, .. } => source.root(),
            other => other,
        }
    }

    /// Configuration and input problems, as opposed to solver failures.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self.root(),
            Error::Config(_) | Error::Input(_) | Error::Dimension { .. }
        )
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}
