use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical failure: {message}")]
    Numerical { message: String, values: Vec<f64> },
    #[error("scene placement failed after {attempts} attempts")]
    Placement { attempts: usize },
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Training { epoch: usize, loss: f64, history: Vec<f64> },
    /// Attack aborted; carries the objective trace collected so far.
    #[error("attack failed at iteration {iteration}: {source}")]
    Attack {
        iteration: usize,
        trace: Vec<f64>,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
