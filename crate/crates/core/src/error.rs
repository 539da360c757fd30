use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("no adversarial direction: the attack left the input unchanged")]
    NoDirection,

    #[error("degenerate partition: {0}")]
    DegeneratePartition(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("IDX format error at byte {offset}: {detail}")]
    Format { offset: usize, detail: String },

    #[error("training diverged at epoch {epoch}, batch {batch} (loss = {loss})")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("config error at `{path}`: {detail}")]
    Config { path: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
