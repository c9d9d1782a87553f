use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {reason}: {text:?}")]
    MalformedLine { line: usize, reason: String, text: String },

    #[error("line {0}: record before any #fields header")]
    MissingHeader(usize),

    #[error("mandatory column `{0}` absent from #fields header")]
    MissingColumn(&'static str),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("record precedes scenario start (ts={ts}, t0={t0})")]
    BeforeStart { ts: f64, t0: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("fine labeling unavailable: scenario `{0}` lists no victim IPs")]
    FineLabelingUnavailable(String),

    #[error("cannot label an empty window")]
    EmptyWindow,

    #[error("training: {0}")]
    Training(String),

    #[error("schema mismatch at column {index}: model expects `{expected}`, matrix has `{found}`")]
    SchemaMismatch { index: usize, expected: String, found: String },

    #[error("{0}")]
    Metric(String),

    #[error("model document: {0}")]
    ModelFormat(String),

    #[error("feature matrix: {0}")]
    Matrix(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Tags an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage { stage, source: Box::new(self) }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
