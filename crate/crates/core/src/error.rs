use std::fmt;

/// Pipeline stage an error originated from, used to tag CLI messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Load,
    Features,
    Matching,
    Presegment,
    Seeding,
    Merging,
    Boundary,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Features => "features",
            Stage::Matching => "matching",
            Stage::Presegment => "presegment",
            Stage::Seeding => "seeding",
            Stage::Merging => "merging",
            Stage::Boundary => "boundary",
            Stage::Output => "output",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("object not found")]
    ObjectNotFound,

    #[error("detection failed: {0}")]
    Detection(String),

    #[error("[{stage}] {source}")]
    Staged {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Strips any stage tags and returns the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::Staged { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_object_not_found(&self) -> bool {
        matches!(self.root(), Error::ObjectNotFound)
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| match e {
            staged @ Error::Staged { .. } => staged,
            other => Error::Staged {
                stage,
                source: Box::new(other),
            },
        })
    }
}
