use std::path::PathBuf;

/// Errors produced anywhere in the stylisation and reconstruction pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("configured layers missing from the backbone: {}", .0.join(", "))]
    MissingLayers(Vec<String>),

    #[error("feature bank has no {what} entry for layer `{layer}` at timestep {timestep}")]
    IncompleteBank {
        what: &'static str,
        layer: String,
        timestep: usize,
    },

    #[error("backend `{source_id}`: {reason}")]
    Backend { source_id: String, reason: String },

    #[error("point ({:.4}, {:.4}, {:.4}) lies outside the triplane bounding box", .0[0], .0[1], .0[2])]
    OutOfBounds([f64; 3]),

    #[error("degenerate camera: {0}")]
    DegenerateCamera(String),

    #[error("missing supervision raster: {0}")]
    MissingSupervision(&'static str),

    #[error("non-finite loss at step {step} ({stage}): {detail}")]
    NonFiniteLoss {
        step: usize,
        stage: &'static str,
        detail: String,
    },

    #[error("embedding backend unavailable: {0}")]
    EmbedderUnavailable(String),

    #[error("missing input file {}", .0.display())]
    MissingInput(PathBuf),

    #[error("missing assets:\n{}", .0.iter().map(|p| format!("  {}", p.display())).collect::<Vec<_>>().join("\n"))]
    MissingAssets(Vec<PathBuf>),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Process exit code used by the command-line front end.
    ///
    /// 2 = validation, 3 = backend or weight loading, 4 = runtime failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invalid { .. } | Error::MissingInput(_) | Error::MissingLayers(_) => 2,
            Error::MissingAssets(_) => 2,
            Error::Backend { .. } | Error::EmbedderUnavailable(_) | Error::Checkpoint(_) => 3,
            _ => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
