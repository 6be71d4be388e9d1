use std::fmt;
use std::path::Path;

use evmx_core::dataset::DatasetError;
use evmx_core::events::EventError;
use evmx_core::image::ImageError;
use evmx_core::metrics::MetricError;
use evmx_core::reconstruction::CvaeError;
use evmx_core::representation::ReprError;
use evmx_core::snn::SnnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Bad flags or bad input data. Exit code 1.
    Validation,
    /// Anything that went wrong while running. Exit code 2.
    Runtime,
}

#[derive(Debug, Clone)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Validation,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Runtime,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::Validation => 1,
            Kind::Runtime => 2,
        }
    }

    /// Prefix the message with the file it concerns.
    pub fn at(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        let kind = if e.kind() == std::io::ErrorKind::NotFound {
            Kind::Validation
        } else {
            Kind::Runtime
        };
        Self {
            kind,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl fmt::Display for Failure {
    /// One line: `error kind=<validation|runtime> <message>`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            Kind::Validation => "validation",
            Kind::Runtime => "runtime",
        };
        let msg = self.message.replace('\n', " ");
        write!(f, "error kind={kind} {msg}")
    }
}

impl From<EventError> for Failure {
    fn from(e: EventError) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<ReprError> for Failure {
    fn from(e: ReprError) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(_) => Self::runtime(e.to_string()),
            _ => Self::validation(e.to_string()),
        }
    }
}

impl From<ImageError> for Failure {
    fn from(e: ImageError) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<MetricError> for Failure {
    fn from(e: MetricError) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<SnnError> for Failure {
    fn from(e: SnnError) -> Self {
        match e {
            SnnError::NonFinite(_) | SnnError::NoRecordedForward => Self::runtime(e.to_string()),
            _ => Self::validation(e.to_string()),
        }
    }
}

impl From<CvaeError> for Failure {
    fn from(e: CvaeError) -> Self {
        match e {
            CvaeError::NonFiniteActivation(_) => Self::runtime(e.to_string()),
            _ => Self::validation(e.to_string()),
        }
    }
}
