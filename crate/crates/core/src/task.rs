use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Error;

/// The three challenge tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Va,
    Expr,
    Au,
}

/// Expression categories in label order.
pub const EXPRESSION_NAMES: [&str; 8] = [
    "Neutral",
    "Anger",
    "Disgust",
    "Fear",
    "Happiness",
    "Sadness",
    "Surprise",
    "Other",
];

/// Action units in column order.
pub const AU_NAMES: [&str; 12] = [
    "AU1", "AU2", "AU4", "AU6", "AU7", "AU10", "AU12", "AU15", "AU23", "AU24", "AU25", "AU26",
];

pub const NUM_EXPRESSIONS: usize = 8;
pub const NUM_AUS: usize = 12;

impl Task {
    pub const ALL: [Task; 3] = [Task::Va, Task::Expr, Task::Au];

    /// Output arity of a per-frame prediction for this task.
    pub fn output_width(self) -> usize {
        match self {
            Task::Va => 2,
            Task::Expr => NUM_EXPRESSIONS,
            Task::Au => NUM_AUS,
        }
    }

    /// Annotation directory name in the challenge layout.
    pub fn challenge_dir(self) -> &'static str {
        match self {
            Task::Va => "VA_Estimation_Challenge",
            Task::Expr => "EXPR_Recognition_Challenge",
            Task::Au => "AU_Detection_Challenge",
        }
    }

    /// Header line written at the top of annotation files.
    pub fn annotation_header(self) -> alloc::string::String {
        match self {
            Task::Va => "valence,arousal".into(),
            Task::Expr => EXPRESSION_NAMES.join(","),
            Task::Au => AU_NAMES.join(","),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Va => "va",
            Task::Expr => "expr",
            Task::Au => "au",
        }
    }
}

/// Dataset partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Val];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    /// Directory name used by the challenge's annotation layout.
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "Train_Set",
            Split::Val => "Validation_Set",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" | "training" | "train_set" => Ok(Split::Train),
            "val" | "valid" | "validation" | "validation_set" => Ok(Split::Val),
            other => Err(Error::Contract(alloc::format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "va" => Ok(Task::Va),
            "expr" => Ok(Task::Expr),
            "au" => Ok(Task::Au),
            other => Err(Error::Contract(alloc::format!("unknown task {other:?}"))),
        }
    }
}
