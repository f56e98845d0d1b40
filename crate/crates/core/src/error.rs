use alloc::string::String;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("observation contains a non-finite value")]
    NonFiniteObservation,
    #[error("action {action} is out of range for {count} actions")]
    InvalidAction { action: usize, count: usize },
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
    #[error("unknown agent mode `{0}`")]
    UnknownMode(String),
    #[error("unknown advisor profile `{0}`")]
    UnknownProfile(String),
    #[error("cannot fit {k} clusters to {points} points")]
    TooFewPoints { k: usize, points: usize },
    #[error("training batch is empty")]
    EmptyBatch,
    #[error("temporal-difference loss is not finite")]
    NonFiniteLoss,
    #[error("training diverged in episode {episode}")]
    Diverged { episode: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = core::result::Result<T, Error>;
