//! Multi-task sequence tagger.
//!
//! The label space is split into three tasks, one per label component
//! (`n`, `c`, `u`), plus any auxiliary tracks. All heads read the same
//! hidden vector produced by a [`ContextEncoder`]; the provided encoder is
//! a window of word and POS embeddings fed through one tanh layer.

mod model;
mod tensor;
mod train;
mod vocab;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use model::{
    argmax, featurize, log_sum_exp, softmax, softmax_in_place, ContextEncoder, Dropout,
    EncoderPass, Features, LossBreakdown, Pass, TaggerModel, Vocabularies, WindowEncoder,
};
pub use tensor::{Grad, Gradients, Sgd, Tensor};
pub use train::{
    build_vocabularies, evaluate, predict_batch, train_mtl, EpochStats, Evaluation, Trained,
    TrainingExample,
};
pub use vocab::{InputVocab, Vocab};

use crate::auxlabels::AuxKind;
use crate::exec::Execution;

/// A prediction task, i.e. one softmax head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    N,
    C,
    U,
    Aux(AuxKind),
}

impl Task {
    pub fn is_main(&self) -> bool {
        !matches!(self, Task::Aux(_))
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::N => f.write_str("n"),
            Task::C => f.write_str("c"),
            Task::U => f.write_str("u"),
            Task::Aux(kind) => write!(f, "aux_{kind}"),
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum TaggerError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("label '{label}' of task {task} is not in the model vocabulary")]
    UnknownLabel { task: String, label: String },
    #[error("training examples disagree on auxiliary tracks")]
    InconsistentAux,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("training diverged in epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
}

/// Supervised training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Learning rate in epoch `e` is `learning_rate / (1 + lr_decay · e)`.
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the summed auxiliary losses.
    pub aux_weight: f64,
    pub window_radius: usize,
    pub dropout: f64,
    pub word_dim: usize,
    pub pos_dim: usize,
    pub hidden_dim: usize,
    /// Syntactic distances above this value are clipped to it.
    pub distance_cap: Option<usize>,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.2,
            momentum: 0.9,
            lr_decay: 0.05,
            epochs: 100,
            batch_size: 8,
            aux_weight: 0.1,
            window_radius: 2,
            dropout: 0.5,
            word_dim: 100,
            pos_dim: 20,
            hidden_dim: 128,
            distance_cap: None,
            seed: 1,
            execution: Execution::default(),
        }
    }
}

const CHECKPOINT_FORMAT: &str = "treetag-model";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: TaggerModel,
}

impl TaggerModel {
    /// Serialize to the JSON checkpoint container.
    pub fn save(&self) -> String {
        serde_json::to_string(&Checkpoint {
            format: CHECKPOINT_FORMAT.to_owned(),
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        })
        .expect("model serialization cannot fail")
    }

    pub fn load(text: &str) -> Result<TaggerModel, TaggerError> {
        let checkpoint: Checkpoint =
            serde_json::from_str(text).map_err(|e| TaggerError::Checkpoint(e.to_string()))?;
        if checkpoint.format != CHECKPOINT_FORMAT {
            return Err(TaggerError::Checkpoint(format!(
                "unknown format '{}'",
                checkpoint.format
            )));
        }
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(TaggerError::Checkpoint(format!(
                "unsupported version {}",
                checkpoint.version
            )));
        }
        let model = checkpoint.model;
        model.check_shapes()?;
        if let Some(name) = model.first_non_finite() {
            return Err(TaggerError::NonFinite(format!("parameter tensor {name}")));
        }
        Ok(model)
    }

    fn check_shapes(&self) -> Result<(), TaggerError> {
        let fresh = TaggerModel::new(self.vocab.clone(), self.scheme, self.config.clone());
        let mismatch = fresh.params.len() != self.params.len()
            || fresh.params.iter().zip(&self.params).any(|(a, b)| {
                a.rows != b.rows || a.cols != b.cols || b.data.len() != b.rows * b.cols
            });
        if mismatch || self.vocab.tasks.len() < 3 {
            return Err(TaggerError::Checkpoint(
                "parameter shapes do not match the vocabularies".to_owned(),
            ));
        }
        Ok(())
    }
}

/// Mix a base seed with two stream indices (splitmix64 finalizer).
pub(crate) fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
