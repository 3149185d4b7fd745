//! Cross-validated recursive stacking of heterogeneous experts.
//!
//! A roster of self-contained experts (linear models, trees, boosting,
//! nearest neighbours, ...) is fitted level by level on out-of-fold
//! augmented data. A neural complementary expert and a softmax combination
//! network are then trained end to end on the top-level augmented rows, where
//! every expert output is a frozen column, so only the neural parameters
//! receive gradients. At serving time the experts are refitted on the full
//! support set and mixed by the learned combination weights.
//!
//! Module map:
//!
//! * [`dataio`]: LIBSVM parsing, synthetic fixtures, label spaces, fold schemes.
//! * [`experts`]: the heterogeneous expert roster.
//! * [`neural`]: dense layers, softmax, the complementary expert, the
//!   combination network, hand-derived gradients and Adam.
//! * [`metastack`]: meta-level construction, meta training, adaptation,
//!   serving and attention reports.
//! * [`metrics`]: accuracy, weighted one-vs-rest AUC, weighted F1, log loss,
//!   Cohen's kappa, precision and recall.
//! * [`cli`]: experiment configs, the model file, and the command surface.

pub mod cli;
pub mod dataio;
pub mod experts;
pub mod hexfloat;
pub mod matrix;
pub mod metastack;
pub mod metrics;
pub mod neural;
mod seed;

pub use dataio::{ConceptVector, Dataset, FoldMap, LabelKind, LabelSpace};
pub use experts::{ExpertSpec, ProbVector, TrainedExpert};
pub use matrix::Matrix;
pub use metastack::{StackConfig, SuperConeModel};
pub use metrics::MetricsReport;
pub use neural::MetaParams;
