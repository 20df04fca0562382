//! Model assembly, training loop, checkpoints, metrics and gradient checks.

mod checkpoint;
mod config;
mod gradcheck;
mod metrics;
mod model;
mod pipeline;
mod trainer;

pub use checkpoint::{best_path, Checkpoint, CHECKPOINT_VERSION};
pub use config::{FcSpec, LayerSpec, ModelConfig};
pub use gradcheck::{
    analytic_gradient, gradcheck, gradcheck_with, rel_error, tiny_config, tiny_problem, GradcheckEntry, GradcheckReport, Samples,
    GRADCHECK_EPS, GRADCHECK_TOLERANCE, REL_FLOOR,
};
pub use metrics::{append_metrics, parse_metrics, read_metrics, render_svg, EpochRecord};
pub use pipeline::{prepare_data, BARS_SAMPLES};
pub use model::{plan, Model, Noise, StagePlan, Trace};
pub use trainer::{evaluate, load_model, load_params, train_loop, EvalReport, TrainOptions, TrainOutcome, Trainer, CHUNK};
