//! Data generation, preprocessing, optimisation and the train / evaluate /
//! predict drivers.

mod data;
mod evaluate;
mod optim;
mod predict;
mod preprocess;
mod train;

pub use data::{gen_phantoms, split_sizes, Dataset, Ellipse, Geometry, Manifest, PhantomSample, PhantomSpec, Sample, SampleEntry, Tube};
pub use evaluate::{evaluate_masks, evaluate_model, metrics_csv, predict_masks, run_evaluation, write_report};
pub use optim::{adamw_step, cosine_lr, AdamConfig, OptimizerKind, OptimizerState};
pub use predict::{encode_pgm, encode_ppm, overlay, read_pgm, run_prediction, GrayImage, PALETTE};
pub use preprocess::{preprocess_slice, resize_bilinear, resize_nearest};
pub use train::{load_prepared, read_log, run_training, stack_images, EarlyStop, EarlyStopping, TrainConfig, TrainSummary, Trainer};

/// Environment variable that overrides every configured seed.
pub const SEED_ENV: &str = "TWM_SEED";

/// `TWM_SEED` when set; an unparsable value is a configuration error.
pub fn seed_override() -> crate::error::Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| crate::error::Error::InvalidConfig(format!("{SEED_ENV}={v} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}
