//! Retraining, image-quality metrics, the TV baseline and test-set
//! evaluation.

mod eval;
mod metrics;
mod train;
mod tv;

pub use eval::{
    evaluate, evaluate_samples, test_samples, Aggregate, MetricsReport, Reconstructor, SliceMetrics, Tv,
    ZeroFilled,
};
pub use metrics::{mse, nmse, psnr, psnr_from_mse, ssim};
pub use train::{train, TrainReport, TrainSchedule};
pub use tv::{total_variation, tv_objective, tv_reconstruct, tv_reconstruct_traced, TvTrace};
