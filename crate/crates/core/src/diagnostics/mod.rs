//! Pretraining-confusion diagnostics and the two illustrative demos.

mod confusion;
mod inflation;
mod plot;
mod toy;

pub use confusion::{confusion_report, pca_2d, ConfusionReport, FlaggedPair, DEFAULT_FLAG_THRESHOLD};
pub use inflation::{auroc_inflation_demo, ConfusionMode, InflationConfig, InflationResult};
pub use plot::{render_scatter, save_scatter_png};
pub use toy::{
    gaussian_split_auroc, toy_centers, toy_confusion_demo, toy_dataset, toy_separated_control, ToyDemoResult,
    CIRCLES, DIAMONDS, SHAPE_NAMES, SQUARES, TRIANGLES,
};
