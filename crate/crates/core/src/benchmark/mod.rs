//! Synthetic two-domain benchmark and the ablation / ratio-sweep harness.

mod harness;
mod synth;

pub use harness::{
    ablation_on, median, ratio_sweep_on, run_ablation, run_ratio_sweep, AblationReport, AblationRow, HarnessConfig, DESK_LR,
    RatioReport, RatioRow,
};
pub use synth::{generate, random_orthogonal, synthesize, Shift, SynthConfig, SynthData, MANIFEST_FILE};
