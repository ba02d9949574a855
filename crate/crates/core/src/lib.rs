//! Targeted L2 adversarial attacks against small MLP classifiers.
//!
//! The crate implements a gradient-guided perturbation search that constrains
//! the perturbation to −θ⊙g/‖g‖₂ and tunes the per-pixel magnitudes θ with
//! Adam, alongside three baselines (a change-of-variables CW attack, an L2
//! iterative FGSM, and a projected L-BFGS attack), plus everything needed to
//! run them end to end: a from-scratch MLP with exact backprop, Adam and
//! L-BFGS optimizers, dataset generation and ingestion, and a benchmark
//! harness with CSV/SVG reporting behind the `advgrad` binary.

pub mod attacks;
pub mod bench;
mod bytes;
pub mod cli;
pub mod data;
pub mod error;
pub mod nn;
pub mod optim;
pub mod plot;
pub mod rng;
pub mod tensor;

pub use attacks::{
    cw_l2_attack, grad_guided_attack, ifgsm_eps_sweep, ifgsm_l2_attack, lbfgs_attack,
    run_c_search, AttackConfig, AttackFailure, AttackResult, EpsSweep, SearchAttack,
};
pub use bench::{
    aggregate_results, emit_table_csv, emit_table_markdown, evaluate_attack, parse_table_csv,
    BenchRow, EvalReport, Method,
};
pub use data::{
    gen_synthetic_2d, pick_targets, read_cifar10_bin, read_dataset, read_idx, write_dataset,
    LabeledDataset,
};
pub use error::{Error, Result};
pub use nn::{train_classifier, Activation, Layer, MlpModel, TrainConfig};
pub use optim::{
    adam_step, armijo_line_search, lbfgs_direction, project_box, AdamState, LbfgsState,
};
pub use plot::{render_svg_scatter, trajectory_csv, Trajectory2D};
pub use rng::SeededRng;
pub use tensor::{cosine_similarity, l2_distance, ElementwiseOp, Tensor};
