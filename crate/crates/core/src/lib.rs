//! Uncertainty-aware importance-weighted mixup for robustness to
//! subpopulation shift, plus the baselines and evaluation protocol needed
//! to compare it against them on desk-scale problems.
//!
//! The pipeline has two phases. First an ordinary ERM run records, after
//! every epoch, which training samples it misclassifies
//! ([`uncertainty::train_erm_with_trace`]). The fraction of epochs inside a
//! window during which a sample is wrong is its training uncertainty `u`,
//! and `w = η·u + c` is its importance weight. Second, a mixup run scales
//! the two loss terms of every mixed pair by the weights of the samples
//! that produced it ([`train::train_umix`]).
//!
//! ```
//! use umix::data::{generate_four_moons, FourMoonsSpec};
//! use umix::train::TrainConfig;
//! use umix::uncertainty::{compute_uncertainty, compute_weights, train_erm_with_trace};
//!
//! let data = generate_four_moons(&FourMoonsSpec {
//!     samples_per_group: [40, 40, 5, 5],
//!     ..Default::default()
//! })?;
//! let cfg = TrainConfig { epochs: 4, lr: 0.05, ..TrainConfig::default() };
//! let (_model, trace) = train_erm_with_trace(&data, &cfg, 1, 3)?;
//! let u = compute_uncertainty(&trace, data.labels(), 1, 3)?;
//! let w = compute_weights(&u, 10.0, 1.0)?;
//! assert!(w.w.iter().all(|&wi| wi >= 1.0));
//! # Ok::<(), umix::Error>(())
//! ```

pub mod data;
pub mod error;
pub mod eval;
pub mod grad;
pub mod io;
pub mod loss;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod theory;
pub mod train;
pub mod uncertainty;

pub use error::{Error, Result};
