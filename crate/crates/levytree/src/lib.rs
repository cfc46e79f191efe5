//! Simulation and statistical verification toolkit for spectrally positive
//! Lévy processes conditioned to reach arbitrarily large heights before
//! hitting 0.
//!
//! The crate has two regimes:
//!
//! - **finite variation**: a compensated compound Poisson process with drift
//!   −1 and finite jump measure Λ. This process is the contour of a splitting
//!   tree, which makes every quantity of interest (height process, record
//!   measure, survival probabilities, conditioned laws) exactly computable or
//!   exactly simulable. Modules [`model`], [`tree`], [`contour`],
//!   [`pathsim`], [`conditioned`].
//! - **Brownian**: drift −α, variance 2β, where the height process and the
//!   conditioning martingale have closed forms. Module [`brownian`].
//!
//! Module [`mc`] is the shared statistical harness (mergeable estimators,
//! KS/chi-square tests, reproducible parallel streams) and [`suite`] wires
//! the whole verification matrix together.
//!
//! ```
//! use levytree::contour::{height_and_rho, jccp_from_tree, martingale_m, tree_from_path};
//! use levytree::mc::seed_stream;
//! use levytree::tree::{sample_tree, TreeCaps};
//! use levytree::LifespanMeasure;
//!
//! // exponential lifetimes at birth rate 0.8: subcritical, m = 0.8
//! let measure = LifespanMeasure::exponential(0.8, 1.0)?;
//! let mut rng = seed_stream(7, 0);
//! let tree = sample_tree(&measure, 1.0, TreeCaps::default(), &mut rng)?;
//!
//! // the contour visits the whole tree and ends at 0 at the total length
//! let path = jccp_from_tree(&tree)?;
//! assert!((path.end_time() - tree.total_length()).abs() < 1e-10);
//! assert_eq!(tree_from_path(&path)?.len(), tree.len());
//!
//! // record masses sum to the path value; their count is the height
//! let t = 0.5 * path.end_time();
//! let rho = height_and_rho(&path, t)?;
//! assert!((rho.total_mass() - path.value(t)).abs() < 1e-10);
//!
//! // the height-weighted combination is the conditioning martingale
//! let m = martingale_m(&path, t, measure.m())?;
//! assert!(m >= rho.total_mass());
//! # Ok::<(), levytree::Error>(())
//! ```

pub mod brownian;
pub mod conditioned;
pub mod contour;
pub mod error;
pub mod mc;
pub mod model;
pub mod pathsim;
pub mod suite;
pub mod tree;

pub use error::{Error, Result};
pub use model::{BrownianModel, LevyModel, LifespanKind, LifespanMeasure, ModelConfig};
