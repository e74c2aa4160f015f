//! Quantum entanglement percolation on a single-layer honeycomb lattice.
//!
//! The crate goes from exact state-conversion formulas to Monte Carlo
//! percolation:
//!
//! - [`qstate`]: dense statevectors, Schmidt decomposition, projective
//!   measurement. The ground truth for every closed form.
//! - [`locc`]: majorization, optimal conversion probabilities, singlet
//!   conversion, and distillation of generalized GHZ states.
//! - [`swap`]: GHZ-basis swapping at a node, Bell swapping, fusion and σx
//!   reduction of cat states.
//! - [`lattice`]: honeycomb lattices, the GHZ transformation to a triangular
//!   lattice of triangles, the site model, cat-state planning and
//!   measurement counts.
//! - [`percolation`]: union-find clustering, Newman–Ziff sweeps, threshold
//!   estimation and end-to-end experiments.
//! - [`verify`]: the oracle checks behind `qep verify`.
//!
//! ```
//! use qep::locc::PairState;
//! use qep::swap::{average_scp, ghz_swap};
//!
//! let pair = PairState::from_phi1(0.4).unwrap();
//! let table = ghz_swap(pair);
//! assert_eq!(table.outcomes.len(), 8);
//! assert!((average_scp(pair) - 0.704).abs() < 1e-12);
//! ```

pub mod lattice;
pub mod locc;
pub mod percolation;
pub mod qstate;
pub mod swap;
pub mod verify;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/conversion.md")]
    mod conversion {}
    #[doc = include_str!("../../../book/src/swapping.md")]
    mod swapping {}
    #[doc = include_str!("../../../book/src/lattice.md")]
    mod lattice {}
    #[doc = include_str!("../../../book/src/percolation.md")]
    mod percolation {}
    #[doc = include_str!("../../../book/src/counts.md")]
    mod counts {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
