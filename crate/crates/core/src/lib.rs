//! p-Wasserstein eigendistances of finite Markov chains.
//!
//! An eigendistance is a pseudo-metric `rho` with `W_p(rho) = (1 - kappa) rho`,
//! where `W_p(rho)(x, y)` is the p-Wasserstein distance between the rows
//! `P^x` and `P^y` under the ground cost `rho`. The crate provides
//!
//! - an exact transportation solver ([`transport`]) and the map `W_p`
//!   ([`wasserstein`]);
//! - fixed-point iterations and certificates ([`eigen`]);
//! - the coupling operators realizing an eigendistance ([`coupling`]);
//! - lumpability and product constructions ([`structure`]);
//! - concentration bounds and Monte Carlo checks ([`concentration`]);
//! - closed-form example families ([`families`]).

pub mod concentration;
pub mod coupling;
pub mod eigen;
pub mod error;
pub mod families;
pub mod io;
pub mod markov;
pub mod matrix;
pub mod structure;
pub mod transport;
pub mod wasserstein;

pub use coupling::{
    coupling_for, coupling_irreducible, extract_coupling, simulate_coupled, symmetrize,
    CouplingOperator,
};
pub use eigen::{
    certify, iterate_f, iterate_maximal, lambda_scale, p_root_transfer,
    sandwich_from_eigenfunction, verify_eigendistance, EigendistanceResult, SandwichResult,
    Verification,
};
pub use error::{Error, Result};
pub use markov::{
    alpha_metric, validate_chain, validate_metric, MarkovChain, PseudoMetric, Tolerances,
};
pub use matrix::Matrix;
pub use structure::{
    find_lumpable_partition, is_lumpable, product_chain, quotient_chain, tensor_metric,
    zero_set_partition, Partition, SearchMode,
};
pub use transport::{solve_transport, TransportInstance, TransportPlan};
pub use wasserstein::{apply_w, wp, PairPlans, WpResult};
