//! Numerical laboratory for the learning dynamics of a nonlinear perceptron
//! doing binary classification on Gaussian input classes.
//!
//! The crate has two complementary halves that must agree with each other:
//!
//! * **Theory** — closed-form expectations of the weight update ("drift")
//!   under supervised cross-entropy SGD and REINFORCE ([`drift`]), and
//!   deterministic flow equations for the mean and covariance of the weight
//!   distribution integrated with fixed-step RK4 ([`flow`]).
//! * **Experiment** — a seeded Monte Carlo simulator of the actual online
//!   learning rules ([`simulate`]), plus experiment drivers that sweep noise
//!   and anisotropy, fit decay rates, locate fixed points, and run
//!   continual-learning forgetting protocols ([`experiments`]).
//!
//! Supporting modules: special functions (error function, normal CDF, Owen's
//! T) in [`specfun`]; Gaussian task distributions and sampling in [`task`];
//! MNIST ingestion, Gabor features, and theory-vs-data comparison in
//! [`mnist`].

pub mod drift;
pub mod experiments;
pub mod flow;
pub mod mnist;
pub mod simulate;
pub mod specfun;
pub mod task;
