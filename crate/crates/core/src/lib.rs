//! Differentiable L0 regularization with hard-concrete gates.
//!
//! The crate provides the gate distribution and its penalty, a small set of
//! layers with hand-written gradients, dictionary feature libraries, three
//! model families (dense, gated dense and a gated linear model over a
//! feature library), an inverted-pendulum data source and the training
//! loop tying them together.

pub mod features;
pub mod gates;
pub mod layers;
pub mod models;
pub mod par;
pub mod pendulum;
pub mod training;
