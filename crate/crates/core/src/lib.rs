//! Semiparametric estimation of strain-specific vaccine efficacy contrasts
//! from case-only data with partially missing strain labels.
//!
//! The target is the coefficient vector `beta` of the partially linear
//! logistic model `logit P(J = 1 | A, W, T) = a beta' f(w, t) + h(w, t)`,
//! estimated by targeted maximum likelihood either under missingness that
//! depends on baseline variables only ([`tmle::run_tmle_basic`]) or also on
//! post-vaccination covariates ([`tmle::run_tmle_adjusted`]).

pub mod cli;
pub mod data;
pub mod error;
pub mod features;
pub mod inference;
pub mod nuisance;
pub mod plogit;
pub mod simulation;
pub mod tmle;

pub use error::{Error, Result};
