pub mod adversarial;
pub mod autodiff;
pub mod cli;
pub mod corpus;
pub mod decoding;
pub mod exec;
pub mod imputation;
pub mod latent;
pub mod model;
pub mod nn;
pub mod rng;
pub mod synthetic;
pub mod training;
