pub mod augment;
pub mod binary;
pub mod cli;
pub mod conv;
pub mod cost;
pub mod data;
pub mod error;
pub mod exec;
pub mod gradcheck;
pub mod layers;
pub mod models;
pub mod rng;
pub mod serialize;
pub mod tape;
pub mod train;
pub mod tensor;
