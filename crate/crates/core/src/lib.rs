pub mod dimensional;
pub mod dynamics;
pub mod envs;
pub mod mdp;
pub mod mpc;
pub mod tuning;
