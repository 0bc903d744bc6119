pub mod bench;
pub mod case_io;
pub mod error;
pub mod formulation;
pub mod lagrangian;
pub mod mip;
pub mod model;
pub mod netflow;
pub mod numerics;
pub mod relaxation;
pub mod toy;
