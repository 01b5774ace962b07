pub mod eval;
pub mod infer;
pub mod prepare;
pub mod train;
