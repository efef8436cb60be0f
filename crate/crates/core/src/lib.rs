pub mod campaign;
pub mod detect;
pub mod engine;
pub mod fuzz;
pub mod ir;
pub mod tensor;
pub mod trace;
