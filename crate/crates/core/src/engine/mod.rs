//! Reference execution engine: two honest accumulation flavors plus mutants
//! carrying injected faults, and a finite-difference gradient oracle.

pub mod accum;
pub mod backend;
pub mod exec;
pub mod fd;
pub mod kernels;
pub mod linear;
pub mod loss;

pub use backend::{list_backends, register_mutant_backend, Backend, BackendDescriptor, BackendError, Fault, Flavor};
pub use exec::{node_meta, run_training_step, stack_input_grads, Pass, Program, StepResult};
pub use fd::{compare_with_fd, finite_difference_gradients, FdComparison, FdNode, FdOptions};
