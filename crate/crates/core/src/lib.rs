//! Composite convex optimization with FLAG, an accelerated proximal method
//! whose mirror steps use an AdaGrad-style diagonal metric, plus
//! baselines, numerical lemma oracles and a benchmark harness.
//!
//! ```no_run
//! use flagopt::bench::{generate_problem, ProblemDescriptor};
//! use flagopt::flag::{flag_run, FlagConfig};
//!
//! let problem = generate_problem(&ProblemDescriptor::reference_lasso()).unwrap();
//! let out = flag_run(&problem, &FlagConfig::new(200)).unwrap();
//! println!("F(y) = {}", problem.eval(&out.solution).unwrap());
//! ```

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bench;
pub mod error;
pub mod flag;
pub mod oracles;
pub mod par;
pub mod problem;
pub mod prox;

pub use error::{Error, Result};
pub use flag::{flag_run, FlagConfig, FlagOutput, IterateRecord, StepTrace};
pub use problem::{CompositeProblem, FeasibleSet, NonsmoothPart, SmoothPart, Vector};
