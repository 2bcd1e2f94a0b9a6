//! Numerical laboratory for mixed local-nonlocal elliptic operators
//! `L = Δ + aI` with exterior Dirichlet data in one and two dimensions.

pub mod barriers;
pub mod continuum;
pub mod error;
mod fft;
pub mod fit;
pub mod geometry;
pub mod kernels;
pub mod lattice;
pub mod linalg;
pub mod operator;
pub mod overdetermined;
pub mod quadrature;
pub mod regularity;
pub mod solver;

pub use error::{Error, Result};
pub use geometry::{CollarRegion, Domain, Point, Shape, SmoothedDistance};
pub use kernels::{check_assumption, AssumptionReport, DominatingKernel, Kernel, KernelFamily};
pub use lattice::{Beyond, GridFunction, Lattice};
pub use operator::{apply_l, nonlocal_eval, NonlocalOperator, QuadratureScheme};
pub use barriers::{ExpBarrier, PsiBarrier, ViolationReport};
pub use overdetermined::{MovingPlaneScan, ReflectionFrame, SerrinReport, SymmetryReport};
pub use regularity::{RegularityReport, SuiteOptions};
pub use solver::{assemble, Control, DiscreteOperator, PicardOptions, PolicyOptions, SolveReport};
