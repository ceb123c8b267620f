//! Reverse-mode adjoints of the alignment calculus.
//!
//! Every adjoint here is derived by hand from the corresponding forward
//! kernel in [`crate::align`] and is checked against central differences
//! by [`finite_diff_check`].

mod alpha;
mod check;
mod chunk;
mod constrained;
mod layer;

pub use alpha::{alpha_adjoint, alpha_adjoint_full};
pub use check::{finite_diff_check, numeric_gradient, relative_error};
pub use chunk::{chunk_adjoint, context_adjoint};
pub use constrained::constrained_adjoint;
pub use layer::{layer_backward, layer_forward, AttentionMode, GradientBundle, LayerForward};

pub(crate) use alpha::alpha_backward;
pub(crate) use chunk::{chunk_backward, context_backward};
pub(crate) use constrained::{mutual_backward, self_backward};
