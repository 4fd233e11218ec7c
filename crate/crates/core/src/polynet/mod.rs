//! Function approximators built from dense layers and Legendre/Chebyshev
//! blocks, with exact input derivatives and parameter gradients.

mod checkpoint;
mod jets;
mod network;
mod poly;

pub use jets::Jets;
pub use network::{
    Activation, Architecture, ArchitectureBuilder, DerivativeBundle, ForwardPass, LayerSpec,
    Network,
};
pub use poly::{
    chebyshev_eval, eval_with_derivatives, legendre_derivative_matrix, legendre_eval,
    LegendreDerivMatrix, PolyFamily,
};
