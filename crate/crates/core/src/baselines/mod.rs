//! Non-graph comparators. They consume the same standardized feature rows as
//! GraphSAGE, autoregressive slot included, but never look at neighbours.

mod cnn;
mod gbt;
mod mlp;

pub use cnn::{cnn_forward, CnnConfig, CnnModel, CnnParams};
pub use gbt::{gbt_fit, gbt_predict, GbtConfig, GbtFit, GbtModel, RegressionTree, TreeNode};
pub use mlp::{mlp_forward, MlpConfig, MlpModel, MlpParams};
