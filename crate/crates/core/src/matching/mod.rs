//! Bipartite matching between predictions and ground truth, and the training objective
//! built on top of it.

mod hungarian;
mod loss;

pub use hungarian::{hungarian, Assignment, CostMatrix};
pub use loss::{match_cost, set_loss, sim_loss, soft_dice, total_loss, InstanceTarget, LossWeights, SetLoss};
