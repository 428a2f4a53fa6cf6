//! Recommendation, evaluation and replay on top of the stored similarity graph.

pub mod bots;
pub mod evaluate;
pub mod predict;
pub mod replay;

pub use bots::{detect_bot_rings, BotConfig, BotRing};
pub use evaluate::{precision_recall, PrecisionRecall};
pub use predict::{predict, predict_with, top_n, top_n_with, NeighborSource, PredictConfig, Prediction};
pub use replay::{replay, Policy, ReplayConfig, ReplayMetrics, ReplayOutcome};
