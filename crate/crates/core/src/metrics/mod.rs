//! Agreement, similarity, confusion, confidence and neutrality measures.

pub mod alpha;
pub mod confusion;
pub mod neutral;
pub mod nll;
pub mod similarity;

pub use alpha::{krippendorff_alpha, AlphaError, RatingsMatrix};
pub use confusion::{confusion_stats, ConfusionStats};
pub use neutral::{min_set_jaccard, neutral_gt_proportions, GtProportions, NeutralError};
pub use nll::{nll_summary, NllGroupStats, NllStatistic};
pub use similarity::{
    greedy_match_f1, rationale_consistency, EncoderSimilarity, HashingEncoder, RationaleConsistency, SimilarityError,
    TextSimilarity, TokenEncoder,
};
