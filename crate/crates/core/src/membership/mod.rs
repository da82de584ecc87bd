//! Membership inference: shadow ensembles, noise-averaged losses, the
//! loss-threshold attack, LiRA, ROC evaluation, timestep sweeps and attack
//! success over training progress.

mod lira;
mod loss;
mod progress;
mod roc;
mod shadow;

pub use lira::{
    fit_stats, leave_one_out, leave_one_out_from_losses, lira_score, lira_scores,
    normal_log_density, run_lira, timestep_sweep, LiraStats, VarianceMode, VARIANCE_FLOOR,
};
pub use loss::{averaged_loss, example_losses, loss_matrix, LossConfig};
pub use progress::{training_progress_attack, FirstSuccess, ProgressPoint, ProgressReport};
pub use roc::{
    auc, loglog_bins, loss_threshold_attack, roc_curve, select_tau, tpr_at_fpr, write_roc,
    write_scores, AttackScoreSet, Roc, TauMetric,
};
pub use shadow::{draw_masks, train_shadow_models, MaskStrategy, ShadowConfig, ShadowEnsemble};
