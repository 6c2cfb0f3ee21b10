//! Source training, iterative pseudo-labelling and the uncertainty-aware
//! mean teacher.

mod config;
mod pseudo;
mod teacher;
mod train;

pub use config::{AdaptConfig, TrainConfig};
pub use pseudo::{
    infer_pseudo_labels, iterative_pseudo_rounds, read_pseudo_labels, threshold_detections, write_pseudo_labels,
    LabelFileHeader, PseudoLabelSet, PseudoRounds,
};
pub use teacher::{mc_teacher_predict, mean_teacher_train, uncertainty_weight, MeanTeacherOutput, TeacherStat, TeacherStats, MIN_WEIGHT};
pub use train::{epoch_means, log_csv, train_detector, StepLog, TrainOutput};
