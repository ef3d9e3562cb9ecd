//! Temporal action detection: 1-D anchors, a window proposal network and a
//! window classification head on top of the classification backbone.

pub mod anchors;
pub mod model;
pub mod pooling;
pub mod records;
pub mod targets;
pub mod train;
pub mod window;

pub use anchors::{generate_anchors, AnchorConfig};
pub use model::{DetectorConfig, DetectorNet};
pub use pooling::crop_and_resize_1d;
pub use records::{parse_detection_records, write_detection_records, DetectionRecord};
pub use targets::{assign_wpn_targets, sample_minibatch, AnchorLabel, AnchorTargets, MatchConfig};
pub use train::{rescale_sequence, train_detector, DetectorTrainConfig, DetectorTrainOutcome, IterationLoss};
pub use window::{decode_window, encode_window, iou_1d, nms, RegressionTarget, Window, WindowSet};
