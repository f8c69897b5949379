//! Objective metrics (DTW-aligned MCD, WER, ASV accept rate) and the
//! pairwise correlation study between metric columns.

mod asv;
mod cepstra;
mod correlation;
mod report;
mod wer;

pub use asv::{asv_accept_rate, build_trials, eer_threshold, EerCalibration, DEFAULT_ASV_THRESHOLD};
pub use cepstra::{dtw_align, mcd, mcd_frames, mel_cepstra, mel_cepstra_from_mel, DtwPath, MCD_SCALE};
pub use correlation::{
    correlation_matrix, parse_metrics_table, pearson, published_rows, published_table3, subset_search,
    CorrelationMatrix, MetricsRow, PublishedRow, SubsetResult, METRIC_LABELS,
};
pub use report::{evaluate_system, metrics_tsv, AsvSetup, EvalItem, SystemScores, UtteranceScores};
pub use wer::{normalize_transcript, wer, word_errors, ExternalTranscriber, Transcriber};
