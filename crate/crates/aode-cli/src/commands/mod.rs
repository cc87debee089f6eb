pub mod merge;
pub mod report;
pub mod schedule;
pub mod toy;
pub mod wer;
