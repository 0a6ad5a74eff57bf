//! Raw sensor streams to normalized tri-timeline examples.

mod frame;
mod normalize;
mod split;
mod stream;
mod windows;

pub use frame::{
    downsample, forward_fill, synchronize, synchronize_at, CellState, Column, ColumnKey,
    SynchronizedFrame, MODEL_INTERVAL_SECS, SYNC_INTERVAL_SECS,
};
pub use normalize::{fit_normalizer, FeatureRange, NormalizationParams, TARGET_KEY};
pub use split::{
    plan_split, SplitConfig, SplitPlan, DEFAULT_BATCH_SIZE, DEFAULT_TEST_ROWS, DEFAULT_TRAIN_ROWS,
};
pub use stream::{
    date_of, format_timestamp, midnight, parse_timestamp, read_dataset, read_stream_csv,
    write_stream_csv, RawStream, Source, ENVIRONMENT_FEATURES, IRRIGATION_FEATURES, YIELD_FEATURES,
    YIELD_WEIGHT,
};
pub use windows::{
    example_id, example_row, extract_examples, history_features, pick_dates, premonition_features,
    Timeline, TriExample, Window, WindowSpec,
};

/// synchronize → forward_fill → downsample.
pub fn prepare_frame(streams: &[RawStream], interval: i64) -> crate::Result<SynchronizedFrame> {
    prepare_frame_with(streams, SYNC_INTERVAL_SECS, interval)
}

pub fn prepare_frame_with(
    streams: &[RawStream],
    sync_interval: i64,
    interval: i64,
) -> crate::Result<SynchronizedFrame> {
    let synced = synchronize_at(streams, sync_interval)?;
    let filled = forward_fill(&synced)?;
    downsample(&filled, interval)
}
