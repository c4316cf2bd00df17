//! Persistence and data sources: model checkpoints, PNG rasters, dataset
//! manifests, synthetic smear generation and report export.

mod checkpoint;
mod dataset;
mod raster_io;
mod report;
mod synth;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointManifest, Checkpointable, ModelKind, ParamEntry,
    CHECKPOINT_VERSION,
};
pub use dataset::{generate_dataset, load_dataset, Dataset, DatasetManifest, Sample, SampleRecord, Split};
pub use raster_io::{load_image, load_mask, save_image, save_mask};
pub use report::{
    read_epoch_logs_csv, write_det_report, write_epoch_logs_csv, write_json, write_seg_scores,
    EPOCH_LOG_HEADER,
};
pub use synth::{synth_generate, ComponentKind, SynthComponent, SynthConfig, SynthSample};
