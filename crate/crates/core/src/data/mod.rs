//! Annotated signal records, corpus files, segmentation into masked
//! slices, synthetic corpora and stratified splitting.

pub mod io;
mod record;
mod segment;
mod split;
mod synth;

pub use io::{load_records, write_corpus, Annotation, ManifestRow};
pub use record::{check_sorted_disjoint, Episode, SeriesLabel, SignalRecord, MIN_SEGMENT_BEATS};
pub use segment::{normalize, prepare_slices, segment, SliceBatch, SliceOrigin, SliceView, STD_GUARD};
pub use split::{split_dataset, split_ids, SplitIds};
pub use synth::{synthesize, synthesize_with, SynthSpec};
