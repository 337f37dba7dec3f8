pub mod dp_labeler;
pub mod eval;
pub mod events;
pub mod filtering;
pub mod onset;
pub mod pipeline;
pub mod siamese;
pub mod signal_io;
pub mod synth;
