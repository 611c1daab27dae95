//! On-disk formats: checkpoints and PGM images.

mod checkpoint;
mod pgm;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use pgm::write_pgm;
