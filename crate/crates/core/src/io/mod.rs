//! Readers and writers for calibration artifacts and image sequences.
//! Every writer's output reads back to an equal value, and readers reject
//! malformed input with a byte offset, header field or line number.

mod dataset;
mod pgm;
mod text;
mod vignette;

pub use dataset::DatasetLayout;
pub use pgm::{encode_pgm, parse_pgm, read_pgm, read_pgm16, read_pgm8, write_pgm16, write_pgm8, Pgm};
pub use text::{
    read_response, read_times, read_tracks, read_trajectory, write_response, write_times, write_tracks,
    write_trajectory,
};
pub use vignette::{fit_vignette, read_vignette_image, vignette_map, write_vignette_image};

pub(crate) use pgm::write_file;

#[cfg(test)]
mod tests;
