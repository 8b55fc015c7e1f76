//! Reading MNIST-format IDX files from disk.

use std::path::Path;

use fedsmp_core::data::{parse_idx, Dataset};

use crate::error::{HarnessError, Result};

/// Loads an images/labels IDX pair. Decoding errors carry the byte offset
/// and the path of the file that is at fault.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(images_path).map_err(|e| HarnessError::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| HarnessError::io(labels_path, e))?;
    parse_idx(&images, &labels).map_err(|source| {
        let blame_labels = matches!(&source, fedsmp_core::Error::Format { message, .. } if message.starts_with("label"));
        HarnessError::Idx {
            path: if blame_labels { labels_path } else { images_path }.to_path_buf(),
            source,
        }
    })
}
