use std::path::Path;

use super::checkpoint::Checkpoint;
use crate::attention::{export_maps, MapIndex};
use crate::diffcore::Tensor;
use crate::error::Result;

/// Write every layer/head attention map of `x` plus an index with the
/// per-frame weight tracks.
pub fn inspect(ck: &Checkpoint, video_id: &str, x: &Tensor, out_dir: &Path) -> Result<MapIndex> {
    let (_, maps) = ck.params.score(x, ck.config.model.scaled)?;
    export_maps(out_dir, video_id, &maps)
}
