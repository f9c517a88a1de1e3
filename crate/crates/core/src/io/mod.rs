//! Files: checkpoints, session directories and result exports.

pub mod checkpoint;
pub mod export;
pub mod session;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use checkpoint::{load_model, save_model};
pub use export::{
    feature_scatter, read_reports, write_loss_history, write_reports, write_scatter_csv,
    write_summary_csv, write_trajectory_csv, ScatterPoint, SummaryRow,
};
pub use session::{find_sessions, load_session, load_sessions, save_session};

/// Writes through a temporary file in the same directory, then renames, so a
/// crash never leaves a partial file at `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
