//! Reading and atomically writing RTMX and RTNN files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rtmix_core::rtmx::{dataset_from_rtmx, dataset_to_rtmx, RtmxFile};
use rtmix_core::SnapshotDataset;
use rtmix_surrogate::rtnn::{model_from_rtnn, model_to_rtnn, RtnnFile};
use rtmix_surrogate::TrainedModel;

use crate::error::CliError;

/// Write through a temporary file in the target directory, then rename over `path`.
pub fn write_atomic<E: ToString>(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<(), E>) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(path, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        write(&mut w).map_err(|e| CliError::io(path, e))?;
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn read_rtmx(path: &Path) -> Result<RtmxFile, CliError> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    RtmxFile::read_from(BufReader::new(f)).map_err(|e| CliError::rtmx(path, e))
}

pub fn write_rtmx(path: &Path, file: &RtmxFile) -> Result<(), CliError> {
    write_atomic(path, |w| file.write_to(w))
}

/// Read a simulation dataset; the flag tells whether it was cut short.
pub fn read_dataset(path: &Path) -> Result<(SnapshotDataset, bool), CliError> {
    dataset_from_rtmx(read_rtmx(path)?).map_err(|e| CliError::rtmx(path, e))
}

pub fn write_dataset(path: &Path, ds: &SnapshotDataset) -> Result<(), CliError> {
    write_rtmx(path, &dataset_to_rtmx(ds))
}

pub fn read_model(path: &Path) -> Result<TrainedModel, CliError> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let file = RtnnFile::read_from(BufReader::new(f)).map_err(|e| CliError::rtnn(path, e))?;
    model_from_rtnn(file).map_err(|e| CliError::rtnn(path, e))
}

pub fn write_model(path: &Path, model: &TrainedModel) -> Result<(), CliError> {
    let file = model_to_rtnn(model);
    write_atomic(path, |w| file.write_to(w))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, |w| w.write_all(text.as_bytes()))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, |w| w.write_all(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_text(&path, "one").unwrap();
        write_text(&path, "two").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn failed_write_keeps_old_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_text(&path, "keep").unwrap();
        let err = write_atomic(&path, |w| {
            w.write_all(b"partial").unwrap();
            Err("boom")
        });
        assert!(matches!(err, Err(CliError::Io { .. })));
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "keep");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_rtmx(Path::new("/nonexistent/x.rtmx")).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::EXIT_IO);
    }
}
