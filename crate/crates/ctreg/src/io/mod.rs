//! Serialization: NIfTI-1 and raw-bundle volume files, the registration
//! config, run logs, and metrics reports. File writes are atomic
//! (write-temp-then-rename).

pub mod bundle;
pub mod config;
pub mod nifti;
pub mod report;
pub mod runlog;

pub use bundle::{parse_bundle_header, read_bundle, write_bundle};
pub use config::{load_config, parse_config_str};
pub use nifti::{read_nifti_bytes, write_nifti_bytes};

use crate::error::{Error, Result};
use crate::volume::{DisplacementField, LabelVolume, Volume};
use std::path::Path;

/// A volume file's payload: scalar, labels, or a displacement field.
#[derive(Debug, Clone)]
pub enum LoadedVolume {
    Scalar(Volume),
    Labels(LabelVolume),
    Field(DisplacementField),
}

impl LoadedVolume {
    pub fn into_scalar(self) -> Result<Volume> {
        match self {
            LoadedVolume::Scalar(v) => Ok(v),
            other => Err(Error::MalformedFile(format!("expected a scalar volume, found {}", other.kind()))),
        }
    }

    pub fn into_labels(self) -> Result<LabelVolume> {
        match self {
            LoadedVolume::Labels(v) => Ok(v),
            other => Err(Error::MalformedFile(format!("expected a label volume, found {}", other.kind()))),
        }
    }

    pub fn into_field(self) -> Result<DisplacementField> {
        match self {
            LoadedVolume::Field(v) => Ok(v),
            other => Err(Error::MalformedFile(format!("expected a displacement field, found {}", other.kind()))),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LoadedVolume::Scalar(_) => "scalar",
            LoadedVolume::Labels(_) => "labels",
            LoadedVolume::Field(_) => "field",
        }
    }
}

/// Output volume format, chosen per file by extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeFormat {
    Nifti,
    NiftiGz,
    Bundle,
}

impl VolumeFormat {
    pub fn extension(self) -> &'static str {
        match self {
            VolumeFormat::Nifti => "nii",
            VolumeFormat::NiftiGz => "nii.gz",
            VolumeFormat::Bundle => "rvol",
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::MalformedFile(format!("bad path {}", path.display())))?;
        if name.ends_with(".nii.gz") {
            Ok(VolumeFormat::NiftiGz)
        } else if name.ends_with(".nii") {
            Ok(VolumeFormat::Nifti)
        } else if name.ends_with(".rvol") {
            Ok(VolumeFormat::Bundle)
        } else {
            Err(Error::MalformedFile(format!(
                "unrecognized volume extension on '{name}' (use .nii, .nii.gz, or .rvol)"
            )))
        }
    }
}

/// Read a volume file, dispatching on its extension.
pub fn read_volume(path: &Path) -> Result<LoadedVolume> {
    match VolumeFormat::from_path(path)? {
        VolumeFormat::Nifti | VolumeFormat::NiftiGz => {
            let bytes = std::fs::read(path)
                .map_err(|e| Error::MalformedFile(format!("{}: {e}", path.display())))?;
            nifti::read_nifti_bytes(&bytes).map_err(|e| e.prefix(&path.display().to_string()))
        }
        VolumeFormat::Bundle => {
            bundle::read_bundle(path).map_err(|e| e.prefix(&path.display().to_string()))
        }
    }
}

/// Write a volume file, dispatching on the path's extension.
pub fn write_volume(vol: &LoadedVolume, path: &Path) -> Result<()> {
    match VolumeFormat::from_path(path)? {
        VolumeFormat::Nifti => write_atomic(path, &nifti::write_nifti_bytes(vol)),
        VolumeFormat::NiftiGz => {
            let plain = nifti::write_nifti_bytes(vol);
            write_atomic(path, &nifti::gzip_bytes(&plain)?)
        }
        VolumeFormat::Bundle => bundle::write_bundle(vol, path),
    }
}

/// Write via a temp file in the same directory, then rename into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::WriteError(format!("{}: {e}", dir.display())))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::WriteError(format!("{}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| Error::WriteError(format!("{} -> {}: {e}", tmp.display(), path.display())))
}
