//! Complex baseband traces and their on-disk format.
//!
//! A capture `name` is stored as `name.iq` (interleaved little-endian `f32`
//! I,Q pairs) plus a `name.meta` TOML sidecar holding [`CaptureMeta`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureMeta {
    pub center_frequency_hz: f64,
    pub sample_rate_hz: f64,
    pub gain_db: f64,
    pub device_label: String,
    /// Sample index of the first sample in some longer capture, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_sample: Option<u64>,
}

impl CaptureMeta {
    pub fn new(sample_rate_hz: f64, center_frequency_hz: f64) -> Self {
        Self {
            center_frequency_hz,
            sample_rate_hz,
            gain_db: 0.0,
            device_label: String::new(),
            origin_sample: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if !(self.center_frequency_hz.is_finite() && self.center_frequency_hz >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "center frequency must be non-negative, got {}",
                self.center_frequency_hz
            )));
        }
        Ok(())
    }
}

/// A uniformly sampled complex baseband capture.
#[derive(Debug, Clone, PartialEq)]
pub struct IqTrace {
    samples: Vec<Complex32>,
    meta: CaptureMeta,
}

impl IqTrace {
    pub fn new(samples: Vec<Complex32>, meta: CaptureMeta) -> Result<Self> {
        meta.validate()?;
        if samples.is_empty() {
            return Err(Error::InvalidArgument("trace has no samples".into()));
        }
        if let Some(i) = samples.iter().position(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(Error::NonFinite(format!("sample {i}")));
        }
        Ok(Self { samples, meta })
    }

    pub fn samples(&self) -> &[Complex32] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.meta.sample_rate_hz
    }

    pub fn center_frequency_hz(&self) -> f64 {
        self.meta.center_frequency_hz
    }

    pub fn meta(&self) -> &CaptureMeta {
        &self.meta
    }
}

/// Sidecar path for an `.iq` file: same stem, `.meta` extension.
pub fn meta_path(iq_path: &Path) -> PathBuf {
    iq_path.with_extension("meta")
}

pub fn write_iq(trace: &IqTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if path.as_os_str().is_empty() {
        return Err(Error::InvalidArgument("empty output path".into()));
    }
    let mut payload = Vec::with_capacity(trace.len() * 8);
    for s in &trace.samples {
        payload.extend_from_slice(&s.re.to_le_bytes());
        payload.extend_from_slice(&s.im.to_le_bytes());
    }
    let meta = toml::to_string(&trace.meta).map_err(|e| Error::Config(e.to_string()))?;

    let sidecar = meta_path(path);
    write_atomic(path, &payload)?;
    if let Err(e) = write_atomic(&sidecar, meta.as_bytes()) {
        let _ = fs::remove_file(path);
        return Err(e);
    }
    Ok(())
}

pub fn read_iq(path: impl AsRef<Path>) -> Result<IqTrace> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::format(
            path,
            format!("truncated: {} bytes is not a multiple of 8", bytes.len()),
        ));
    }
    let sidecar = meta_path(path);
    let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let meta: CaptureMeta =
        toml::from_str(&text).map_err(|e| Error::format(&sidecar, e.to_string()))?;

    let mut samples = Vec::with_capacity(bytes.len() / 8);
    for (i, chunk) in bytes.chunks_exact(8).enumerate() {
        let re = f32::from_le_bytes(chunk[0..4].try_into().unwrap());
        let im = f32::from_le_bytes(chunk[4..8].try_into().unwrap());
        if !(re.is_finite() && im.is_finite()) {
            return Err(Error::format(path, format!("non-finite sample {i}")));
        }
        samples.push(Complex32::new(re, im));
    }
    IqTrace::new(samples, meta).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes through a temporary file in the destination directory so a failed
/// write never leaves a partial file at `path`.
pub(crate) fn write_atomic(path: &Path, data: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.partial", file_name.to_string_lossy()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(data)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_sample_trace() -> IqTrace {
        IqTrace::new(
            vec![Complex32::new(1.0, 0.0), Complex32::new(0.0, -1.0)],
            CaptureMeta::new(2.0e6, 100.0e6),
        )
        .unwrap()
    }

    #[test]
    fn layout_is_interleaved_f32le() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.iq");
        write_iq(&two_sample_trace(), &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        let mut expected = Vec::new();
        for v in [1.0f32, 0.0, 0.0, -1.0] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(bytes, expected);
        assert!(meta_path(&p).exists());
        assert_eq!(read_iq(&p).unwrap(), two_sample_trace());
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.iq");
        fs::write(&p, [0u8; 7]).unwrap();
        fs::write(meta_path(&p), toml::to_string(two_sample_trace().meta()).unwrap()).unwrap();
        let err = read_iq(&p).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn missing_sidecar_and_nan_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.iq");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        bytes.extend_from_slice(&0f32.to_le_bytes());
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_iq(&p), Err(Error::Io { .. })));
        fs::write(meta_path(&p), toml::to_string(two_sample_trace().meta()).unwrap()).unwrap();
        assert!(read_iq(&p).unwrap_err().to_string().contains("non-finite"));
    }

    #[test]
    fn unwritable_destination_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("missing_dir").join("x.iq");
        assert!(write_iq(&two_sample_trace(), &p).is_err());
        assert!(!p.exists());
        assert!(write_iq(&two_sample_trace(), "").is_err());
    }

    #[test]
    fn invalid_traces_rejected() {
        assert!(IqTrace::new(vec![], CaptureMeta::new(1.0, 0.0)).is_err());
        assert!(IqTrace::new(vec![Complex32::new(0.0, 0.0)], CaptureMeta::new(0.0, 0.0)).is_err());
        assert!(IqTrace::new(
            vec![Complex32::new(f32::INFINITY, 0.0)],
            CaptureMeta::new(1.0, 0.0)
        )
        .is_err());
    }
}
