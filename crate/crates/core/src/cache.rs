//! Content-addressed disk cache for spectra, plus CSV summaries.
//!
//! A cache file is `MAGIC | version (u32 LE) | key length (u32 LE) | key | bincode body`,
//! named after its key, the SHA-256 of the JSON description of the solve.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hilbert::{HilbertSpace, SystemParams};
use crate::liouville::{Method, SpectralData};
use crate::phasespace::csv_error;

const MAGIC: &[u8; 8] = b"QRMSPEC\0";
/// Bumped whenever the body layout or the solver output changes.
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
struct KeyDescription<'a> {
    version: u32,
    params: &'a SystemParams,
    fock_cutoff: usize,
    k: usize,
    method: Method,
    shifts: Option<Vec<(f64, f64)>>,
}

/// Key of a spectrum solve.
pub fn spectrum_key(params: &SystemParams, space: HilbertSpace, k: usize, method: Method, shifts: Option<&[num_complex::Complex64]>) -> String {
    let desc = KeyDescription {
        version: CACHE_VERSION,
        params,
        fock_cutoff: space.fock_cutoff(),
        k,
        method,
        shifts: shifts.map(|s| s.iter().map(|z| (z.re, z.im)).collect()),
    };
    let json = serde_json::to_vec(&desc).expect("key description serializes");
    hex::encode(Sha256::digest(&json))
}

#[derive(Debug, Clone)]
pub struct SpectrumCache {
    dir: PathBuf,
}

impl SpectrumCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.spec"))
    }

    /// `Ok(None)` on a miss; a present but unreadable entry is an error.
    pub fn load(&self, key: &str) -> Result<Option<SpectralData>> {
        let path = self.path(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let bad = |why: &str| Error::Cache(format!("{}: {why}", path.display()));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a spectrum cache file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CACHE_VERSION {
            return Err(bad(&format!("version {version}, expected {CACHE_VERSION}")));
        }
        let klen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        if bytes.len() < 16 + klen || &bytes[16..16 + klen] != key.as_bytes() {
            return Err(bad("key mismatch"));
        }
        bincode::deserialize(&bytes[16 + klen..])
            .map(Some)
            .map_err(|e| bad(&e.to_string()))
    }

    /// Writes through a temporary file and renames it into place.
    pub fn store(&self, key: &str, data: &SpectralData) -> Result<()> {
        let body = bincode::serialize(data).map_err(|e| Error::Cache(e.to_string()))?;
        let tmp = self.dir.join(format!("{key}.tmp{}", std::process::id()));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(MAGIC)?;
            f.write_all(&CACHE_VERSION.to_le_bytes())?;
            f.write_all(&(key.len() as u32).to_le_bytes())?;
            f.write_all(key.as_bytes())?;
            f.write_all(&body)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, self.path(key))?;
        Ok(())
    }
}

/// One row per eigenvalue: `lambda_ratio, Omega_ratio, gamma, index, Re_lambda_i, Im_lambda_i`.
pub fn write_spectrum_csv(path: &Path, rows: &[(SystemParams, SpectralData)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["lambda_ratio", "Omega_ratio", "gamma", "index", "Re_lambda_i", "Im_lambda_i"])
        .map_err(csv_error)?;
    for (p, spec) in rows {
        for (i, ev) in spec.eigenvalues.iter().enumerate() {
            w.write_record([
                format!("{}", p.lambda_ratio()),
                format!("{}", p.omega / p.omega0),
                format!("{}", p.gamma),
                i.to_string(),
                format!("{:.15e}", ev.re),
                format!("{:.15e}", ev.im),
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liouville::{self, SpectrumOptions};

    #[test]
    fn round_trip_and_key_sensitivity() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SpectrumCache::new(dir.path()).unwrap();
        let p = SystemParams::new(1.0, 3.0, 0.8, 0.5, 0.05).unwrap();
        let space = HilbertSpace::new(5).unwrap();
        let l = liouville::build(&p, space).unwrap();
        let spec = l.spectrum(4, &SpectrumOptions::default()).unwrap();
        let key = spectrum_key(&p, space, 4, Method::Auto, None);
        assert!(cache.load(&key).unwrap().is_none());
        cache.store(&key, &spec).unwrap();
        let back = cache.load(&key).unwrap().unwrap();
        assert_eq!(back.eigenvalues, spec.eigenvalues);
        assert_eq!(back.right_states, spec.right_states);
        let p2 = SystemParams { gamma: 0.06, ..p };
        assert_ne!(key, spectrum_key(&p2, space, 4, Method::Auto, None));
    }

    #[test]
    fn corrupt_entry_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SpectrumCache::new(dir.path()).unwrap();
        fs::write(dir.path().join("abc.spec"), b"garbage").unwrap();
        assert!(matches!(cache.load("abc"), Err(Error::Cache(_))));
    }
}
