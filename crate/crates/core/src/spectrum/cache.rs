use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{SpectrumError, SpectrumResult};
use crate::model::{EmbeddingPoint, PerturbSite};

const SPECTRUM_MAGIC: &[u8; 8] = b"CHSSPC01";

/// Sidecar file name for a spectrum of the model keyed `model_key` (see
/// [`ModelConfig::fingerprint`](crate::model::ModelConfig::fingerprint)) at `point`.
pub fn cache_file_name(model_key: u64, point: &EmbeddingPoint, fd_step: f64) -> String {
    format!(
        "spectrum-{model_key:016x}-{:016x}-{:016x}.bin",
        point.content_hash(),
        fd_step.to_bits()
    )
}

/// Directory of spectrum sidecars, keyed by model, base point and step.
#[derive(Debug, Clone)]
pub struct SpectrumCache {
    dir: PathBuf,
}

impl SpectrumCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, model_key: u64, point: &EmbeddingPoint, fd_step: f64) -> PathBuf {
        self.dir.join(cache_file_name(model_key, point, fd_step))
    }

    pub fn load(
        &self,
        model_key: u64,
        point: &EmbeddingPoint,
        fd_step: f64,
    ) -> Result<Option<SpectrumResult>, SpectrumError> {
        let path = self.path_for(model_key, point, fd_step);
        if !path.exists() {
            return Ok(None);
        }
        let spectrum = read_spectrum(&path)?;
        // a hash collision would hand back the wrong spectrum; check the point itself
        Ok((spectrum.base_point == *point && spectrum.fd_step == fd_step).then_some(spectrum))
    }

    pub fn get_or_compute(
        &self,
        model_key: u64,
        point: &EmbeddingPoint,
        fd_step: f64,
        compute: impl FnOnce() -> Result<SpectrumResult, SpectrumError>,
    ) -> Result<SpectrumResult, SpectrumError> {
        if let Some(hit) = self.load(model_key, point, fd_step)? {
            return Ok(hit);
        }
        let spectrum = compute()?;
        fs::create_dir_all(&self.dir)?;
        write_spectrum(&self.path_for(model_key, point, fd_step), &spectrum)?;
        Ok(spectrum)
    }
}

fn site_code(site: PerturbSite) -> u64 {
    match site {
        PerturbSite::Last => u64::MAX,
        PerturbSite::All => u64::MAX - 1,
        PerturbSite::Position(p) => p as u64,
    }
}

fn site_from_code(code: u64) -> PerturbSite {
    match code {
        u64::MAX => PerturbSite::Last,
        c if c == u64::MAX - 1 => PerturbSite::All,
        p => PerturbSite::Position(p as usize),
    }
}

/// Writes through a temporary file so a crash never leaves a torn sidecar.
pub fn write_spectrum(path: &Path, s: &SpectrumResult) -> Result<(), SpectrumError> {
    let tmp = path.with_extension("bin.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(SPECTRUM_MAGIC)?;
        let k = s.sigma.len() as u64;
        let rows = s.u.first().map_or(0, Vec::len) as u64;
        let cols = s.v.first().map_or(0, Vec::len) as u64;
        let p = &s.base_point;
        for word in [
            k,
            rows,
            cols,
            s.fd_step.to_bits(),
            p.seq_len as u64,
            p.d_model as u64,
            site_code(p.site),
        ] {
            w.write_all(&word.to_le_bytes())?;
        }
        let values = s
            .sigma
            .iter()
            .chain(s.u.iter().flatten())
            .chain(s.v.iter().flatten())
            .chain(&p.x);
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_spectrum(path: &Path) -> Result<SpectrumResult, SpectrumError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SPECTRUM_MAGIC {
        return Err(SpectrumError::Format(format!("{}: bad magic", path.display())));
    }
    let mut next = || -> Result<u64, SpectrumError> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    };
    let k = next()? as usize;
    let rows = next()? as usize;
    let cols = next()? as usize;
    let fd_step = f64::from_bits(next()?);
    let seq_len = next()? as usize;
    let d_model = next()? as usize;
    let site = site_from_code(next()?);
    let mut floats = |n: usize| -> Result<Vec<f64>, SpectrumError> {
        (0..n).map(|_| Ok(f64::from_bits(next()?))).collect()
    };
    let sigma = floats(k)?;
    let u = (0..k).map(|_| floats(rows)).collect::<Result<Vec<_>, _>>()?;
    let v = (0..k).map(|_| floats(cols)).collect::<Result<Vec<_>, _>>()?;
    let x = floats(seq_len * d_model)?;
    let base_point = EmbeddingPoint::new(x, seq_len, d_model)
        .map_err(|e| SpectrumError::Format(e.to_string()))?
        .with_site(site);
    Ok(SpectrumResult {
        sigma,
        u,
        v,
        base_point,
        fd_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearOracle;
    use crate::spectrum::oracle_spectrum;

    #[test]
    fn round_trip_and_cache_hit() {
        let dir = tempfile::tempdir().unwrap();
        let o = LinearOracle::seeded(vec![4.0, 2.0, 1.0], 9);
        let point = o.point(vec![0.1, 0.2, 0.3]).with_site(PerturbSite::All);
        let spectrum = oracle_spectrum(&o, point.clone());
        let cache = SpectrumCache::new(dir.path());
        let mut computed = 0;
        for _ in 0..2 {
            let got = cache
                .get_or_compute(9, &point, 0.0, || {
                    computed += 1;
                    Ok(spectrum.clone())
                })
                .unwrap();
            assert_eq!(got, spectrum);
        }
        assert_eq!(computed, 1);
        assert!(cache.load(10, &point, 0.0).unwrap().is_none());
    }
}
