//! CSV export and the binary path cache.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{simulate_heston, HestonParams, PathBatch, PathSource, TimeGrid};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"HKPATHS1";

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct CacheHeader<T: Scalar> {
    n_paths: usize,
    seed: u64,
    grid: TimeGrid<T>,
    source: PathSource<T>,
}

/// Hex key identifying `(params, grid, n_paths, seed)`.
pub fn cache_key<T: Scalar>(params: &HestonParams<T>, grid: &TimeGrid<T>, n_paths: usize, seed: u64) -> String {
    let canonical = serde_json::json!({
        "params": [params.s0.as_f64(), params.v0.as_f64(), params.mu.as_f64(), params.kappa.as_f64(),
                   params.theta.as_f64(), params.xi.as_f64(), params.rho.as_f64()],
        "grid": [grid.n_steps as f64, grid.maturity.as_f64(), grid.trade_every as f64],
        "n_paths": n_paths,
        "seed": seed,
        "scalar_bytes": std::mem::size_of::<T>(),
    });
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    digest.iter().take(12).map(|b| format!("{b:02x}")).collect()
}

impl<T: Scalar> PathBatch<T> {
    /// Writes `path_id,step,time,price,variance`, one row per path and fine step.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = BufWriter::new(out);
        writeln!(w, "path_id,step,time,price,variance")?;
        for (i, (prow, vrow)) in self.prices.rows().into_iter().zip(self.variances.rows()).enumerate() {
            for (k, (p, v)) in prow.iter().zip(vrow.iter()).enumerate() {
                writeln!(w, "{i},{k},{},{},{}", self.grid.time(k), p, v)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_binary(&self, path: &Path) -> Result<()> {
        let header = CacheHeader { n_paths: self.n_paths(), seed: self.seed, grid: self.grid, source: self.source };
        let header = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for x in self.prices.iter().chain(self.variances.iter()) {
            w.write_all(&x.as_f64().to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_binary(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("{} is not a path cache", path.display())));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let header: CacheHeader<T> = serde_json::from_slice(&header).map_err(|e| Error::Format(e.to_string()))?;
        let shape = (header.n_paths, header.grid.n_steps + 1);
        let mut read_matrix = || -> Result<Array2<T>> {
            let mut buf = vec![0u8; shape.0 * shape.1 * 8];
            r.read_exact(&mut buf)?;
            let values = buf
                .chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("chunk of 8"))))
                .collect();
            Array2::from_shape_vec(shape, values).map_err(|e| Error::Format(e.to_string()))
        };
        let prices = read_matrix()?;
        let variances = read_matrix()?;
        Ok(Self { prices, variances, seed: header.seed, grid: header.grid, source: header.source })
    }
}

/// Directory of binary path batches keyed by [`cache_key`].
#[derive(Debug, Clone)]
pub struct PathCache {
    dir: PathBuf,
}

impl PathCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn path_for<T: Scalar>(&self, params: &HestonParams<T>, grid: &TimeGrid<T>, n_paths: usize, seed: u64) -> PathBuf {
        self.dir.join(format!("paths-{}.bin", cache_key(params, grid, n_paths, seed)))
    }

    /// Loads the batch if cached, otherwise simulates and stores it.
    pub fn get_or_simulate<T: Scalar>(
        &self,
        params: &HestonParams<T>,
        grid: &TimeGrid<T>,
        n_paths: usize,
        seed: u64,
    ) -> Result<PathBatch<T>> {
        let path = self.path_for(params, grid, n_paths, seed);
        if path.exists() {
            if let Ok(batch) = PathBatch::load_binary(&path) {
                if batch.source == PathSource::Heston(*params) && batch.grid == *grid && batch.seed == seed {
                    return Ok(batch);
                }
            }
            log::warn!("ignoring stale path cache {}", path.display());
        }
        let batch = simulate_heston(params, grid, n_paths, seed)?;
        batch.save_binary(&path)?;
        Ok(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let grid = TimeGrid { n_steps: 8, maturity: 1.0, trade_every: 2 };
        let cache = PathCache::new(dir.path()).unwrap();
        let p = HestonParams::<f64>::reference();
        let first = cache.get_or_simulate(&p, &grid, 10, 4).unwrap();
        assert!(cache.path_for(&p, &grid, 10, 4).exists());
        let second = cache.get_or_simulate(&p, &grid, 10, 4).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn key_depends_on_every_input() {
        let g = TimeGrid::<f64>::reference();
        let p = HestonParams::<f64>::reference();
        let base = cache_key(&p, &g, 100, 1);
        assert_ne!(base, cache_key(&p, &g, 100, 2));
        assert_ne!(base, cache_key(&p, &g, 101, 1));
        let mut q = p;
        q.kappa = 1.0;
        assert_ne!(base, cache_key(&q, &g, 100, 1));
    }

    #[test]
    fn csv_has_header_and_one_row_per_step() {
        let grid = TimeGrid { n_steps: 4, maturity: 1.0, trade_every: 2 };
        let b = simulate_heston(&HestonParams::<f64>::reference(), &grid, 2, 1).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "path_id,step,time,price,variance");
        assert_eq!(lines.len(), 1 + 2 * 5);
        assert!(lines[1].starts_with("0,0,0,10,"));
    }
}
