//! On-disk cache of reference-path batches.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use bespoke_core::solvers::Trajectory;
use bespoke_core::training::{solve_paths, draw_x0, GtProvider, FIXED_STREAM, VALIDATION_STREAM};
use bespoke_core::{BespokeError, Result};
use bespoke_core::fields::VelocityField;
use sha2::{Digest, Sha256};

const MAGIC: &[u8; 8] = b"BSGTBAT1";
const KEY_VERSION: u32 = 2;

/// Stream of the evaluation batch.
pub const EVAL_STREAM: u64 = 1 << 32;
/// Stream of the paths used for order fits.
pub const ORDER_STREAM: u64 = EVAL_STREAM + 1;

/// Reference paths solved on demand. Batches on the validation, fixed,
/// evaluation and order streams are stored under `dir` when one is given;
/// fresh training batches are always solved.
pub struct GtCache<'a, F: VelocityField + ?Sized> {
    field: &'a F,
    fingerprint: String,
    rtol: f64,
    atol: f64,
    dir: Option<PathBuf>,
    pub hits: usize,
    pub misses: usize,
}

impl<'a, F: VelocityField + ?Sized> GtCache<'a, F> {
    pub fn new(field: &'a F, fingerprint: String, rtol: f64, atol: f64, dir: Option<PathBuf>) -> Self {
        Self {
            field,
            fingerprint,
            rtol,
            atol,
            dir,
            hits: 0,
            misses: 0,
        }
    }

    pub fn key(&self, seed: u64, stream: u64, size: usize) -> String {
        let mut h = Sha256::new();
        h.update(format!(
            "v{KEY_VERSION}|{}|seed={seed}|stream={stream}|size={size}|rtol={:e}|atol={:e}",
            self.fingerprint, self.rtol, self.atol
        ));
        hex::encode(h.finalize())
    }

    fn cached(stream: u64) -> bool {
        stream == VALIDATION_STREAM || stream == FIXED_STREAM || stream == EVAL_STREAM || stream == ORDER_STREAM
    }

    fn solve(&self, seed: u64, stream: u64, size: usize) -> Result<Vec<Trajectory>> {
        solve_paths(self.field, &draw_x0(self.field.dim(), size, seed, stream), self.rtol, self.atol)
    }
}

impl<F: VelocityField + ?Sized> GtProvider for GtCache<'_, F> {
    fn paths(&mut self, seed: u64, stream: u64, size: usize) -> Result<Vec<Trajectory>> {
        let dir = match &self.dir {
            Some(d) if Self::cached(stream) => d.clone(),
            _ => return self.solve(seed, stream, size),
        };
        let path = dir.join(format!("{}.gt", self.key(seed, stream, size)));
        if path.is_file() {
            match read_batch(&path) {
                Ok(batch) if batch.len() == size => {
                    self.hits += 1;
                    return Ok(batch);
                }
                Ok(_) | Err(_) => log::warn!("ignoring unreadable cache entry {}", path.display()),
            }
        }
        let batch = self.solve(seed, stream, size)?;
        fs::create_dir_all(&dir)?;
        write_batch(&path, &batch)?;
        self.misses += 1;
        Ok(batch)
    }
}

pub fn write_batch(path: &Path, batch: &[Trajectory]) -> Result<()> {
    let tmp = path.with_extension("gt.tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&(batch.len() as u64).to_le_bytes())?;
        for t in batch {
            t.write_binary(&mut w)?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_batch(path: &Path) -> Result<Vec<Trajectory>> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(BespokeError::Parse {
            line: 0,
            column: 0,
            message: format!("{} is not a path batch", path.display()),
        });
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    (0..u64::from_le_bytes(len)).map(|_| Trajectory::read_binary(&mut r)).collect()
}
