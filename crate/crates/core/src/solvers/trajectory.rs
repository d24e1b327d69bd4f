use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{BespokeError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    /// Fifth-order continuous extension of the generating Runge-Kutta pair:
    /// cubic Hermite plus a stored per-step quartic correction. Falls back to
    /// `Hermite` when the trajectory carries no correction.
    #[default]
    Dense,
    /// Cubic Hermite on stored states and derivatives.
    Hermite,
    /// Piecewise linear on stored states.
    Linear,
}

/// A dense solution `x(t)` stored at accepted solver nodes together with the
/// field value `u_t(x)` at each node.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    derivs: Vec<Vec<f64>>,
    // One row per interval, or empty.
    dense: Vec<Vec<f64>>,
    pub rtol: f64,
    pub atol: f64,
    pub rejected_steps: usize,
}

const BINARY_MAGIC: &[u8; 8] = b"BSTRAJ03";

impl Trajectory {
    pub(crate) fn start(t0: f64, x0: Vec<f64>, u0: Vec<f64>, rtol: f64, atol: f64) -> Self {
        Self {
            times: vec![t0],
            states: vec![x0],
            derivs: vec![u0],
            dense: Vec::new(),
            rtol,
            atol,
            rejected_steps: 0,
        }
    }

    pub(crate) fn push(&mut self, t: f64, x: Vec<f64>, u: Vec<f64>) {
        self.times.push(t);
        self.states.push(x);
        self.derivs.push(u);
    }

    pub(crate) fn push_dense(&mut self, t: f64, x: Vec<f64>, u: Vec<f64>, correction: Vec<f64>) {
        debug_assert_eq!(self.dense.len() + 1, self.len());
        self.push(t, x, u);
        self.dense.push(correction);
    }

    /// Attach per-interval dense-output corrections (one d-vector per interval).
    pub fn with_dense(mut self, dense: Vec<Vec<f64>>) -> Result<Self> {
        if dense.len() + 1 != self.len() || dense.iter().any(|r| r.len() != self.dim()) {
            return Err(BespokeError::InvalidParameter("dense correction shape does not match trajectory".into()));
        }
        self.dense = dense;
        Ok(self)
    }

    pub fn has_dense(&self) -> bool {
        !self.dense.is_empty()
    }

    pub fn dense(&self) -> &[Vec<f64>] {
        &self.dense
    }

    /// Build from raw arrays, checking shapes and strictly increasing times.
    pub fn from_parts(times: Vec<f64>, states: Vec<Vec<f64>>, derivs: Vec<Vec<f64>>, rtol: f64, atol: f64) -> Result<Self> {
        if times.is_empty() || times.len() != states.len() || times.len() != derivs.len() {
            return Err(BespokeError::InvalidParameter("trajectory arrays must be non-empty and equal length".into()));
        }
        let d = states[0].len();
        if states.iter().chain(&derivs).any(|v| v.len() != d) {
            return Err(BespokeError::InvalidParameter("trajectory rows must share one dimension".into()));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(BespokeError::InvalidParameter("trajectory times must be strictly increasing".into()));
        }
        Ok(Self {
            times,
            states,
            derivs,
            dense: Vec::new(),
            rtol,
            atol,
            rejected_steps: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn derivs(&self) -> &[Vec<f64>] {
        &self.derivs
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("non-empty trajectory")
    }

    pub fn span(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().expect("non-empty trajectory"))
    }

    // Index j with times[j] <= t <= times[j+1].
    fn locate(&self, t: f64) -> Result<usize> {
        let (lo, hi) = self.span();
        if !(t >= lo && t <= hi) {
            return Err(BespokeError::OutOfRange { t, lo, hi });
        }
        let j = self.times.partition_point(|&s| s <= t);
        Ok(j.saturating_sub(1).min(self.len().saturating_sub(2)))
    }

    pub fn interpolate(&self, t: f64) -> Result<Vec<f64>> {
        self.interpolate_with(t, Interpolation::Dense)
    }

    pub fn interpolate_with(&self, t: f64, mode: Interpolation) -> Result<Vec<f64>> {
        let j = self.locate(t)?;
        if self.len() == 1 || t == self.times[j] {
            return Ok(self.states[j].clone());
        }
        if t == self.times[j + 1] {
            return Ok(self.states[j + 1].clone());
        }
        let (t0, t1) = (self.times[j], self.times[j + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (y0, y1) = (&self.states[j], &self.states[j + 1]);
        match mode {
            Interpolation::Linear => Ok(y0.iter().zip(y1).map(|(a, b)| a + s * (b - a)).collect()),
            Interpolation::Dense | Interpolation::Hermite => {
                let (f0, f1) = (&self.derivs[j], &self.derivs[j + 1]);
                let s2 = s * s;
                let s3 = s2 * s;
                let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
                let h10 = s3 - 2.0 * s2 + s;
                let h01 = -2.0 * s3 + 3.0 * s2;
                let h11 = s3 - s2;
                let mut y: Vec<f64> = (0..y0.len())
                    .map(|k| h00 * y0[k] + h10 * h * f0[k] + h01 * y1[k] + h11 * h * f1[k])
                    .collect();
                if mode == Interpolation::Dense && self.has_dense() {
                    let w = s2 * (1.0 - s) * (1.0 - s);
                    for (yk, ck) in y.iter_mut().zip(&self.dense[j]) {
                        *yk += w * ck;
                    }
                }
                Ok(y)
            }
        }
    }

    /// Time derivative of the interpolant.
    pub fn interpolate_derivative(&self, t: f64, mode: Interpolation) -> Result<Vec<f64>> {
        let j = self.locate(t)?;
        if self.len() == 1 {
            return Ok(self.derivs[0].clone());
        }
        let (t0, t1) = (self.times[j], self.times[j + 1]);
        let h = t1 - t0;
        let (y0, y1) = (&self.states[j], &self.states[j + 1]);
        match mode {
            Interpolation::Linear => Ok(y0.iter().zip(y1).map(|(a, b)| (b - a) / h).collect()),
            Interpolation::Dense | Interpolation::Hermite => {
                let (f0, f1) = (&self.derivs[j], &self.derivs[j + 1]);
                let s = (t - t0) / h;
                let s2 = s * s;
                let d00 = 6.0 * s2 - 6.0 * s;
                let d10 = 3.0 * s2 - 4.0 * s + 1.0;
                let d01 = -6.0 * s2 + 6.0 * s;
                let d11 = 3.0 * s2 - 2.0 * s;
                let mut du: Vec<f64> = (0..y0.len())
                    .map(|k| (d00 * y0[k] + d01 * y1[k]) / h + d10 * f0[k] + d11 * f1[k])
                    .collect();
                if mode == Interpolation::Dense && self.has_dense() {
                    let w = 2.0 * s * (1.0 - s) * (1.0 - 2.0 * s) / h;
                    for (dk, ck) in du.iter_mut().zip(&self.dense[j]) {
                        *dk += w * ck;
                    }
                }
                Ok(du)
            }
        }
    }

    /// CSV with header `t,x_0..x_{d-1},u_0..u_{d-1}`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dim();
        let mut header = vec!["t".to_string()];
        header.extend((0..d).map(|j| format!("x_{j}")));
        header.extend((0..d).map(|j| format!("u_{j}")));
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut row = vec![format!("{:.16e}", self.times[i])];
            row.extend(self.states[i].iter().map(|v| format!("{v:.16e}")));
            row.extend(self.derivs[i].iter().map(|v| format!("{v:.16e}")));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, rtol: f64, atol: f64) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let header = lines.next().transpose()?.ok_or_else(|| parse_err(1, "empty trajectory CSV"))?;
        let cols = header.split(',').count();
        if cols < 3 || (cols - 1) % 2 != 0 {
            return Err(parse_err(1, "header must be t, x_*, u_*"));
        }
        let d = (cols - 1) / 2;
        let (mut times, mut states, mut derivs) = (Vec::new(), Vec::new(), Vec::new());
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| parse_err(i + 2, &e.to_string()))?;
            if vals.len() != cols {
                return Err(parse_err(i + 2, "wrong column count"));
            }
            times.push(vals[0]);
            states.push(vals[1..=d].to_vec());
            derivs.push(vals[d + 1..].to_vec());
        }
        Self::from_parts(times, states, derivs, rtol, atol)
    }

    /// Little-endian binary: magic, `d`, `len`, `rtol`, `atol`, a dense flag,
    /// the rejected-step count, then times, states, derivs and (if flagged) dense corrections row by row.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&self.rtol.to_le_bytes())?;
        w.write_all(&self.atol.to_le_bytes())?;
        w.write_all(&(self.has_dense() as u64).to_le_bytes())?;
        w.write_all(&(self.rejected_steps as u64).to_le_bytes())?;
        for t in &self.times {
            w.write_all(&t.to_le_bytes())?;
        }
        for row in self.states.iter().chain(&self.derivs).chain(&self.dense) {
            for v in row {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(parse_err(0, "not a trajectory file"));
        }
        let mut buf = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut buf)?;
            Ok(u64::from_le_bytes(buf))
        };
        let d = next_u64(&mut r)? as usize;
        let len = next_u64(&mut r)? as usize;
        let rtol = f64::from_bits(next_u64(&mut r)?);
        let atol = f64::from_bits(next_u64(&mut r)?);
        let has_dense = next_u64(&mut r)? != 0;
        let rejected_steps = next_u64(&mut r)? as usize;
        let read_f64 = |r: &mut R| -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let times = (0..len).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let rows = |r: &mut R, count: usize| -> Result<Vec<Vec<f64>>> {
            (0..count).map(|_| (0..d).map(|_| read_f64(r)).collect()).collect()
        };
        let states = rows(&mut r, len)?;
        let derivs = rows(&mut r, len)?;
        let mut traj = Self::from_parts(times, states, derivs, rtol, atol)?;
        traj.rejected_steps = rejected_steps;
        if has_dense {
            let dense = rows(&mut r, len.saturating_sub(1))?;
            traj.with_dense(dense)
        } else {
            Ok(traj)
        }
    }

    pub fn save_binary(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_binary(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_binary(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_binary(BufReader::new(file))
    }
}

fn parse_err(line: usize, message: &str) -> BespokeError {
    BespokeError::Parse {
        line,
        column: 0,
        message: message.to_string(),
    }
}
