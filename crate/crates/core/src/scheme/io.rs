use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{BespokeError, Result};

use super::{BaseKind, SchemeGrids, SchemeParams};

pub const SCHEME_VERSION: u32 = 1;

/// A scheme together with free-form metadata, as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Scheme {
    pub params: SchemeParams,
    pub metadata: BTreeMap<String, Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridsFile {
    t: Vec<f64>,
    dt: Vec<f64>,
    s: Vec<f64>,
    ds: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemeFile {
    version: u32,
    base_kind: BaseKind,
    n: usize,
    theta_t: Vec<f64>,
    theta_dt: Vec<f64>,
    theta_s: Vec<f64>,
    theta_ds: Vec<f64>,
    grids: GridsFile,
    #[serde(default)]
    metadata: BTreeMap<String, Value>,
}

impl Scheme {
    pub fn new(params: SchemeParams) -> Self {
        Self { params, metadata: BTreeMap::new() }
    }

    pub fn identity(base_kind: BaseKind, n: usize) -> Result<Self> {
        Ok(Self::new(SchemeParams::identity(base_kind, n)?))
    }

    pub fn grids(&self) -> Result<SchemeGrids> {
        self.params.materialize()
    }

    pub fn to_json(&self) -> Result<String> {
        let g = self.grids()?;
        let p = &self.params;
        let file = SchemeFile {
            version: SCHEME_VERSION,
            base_kind: p.base_kind,
            n: p.n,
            theta_t: p.theta_t.clone(),
            theta_dt: p.theta_dt.clone(),
            theta_s: p.theta_s.clone(),
            theta_ds: p.theta_ds.clone(),
            grids: GridsFile { t: g.t, dt: g.dt, s: g.s, ds: g.ds },
            metadata: self.metadata.clone(),
        };
        crate::json::to_string(&file)
    }

    /// Parse a scheme file. The stored grids must agree exactly with the
    /// grids materialized from the stored parameters.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Value = serde_json::from_str(text)?;
        let found = raw
            .get("version")
            .and_then(Value::as_u64)
            .ok_or_else(|| BespokeError::Parse { line: 1, column: 1, message: "missing integer field 'version'".into() })?;
        if found != SCHEME_VERSION as u64 {
            return Err(BespokeError::SchemaVersion { found: found as u32, expected: SCHEME_VERSION });
        }
        let file: SchemeFile = serde_json::from_str(text)?;
        let params = SchemeParams {
            base_kind: file.base_kind,
            n: file.n,
            theta_t: file.theta_t,
            theta_dt: file.theta_dt,
            theta_s: file.theta_s,
            theta_ds: file.theta_ds,
        };
        let g = params.materialize()?;
        let stored = &file.grids;
        if g.t != stored.t || g.dt != stored.dt || g.s != stored.s || g.ds != stored.ds {
            return Err(BespokeError::InvalidParameter("stored grids do not match the stored parameters".into()));
        }
        Ok(Self { params, metadata: file.metadata })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
