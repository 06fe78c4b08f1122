//! Output-stationary systolic array timing with a shared memo table.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SystolicQuery {
    pub rows: u32,
    pub cols: u32,
    pub tile_m: u64,
    pub tile_k: u64,
    pub tile_n: u64,
}

/// Cycles for an `M×K · K×N` tile on an `R×C` output-stationary array.
///
/// Each pass pins an `R×C` block of outputs; operands enter skewed, so the
/// last PE finishes its `K`-deep accumulation `R + C − 2` cycles after the
/// first. Passes are serialized and always occupy the full array.
pub fn systolic_tile_cycles(q: &SystolicQuery) -> u64 {
    let rows = q.rows as u64;
    let cols = q.cols as u64;
    let passes = q.tile_m.div_ceil(rows) * q.tile_n.div_ceil(cols);
    passes * (q.tile_k + rows + cols - 2)
}

const CACHE_HEADER: &str = "archsim-systolic-cache v1";

/// Concurrent memo table for [`systolic_tile_cycles`].
#[derive(Debug, Default)]
pub struct CycleMemoTable {
    entries: RwLock<HashMap<SystolicQuery, u64>>,
    computed: AtomicU64,
}

impl CycleMemoTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lookup_or_compute(&self, q: &SystolicQuery) -> u64 {
        if let Some(&c) = self.entries.read().expect("memo lock").get(q) {
            return c;
        }
        let cycles = systolic_tile_cycles(q);
        self.computed.fetch_add(1, Ordering::Relaxed);
        // A racing writer may have inserted the same key; values are identical.
        *self.entries.write().expect("memo lock").entry(*q).or_insert(cycles)
    }

    /// Number of cache misses that ran the model.
    pub fn compute_count(&self) -> u64 {
        self.computed.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("memo lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Loads entries from a cache file; a missing file yields an empty table.
    pub fn load(path: &Path) -> Result<Self> {
        let table = Self::new();
        let file = match std::fs::File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(table),
            Err(e) => return Err(Error::io(path, e)),
        };
        let mut lines = std::io::BufReader::new(file).lines();
        match lines.next() {
            Some(Ok(h)) if h == CACHE_HEADER => {}
            // Unknown versions are ignored rather than trusted.
            _ => return Ok(table),
        }
        {
            let mut entries = table.entries.write().expect("memo lock");
            for line in lines {
                let line = line.map_err(|e| Error::io(path, e))?;
                let f: Vec<u64> = line.split_whitespace().filter_map(|t| t.parse().ok()).collect();
                if let [r, c, m, k, n, cycles] = f[..] {
                    let q = SystolicQuery {
                        rows: r as u32,
                        cols: c as u32,
                        tile_m: m,
                        tile_k: k,
                        tile_n: n,
                    };
                    entries.insert(q, cycles);
                }
            }
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let entries = self.entries.read().expect("memo lock");
        let mut keys: Vec<_> = entries.iter().collect();
        keys.sort();
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let write = || -> std::io::Result<()> {
            writeln!(out, "{CACHE_HEADER}")?;
            for (q, c) in keys {
                writeln!(
                    out,
                    "{} {} {} {} {} {}",
                    q.rows, q.cols, q.tile_m, q.tile_k, q.tile_n, c
                )?;
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }
}
