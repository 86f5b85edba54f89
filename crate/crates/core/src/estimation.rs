//! Backlog estimation from the leading slots of a frame.
//!
//! A reader that has seen `e` idle, `s` success and `c` collision slots in
//! the first `f_sub` slots of an `f_full`-slot frame picks the sub-frame
//! cardinality `n` maximising the multinomial likelihood
//!
//! ```text
//! f_sub! / (e! s! c!) * P_i^e * P_s^s * P_c^c
//! ```
//!
//! and scales it to the full frame by `f_full / f_sub`. The cell
//! probabilities are the exact binomial slot probabilities of the full
//! frame, evaluated at the population the candidate implies for that frame,
//! `n * f_full / f_sub`. For a full-frame observation this is simply `n`.
//!
//! The log-likelihood is concave in `n`, so the argmax is located by binary
//! search on the sign of its forward difference. Results can be precomputed
//! into a [`MapTable`] per `(f_full, f_sub, n_max)` and stored on disk.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};

const TABLE_MAGIC: &str = "tefas-map-table v1";

/// Natural logarithms of `0!, 1!, ..., max!`.
#[derive(Debug, Clone)]
pub struct LogFactorials {
    values: Vec<f64>,
}

impl LogFactorials {
    pub fn new(max: usize) -> Self {
        let mut values = Vec::with_capacity(max + 1);
        let mut acc = 0.0;
        values.push(acc);
        for k in 1..=max {
            acc += (k as f64).ln();
            values.push(acc);
        }
        LogFactorials { values }
    }

    pub fn get(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn max(&self) -> usize {
        self.values.len() - 1
    }

    /// `ln( (a+b+c)! / (a! b! c!) )`.
    pub fn ln_multinomial(&self, a: usize, b: usize, c: usize) -> f64 {
        self.get(a + b + c) - self.get(a) - self.get(b) - self.get(c)
    }
}

/// Idle, success and collision probabilities of one slot when `population`
/// tags (possibly fractional) each pick one of `f` slots uniformly.
fn cell_probabilities(population: f64, f: u32) -> [f64; 3] {
    if population == 0.0 {
        return [1.0, 0.0, 0.0];
    }
    if f == 1 {
        return if population == 1.0 {
            [0.0, 1.0, 0.0]
        } else {
            [0.0, 0.0, 1.0]
        };
    }
    let log_q = (-1.0 / f as f64).ln_1p();
    let idle = (population * log_q).exp();
    let success = population / f as f64 * ((population - 1.0) * log_q).exp();
    let collision = (-(population * log_q).exp_m1() - success).max(0.0);
    [idle, success, collision]
}

/// Exact binomial idle / success / collision probabilities for `n` tags over
/// `f` slots. The collision probability is the complement of the other two.
pub fn slot_probabilities(n: u64, f: u32) -> (f64, f64, f64) {
    assert!(f >= 1, "frame size must be at least 1");
    let [idle, success, collision] = cell_probabilities(n as f64, f);
    (idle, success, collision)
}

/// Slot statistics of the first `f_sub` slots of an `f_full`-slot frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SubFrameObservation {
    pub e: u32,
    pub s: u32,
    pub c: u32,
    pub f_sub: u32,
    pub f_full: u32,
}

impl SubFrameObservation {
    pub fn new(e: u32, s: u32, c: u32, f_full: u32) -> Result<Self> {
        let f_sub = e + s + c;
        if f_sub == 0 {
            return Err(Error::InvalidObservation(
                "a sub-frame must contain at least one slot".into(),
            ));
        }
        if f_sub > f_full {
            return Err(Error::InvalidObservation(format!(
                "sub-frame of {f_sub} slots exceeds the {f_full}-slot frame"
            )));
        }
        Ok(SubFrameObservation {
            e,
            s,
            c,
            f_sub,
            f_full,
        })
    }

    /// Fewest tags consistent with the observation.
    pub fn min_tags(&self) -> u32 {
        self.s + 2 * self.c
    }

    /// Population of the full frame implied by `n` tags in the sub-frame.
    fn frame_population(&self, n: u32) -> f64 {
        if self.f_sub == self.f_full {
            n as f64
        } else {
            n as f64 * self.f_full as f64 / self.f_sub as f64
        }
    }

    /// The `n`-dependent part of the log-likelihood.
    fn log_kernel(&self, n: u32) -> f64 {
        let [pi, ps, pc] = cell_probabilities(self.frame_population(n), self.f_full);
        let mut acc = 0.0;
        if self.e > 0 {
            acc += self.e as f64 * pi.ln();
        }
        if self.s > 0 {
            acc += self.s as f64 * ps.ln();
        }
        if self.c > 0 {
            // Near saturation P_c rounds to 1; take the log of the complement
            // so the likelihood keeps rising.
            let rest = pi + ps;
            let ln_pc = if rest < 0.5 { (-rest).ln_1p() } else { pc.ln() };
            acc += self.c as f64 * ln_pc;
        }
        acc
    }
}

/// Likelihood of the observation given `n` tags in the sub-frame.
pub fn map_posterior(n: u32, obs: &SubFrameObservation) -> f64 {
    let lf = LogFactorials::new(obs.f_sub as usize);
    let coef = lf.ln_multinomial(obs.e as usize, obs.s as usize, obs.c as usize);
    let kernel = obs.log_kernel(n);
    if kernel == f64::NEG_INFINITY {
        0.0
    } else {
        (coef + kernel).exp().min(1.0)
    }
}

/// Most likely sub-frame cardinality in `[s + 2c, n_max]`; ties go to the
/// smaller count. Saturates at `n_max` when the likelihood is still rising
/// there.
pub fn map_estimate_sub(obs: &SubFrameObservation, n_max: u32) -> u32 {
    let lo = obs.min_tags();
    assert!(
        n_max >= lo,
        "n_max ({n_max}) below the observation's lower bound ({lo})"
    );
    if obs.f_full == 1 {
        // Every candidate above the bound is equally (im)possible; the
        // bound itself is the first maximiser.
        return lo;
    }
    // First n whose successor is no better; concavity makes this monotone.
    let (mut left, mut right) = (lo, n_max);
    while left < right {
        let mid = left + (right - left) / 2;
        if obs.log_kernel(mid + 1) <= obs.log_kernel(mid) {
            right = mid;
        } else {
            left = mid + 1;
        }
    }
    left
}

/// Scales a sub-frame estimate to the full frame, rounding half up.
pub fn scale_to_frame(n_sub: u32, f_full: u32, f_sub: u32) -> u32 {
    assert!(f_sub >= 1 && f_sub <= f_full, "need 1 <= f_sub <= f_full");
    let num = 2 * n_sub as u64 * f_full as u64 + f_sub as u64;
    (num / (2 * f_sub as u64)) as u32
}

/// Recommended sub-frame length for a frame of `f` slots. Frames shorter
/// than 8 slots are observed whole.
pub fn recommended_subframe(f: u32) -> u32 {
    match f {
        0..=7 => f.max(1),
        8..=16 => 4,
        17..=64 => 8,
        65..=256 => 16,
        257..=1024 => 32,
        _ => 64,
    }
}

/// Number of feasible `(e, c)` cells for a sub-frame of `f_sub` slots.
pub fn cell_count(f_sub: u32) -> usize {
    let k = f_sub as usize + 1;
    k * (k + 1) / 2
}

fn cell_index(f_sub: u32, e: u32, c: u32) -> usize {
    let (f, e, c) = (f_sub as usize, e as usize, c as usize);
    e * (f + 1) - e * e.saturating_sub(1) / 2 + c
}

/// A cell whose stored estimate disagrees with a fresh computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableMismatch {
    pub e: u32,
    pub c: u32,
    pub stored: u32,
    pub expected: u32,
}

/// Precomputed sub-frame estimates for every `(e, c)` with `e + c <= f_sub`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapTable {
    frame_size: u32,
    subframe_size: u32,
    n_max: u32,
    entries: Vec<u32>,
}

impl MapTable {
    pub fn build(frame_size: u32, subframe_size: u32, n_max: u32) -> Result<Self> {
        validate_table_params(frame_size, subframe_size, n_max)?;
        let entries = cells(subframe_size)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(e, c)| map_estimate_sub(&table_obs(frame_size, subframe_size, e, c), n_max))
            .collect();
        Ok(MapTable {
            frame_size,
            subframe_size,
            n_max,
            entries,
        })
    }

    pub fn frame_size(&self) -> u32 {
        self.frame_size
    }

    pub fn subframe_size(&self) -> u32 {
        self.subframe_size
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stored estimate for the cell, or `None` if `e + c > f_sub`.
    pub fn lookup(&self, e: u32, c: u32) -> Option<u32> {
        (e + c <= self.subframe_size).then(|| self.entries[cell_index(self.subframe_size, e, c)])
    }

    /// `(e, c, n_hat)` in file order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, u32, u32)> + '_ {
        cells(self.subframe_size).zip(self.entries.iter()).map(|((e, c), &n)| (e, c, n))
    }

    /// Recomputes every cell and returns the first one that differs.
    pub fn verify(&self) -> Option<TableMismatch> {
        self.iter().find_map(|(e, c, stored)| {
            let obs = table_obs(self.frame_size, self.subframe_size, e, c);
            let expected = map_estimate_sub(&obs, self.n_max);
            (stored != expected).then_some(TableMismatch {
                e,
                c,
                stored,
                expected,
            })
        })
    }

    /// Three header lines (format version, parameters, row count) followed
    /// by one `e,c,n_hat` row per cell.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(16 * self.entries.len() + 64);
        let _ = writeln!(out, "{TABLE_MAGIC}");
        let _ = writeln!(
            out,
            "frame={} subframe={} nmax={}",
            self.frame_size, self.subframe_size, self.n_max
        );
        let _ = writeln!(out, "rows={}", self.entries.len());
        for (e, c, n) in self.iter() {
            let _ = writeln!(out, "{e},{c},{n}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let bad = |line: usize, message: String| Error::TableFormat { line, message };

        let (ln, magic) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
        if magic != TABLE_MAGIC {
            return Err(bad(ln, format!("expected '{TABLE_MAGIC}', found '{magic}'")));
        }

        let (ln, params) = lines.next().ok_or_else(|| bad(2, "missing parameter line".into()))?;
        let mut frame = None;
        let mut subframe = None;
        let mut n_max = None;
        for field in params.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| bad(ln, format!("malformed parameter '{field}'")))?;
            let value: u32 = value
                .parse()
                .map_err(|_| bad(ln, format!("parameter '{key}' is not an integer")))?;
            match key {
                "frame" => frame = Some(value),
                "subframe" => subframe = Some(value),
                "nmax" => n_max = Some(value),
                other => return Err(bad(ln, format!("unknown parameter '{other}'"))),
            }
        }
        let (frame, subframe, n_max) = match (frame, subframe, n_max) {
            (Some(f), Some(s), Some(n)) => (f, s, n),
            _ => return Err(bad(ln, "need frame, subframe and nmax".into())),
        };
        validate_table_params(frame, subframe, n_max).map_err(|e| bad(ln, e.to_string()))?;

        let (ln, rows) = lines.next().ok_or_else(|| bad(3, "missing row count".into()))?;
        let rows: usize = rows
            .strip_prefix("rows=")
            .and_then(|r| r.parse().ok())
            .ok_or_else(|| bad(ln, format!("expected 'rows=<count>', found '{rows}'")))?;
        let expected_rows = cell_count(subframe);
        if rows != expected_rows {
            return Err(bad(
                ln,
                format!("subframe {subframe} needs {expected_rows} rows, header says {rows}"),
            ));
        }

        let mut entries: Vec<Option<u32>> = vec![None; expected_rows];
        let mut seen = 0;
        for (ln, row) in lines {
            if row.is_empty() {
                continue;
            }
            let mut fields = row.split(',').map(|f| f.trim().parse::<u32>());
            let (e, c, n) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
                (Some(Ok(e)), Some(Ok(c)), Some(Ok(n)), None) => (e, c, n),
                _ => return Err(bad(ln, format!("expected 'e,c,n_hat', found '{row}'"))),
            };
            if e + c > subframe {
                return Err(bad(ln, format!("cell ({e}, {c}) outside the sub-frame")));
            }
            let slot = &mut entries[cell_index(subframe, e, c)];
            if slot.is_some() {
                return Err(bad(ln, format!("duplicate cell ({e}, {c})")));
            }
            *slot = Some(n);
            seen += 1;
        }
        if seen != expected_rows {
            return Err(bad(
                0,
                format!("found {seen} rows, header promises {expected_rows}"),
            ));
        }
        Ok(MapTable {
            frame_size: frame,
            subframe_size: subframe,
            n_max,
            entries: entries.into_iter().map(Option::unwrap).collect(),
        })
    }
}

fn cells(f_sub: u32) -> impl Iterator<Item = (u32, u32)> {
    (0..=f_sub).flat_map(move |e| (0..=f_sub - e).map(move |c| (e, c)))
}

fn table_obs(f_full: u32, f_sub: u32, e: u32, c: u32) -> SubFrameObservation {
    SubFrameObservation {
        e,
        s: f_sub - e - c,
        c,
        f_sub,
        f_full,
    }
}

fn validate_table_params(frame: u32, subframe: u32, n_max: u32) -> Result<()> {
    if subframe == 0 || subframe > frame {
        return Err(Error::InvalidFrame(format!(
            "need 1 <= subframe <= frame, got subframe={subframe} frame={frame}"
        )));
    }
    if n_max < 2 * subframe {
        return Err(Error::NmaxTooSmall {
            n_max,
            required: 2 * subframe,
        });
    }
    Ok(())
}

/// Default search cap multiplier: the estimator searches sub-frame
/// cardinalities up to `8 * f_sub`, a load factor of 8.
pub const DEFAULT_NMAX_FACTOR: u32 = 8;

/// Entries kept in the estimator's memo before it is flushed.
const MEMO_CAPACITY: usize = 1 << 20;

/// Backlog estimator with installed lookup tables and a per-cell memo.
///
/// Observations at the recommended sub-frame length of a frame whose table
/// was installed are answered from that table. Everything else is computed
/// by the argmax search and memoised per `(frame, e, s, c)`, which is a
/// lazily filled version of the same table. Both paths return identical
/// values.
#[derive(Debug, Clone)]
pub struct MapEstimator {
    n_max_factor: u32,
    tables: HashMap<u32, MapTable>,
    memo: HashMap<(u32, u32, u32, u32), u32>,
}

impl Default for MapEstimator {
    fn default() -> Self {
        MapEstimator::new(DEFAULT_NMAX_FACTOR)
    }
}

impl MapEstimator {
    pub fn new(n_max_factor: u32) -> Self {
        assert!(n_max_factor >= 2, "n_max factor must be at least 2");
        MapEstimator {
            n_max_factor,
            tables: HashMap::new(),
            memo: HashMap::new(),
        }
    }

    /// Search cap for a sub-frame of `f_sub` slots.
    pub fn n_max(&self, f_sub: u32) -> u32 {
        self.n_max_factor.saturating_mul(f_sub)
    }

    /// Installs a prebuilt table. Tables whose cap disagrees with this
    /// estimator's `n_max` policy, or whose sub-frame is not the recommended
    /// one, are rejected.
    pub fn insert_table(&mut self, table: MapTable) -> Result<()> {
        let f = table.frame_size();
        let f_sub = table.subframe_size();
        if f_sub != recommended_subframe(f) || table.n_max() != self.n_max(f_sub) {
            return Err(Error::InvalidFrame(format!(
                "table (frame={f}, subframe={}, nmax={}) does not match estimator policy",
                table.subframe_size(),
                table.n_max()
            )));
        }
        self.tables.insert(f, table);
        Ok(())
    }

    pub fn installed_tables(&self) -> usize {
        self.tables.len()
    }

    /// Sub-frame cardinality estimate for the observation.
    pub fn estimate_sub(&mut self, obs: &SubFrameObservation) -> u32 {
        let n_max = self.n_max(obs.f_sub);
        if obs.f_sub == recommended_subframe(obs.f_full) {
            if let Some(n) = self.tables.get(&obs.f_full).and_then(|t| t.lookup(obs.e, obs.c)) {
                return n;
            }
        }
        let key = (obs.f_full, obs.e, obs.s, obs.c);
        if let Some(&n) = self.memo.get(&key) {
            return n;
        }
        if self.memo.len() >= MEMO_CAPACITY {
            self.memo.clear();
        }
        let n = map_estimate_sub(obs, n_max);
        self.memo.insert(key, n);
        n
    }

    /// Full-frame cardinality estimate.
    pub fn estimate(&mut self, obs: &SubFrameObservation) -> u32 {
        scale_to_frame(self.estimate_sub(obs), obs.f_full, obs.f_sub)
    }
}
