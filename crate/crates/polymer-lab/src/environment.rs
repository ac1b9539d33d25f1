//! Gaussian disorder fields on the walk cone.
//!
//! An [`Environment`] attaches one i.i.d. standard Gaussian value to every
//! admissible site `(i, y)` with `1 <= i <= N`. Values are stored flat in
//! slice-major order (slice 1 first, `y` ascending inside a slice) and are
//! immutable after construction; geometric operations (`shift`) return new
//! fields.
//!
//! Sampling is reproducible and scheduler-independent: each field is filled
//! from a fresh ChaCha8 stream seeded by a 64-bit token, drawing
//! `rand_distr::StandardNormal` (ziggurat) site by site in storage order.
//! Parallel experiments derive per-replicate tokens with [`derive_seed`],
//! a splitmix64 step keyed by the replicate index, so replicate `i` sees the
//! same disorder no matter how many worker threads are running or in which
//! order replicates complete.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::lattice::cone_size;

const MAGIC: &[u8; 8] = b"PLABENV\0";
const FORMAT_VERSION: u32 = 1;

/// Derive the seed of sub-stream `index` from a master seed.
///
/// This is the splitmix64 output function applied to
/// `master + (index + 1) * GOLDEN`, i.e. the `index`-th value of the
/// splitmix64 sequence started at `master`. It is counter-based: any
/// sub-stream can be derived independently, which is what makes parallel
/// replicate scheduling irrelevant to the sampled disorder.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Offset of slice `i >= 1` into the flat value buffer.
#[inline]
pub(crate) fn slice_offset(i: usize) -> usize {
    (i - 1) * (i + 2) / 2
}

/// Flat index of site `(i, y)`.
#[inline]
pub(crate) fn site_index(i: usize, y: i64) -> usize {
    debug_assert!(crate::lattice::is_admissible(i, y), "site ({i}, {y})");
    slice_offset(i) + ((y + i as i64) / 2) as usize
}

/// One disorder realization on the cone of a fixed horizon.
#[derive(Debug, Clone)]
pub struct Environment {
    horizon: usize,
    seed: u64,
    derived: bool,
    values: Vec<f64>,
}

impl Environment {
    /// Sample a fresh field for `horizon` from the given seed token.
    pub fn sample(horizon: usize, seed: u64) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::InvalidHorizon(horizon));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..cone_size(horizon))
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Ok(Environment {
            horizon,
            seed,
            derived: false,
            values,
        })
    }

    /// Wrap explicit site values (slice-major, `y` ascending). Mostly useful
    /// for constructing deterministic fields in tests and experiments.
    pub fn from_values(horizon: usize, values: Vec<f64>) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::InvalidHorizon(horizon));
        }
        if values.len() != cone_size(horizon) {
            return Err(Error::invalid_parameter(
                "values",
                format!(
                    "expected {} site values for horizon {horizon}, got {}",
                    cone_size(horizon),
                    values.len()
                ),
            ));
        }
        Ok(Environment {
            horizon,
            seed: 0,
            derived: true,
            values,
        })
    }

    /// The all-zero field (so partition functions reduce to pure walk counts).
    pub fn zeros(horizon: usize) -> Result<Self> {
        Self::from_values(horizon, vec![0.0; cone_size(horizon)])
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// The seed token this field was sampled from (or derived from).
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// True when the field was obtained by transforming or wrapping values
    /// rather than sampled directly from its seed token.
    pub fn is_derived(&self) -> bool {
        self.derived
    }

    /// Value at site `(i, y)`.
    #[inline]
    pub fn value(&self, time: usize, space: i64) -> f64 {
        self.values[site_index(time, space)]
    }

    /// All site values, slice-major.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Euclidean distance between two fields on the same cone.
    pub fn distance(&self, other: &Environment) -> Result<f64> {
        if self.horizon != other.horizon {
            return Err(Error::HorizonMismatch(self.horizon, other.horizon));
        }
        let sum_sq: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sum_sq.sqrt())
    }

    /// Add the constant `c` to every site value, marking the result derived.
    pub fn shift(&self, c: f64) -> Environment {
        Environment {
            horizon: self.horizon,
            seed: self.seed,
            derived: true,
            values: self.values.iter().map(|v| v + c).collect(),
        }
    }

    /// Write the field to `path` in the binary format described in the README:
    /// magic, format version, horizon, seed token, derivation flag, value
    /// count, then IEEE-754 little-endian doubles in slice-major order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.horizon as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&u32::from(self.derived).to_le_bytes())?;
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a field previously written by [`Environment::save`].
    pub fn load(path: &Path) -> Result<Environment> {
        let mut r = BufReader::new(File::open(path)?);

        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::EnvironmentFormat("bad magic bytes".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::EnvironmentFormat(format!(
                "unsupported format version {version}"
            )));
        }
        let horizon = read_u64(&mut r)? as usize;
        if horizon < 1 {
            return Err(Error::EnvironmentFormat("horizon must be >= 1".into()));
        }
        let seed = read_u64(&mut r)?;
        let derived = match read_u32(&mut r)? {
            0 => false,
            1 => true,
            f => {
                return Err(Error::EnvironmentFormat(format!(
                    "unknown derivation flag {f}"
                )))
            }
        };
        let count = read_u64(&mut r)? as usize;
        if count != cone_size(horizon) {
            return Err(Error::EnvironmentFormat(format!(
                "value count {count} does not match horizon {horizon} (expected {})",
                cone_size(horizon)
            )));
        }
        let mut values = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf)?;
            let v = f64::from_le_bytes(buf);
            if !v.is_finite() {
                return Err(Error::EnvironmentFormat("non-finite site value".into()));
            }
            values.push(v);
        }
        Ok(Environment {
            horizon,
            seed,
            derived,
            values,
        })
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
