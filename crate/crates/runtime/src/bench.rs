//! Timing experiments: attack time, query encryption, database encryption
//! and cloud-side kNN, each swept over dimension or table size.
//!
//! Figure ids: 2 attack vs d, 3 query encryption vs d, 4 db encryption vs d,
//! 5 db encryption vs m, 6 kNN vs d, 7 kNN vs m.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sknn_core::attack;
use sknn_core::numerics::Scaled;
use sknn_core::vsknn::{self, QueryToken, VerifyKey};
use sknn_core::zhu::{self, DataKey, EncPoint, SchemeDims, ZhuEncQuery};

use crate::dataset::Dataset;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchParams {
    pub dims: Vec<usize>,
    pub sizes: Vec<usize>,
    /// Dimension for the size sweeps.
    pub fixed_d: usize,
    /// Table size for the dimension sweeps.
    pub fixed_m: usize,
    /// Paillier modulus size for query encryption timings.
    pub key_bits: u64,
    /// Paillier modulus size used by the attacker's sessions.
    pub attack_key_bits: u64,
    /// Each sample is the median of this many runs.
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchParams {
    fn default() -> Self {
        BenchParams {
            dims: vec![2, 10, 25, 50, 100],
            sizes: vec![1_000, 10_000, 100_000],
            fixed_d: 10,
            fixed_m: 10_000,
            key_bits: 1024,
            attack_key_bits: 512,
            reps: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(x, y)`.
pub fn linear_fit(points: &[(f64, f64)]) -> LinearFit {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let intercept = my - slope * mx;
    let sse: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    LinearFit { slope, intercept, r_squared }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    /// `(x, seconds)`, x ascending.
    pub samples: Vec<(f64, f64)>,
    pub fit: LinearFit,
}

impl Series {
    fn new(label: &str, samples: Vec<(f64, f64)>) -> Self {
        Series { label: label.into(), fit: linear_fit(&samples), samples }
    }

    pub fn y_at(&self, x: f64) -> Option<f64> {
        self.samples.iter().find(|s| s.0 == x).map(|s| s.1)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchReport {
    pub figure: u8,
    pub title: String,
    pub x_label: String,
    pub params: BenchParams,
    pub series: Vec<Series>,
}

impl BenchReport {
    pub fn series(&self, label: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.label == label)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> anyhow::Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["figure", "series", &self.x_label, "seconds"])?;
        for s in &self.series {
            for (x, y) in &s.samples {
                w.write_record([self.figure.to_string(), s.label.clone(), x.to_string(), format!("{y:.9}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn print_summary(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "figure {}: {}", self.figure, self.title)?;
        for s in &self.series {
            let pts: Vec<String> = s.samples.iter().map(|(x, y)| format!("{x}:{y:.4}s")).collect();
            writeln!(
                out,
                "  {:<14} {}  slope={:.3e} r2={:.4}",
                s.label,
                pts.join(" "),
                s.fit.slope,
                s.fit.r_squared
            )?;
        }
        Ok(())
    }
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("timings are finite"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn timed<T>(f: impl FnOnce() -> anyhow::Result<T>) -> anyhow::Result<(T, Duration)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed()))
}

fn median_secs(reps: usize, mut f: impl FnMut() -> anyhow::Result<Duration>) -> anyhow::Result<f64> {
    let xs = (0..reps.max(1)).map(|_| f().map(|d| d.as_secs_f64())).collect::<anyhow::Result<Vec<_>>>()?;
    Ok(median(xs))
}

fn dims(d: usize) -> anyhow::Result<SchemeDims> {
    Ok(SchemeDims::new(d, 2, 2)?)
}

fn random_query<R: Rng>(d: usize, rng: &mut R) -> Vec<Scaled> {
    (0..d).map(|_| Scaled::new(rng.gen_range(-1_000_000_000i64..=1_000_000_000), 6)).collect()
}

/// Wall-clock time of the full forgery: `d + 1` honest sessions, GCD
/// reduction, and one forged query.
pub fn attack_time<R: Rng>(key: &DataKey, key_bits: u64, rng: &mut R) -> anyhow::Result<Duration> {
    let d = key.dims.d;
    let q = random_query(d, rng);
    let (_, t) = timed(|| {
        let mut oracle = |x: &[Scaled]| zhu::encrypt_query_local(key, x, 0, key_bits, rng).map(|r| r.0);
        let basis = attack::acquire_basis(&mut oracle, d)?;
        Ok(attack::forge_query(&basis, &q)?)
    })?;
    Ok(t)
}

fn figure2(p: &BenchParams) -> anyhow::Result<Vec<Series>> {
    let mut rng = ChaCha20Rng::seed_from_u64(p.seed);
    let mut samples = Vec::new();
    for &d in &p.dims {
        let key = DataKey::generate(dims(d)?, &mut rng)?;
        samples.push((d as f64, median_secs(p.reps, || attack_time(&key, p.attack_key_bits, &mut rng))?));
    }
    Ok(vec![Series::new("attack", samples)])
}

fn figure3(p: &BenchParams) -> anyhow::Result<Vec<Series>> {
    let mut rng = ChaCha20Rng::seed_from_u64(p.seed);
    let (mut z, mut v) = (Vec::new(), Vec::new());
    for &d in &p.dims {
        let (dk, vk) = vsknn::keygen(dims(d)?, vsknn::DEFAULT_CHECK_LEN, &mut rng)?;
        let q = random_query(d, &mut rng);
        z.push((d as f64, median_secs(p.reps, || Ok(timed(|| Ok(zhu::encrypt_query_local(&dk, &q, 6, p.key_bits, &mut rng)?))?.1))?));
        v.push((
            d as f64,
            median_secs(p.reps, || Ok(timed(|| Ok(vsknn::encrypt_query_local(&dk, &vk, &q, 6, p.key_bits, &mut rng)?))?.1))?,
        ));
    }
    Ok(vec![Series::new("zhu", z), Series::new("vsknn", v)])
}

/// Encryption is the same procedure in both schemes; each gets its own key.
fn db_encryption(p: &BenchParams, grid: &[(usize, usize)], x_is_d: bool) -> anyhow::Result<Vec<Series>> {
    let mut rng = ChaCha20Rng::seed_from_u64(p.seed);
    let (mut z, mut v) = (Vec::new(), Vec::new());
    for &(d, m) in grid {
        let ds = Dataset::synthetic(m, d, 1000, 6, p.seed);
        let zk = DataKey::generate(dims(d)?, &mut rng)?;
        let (vk, _) = vsknn::keygen(dims(d)?, vsknn::DEFAULT_CHECK_LEN, &mut rng)?;
        let x = if x_is_d { d } else { m } as f64;
        z.push((x, median_secs(p.reps, || Ok(timed(|| Ok(zk.encrypt_points(&ds.points, p.seed)?))?.1))?));
        v.push((x, median_secs(p.reps, || Ok(timed(|| Ok(vk.encrypt_points(&ds.points, p.seed)?))?.1))?));
    }
    Ok(vec![Series::new("zhu", z), Series::new("vsknn", v)])
}

/// Prepared state for kNN timings at one grid point.
pub struct KnnFixture {
    pub db: Vec<EncPoint>,
    pub zhu_query: ZhuEncQuery,
    pub token: QueryToken,
    pub vk: VerifyKey,
}

impl KnnFixture {
    /// One key pair serves both schemes so both scans run over the same table.
    pub fn build(d: usize, m: usize, key_bits: u64, seed: u64) -> anyhow::Result<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (dk, vk) = vsknn::keygen(dims(d)?, vsknn::DEFAULT_CHECK_LEN, &mut rng)?;
        let ds = Dataset::synthetic(m, d, 1000, 6, seed);
        let db = dk.encrypt_points(&ds.points, seed)?;
        let q = random_query(d, &mut rng);
        let (zhu_query, _) = zhu::encrypt_query_local(&dk, &q, 6, key_bits, &mut rng)?;
        let (token, _) = vsknn::encrypt_query_local(&dk, &vk, &q, 6, key_bits, &mut rng)?;
        Ok(KnnFixture { db, zhu_query, token, vk })
    }

    pub fn zhu_time(&self, k: usize) -> anyhow::Result<Duration> {
        Ok(timed(|| Ok(zhu::knn(&self.db, &self.zhu_query.vec, k)?))?.1)
    }

    /// Total time and the verification phase alone.
    pub fn vsknn_time(&self, k: usize) -> anyhow::Result<(Duration, Duration)> {
        let ((_, phases), total) = timed(|| Ok(vsknn::knn_timed(&self.db, &self.token, k, &self.vk)?))?;
        Ok((total, phases.verify))
    }
}

pub const BENCH_K: usize = 10;

/// Scan cost does not depend on the query user's Paillier modulus.
const FIXTURE_KEY_BITS: u64 = 512;

fn knn_series(p: &BenchParams, grid: &[(usize, usize)], x_is_d: bool) -> anyhow::Result<Vec<Series>> {
    let (mut z, mut v, mut ver, mut diff) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for &(d, m) in grid {
        let f = KnnFixture::build(d, m, FIXTURE_KEY_BITS, p.seed ^ (d * 1_000_003 + m) as u64)?;
        let x = if x_is_d { d } else { m } as f64;
        let mut zt = Vec::new();
        let mut vt = Vec::new();
        let mut vv = Vec::new();
        for _ in 0..p.reps.max(1) {
            zt.push(f.zhu_time(BENCH_K)?.as_secs_f64());
            let (total, verify) = f.vsknn_time(BENCH_K)?;
            vt.push(total.as_secs_f64());
            vv.push(verify.as_secs_f64());
        }
        let (zm, vm) = (median(zt), median(vt));
        z.push((x, zm));
        v.push((x, vm));
        ver.push((x, median(vv)));
        diff.push((x, vm - zm));
    }
    Ok(vec![
        Series::new("zhu", z),
        Series::new("vsknn", v),
        Series::new("vsknn-verify", ver),
        Series::new("difference", diff),
    ])
}

pub fn run(figure: u8, p: &BenchParams) -> anyhow::Result<BenchReport> {
    let by_d: Vec<(usize, usize)> = p.dims.iter().map(|&d| (d, p.fixed_m)).collect();
    let by_m: Vec<(usize, usize)> = p.sizes.iter().map(|&m| (p.fixed_d, m)).collect();
    let (title, x_label, series) = match figure {
        2 => ("time to forge a query against the Zhu scheme", "d", figure2(p)?),
        3 => ("query encryption time", "d", figure3(p)?),
        4 => ("database encryption time, fixed m", "d", db_encryption(p, &by_d, true)?),
        5 => ("database encryption time, fixed d", "m", db_encryption(p, &by_m, false)?),
        6 => ("cloud kNN time, fixed m", "d", knn_series(p, &by_d, true)?),
        7 => ("cloud kNN time, fixed d", "m", knn_series(p, &by_m, false)?),
        other => anyhow::bail!("unknown figure {other} (expected 2-7)"),
    };
    Ok(BenchReport { figure, title: title.into(), x_label: x_label.into(), params: p.clone(), series })
}
