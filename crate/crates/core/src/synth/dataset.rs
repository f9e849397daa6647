use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::balance::{balance_indices, TagFractions};
use super::demo::{
    generate_demonstration, DemoRequest, Demonstration, GroundTruthConfig, ScenarioTag,
};
use super::terrain::{generate_world, WorldSpec};
use crate::error::{Error, Result};
use crate::kinematics::{KinematicsConfig, PastTrack, TrackSample};
use crate::mdp::{Action, Cell, GridWorld, ENV_CHANNELS};
use crate::par::{self, Exec};
use crate::seed;
use crate::tensor::Tensor;

const RECORD_MAGIC: &[u8; 8] = b"MEDEMO01";
const MANIFEST: &str = "manifest.json";
const FORMAT: &str = "meirl-dataset";

const STREAM_WORLD: u64 = 1;
const STREAM_DEMO: u64 = 2;
const STREAM_BALANCE: u64 = 3;
const STREAM_SPLIT: u64 = 4;

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub seed: u64,
    /// Total demonstrations over both splits.
    pub demos: usize,
    /// Fraction assigned to the training split.
    pub split: f64,
    /// Template for every world; its seed is replaced per world.
    pub world: WorldSpec,
    pub demos_per_world: usize,
    /// Inclusive range of future lengths in cells.
    pub horizon_min: usize,
    pub horizon_max: usize,
    /// Inclusive speed ranges in m/s.
    pub slow_speed: [f64; 2],
    pub fast_speed: [f64; 2],
    pub fast_fraction: f64,
    pub ground_truth: GroundTruthConfig,
    pub kinematics: KinematicsConfig,
    /// Optional resampling to target tag fractions before splitting.
    pub balance: Option<TagFractions>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            demos: 660,
            split: 10.0 / 11.0,
            world: WorldSpec::default(),
            demos_per_world: 4,
            horizon_min: 15,
            horizon_max: 40,
            slow_speed: [1.5, 4.0],
            fast_speed: [6.0, 9.0],
            fast_fraction: 0.5,
            ground_truth: GroundTruthConfig::default(),
            kinematics: KinematicsConfig::default(),
            balance: None,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.demos == 0 {
            return Err(Error::Config(
                "dataset needs at least one demonstration".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.split) {
            return Err(Error::Config(format!(
                "split must lie in [0, 1], got {}",
                self.split
            )));
        }
        if self.demos_per_world == 0 {
            return Err(Error::Config("demos_per_world must be at least 1".into()));
        }
        if self.horizon_min == 0 || self.horizon_min > self.horizon_max {
            return Err(Error::Config(format!(
                "horizon range [{}, {}] is empty or starts at zero",
                self.horizon_min, self.horizon_max
            )));
        }
        for (name, [lo, hi]) in [
            ("slow_speed", self.slow_speed),
            ("fast_speed", self.fast_speed),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} range [{lo}, {hi}] is invalid"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.fast_fraction) {
            return Err(Error::Config(format!(
                "fast_fraction must lie in [0, 1], got {}",
                self.fast_fraction
            )));
        }
        self.world.validate()?;
        self.ground_truth.validate()
    }

    /// Number of training records.
    pub fn train_count(&self) -> usize {
        ((self.demos as f64 * self.split).round() as usize).min(self.demos)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Demonstration>,
    pub test: Vec<Demonstration>,
}

impl Dataset {
    pub fn tag_counts(demos: &[Demonstration]) -> BTreeMap<ScenarioTag, usize> {
        let mut m: BTreeMap<ScenarioTag, usize> =
            ScenarioTag::ALL.iter().map(|&t| (t, 0)).collect();
        for d in demos {
            *m.entry(d.tag).or_default() += 1;
        }
        m
    }
}

/// Generates demonstrations in parallel over worlds, optionally balances the
/// tag mix, then splits into train and test.
pub fn generate_dataset(cfg: &DatasetConfig, exec: Exec) -> Result<Dataset> {
    cfg.validate()?;
    let pool_size = match cfg.balance {
        // draw extra so that rarer tags are represented before resampling
        Some(_) => cfg.demos * 2,
        None => cfg.demos,
    };
    let worlds = pool_size.div_ceil(cfg.demos_per_world);
    let per_world: Vec<Result<Vec<Demonstration>>> = par::map_range(exec, worlds, |w| {
        let spec = WorldSpec {
            seed: seed::derive(cfg.seed, STREAM_WORLD, w as u64),
            ..cfg.world.clone()
        };
        let sw = generate_world(&spec)?;
        let first = w * cfg.demos_per_world;
        let last = (first + cfg.demos_per_world).min(pool_size);
        (first..last)
            .map(|i| {
                let s = seed::derive(cfg.seed, STREAM_DEMO, i as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let fast = rng.random_bool(cfg.fast_fraction);
                let [lo, hi] = if fast { cfg.fast_speed } else { cfg.slow_speed };
                let speed = if lo == hi {
                    lo
                } else {
                    rng.random_range(lo..=hi)
                };
                let horizon = rng.random_range(cfg.horizon_min..=cfg.horizon_max);
                let req = DemoRequest {
                    speed,
                    horizon,
                    start: None,
                    seed: rng.random(),
                };
                generate_demonstration(&sw, &cfg.ground_truth, &cfg.kinematics, &req)
            })
            .collect()
    });
    let mut pool = Vec::with_capacity(pool_size);
    for r in per_world {
        pool.extend(r?);
    }
    let mut demos = match &cfg.balance {
        Some(targets) => {
            let tags: Vec<ScenarioTag> = pool.iter().map(|d| d.tag).collect();
            let seed = seed::derive(cfg.seed, STREAM_BALANCE, 0);
            balance_indices(&tags, targets, cfg.demos, seed)?
                .into_iter()
                .map(|i| pool[i].clone())
                .collect()
        }
        None => pool,
    };
    // shuffle before splitting so both splits see every world type
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, STREAM_SPLIT, 0));
    rand::seq::SliceRandom::shuffle(demos.as_mut_slice(), &mut rng);
    let test = demos.split_off(cfg.train_count());
    Ok(Dataset { train: demos, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub file: String,
    pub seed: u64,
    pub tag: ScenarioTag,
    pub speed: f64,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub dims: [usize; 2],
    pub resolution: f64,
    pub counts: BTreeMap<String, usize>,
    pub tags: BTreeMap<String, BTreeMap<ScenarioTag, usize>>,
    pub config: Option<DatasetConfig>,
    pub train: Vec<RecordEntry>,
    pub test: Vec<RecordEntry>,
}

fn entries(split: &str, demos: &[Demonstration]) -> Vec<RecordEntry> {
    demos
        .iter()
        .enumerate()
        .map(|(i, d)| RecordEntry {
            file: format!("{split}/{i:05}.demo"),
            seed: d.seed,
            tag: d.tag,
            speed: d.speed,
            horizon: d.horizon(),
        })
        .collect()
}

/// Writes `manifest.json` plus one binary record per demonstration.
pub fn write_dataset(
    dir: &Path,
    data: &Dataset,
    config: Option<&DatasetConfig>,
) -> Result<Manifest> {
    let first = data
        .train
        .first()
        .or(data.test.first())
        .ok_or_else(|| Error::Invalid("refusing to write an empty dataset".into()))?;
    let shape = first.world.shape();
    let manifest = Manifest {
        format: FORMAT.into(),
        version: 1,
        dims: [shape.rows, shape.cols],
        resolution: first.world.resolution(),
        counts: [
            ("train".to_string(), data.train.len()),
            ("test".to_string(), data.test.len()),
        ]
        .into(),
        tags: [
            ("train".to_string(), Dataset::tag_counts(&data.train)),
            ("test".to_string(), Dataset::tag_counts(&data.test)),
        ]
        .into(),
        config: config.cloned(),
        train: entries("train", &data.train),
        test: entries("test", &data.test),
    };
    for split in ["train", "test"] {
        let p = dir.join(split);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let all = manifest
        .train
        .iter()
        .zip(&data.train)
        .chain(manifest.test.iter().zip(&data.test));
    for (entry, demo) in all {
        let p = dir.join(&entry.file);
        fs::write(&p, encode_record(demo)?).map_err(|e| Error::io(&p, e))?;
    }
    let p = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let p = dir.join(MANIFEST);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: p.clone(),
        reason: e.to_string(),
    })?;
    if m.format != FORMAT {
        return Err(Error::Format {
            path: p,
            reason: format!("format tag '{}' is not '{FORMAT}'", m.format),
        });
    }
    Ok(m)
}

pub fn read_dataset(dir: &Path) -> Result<(Manifest, Dataset)> {
    let m = read_manifest(dir)?;
    let load = |list: &[RecordEntry]| -> Result<Vec<Demonstration>> {
        list.iter()
            .map(|e| read_record(&dir.join(&e.file)))
            .collect()
    };
    let data = Dataset {
        train: load(&m.train)?,
        test: load(&m.test)?,
    };
    Ok((m, data))
}

pub fn read_record(path: &Path) -> Result<Demonstration> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_record(&bytes, path)
}

/// Binary record: magic, `u32` rows and cols, `f64` resolution, env channels
/// as `f32`, past `(t, x, y)` triples, future cells, actions, speed, tag and
/// seed. All little-endian.
pub fn encode_record(d: &Demonstration) -> Result<Vec<u8>> {
    let env = d.world.env();
    if env.data().iter().any(|&v| v as f32 as f64 != v) {
        return Err(Error::Invalid(
            "environment values must be exactly representable as f32".into(),
        ));
    }
    let shape = d.world.shape();
    let mut b = Vec::with_capacity(32 + env.len() * 4 + d.past.len() * 24 + d.future.len() * 8);
    b.extend_from_slice(RECORD_MAGIC);
    b.extend_from_slice(&(shape.rows as u32).to_le_bytes());
    b.extend_from_slice(&(shape.cols as u32).to_le_bytes());
    b.extend_from_slice(&d.world.resolution().to_le_bytes());
    for &v in env.data() {
        b.extend_from_slice(&(v as f32).to_le_bytes());
    }
    b.extend_from_slice(&(d.past.len() as u32).to_le_bytes());
    for s in d.past.samples() {
        for v in [s.t, s.x, s.y] {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    b.extend_from_slice(&(d.future.len() as u32).to_le_bytes());
    for c in &d.future {
        b.extend_from_slice(&(c.row as u32).to_le_bytes());
        b.extend_from_slice(&(c.col as u32).to_le_bytes());
    }
    b.extend_from_slice(&(d.actions.len() as u32).to_le_bytes());
    b.extend(d.actions.iter().map(|a| a.index() as u8));
    b.extend_from_slice(&d.speed.to_le_bytes());
    b.push(d.tag.index() as u8);
    b.extend_from_slice(&d.seed.to_le_bytes());
    Ok(b)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            path: PathBuf::from(self.path),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(e) => {
                let s = &self.bytes[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(self.fail(format!("truncated at byte {}", self.pos))),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as f64)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    /// Length prefix, checked against the bytes that remain.
    fn count(&mut self, item_bytes: usize) -> Result<usize> {
        let n = self.u32()?;
        if n.saturating_mul(item_bytes) > self.bytes.len() - self.pos {
            return Err(self.fail(format!("length {n} exceeds the remaining data")));
        }
        Ok(n)
    }
}

pub fn decode_record(bytes: &[u8], origin: &Path) -> Result<Demonstration> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path: origin,
    };
    if r.take(RECORD_MAGIC.len())? != RECORD_MAGIC {
        return Err(r.fail("not a demonstration record"));
    }
    let rows = r.u32()?;
    let cols = r.u32()?;
    let resolution = r.f64()?;
    let n_env = ENV_CHANNELS
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .filter(|&n| n.saturating_mul(4) <= bytes.len())
        .ok_or_else(|| r.fail(format!("implausible dimensions {rows}x{cols}")))?;
    let env: Vec<f64> = (0..n_env).map(|_| r.f32()).collect::<Result<_>>()?;
    let world = GridWorld::new(
        Tensor::from_vec(&[ENV_CHANNELS, rows, cols], env)?,
        resolution,
    )
    .map_err(|e| r.fail(e.to_string()))?;
    let n_past = r.count(24)?;
    let mut samples = Vec::with_capacity(n_past);
    for _ in 0..n_past {
        samples.push(TrackSample {
            t: r.f64()?,
            x: r.f64()?,
            y: r.f64()?,
        });
    }
    let past = PastTrack::new(samples).map_err(|e| r.fail(e.to_string()))?;
    let n_future = r.count(8)?;
    let mut future = Vec::with_capacity(n_future);
    for _ in 0..n_future {
        future.push(Cell::new(r.u32()?, r.u32()?));
    }
    let n_actions = r.count(1)?;
    let mut actions = Vec::with_capacity(n_actions);
    for _ in 0..n_actions {
        let i = r.u8()? as usize;
        actions.push(Action::from_index(i).ok_or_else(|| r.fail(format!("bad action code {i}")))?);
    }
    let speed = r.f64()?;
    let t = r.u8()? as usize;
    let tag = ScenarioTag::from_index(t).ok_or_else(|| r.fail(format!("bad tag code {t}")))?;
    let seed = r.u64()?;
    if r.pos != bytes.len() {
        return Err(r.fail(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let demo = Demonstration {
        world,
        past,
        future,
        actions,
        speed,
        seed,
        tag,
    };
    demo.validate().map_err(|e| r.fail(e.to_string()))?;
    Ok(demo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig {
            seed: 7,
            demos: 22,
            split: 0.9,
            world: WorldSpec {
                rows: 12,
                cols: 12,
                ..WorldSpec::default()
            },
            horizon_min: 6,
            horizon_max: 10,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn split_arithmetic() {
        let cfg = DatasetConfig {
            demos: 660,
            split: 0.9,
            ..DatasetConfig::default()
        };
        assert_eq!(cfg.train_count(), 594);
        let d = generate_dataset(&small(), Exec::Sequential).unwrap();
        assert_eq!((d.train.len(), d.test.len()), (20, 2));
    }

    #[test]
    fn parallel_matches_sequential() {
        let a = generate_dataset(&small(), Exec::Sequential).unwrap();
        let b = generate_dataset(&small(), Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn record_round_trip() {
        let d = generate_dataset(&small(), Exec::Sequential).unwrap();
        for demo in d.train.iter().chain(&d.test) {
            let bytes = encode_record(demo).unwrap();
            let back = decode_record(&bytes, Path::new("mem")).unwrap();
            assert_eq!(&back, demo);
        }
    }

    #[test]
    fn truncated_and_foreign_records_rejected() {
        let d = generate_dataset(&small(), Exec::Sequential).unwrap();
        let bytes = encode_record(&d.train[0]).unwrap();
        for cut in [0, 7, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                decode_record(&bytes[..cut], Path::new("x")),
                Err(Error::Format { .. })
            ));
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_record(&bad, Path::new("x")).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_record(&extra, Path::new("x")).is_err());
    }

    #[test]
    fn balanced_generation_hits_targets() {
        let cfg = DatasetConfig {
            demos: 30,
            split: 1.0,
            balance: Some(TagFractions::equal()),
            world: WorldSpec {
                rows: 12,
                cols: 12,
                intersections: 1,
                ..WorldSpec::default()
            },
            ..small()
        };
        let d = generate_dataset(&cfg, Exec::Sequential).unwrap();
        for &k in Dataset::tag_counts(&d.train).values() {
            assert!((k as f64 - 10.0).abs() <= 1.0, "{k}");
        }
    }
}
