//! Run configuration: everything needed to rebuild a training run from a
//! `key = value` file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::config::KeyValues;
use super::kitti::{load_kitti_layout, KittiOptions};
use super::synth::{synth_dataset, SceneConfig};
use super::ImageTriplet;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::nets::{Arch, DepthNet, DepthRange, EgoNet, NetConfig};
use crate::train::{IntrinsicsMode, OptimConfig, TrainConfig, Trainer};

/// Where training or evaluation images come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// `count` rendered plane scenes with seeds `seed..seed + count`.
    Synth { count: usize, seed: u64 },
    /// A KITTI raw layout, optionally restricted to a split file.
    Kitti { root: PathBuf, split: Option<PathBuf>, exclude: Option<PathBuf> },
}

impl DataSource {
    /// Read every triplet at `height × width`.
    pub fn load(&self, height: usize, width: usize) -> Result<Vec<ImageTriplet>> {
        let data = match self {
            DataSource::Synth { count, seed } => {
                synth_dataset(&SceneConfig::sized(height, width).with_seed(*seed), *count)?
            }
            DataSource::Kitti { root, split, exclude } => {
                let opts = KittiOptions { height, width, exclude: exclude.clone(), load_depth: true };
                load_kitti_layout(root, split.as_deref(), &opts)?
            }
        };
        if data.is_empty() {
            return Err(Error::Data(format!("{self} produced no samples")));
        }
        data.iter().try_for_each(ImageTriplet::validate)?;
        Ok(data)
    }

    fn to_kv(&self, kv: &mut KeyValues) {
        match self {
            DataSource::Synth { count, seed } => {
                kv.set("data.kind", "synth");
                kv.set("data.count", count);
                kv.set("data.seed", seed);
            }
            DataSource::Kitti { root, split, exclude } => {
                kv.set("data.kind", "kitti");
                kv.set("data.root", root.display());
                if let Some(s) = split {
                    kv.set("data.split", s.display());
                }
                if let Some(e) = exclude {
                    kv.set("data.exclude", e.display());
                }
            }
        }
    }

    fn from_kv(kv: &KeyValues) -> Result<Option<Self>> {
        let Some(kind) = kv.get("data.kind") else {
            return Ok(None);
        };
        match kind {
            "synth" => Ok(Some(DataSource::Synth {
                count: kv.get_parsed("data.count")?.unwrap_or(8),
                seed: kv.get_parsed("data.seed")?.unwrap_or(0),
            })),
            "kitti" => Ok(Some(DataSource::Kitti {
                root: kv.require::<PathBuf>("data.root")?,
                split: kv.get("data.split").map(PathBuf::from),
                exclude: kv.get("data.exclude").map(PathBuf::from),
            })),
            other => Err(Error::Config(format!("unknown data.kind {other:?}"))),
        }
    }
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Synth { count, seed } => write!(f, "synth:{count}:{seed}"),
            DataSource::Kitti { root, .. } => write!(f, "kitti:{}", root.display()),
        }
    }
}

/// `synth`, `synth:<count>`, `synth:<count>:<seed>` or `kitti:<root>`.
impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("data source {s:?}: expected synth[:count[:seed]] or kitti:<root>"));
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "synth" => {
                let mut it = rest.split(':').filter(|p| !p.is_empty());
                let count = it.next().map(str::parse).transpose().map_err(|_| bad())?.unwrap_or(8);
                let seed = it.next().map(str::parse).transpose().map_err(|_| bad())?.unwrap_or(0);
                Ok(DataSource::Synth { count, seed })
            }
            "kitti" if !rest.is_empty() => {
                Ok(DataSource::Kitti { root: PathBuf::from(rest), split: None, exclude: None })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataSource,
    pub net: NetConfig,
    pub depth_arch: Arch,
    pub ego_arch: Arch,
    pub optim: OptimConfig,
    pub loss: LossConfig,
    pub intrinsics: IntrinsicsMode,
    pub seed: u64,
}

impl RunConfig {
    /// Desk-sized run on synthetic scenes with the optimizer matching
    /// `depth_arch`.
    pub fn desk(depth_arch: Arch, ego_arch: Arch) -> Self {
        Self {
            data: DataSource::Synth { count: 8, seed: 0 },
            net: NetConfig::desk(),
            depth_arch,
            ego_arch,
            optim: OptimConfig::for_arch(depth_arch),
            loss: LossConfig::default(),
            intrinsics: IntrinsicsMode::Given,
            seed: 0,
        }
    }

    /// Full-size run on a KITTI layout.
    pub fn full(depth_arch: Arch, ego_arch: Arch, root: PathBuf) -> Self {
        Self {
            data: DataSource::Kitti { root, split: None, exclude: None },
            net: NetConfig::full(),
            ..Self::desk(depth_arch, ego_arch)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.optim.validate()?;
        self.loss.validate()
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("seed", self.seed);
        kv.set("depth_arch", self.depth_arch);
        kv.set("ego_arch", self.ego_arch);
        kv.set("intrinsics", self.intrinsics);
        self.data.to_kv(&mut kv);
        self.net.to_kv(&mut kv, "net.");
        self.optim.to_kv(&mut kv);
        kv.set("loss.alpha", self.loss.alpha);
        kv.set("loss.smooth_weight", self.loss.smooth_weight);
        kv.set("loss.num_scales", self.loss.num_scales);
        kv.set("loss.min_depth", self.loss.depth_range.min);
        kv.set("loss.max_depth", self.loss.depth_range.max);
        kv
    }

    /// Parse a config. `preset = full` starts from the full-size network;
    /// anything else starts from the desk preset. Unset keys keep the
    /// preset value.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let depth_arch: Arch = kv.get_parsed::<String>("depth_arch")?.map(|s| s.parse()).transpose()?.unwrap_or(Arch::Transformer);
        let ego_arch: Arch = kv.get_parsed::<String>("ego_arch")?.map(|s| s.parse()).transpose()?.unwrap_or(depth_arch);
        let mut cfg = Self::desk(depth_arch, ego_arch);
        if kv.get("preset") == Some("full") {
            cfg.net = NetConfig::full();
        }
        if let Some(data) = DataSource::from_kv(kv)? {
            cfg.data = data;
        }
        cfg.net = cfg.net.from_kv(kv, "net.")?;
        cfg.optim = cfg.optim.from_kv(kv)?;
        if let Some(mode) = kv.get_parsed::<String>("intrinsics")? {
            cfg.intrinsics = mode.parse()?;
        }
        if let Some(seed) = kv.get_parsed("seed")? {
            cfg.seed = seed;
        }
        if let Some(v) = kv.get_parsed("loss.alpha")? {
            cfg.loss.alpha = v;
        }
        if let Some(v) = kv.get_parsed("loss.smooth_weight")? {
            cfg.loss.smooth_weight = v;
        }
        if let Some(v) = kv.get_parsed("loss.num_scales")? {
            cfg.loss.num_scales = v;
        }
        let min = kv.get_parsed("loss.min_depth")?.unwrap_or(cfg.loss.depth_range.min);
        let max = kv.get_parsed("loss.max_depth")?.unwrap_or(cfg.loss.depth_range.max);
        cfg.loss.depth_range = DepthRange::new(min, max)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&KeyValues::load(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_kv().save(path)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            optim: self.optim.clone(),
            loss: self.loss.clone(),
            intrinsics: self.intrinsics,
            seed: self.seed,
            shuffle: true,
        }
    }

    /// Freshly initialised networks and optimizer for this run.
    pub fn trainer(&self) -> Result<Trainer> {
        let depth = DepthNet::new(self.depth_arch, self.net.clone(), self.seed)?;
        let ego = EgoNet::new(self.ego_arch, self.net.clone(), self.seed.wrapping_add(1))?;
        Trainer::new(depth, ego, self.train_config())
    }

    pub fn load_data(&self) -> Result<Vec<ImageTriplet>> {
        self.data.load(self.net.height, self.net.width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::desk(Arch::Conv, Arch::Transformer);
        cfg.intrinsics = IntrinsicsMode::Learned;
        cfg.seed = 7;
        cfg.loss.alpha = 0.5;
        cfg.data = DataSource::Kitti { root: "/data/kitti".into(), split: Some("s.txt".into()), exclude: None };
        let back = RunConfig::from_kv(&KeyValues::parse(&cfg.to_kv().to_text()).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn data_source_strings() {
        assert_eq!("synth".parse::<DataSource>().unwrap(), DataSource::Synth { count: 8, seed: 0 });
        assert_eq!("synth:3:9".parse::<DataSource>().unwrap(), DataSource::Synth { count: 3, seed: 9 });
        assert!("kitti:".parse::<DataSource>().is_err());
        assert!("nope".parse::<DataSource>().is_err());
    }

    #[test]
    fn bad_values_rejected() {
        let kv = KeyValues::parse("optim.lr = -1").unwrap();
        assert!(RunConfig::from_kv(&kv).is_err());
        let kv = KeyValues::parse("net.height = 50").unwrap();
        assert!(RunConfig::from_kv(&kv).is_err());
    }
}
