//! Run configuration: flat `key=value` text with dotted sections.
//!
//! The format is line-oriented and diff-friendly. `#` lines are comments.
//! `render` emits every field in a fixed canonical order, so
//! `parse(render(c)) == c` and rendering a parsed canonical file reproduces
//! it modulo whitespace.

use crate::error::{Error, Result};
use crate::kernels::{bandwidth_heuristic, default_heuristic_pairs, KernelSpec};
use crate::tensor::Matrix;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

/// Bandwidth that is either fixed or resolved from data by the inverse
/// mean-squared-distance heuristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaSpec {
    Auto,
    Fixed(f64),
}

impl GammaSpec {
    pub fn render(&self) -> String {
        match self {
            GammaSpec::Auto => "auto".into(),
            GammaSpec::Fixed(g) => format!("{g}"),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        if text == "auto" {
            return Ok(GammaSpec::Auto);
        }
        let g: f64 = text
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad gamma {text:?}")))?;
        if !(g > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be positive, got {g}"
            )));
        }
        Ok(GammaSpec::Fixed(g))
    }

    pub fn resolve(&self, features: &Matrix, seed: u64) -> Result<f64> {
        match self {
            GammaSpec::Fixed(g) => Ok(*g),
            GammaSpec::Auto => {
                bandwidth_heuristic(features, default_heuristic_pairs(features.rows()), seed)
            }
        }
    }
}

/// Kernel descriptor as written in config files; the bandwidth may still
/// be `auto`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelConfig {
    Linear,
    Rbf(GammaSpec),
    Chi2Exp(GammaSpec),
    Chi2Paper,
}

impl KernelConfig {
    pub fn render(&self) -> String {
        match self {
            KernelConfig::Linear => "linear".into(),
            KernelConfig::Rbf(g) => format!("rbf:gamma={}", g.render()),
            KernelConfig::Chi2Exp(g) => format!("chi2exp:gamma={}", g.render()),
            KernelConfig::Chi2Paper => "chi2paper".into(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text.trim() {
            "linear" => Ok(KernelConfig::Linear),
            "chi2paper" => Ok(KernelConfig::Chi2Paper),
            other => {
                let (head, tail) = other.split_once(':').ok_or_else(|| {
                    Error::InvalidArgument(format!("unknown kernel {other:?}"))
                })?;
                let gtext = tail.strip_prefix("gamma=").ok_or_else(|| {
                    Error::InvalidArgument(format!("expected gamma=<float|auto> in {other:?}"))
                })?;
                let g = GammaSpec::parse(gtext)?;
                match head {
                    "rbf" => Ok(KernelConfig::Rbf(g)),
                    "chi2exp" => Ok(KernelConfig::Chi2Exp(g)),
                    _ => Err(Error::InvalidArgument(format!("unknown kernel {head:?}"))),
                }
            }
        }
    }

    /// Resolve `auto` bandwidths against the given feature rows.
    pub fn resolve(&self, features: &Matrix, seed: u64) -> Result<KernelSpec> {
        Ok(match self {
            KernelConfig::Linear => KernelSpec::linear(),
            KernelConfig::Chi2Paper => KernelSpec::chi2_paper(),
            KernelConfig::Rbf(g) => KernelSpec::rbf(g.resolve(features, seed)?),
            KernelConfig::Chi2Exp(g) => KernelSpec::chi2_exp(g.resolve(features, seed)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WInit {
    /// Initialize W at the whitening factor K11^{-1/2}.
    Warm,
    /// Scaled-random initialization.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Blobs {
        n: usize,
        dim: usize,
        classes: usize,
        sep: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    Csv {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArchitectureSpec {
    Dense {
        hidden: usize,
    },
    DeepFried {
        stacks: usize,
        adaptive: bool,
        gamma: GammaSpec,
    },
    Nystrom {
        kernel: KernelConfig,
        m: usize,
        adaptive: bool,
        w_init: WInit,
    },
    MultiKernel {
        kernels: Vec<KernelConfig>,
        m: usize,
        adaptive: bool,
    },
    MultiNystrom {
        groups: usize,
        kernel: KernelConfig,
        m: usize,
        adaptive: bool,
    },
}

impl ArchitectureSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ArchitectureSpec::Dense { .. } => "dense",
            ArchitectureSpec::DeepFried { .. } => "deepfried",
            ArchitectureSpec::Nystrom { .. } => "nystrom",
            ArchitectureSpec::MultiKernel { .. } => "multikernel",
            ArchitectureSpec::MultiNystrom { .. } => "multinystrom",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub patience: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 1e-4,
            batch: 64,
            epochs: 200,
            patience: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTriple {
    pub data: u64,
    pub init: u64,
    pub landmarks: u64,
}

impl SeedTriple {
    pub fn render(&self) -> String {
        format!("{}:{}:{}", self.data, self.init, self.landmarks)
    }
}

impl Default for SeedTriple {
    fn default() -> Self {
        SeedTriple {
            data: 1,
            init: 2,
            landmarks: 3,
        }
    }
}

/// Full experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    /// Frozen extractor output width; `None` trains on raw features.
    pub extractor_dim: Option<usize>,
    pub architecture: ArchitectureSpec,
    pub optimizer: OptimizerConfig,
    pub seeds: SeedTriple,
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// Canonical text form; every field explicit, fixed key order.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "run.name={}", self.name);
        match &self.dataset {
            DatasetSpec::Blobs { n, dim, classes, sep } => {
                let _ = writeln!(s, "dataset.kind=blobs");
                let _ = writeln!(s, "dataset.n={n}");
                let _ = writeln!(s, "dataset.dim={dim}");
                let _ = writeln!(s, "dataset.classes={classes}");
                let _ = writeln!(s, "dataset.sep={sep}");
            }
            DatasetSpec::Idx { images, labels } => {
                let _ = writeln!(s, "dataset.kind=idx");
                let _ = writeln!(s, "dataset.images={}", images.display());
                let _ = writeln!(s, "dataset.labels={}", labels.display());
            }
            DatasetSpec::Csv { path } => {
                let _ = writeln!(s, "dataset.kind=csv");
                let _ = writeln!(s, "dataset.path={}", path.display());
            }
        }
        match self.extractor_dim {
            Some(d) => {
                let _ = writeln!(s, "extractor.enable=true");
                let _ = writeln!(s, "extractor.out_dim={d}");
            }
            None => {
                let _ = writeln!(s, "extractor.enable=false");
            }
        }
        match &self.architecture {
            ArchitectureSpec::Dense { hidden } => {
                let _ = writeln!(s, "architecture.kind=dense");
                let _ = writeln!(s, "architecture.hidden={hidden}");
            }
            ArchitectureSpec::DeepFried {
                stacks,
                adaptive,
                gamma,
            } => {
                let _ = writeln!(s, "architecture.kind=deepfried");
                let _ = writeln!(s, "architecture.stacks={stacks}");
                let _ = writeln!(s, "architecture.adaptive={adaptive}");
                let _ = writeln!(s, "architecture.gamma={}", gamma.render());
            }
            ArchitectureSpec::Nystrom {
                kernel,
                m,
                adaptive,
                w_init,
            } => {
                let _ = writeln!(s, "architecture.kind=nystrom");
                let _ = writeln!(s, "architecture.kernel={}", kernel.render());
                let _ = writeln!(s, "architecture.m={m}");
                let _ = writeln!(s, "architecture.adaptive={adaptive}");
                let _ = writeln!(
                    s,
                    "architecture.w_init={}",
                    match w_init {
                        WInit::Warm => "warm",
                        WInit::Random => "random",
                    }
                );
            }
            ArchitectureSpec::MultiKernel {
                kernels,
                m,
                adaptive,
            } => {
                let _ = writeln!(s, "architecture.kind=multikernel");
                let list: Vec<String> = kernels.iter().map(|k| k.render()).collect();
                let _ = writeln!(s, "architecture.kernels={}", list.join(";"));
                let _ = writeln!(s, "architecture.m={m}");
                let _ = writeln!(s, "architecture.adaptive={adaptive}");
            }
            ArchitectureSpec::MultiNystrom {
                groups,
                kernel,
                m,
                adaptive,
            } => {
                let _ = writeln!(s, "architecture.kind=multinystrom");
                let _ = writeln!(s, "architecture.groups={groups}");
                let _ = writeln!(s, "architecture.kernel={}", kernel.render());
                let _ = writeln!(s, "architecture.m={m}");
                let _ = writeln!(s, "architecture.adaptive={adaptive}");
            }
        }
        let _ = writeln!(s, "optimizer.lr={}", self.optimizer.lr);
        let _ = writeln!(s, "optimizer.batch={}", self.optimizer.batch);
        let _ = writeln!(s, "optimizer.epochs={}", self.optimizer.epochs);
        let _ = writeln!(s, "optimizer.patience={}", self.optimizer.patience);
        let _ = writeln!(s, "seed.data={}", self.seeds.data);
        let _ = writeln!(s, "seed.init={}", self.seeds.init);
        let _ = writeln!(s, "seed.landmarks={}", self.seeds.landmarks);
        let _ = writeln!(s, "output.dir={}", self.output_dir.display());
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map: BTreeMap<String, (String, usize)> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: lineno + 1,
                key: line.to_string(),
                msg: "expected key=value".into(),
            })?;
            let key = key.trim().to_string();
            if map
                .insert(key.clone(), (value.trim().to_string(), lineno + 1))
                .is_some()
            {
                return Err(Error::Config {
                    line: lineno + 1,
                    key,
                    msg: "duplicate key".into(),
                });
            }
        }
        let cfg = Self::from_map(&mut map)?;
        if let Some((key, (_, line))) = map.iter().next() {
            return Err(Error::Config {
                line: *line,
                key: key.clone(),
                msg: "unknown key".into(),
            });
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    fn from_map(map: &mut BTreeMap<String, (String, usize)>) -> Result<Self> {
        fn take(
            map: &mut BTreeMap<String, (String, usize)>,
            key: &str,
        ) -> Result<(String, usize)> {
            map.remove(key).ok_or_else(|| Error::Config {
                line: 0,
                key: key.to_string(),
                msg: "missing required key".into(),
            })
        }
        fn take_opt(
            map: &mut BTreeMap<String, (String, usize)>,
            key: &str,
        ) -> Option<(String, usize)> {
            map.remove(key)
        }
        fn parse_with<T: std::str::FromStr>(pair: (String, usize), key: &str) -> Result<T> {
            pair.0.parse().map_err(|_| Error::Config {
                line: pair.1,
                key: key.to_string(),
                msg: format!("cannot parse {:?}", pair.0),
            })
        }

        let name = take_opt(map, "run.name").map_or_else(|| "run".to_string(), |p| p.0);

        let dataset = match take(map, "dataset.kind")?.0.as_str() {
            "blobs" => DatasetSpec::Blobs {
                n: parse_with(take(map, "dataset.n")?, "dataset.n")?,
                dim: parse_with(take(map, "dataset.dim")?, "dataset.dim")?,
                classes: parse_with(take(map, "dataset.classes")?, "dataset.classes")?,
                sep: parse_with(take(map, "dataset.sep")?, "dataset.sep")?,
            },
            "idx" => DatasetSpec::Idx {
                images: PathBuf::from(take(map, "dataset.images")?.0),
                labels: PathBuf::from(take(map, "dataset.labels")?.0),
            },
            "csv" => DatasetSpec::Csv {
                path: PathBuf::from(take(map, "dataset.path")?.0),
            },
            other => {
                return Err(Error::Config {
                    line: 0,
                    key: "dataset.kind".into(),
                    msg: format!("unknown dataset kind {other:?}"),
                })
            }
        };

        let extractor_dim = match take_opt(map, "extractor.enable") {
            Some((v, line)) => match v.as_str() {
                "true" => Some(parse_with(
                    take(map, "extractor.out_dim")?,
                    "extractor.out_dim",
                )?),
                "false" => None,
                other => {
                    return Err(Error::Config {
                        line,
                        key: "extractor.enable".into(),
                        msg: format!("expected true/false, got {other:?}"),
                    })
                }
            },
            None => None,
        };

        fn parse_bool(pair: (String, usize), key: &str) -> Result<bool> {
            match pair.0.as_str() {
                "true" => Ok(true),
                "false" => Ok(false),
                other => Err(Error::Config {
                    line: pair.1,
                    key: key.to_string(),
                    msg: format!("expected true/false, got {other:?}"),
                }),
            }
        }
        fn parse_kernel(pair: (String, usize), key: &str) -> Result<KernelConfig> {
            KernelConfig::parse(&pair.0).map_err(|e| Error::Config {
                line: pair.1,
                key: key.to_string(),
                msg: e.to_string(),
            })
        }

        let arch_kind = take(map, "architecture.kind")?;
        let architecture = match arch_kind.0.as_str() {
            "dense" => ArchitectureSpec::Dense {
                hidden: parse_with(take(map, "architecture.hidden")?, "architecture.hidden")?,
            },
            "deepfried" => ArchitectureSpec::DeepFried {
                stacks: parse_with(take(map, "architecture.stacks")?, "architecture.stacks")?,
                adaptive: take_opt(map, "architecture.adaptive")
                    .map_or(Ok(true), |p| parse_bool(p, "architecture.adaptive"))?,
                gamma: take_opt(map, "architecture.gamma").map_or(Ok(GammaSpec::Auto), |p| {
                    GammaSpec::parse(&p.0).map_err(|e| Error::Config {
                        line: p.1,
                        key: "architecture.gamma".into(),
                        msg: e.to_string(),
                    })
                })?,
            },
            "nystrom" => ArchitectureSpec::Nystrom {
                kernel: parse_kernel(take(map, "architecture.kernel")?, "architecture.kernel")?,
                m: parse_with(take(map, "architecture.m")?, "architecture.m")?,
                adaptive: take_opt(map, "architecture.adaptive")
                    .map_or(Ok(true), |p| parse_bool(p, "architecture.adaptive"))?,
                w_init: match take_opt(map, "architecture.w_init") {
                    None => WInit::Warm,
                    Some((v, line)) => match v.as_str() {
                        "warm" => WInit::Warm,
                        "random" => WInit::Random,
                        other => {
                            return Err(Error::Config {
                                line,
                                key: "architecture.w_init".into(),
                                msg: format!("expected warm/random, got {other:?}"),
                            })
                        }
                    },
                },
            },
            "multikernel" => {
                let pair = take(map, "architecture.kernels")?;
                let line = pair.1;
                let kernels: Vec<KernelConfig> = pair
                    .0
                    .split(';')
                    .map(|t| {
                        KernelConfig::parse(t).map_err(|e| Error::Config {
                            line,
                            key: "architecture.kernels".into(),
                            msg: e.to_string(),
                        })
                    })
                    .collect::<Result<_>>()?;
                if kernels.is_empty() {
                    return Err(Error::Config {
                        line,
                        key: "architecture.kernels".into(),
                        msg: "need at least one kernel".into(),
                    });
                }
                ArchitectureSpec::MultiKernel {
                    kernels,
                    m: parse_with(take(map, "architecture.m")?, "architecture.m")?,
                    adaptive: take_opt(map, "architecture.adaptive")
                        .map_or(Ok(true), |p| parse_bool(p, "architecture.adaptive"))?,
                }
            }
            "multinystrom" => ArchitectureSpec::MultiNystrom {
                groups: parse_with(take(map, "architecture.groups")?, "architecture.groups")?,
                kernel: parse_kernel(take(map, "architecture.kernel")?, "architecture.kernel")?,
                m: parse_with(take(map, "architecture.m")?, "architecture.m")?,
                adaptive: take_opt(map, "architecture.adaptive")
                    .map_or(Ok(true), |p| parse_bool(p, "architecture.adaptive"))?,
            },
            other => {
                return Err(Error::Config {
                    line: arch_kind.1,
                    key: "architecture.kind".into(),
                    msg: format!("unknown architecture {other:?}"),
                })
            }
        };

        let defaults = OptimizerConfig::default();
        let optimizer = OptimizerConfig {
            lr: take_opt(map, "optimizer.lr")
                .map_or(Ok(defaults.lr), |p| parse_with(p, "optimizer.lr"))?,
            batch: take_opt(map, "optimizer.batch")
                .map_or(Ok(defaults.batch), |p| parse_with(p, "optimizer.batch"))?,
            epochs: take_opt(map, "optimizer.epochs")
                .map_or(Ok(defaults.epochs), |p| parse_with(p, "optimizer.epochs"))?,
            patience: take_opt(map, "optimizer.patience")
                .map_or(Ok(defaults.patience), |p| parse_with(p, "optimizer.patience"))?,
        };
        let sd = SeedTriple::default();
        let seeds = SeedTriple {
            data: take_opt(map, "seed.data").map_or(Ok(sd.data), |p| parse_with(p, "seed.data"))?,
            init: take_opt(map, "seed.init").map_or(Ok(sd.init), |p| parse_with(p, "seed.init"))?,
            landmarks: take_opt(map, "seed.landmarks")
                .map_or(Ok(sd.landmarks), |p| parse_with(p, "seed.landmarks"))?,
        };
        let output_dir = take_opt(map, "output.dir")
            .map_or_else(|| PathBuf::from("out"), |p| PathBuf::from(p.0));

        Ok(RunConfig {
            name,
            dataset,
            extractor_dim,
            architecture,
            optimizer,
            seeds,
            output_dir,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunConfig {
        RunConfig {
            name: "unit".into(),
            dataset: DatasetSpec::Blobs {
                n: 500,
                dim: 16,
                classes: 4,
                sep: 6.0,
            },
            extractor_dim: Some(32),
            architecture: ArchitectureSpec::Nystrom {
                kernel: KernelConfig::Rbf(GammaSpec::Auto),
                m: 8,
                adaptive: true,
                w_init: WInit::Warm,
            },
            optimizer: OptimizerConfig::default(),
            seeds: SeedTriple::default(),
            output_dir: PathBuf::from("out"),
        }
    }

    #[test]
    fn parse_render_identity() {
        let cfg = sample();
        let text = cfg.render();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        // canonical text is stable modulo whitespace
        let again = back.render();
        let norm = |s: &str| {
            s.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(norm(&text), norm(&again));
    }

    #[test]
    fn all_architectures_round_trip() {
        let archs = vec![
            ArchitectureSpec::Dense { hidden: 1024 },
            ArchitectureSpec::DeepFried {
                stacks: 3,
                adaptive: true,
                gamma: GammaSpec::Fixed(0.05),
            },
            ArchitectureSpec::Nystrom {
                kernel: KernelConfig::Chi2Exp(GammaSpec::Fixed(0.7)),
                m: 64,
                adaptive: false,
                w_init: WInit::Random,
            },
            ArchitectureSpec::MultiKernel {
                kernels: vec![
                    KernelConfig::Rbf(GammaSpec::Fixed(0.1)),
                    KernelConfig::Rbf(GammaSpec::Fixed(0.01)),
                    KernelConfig::Linear,
                ],
                m: 4,
                adaptive: true,
            },
            ArchitectureSpec::MultiNystrom {
                groups: 4,
                kernel: KernelConfig::Rbf(GammaSpec::Auto),
                m: 16,
                adaptive: true,
            },
        ];
        for arch in archs {
            let mut cfg = sample();
            cfg.architecture = arch;
            let back = RunConfig::parse(&cfg.render()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn missing_kernel_key_named() {
        let text = "dataset.kind=blobs\ndataset.n=100\ndataset.dim=4\ndataset.classes=2\ndataset.sep=3\narchitecture.kind=nystrom\narchitecture.m=4\n";
        match RunConfig::parse(text) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "architecture.kernel"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let mut text = sample().render();
        text.push_str("bogus.key=1\n");
        match RunConfig::parse(&text) {
            Err(Error::Config { key, line, .. }) => {
                assert_eq!(key, "bogus.key");
                assert!(line > 0);
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let mut text = String::from("# a comment\n\n");
        text.push_str(&sample().render());
        let cfg = RunConfig::parse(&text).unwrap();
        assert_eq!(cfg, sample());
    }

    #[test]
    fn defaults_fill_in() {
        let text = "dataset.kind=blobs\ndataset.n=100\ndataset.dim=4\ndataset.classes=2\ndataset.sep=3\narchitecture.kind=dense\narchitecture.hidden=16\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.optimizer, OptimizerConfig::default());
        assert_eq!(cfg.seeds, SeedTriple::default());
        assert_eq!(cfg.extractor_dim, None);
        assert_eq!(cfg.name, "run");
    }
}
