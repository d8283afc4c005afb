//! Network layout configuration and named presets.
//!
//! Presets follow the ResNet-50/101 stage layout (depths 3/4/6/3 and
//! 3/4/23/3) with the last block of every stage shuffle-equipped and,
//! for the combined preset, temporal shift on all other blocks. Toy
//! presets divide all widths by 8 and use depths 2/2/2/2.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Residual block flavor at a given position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockVariant {
    Standard,
    Headtail,
    Compact,
    StandardWithShift,
}

/// Which shuffle-equipped variant the insertion policy places last.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShuffleKind {
    Compact,
    Headtail,
}

impl ShuffleKind {
    pub fn variant(self) -> BlockVariant {
        match self {
            ShuffleKind::Compact => BlockVariant::Compact,
            ShuffleKind::Headtail => BlockVariant::Headtail,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StageSpec {
    pub blocks: usize,
    /// Bottleneck width; block output is `width * expansion`.
    pub width: usize,
    /// Stride of the stage's first block.
    pub stride: usize,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BlockOverride {
    pub stage: usize,
    pub index: usize,
    pub variant: BlockVariant,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub name: String,
    pub stages: Vec<StageSpec>,
    pub stem_width: usize,
    pub in_channels: usize,
    pub frames: usize,
    pub num_classes: usize,
    pub input_size: usize,
    pub dropout: f64,
    pub expansion: usize,
    /// Insertion policy: shuffle-equipped variant for the last block of
    /// every stage, or None for no shuffle blocks.
    pub shuffle_last: Option<ShuffleKind>,
    /// Shift policy: temporal shift on every block not carrying shuffle.
    pub shift_others: bool,
    pub shift_fwd: f64,
    pub shift_bwd: f64,
    pub freeze_bn: bool,
    #[serde(default)]
    pub overrides: Vec<BlockOverride>,
}

impl NetworkConfig {
    /// Variant of block `index` within `stage` under policy + overrides.
    pub fn block_variant(&self, stage: usize, index: usize) -> BlockVariant {
        for o in &self.overrides {
            if o.stage == stage && o.index == index {
                return o.variant;
            }
        }
        let last = self.stages[stage].blocks - 1;
        if index == last {
            if let Some(kind) = self.shuffle_last {
                return kind.variant();
            }
        }
        if self.shift_others {
            BlockVariant::StandardWithShift
        } else {
            BlockVariant::Standard
        }
    }

    /// Input channel count of block `index` within `stage`.
    pub fn block_in_channels(&self, stage: usize, index: usize) -> usize {
        if index > 0 {
            self.stages[stage].width * self.expansion
        } else if stage == 0 {
            self.stem_width
        } else {
            self.stages[stage - 1].width * self.expansion
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("network needs at least one stage".into()));
        }
        if self.frames == 0 || self.num_classes == 0 || self.input_size == 0 {
            return Err(Error::Config(
                "frames, classes and input size must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        for (si, stage) in self.stages.iter().enumerate() {
            for bi in 0..stage.blocks {
                let variant = self.block_variant(si, bi);
                let shuffled_c = match variant {
                    BlockVariant::Compact => stage.width,
                    BlockVariant::Headtail => self.block_in_channels(si, bi),
                    _ => continue,
                };
                if shuffled_c % self.frames != 0 {
                    return Err(Error::Config(format!(
                        "stage {si} block {bi}: {shuffled_c} channels not divisible by T={}",
                        self.frames
                    )));
                }
            }
        }
        Ok(())
    }

    fn resnet(
        name: &str,
        depths: [usize; 4],
        widths: [usize; 4],
        stem_width: usize,
        in_channels: usize,
        frames: usize,
        num_classes: usize,
        input_size: usize,
        dropout: f64,
        shuffle_last: Option<ShuffleKind>,
        shift_others: bool,
    ) -> Self {
        let strides = [1, 2, 2, 2];
        NetworkConfig {
            name: name.to_string(),
            stages: (0..4)
                .map(|i| StageSpec {
                    blocks: depths[i],
                    width: widths[i],
                    stride: strides[i],
                })
                .collect(),
            stem_width,
            in_channels,
            frames,
            num_classes,
            input_size,
            dropout,
            expansion: 4,
            shuffle_last,
            shift_others,
            shift_fwd: 1.0 / 8.0,
            shift_bwd: 1.0 / 8.0,
            freeze_bn: false,
            overrides: Vec::new(),
        }
    }

    /// Resolves a preset name. Full-size presets use RGB inputs and the
    /// 0.8 head dropout; toy presets are grayscale with widths / 8.
    pub fn preset(
        name: &str,
        frames: usize,
        num_classes: usize,
        input_size: usize,
    ) -> Result<Self> {
        let full = |n: &str, depths, shuffle, shift| {
            Self::resnet(
                n,
                depths,
                [64, 128, 256, 512],
                64,
                3,
                frames,
                num_classes,
                input_size,
                0.8,
                shuffle,
                shift,
            )
        };
        let toy = |n: &str, shuffle, shift| {
            Self::resnet(
                n,
                [2, 2, 2, 2],
                [8, 16, 32, 64],
                8,
                1,
                frames,
                num_classes,
                input_size,
                0.5,
                shuffle,
                shift,
            )
        };
        let r50 = [3, 4, 6, 3];
        let r101 = [3, 4, 23, 3];
        let cfg = match name {
            "vsn-r50" => full(name, r50, Some(ShuffleKind::Compact), true),
            "vsn-r101" => full(name, r101, Some(ShuffleKind::Compact), true),
            "shuffle-r50" => full(name, r50, Some(ShuffleKind::Compact), false),
            "shuffle-r101" => full(name, r101, Some(ShuffleKind::Compact), false),
            "shift-r50" => full(name, r50, None, true),
            "shift-r101" => full(name, r101, None, true),
            "baseline-r50" => full(name, r50, None, false),
            "baseline-r101" => full(name, r101, None, false),
            "toy-vsn" => toy(name, Some(ShuffleKind::Compact), true),
            "toy-compact" => toy(name, Some(ShuffleKind::Compact), false),
            "toy-headtail" => toy(name, Some(ShuffleKind::Headtail), false),
            "toy-shift" => toy(name, None, true),
            "toy-baseline" => toy(name, None, false),
            other => {
                return Err(Error::Config(format!("unknown preset {other:?}")));
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Names accepted by [`NetworkConfig::preset`].
    pub fn preset_names() -> &'static [&'static str] {
        &[
            "vsn-r50",
            "vsn-r101",
            "shuffle-r50",
            "shuffle-r101",
            "shift-r50",
            "shift-r101",
            "baseline-r50",
            "baseline-r101",
            "toy-vsn",
            "toy-compact",
            "toy-headtail",
            "toy-shift",
            "toy-baseline",
        ]
    }
}
