//! Analytic parameter and multiply-add accounting.
//!
//! Counts are derived purely from the configuration — no weights are
//! allocated. Conventions (also printed in the report header):
//!
//! * conv madds = T · out_h · out_w · out_c · in_c · k_h · k_w (N = 1)
//! * linear madds = out_features · in_features
//! * batch norm: 2·C params, one madd per element (scale + offset)
//! * pooling and activations: zero madds (no multiplies)
//! * shuffle and shift: zero params, zero madds (pure data movement)
//!
//! The headline giga-figure counts convolutions and the linear head
//! only and reports one multiply-add as one operation, the convention
//! common in the recognition literature; `flops_2x` (= 2 · madds) is
//! kept alongside for comparison with tools that count multiplies and
//! adds separately.

use serde::Serialize;

use super::conv::conv_out_size;
use crate::config::{BlockVariant, NetworkConfig};
use crate::error::Result;

#[derive(Clone, Debug, Serialize)]
pub struct CostRow {
    pub name: String,
    pub params: u64,
    pub madds: u64,
    /// Whether this row counts toward the headline figure.
    pub headline: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CostReport {
    pub config: String,
    pub frames: usize,
    pub input_size: usize,
    pub num_classes: usize,
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    /// Multiply-adds of all listed layers.
    pub total_madds: u64,
    /// Convolutions + linear head only; this is the headline count.
    pub headline_madds: u64,
    /// 2 · headline_madds, for mul+add-counted comparisons.
    pub flops_2x: u64,
}

struct Counter {
    frames: u64,
    rows: Vec<CostRow>,
}

impl Counter {
    fn conv(
        &mut self,
        name: String,
        in_c: usize,
        out_c: usize,
        k: usize,
        oh: usize,
        ow: usize,
    ) {
        let params = (out_c * in_c * k * k) as u64;
        let madds = self.frames * (oh * ow * out_c * in_c * k * k) as u64;
        self.rows.push(CostRow {
            name,
            params,
            madds,
            headline: true,
        });
    }

    fn bn(&mut self, name: String, c: usize, h: usize, w: usize) {
        self.rows.push(CostRow {
            name,
            params: 2 * c as u64,
            madds: self.frames * (c * h * w) as u64,
            headline: false,
        });
    }

    fn free(&mut self, name: String) {
        self.rows.push(CostRow {
            name,
            params: 0,
            madds: 0,
            headline: false,
        });
    }
}

/// Exact parameter/multiply-add accounting for `cfg` at its configured
/// input size, batch 1.
pub fn count(cfg: &NetworkConfig) -> Result<CostReport> {
    cfg.validate()?;
    let mut c = Counter {
        frames: cfg.frames as u64,
        rows: Vec::new(),
    };

    let mut h = conv_out_size(cfg.input_size, 7, 2, 3)?;
    c.conv("conv1".into(), cfg.in_channels, cfg.stem_width, 7, h, h);
    c.bn("bn1".into(), cfg.stem_width, h, h);
    c.free("relu1".into());
    h = conv_out_size(h, 3, 2, 1)?;
    c.free("pool1".into());

    for (si, stage) in cfg.stages.iter().enumerate() {
        for bi in 0..stage.blocks {
            let name = format!("s{si}.b{bi}");
            let in_c = cfg.block_in_channels(si, bi);
            let width = stage.width;
            let out_c = width * cfg.expansion;
            let stride = if bi == 0 { stage.stride } else { 1 };
            let variant = cfg.block_variant(si, bi);
            match variant {
                BlockVariant::Compact => {
                    c.free(format!("{name}.shuffle"));
                    c.free(format!("{name}.unshuffle"));
                }
                BlockVariant::Headtail => {
                    c.free(format!("{name}.shuffle"));
                    c.free(format!("{name}.unshuffle"));
                }
                BlockVariant::StandardWithShift => c.free(format!("{name}.shift")),
                BlockVariant::Standard => {}
            }
            let ho = conv_out_size(h, 3, stride, 1)?;
            c.conv(format!("{name}.conv1"), in_c, width, 1, h, h);
            c.bn(format!("{name}.bn1"), width, h, h);
            c.conv(format!("{name}.conv2"), width, width, 3, ho, ho);
            c.bn(format!("{name}.bn2"), width, ho, ho);
            c.conv(format!("{name}.conv3"), width, out_c, 1, ho, ho);
            c.bn(format!("{name}.bn3"), out_c, ho, ho);
            if in_c != out_c || stride != 1 {
                c.conv(format!("{name}.proj"), in_c, out_c, 1, ho, ho);
                c.bn(format!("{name}.proj_bn"), out_c, ho, ho);
            }
            h = ho;
        }
    }

    c.free("gap".into());
    c.free("dropout".into());
    let feat = cfg.stages.last().unwrap().width * cfg.expansion;
    c.rows.push(CostRow {
        name: "head".into(),
        params: (feat * cfg.num_classes + cfg.num_classes) as u64,
        madds: (feat * cfg.num_classes) as u64,
        headline: true,
    });

    let total_params = c.rows.iter().map(|r| r.params).sum();
    let total_madds = c.rows.iter().map(|r| r.madds).sum();
    let headline_madds = c
        .rows
        .iter()
        .filter(|r| r.headline)
        .map(|r| r.madds)
        .sum();
    Ok(CostReport {
        config: cfg.name.clone(),
        frames: cfg.frames,
        input_size: cfg.input_size,
        num_classes: cfg.num_classes,
        rows: c.rows,
        total_params,
        total_madds,
        headline_madds,
        flops_2x: 2 * headline_madds,
    })
}

impl CostReport {
    /// Headline figure in giga-ops (one multiply-add = one op).
    pub fn gflops(&self) -> f64 {
        self.headline_madds as f64 / 1e9
    }

    pub fn params_millions(&self) -> f64 {
        self.total_params as f64 / 1e6
    }

    /// Fixed-width human-readable table; identical across runs/hosts.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# {} — T={}, input {2}x{2}, {3} classes\n",
            self.config, self.frames, self.input_size, self.num_classes
        ));
        out.push_str("# conv madds = T*oh*ow*oc*ic*kh*kw; bn = one madd/elem;\n");
        out.push_str("# pool/act/shuffle/shift = 0; headline (*) = convs + head,\n");
        out.push_str("# one multiply-add counted as one FLOP.\n");
        let name_w = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(4)
            .max(5);
        out.push_str(&format!(
            "{:<name_w$}  {:>12}  {:>16}\n",
            "layer", "params", "madds"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<name_w$}  {:>12}  {:>16}{}\n",
                r.name,
                r.params,
                r.madds,
                if r.headline { " *" } else { "" }
            ));
        }
        out.push_str(&format!(
            "{:<name_w$}  {:>12}  {:>16}\n",
            "total",
            self.total_params,
            self.total_madds
        ));
        out.push_str(&format!(
            "totals: {:.1}M params / {:.1} GFLOPs ({} madds, 2x = {})\n",
            self.params_millions(),
            self.gflops(),
            self.headline_madds,
            self.flops_2x
        ));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
