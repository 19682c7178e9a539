use serde::{Deserialize, Serialize};

use crate::blocks::BlockConfig;
use crate::error::{Error, Result};

/// Architecture hyper-parameters. Serialised with these exact field names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub stage_dims: Vec<usize>,
    /// SCVSS blocks in encoder stages 2 to 5.
    pub scvss_counts: Vec<usize>,
    /// 1-based encoder stages followed by a wavelet Mamba block.
    pub wmb_encoder_stages: Vec<usize>,
    /// 1-based decoder stages (5 is the bottleneck) followed by a wavelet Mamba block.
    pub wmb_decoder_stages: Vec<usize>,
    pub snake_enabled: bool,
    /// Largest DropPath rate, reached by the last encoder SCVSS block.
    pub drop_path_rate: f64,
    pub deep_supervision: bool,
    /// `[H, W]`, both divisible by 32.
    pub input_size: [usize; 2],
    pub mlp_ratio: f64,
    pub ffn_ratio: f64,
    pub n_state: usize,
    pub norm_eps: f64,
    pub sca_reduction: usize,
    pub share_scan_params: bool,
    pub channel_mamba_expand: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 1,
            num_classes: 3,
            stage_dims: vec![48, 96, 192, 384, 768],
            scvss_counts: vec![2, 2, 5, 2],
            wmb_encoder_stages: vec![1, 3, 5],
            wmb_decoder_stages: vec![],
            snake_enabled: true,
            drop_path_rate: 0.1,
            deep_supervision: true,
            input_size: [256, 256],
            mlp_ratio: 4.0,
            ffn_ratio: 4.0,
            n_state: 16,
            norm_eps: 1e-5,
            sca_reduction: 8,
            share_scan_params: false,
            channel_mamba_expand: 4,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Scaled-down variant used for quick experiments: dims `[8,16,32,64,128]`,
    /// counts `[1,1,2,1]`, 64x64 input.
    pub fn toy(num_classes: usize) -> Self {
        ModelConfig {
            num_classes,
            stage_dims: vec![8, 16, 32, 64, 128],
            scvss_counts: vec![1, 1, 2, 1],
            input_size: [64, 64],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.stage_dims.len() != 5 {
            return bad(format!("stage_dims needs 5 entries, got {}", self.stage_dims.len()));
        }
        if self.scvss_counts.len() != 4 {
            return bad(format!("scvss_counts needs 4 entries, got {}", self.scvss_counts.len()));
        }
        if self.stage_dims.contains(&0) || self.in_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if !(2..=255).contains(&self.num_classes) {
            return bad(format!("num_classes must be in 2..=255, got {}", self.num_classes));
        }
        for (key, stages) in [("wmb_encoder_stages", &self.wmb_encoder_stages), ("wmb_decoder_stages", &self.wmb_decoder_stages)] {
            if let Some(s) = stages.iter().find(|&&s| !(1..=5).contains(&s)) {
                return bad(format!("{key} entry {s} outside 1..=5"));
            }
            let mut sorted = stages.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != stages.len() {
                return bad(format!("{key} has duplicates"));
            }
        }
        let [h, w] = self.input_size;
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return bad(format!("input_size {h}x{w} must be positive multiples of 32"));
        }
        (0..5).try_for_each(|s| self.block(s, 0.0).validate())
    }

    /// Block settings for 0-based stage `stage`.
    pub fn block(&self, stage: usize, drop_path_rate: f64) -> BlockConfig {
        BlockConfig {
            channels: self.stage_dims[stage],
            mlp_ratio: self.mlp_ratio,
            drop_path_rate,
            n_state: self.n_state,
            ffn_ratio: self.ffn_ratio,
            norm_eps: self.norm_eps,
            sca_reduction: self.sca_reduction,
            share_scan_params: self.share_scan_params,
            channel_mamba_expand: self.channel_mamba_expand,
        }
    }

    /// DropPath rate of every encoder SCVSS block, rising linearly from 0.
    pub fn drop_path_schedule(&self) -> Vec<f64> {
        let total: usize = self.scvss_counts.iter().sum();
        (0..total)
            .map(|i| if total > 1 { self.drop_path_rate * i as f64 / (total - 1) as f64 } else { 0.0 })
            .collect()
    }

    /// Names of the top-level fields whose values differ.
    pub fn diff(&self, other: &ModelConfig) -> Vec<String> {
        let (a, b) = (serde_json::to_value(self).unwrap_or_default(), serde_json::to_value(other).unwrap_or_default());
        match (a.as_object(), b.as_object()) {
            (Some(a), Some(b)) => a.iter().filter(|(k, v)| b.get(*k) != Some(v)).map(|(k, _)| k.clone()).collect(),
            _ => Vec::new(),
        }
    }
}
