//! Experiment configuration.
//!
//! The file format is flat `section.key = value` assignments (TOML dotted
//! keys), one per line, `#` comments:
//!
//! ```text
//! seed = 7
//! transmitter.modes = 3
//! channel.osnr_db = 18
//! receiver.equalizer = "ssa"
//! sweep.normalized_offsets = [0.0, 3e-5, 3e-4]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelModel, MixingProfile};
use crate::equalizer::{default_step_size, AfterTraining, EqualizerConfig, ErrorFunction};
use crate::error::{Error, Result};

/// Equalizer flavour under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "ssa")]
    Ssa,
    #[serde(rename = "lms")]
    Lms,
    #[serde(rename = "lms-lcpe")]
    LmsLcpe,
}

impl Variant {
    pub fn error_function(self) -> ErrorFunction {
        match self {
            Variant::Ssa => ErrorFunction::Ssa,
            Variant::Lms | Variant::LmsLcpe => ErrorFunction::Lms,
        }
    }

    pub fn l_cpe(self) -> bool {
        self == Variant::LmsLcpe
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Ssa => "ssa",
            Variant::Lms => "lms",
            Variant::LmsLcpe => "lms-lcpe",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransmitterConfig {
    pub symbol_count: usize,
    /// Known symbols at the frame start used for synchronization.
    pub training_length: usize,
    pub modes: usize,
    pub symbol_rate: f64,
    pub samples_per_symbol: usize,
    /// Decorrelation delays of tributaries `1..2M`, symbols.
    pub delays: Option<Vec<usize>>,
}

impl Default for TransmitterConfig {
    fn default() -> Self {
        Self {
            symbol_count: 1 << 17,
            training_length: 4096,
            modes: 3,
            symbol_rate: 34e9,
            samples_per_symbol: 2,
            delays: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixingKind {
    None,
    Lantern,
    Distributed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub fiber_length_km: f64,
    pub dmd_ps_per_m: f64,
    pub cd_ps_nm_km: f64,
    pub mixing: MixingKind,
    /// Section count for distributed mixing.
    pub sections: usize,
    pub frequency_offset_hz: f64,
    /// `[time s, offset Hz]` points; overrides the static offset.
    pub offset_profile: Vec<[f64; 2]>,
    pub tx_linewidth_hz: f64,
    pub lo_linewidth_hz: f64,
    pub osnr_db: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            fiber_length_km: 0.0,
            dmd_ps_per_m: 2.1,
            cd_ps_nm_km: 21.0,
            mixing: MixingKind::Lantern,
            sections: 8,
            frequency_offset_hz: 0.0,
            offset_profile: Vec::new(),
            tx_linewidth_hz: 100e3,
            lo_linewidth_hz: 100e3,
            osnr_db: f64::INFINITY,
        }
    }
}

/// Training length: a symbol count or `"all"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrainingLength {
    Symbols(usize),
    Keyword(AllKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllKeyword {
    All,
}

impl TrainingLength {
    pub fn as_option(self) -> Option<usize> {
        match self {
            TrainingLength::Symbols(n) => Some(n),
            TrainingLength::Keyword(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReceiverConfig {
    pub equalizer: Variant,
    pub fft_size: usize,
    /// Overrides the per-algorithm default.
    pub step_size: Option<f64>,
    pub lms_step_size: Option<f64>,
    pub ssa_step_size: Option<f64>,
    /// Pre-equalizer CFE; only applied in front of LMS equalizers.
    pub pre_cfe: bool,
    /// Pre-CFE block length in samples; the whole record when unset.
    pub pre_cfe_block: Option<usize>,
    /// Per-block search half-width around the whole-record estimate, Hz.
    pub pre_cfe_span_hz: f64,
    pub training_length: TrainingLength,
    pub after_training: AfterTraining,
    /// Leading symbols excluded from the BER (convergence).
    pub ber_skip_symbols: usize,
    pub cpe_window: usize,
    /// Half-width of the synchronization search, samples.
    pub sync_window: Option<usize>,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            equalizer: Variant::Ssa,
            fft_size: 64,
            step_size: None,
            lms_step_size: None,
            ssa_step_size: None,
            pre_cfe: true,
            pre_cfe_block: None,
            pre_cfe_span_hz: 100e6,
            training_length: TrainingLength::Keyword(AllKeyword::All),
            after_training: AfterTraining::Freeze,
            ber_skip_symbols: 16384,
            cpe_window: 63,
            sync_window: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub osnr_db: Vec<f64>,
    pub frequency_offset_hz: Vec<f64>,
    /// Offsets as fractions of the symbol rate; used when
    /// `frequency_offset_hz` is empty.
    pub normalized_offsets: Vec<f64>,
    pub equalizers: Vec<Variant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RosnrConfig {
    pub ber_target: f64,
    pub osnr_low_db: f64,
    pub osnr_high_db: f64,
    pub resolution_db: f64,
}

impl Default for RosnrConfig {
    fn default() -> Self {
        Self {
            ber_target: 3.8e-3,
            osnr_low_db: 0.0,
            osnr_high_db: 40.0,
            resolution_db: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub repetitions: usize,
    pub output: Option<PathBuf>,
    pub transmitter: TransmitterConfig,
    pub channel: ChannelConfig,
    pub receiver: ReceiverConfig,
    pub sweep: SweepConfig,
    pub rosnr: RosnrConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            repetitions: 1,
            output: None,
            transmitter: TransmitterConfig::default(),
            channel: ChannelConfig::default(),
            receiver: ReceiverConfig::default(),
            sweep: SweepConfig::default(),
            rosnr: RosnrConfig::default(),
        }
    }
}

/// One point of the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialPoint {
    pub variant: Variant,
    pub frequency_offset_hz: f64,
    pub osnr_db: f64,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::Config(format!("cannot read {}: {e}", path.as_ref().display()))
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.transmitter;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if t.modes == 0 {
            return bad("transmitter.modes must be >= 1");
        }
        if t.samples_per_symbol == 0 || t.symbol_rate <= 0.0 {
            return bad("transmitter.samples_per_symbol and symbol_rate must be positive");
        }
        if t.training_length < 2 || t.training_length >= t.symbol_count {
            return bad("transmitter.training_length must be in [2, symbol_count)");
        }
        if let Some(d) = &t.delays {
            if d.len() != 2 * t.modes - 1 {
                return bad("transmitter.delays needs 2 * modes - 1 entries");
            }
        }
        if self.repetitions == 0 {
            return bad("repetitions must be >= 1");
        }
        if self.receiver.ber_skip_symbols >= t.symbol_count {
            return bad("receiver.ber_skip_symbols must be below symbol_count");
        }
        if self.receiver.pre_cfe_block.is_some_and(|b| b < crate::carrier::MIN_CFE_LEN) {
            return bad("receiver.pre_cfe_block is below the minimum estimation length");
        }
        if !(self.receiver.pre_cfe_span_hz > 0.0) {
            return bad("receiver.pre_cfe_span_hz must be positive");
        }
        if self.receiver.cpe_window.is_multiple_of(2) {
            return bad("receiver.cpe_window must be odd");
        }
        let sw = &self.sweep;
        if sw.osnr_db.is_empty() && !self.channel.osnr_db.is_finite() && self.channel.osnr_db < 0.0 {
            return bad("channel.osnr_db must not be -inf");
        }
        if !(self.rosnr.ber_target > 0.0 && self.rosnr.ber_target < 0.5) {
            return bad("rosnr.ber_target must lie in (0, 0.5)");
        }
        if self.rosnr.osnr_low_db >= self.rosnr.osnr_high_db || self.rosnr.resolution_db <= 0.0 {
            return bad("rosnr bracket must be increasing with positive resolution");
        }
        self.equalizer_config(self.receiver.equalizer).validate()
    }

    /// Decorrelation delays, explicit or defaulted.
    pub fn delays(&self) -> Vec<usize> {
        self.transmitter.delays.clone().unwrap_or_else(|| {
            crate::signal::default_delays(self.transmitter.modes, self.transmitter.symbol_count)
        })
    }

    pub fn sample_rate(&self) -> f64 {
        self.transmitter.symbol_rate * self.transmitter.samples_per_symbol as f64
    }

    pub fn step_size(&self, variant: Variant) -> f64 {
        let r = &self.receiver;
        let specific = match variant.error_function() {
            ErrorFunction::Lms => r.lms_step_size,
            ErrorFunction::Ssa => r.ssa_step_size,
        };
        specific
            .or(r.step_size)
            .unwrap_or_else(|| default_step_size(variant.error_function(), r.fft_size))
    }

    pub fn equalizer_config(&self, variant: Variant) -> EqualizerConfig {
        let r = &self.receiver;
        EqualizerConfig {
            mode_count: self.transmitter.modes,
            fft_size: r.fft_size,
            step_size: self.step_size(variant),
            error_function: variant.error_function(),
            l_cpe_enabled: variant.l_cpe(),
            training_length: r.training_length.as_option(),
            operation_after_training: r.after_training,
            snapshot_every: 0,
        }
    }

    /// Channel model for one trial; `seed` drives mixing, phase noise and
    /// noise.
    pub fn channel_model(&self, point: &TrialPoint, seed: u64) -> Result<ChannelModel> {
        let c = &self.channel;
        let modes = self.transmitter.modes;
        let sections = match c.mixing {
            MixingKind::None => Vec::new(),
            MixingKind::Lantern if c.fiber_length_km == 0.0 => {
                let mut s = ChannelModel::build_sections(
                    modes,
                    0.0,
                    0.0,
                    self.sample_rate(),
                    MixingProfile::Lantern,
                    seed,
                )?;
                s.truncate(1);
                s
            }
            MixingKind::Lantern => ChannelModel::build_sections(
                modes,
                c.fiber_length_km,
                c.dmd_ps_per_m,
                self.sample_rate(),
                MixingProfile::Lantern,
                seed,
            )?,
            MixingKind::Distributed => ChannelModel::build_sections(
                modes,
                c.fiber_length_km,
                c.dmd_ps_per_m,
                self.sample_rate(),
                MixingProfile::Distributed(c.sections),
                seed,
            )?,
        };
        Ok(ChannelModel {
            mode_count: modes,
            sections,
            cd_coefficient: c.cd_ps_nm_km,
            fiber_length: c.fiber_length_km,
            symbol_rate: self.transmitter.symbol_rate,
            frequency_offset: point.frequency_offset_hz,
            offset_profile: c.offset_profile.iter().map(|p| (p[0], p[1])).collect(),
            tx_linewidth: c.tx_linewidth_hz,
            lo_linewidth: c.lo_linewidth_hz,
            osnr_db: point.osnr_db,
            rng_seed: seed,
        })
    }

    pub fn variants(&self) -> Vec<Variant> {
        if self.sweep.equalizers.is_empty() {
            vec![self.receiver.equalizer]
        } else {
            self.sweep.equalizers.clone()
        }
    }

    pub fn offsets_hz(&self) -> Vec<f64> {
        if !self.sweep.frequency_offset_hz.is_empty() {
            self.sweep.frequency_offset_hz.clone()
        } else if !self.sweep.normalized_offsets.is_empty() {
            self.sweep
                .normalized_offsets
                .iter()
                .map(|n| n * self.transmitter.symbol_rate)
                .collect()
        } else {
            vec![self.channel.frequency_offset_hz]
        }
    }

    pub fn osnrs_db(&self) -> Vec<f64> {
        if self.sweep.osnr_db.is_empty() {
            vec![self.channel.osnr_db]
        } else {
            self.sweep.osnr_db.clone()
        }
    }

    /// The un-swept operating point.
    pub fn base_point(&self) -> TrialPoint {
        TrialPoint {
            variant: self.receiver.equalizer,
            frequency_offset_hz: self.channel.frequency_offset_hz,
            osnr_db: self.channel.osnr_db,
        }
    }

    /// Grid in deterministic order: equalizer, offset, OSNR.
    pub fn grid(&self) -> Vec<TrialPoint> {
        let mut points = Vec::new();
        for variant in self.variants() {
            for &frequency_offset_hz in &self.offsets_hz() {
                for &osnr_db in &self.osnrs_db() {
                    points.push(TrialPoint {
                        variant,
                        frequency_offset_hz,
                        osnr_db,
                    });
                }
            }
        }
        points
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_dotted_keys() {
        let cfg = ExperimentConfig::parse(
            r#"
            # comment
            seed = 9
            repetitions = 2
            transmitter.modes = 1
            transmitter.symbol_count = 8192
            transmitter.training_length = 512
            channel.osnr_db = 18
            channel.mixing = "none"
            receiver.equalizer = "lms-lcpe"
            receiver.training_length = 2000
            receiver.ber_skip_symbols = 1024
            sweep.normalized_offsets = [0.0, 3e-5]
            sweep.osnr_db = [10, 12, 14]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.receiver.equalizer, Variant::LmsLcpe);
        assert_eq!(cfg.receiver.training_length.as_option(), Some(2000));
        assert_eq!(cfg.grid().len(), 6);
        assert!((cfg.offsets_hz()[1] - 3e-5 * 34e9).abs() < 1e-6);
        let eq = cfg.equalizer_config(Variant::LmsLcpe);
        assert!(eq.l_cpe_enabled);
        assert_eq!(eq.error_function, ErrorFunction::Lms);
    }

    #[test]
    fn training_all_and_inf_osnr() {
        let cfg = ExperimentConfig::parse(
            "receiver.training_length = \"all\"\nchannel.osnr_db = inf\nreceiver.after_training = \"decision-directed\"\n",
        )
        .unwrap();
        assert_eq!(cfg.receiver.training_length.as_option(), None);
        assert_eq!(cfg.channel.osnr_db, f64::INFINITY);
        assert_eq!(cfg.receiver.after_training, AfterTraining::DecisionDirected);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::parse("repetitions = 0").is_err());
        assert!(ExperimentConfig::parse("receiver.fft_size = 48").is_err());
        assert!(ExperimentConfig::parse("nonsense.key = 1").is_err());
        assert!(ExperimentConfig::parse("transmitter.modes = 2\ntransmitter.delays = [1, 2]").is_err());
    }
}
