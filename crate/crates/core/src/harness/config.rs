//! Run configuration and the flat `key=value` override file.

use std::path::Path;

use crate::error::SimError;
use crate::mac::DcfParams;
use crate::phy::ChannelModel;
use crate::sim::SimTime;

/// Every tunable model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub thb: f64,
    pub t_c: SimTime,
    pub channel: ChannelModel,
    pub dcf: DcfParams,
    /// Application payload per data packet, bytes.
    pub payload_bytes: u32,
    pub busy_includes_energy: bool,
    /// Defaults to a tenth of the channel rate in bytes/second.
    pub fb_init_bytes_per_s: Option<f64>,
    /// Defaults to one packet per second.
    pub rp_min_bytes_per_s: Option<f64>,
    pub bucket_depth_pkts: f64,
    pub spacing_m: f64,
    pub flow_stagger: SimTime,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            thb: 0.5,
            t_c: SimTime::from_millis(200),
            channel: ChannelModel::default(),
            dcf: DcfParams::default(),
            payload_bytes: 1000,
            busy_includes_energy: true,
            fb_init_bytes_per_s: None,
            rp_min_bytes_per_s: None,
            bucket_depth_pkts: 2.0,
            spacing_m: 200.0,
            flow_stagger: SimTime::from_millis(100),
        }
    }
}

impl SimParams {
    pub fn fb_init(&self) -> f64 {
        self.fb_init_bytes_per_s
            .unwrap_or(self.channel.bitrate as f64 / 8.0 / 10.0)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(self.thb > 0.0 && self.thb <= 1.0) {
            return bad(format!("thb must be in (0, 1], got {}", self.thb));
        }
        if self.t_c == SimTime::ZERO {
            return bad("t_c_ms must be positive".into());
        }
        self.channel.validate().map_err(SimError::Config)?;
        self.dcf.validate().map_err(SimError::Config)?;
        if self.payload_bytes == 0 || self.payload_bytes > crate::mac::MTU - 64 {
            return bad(format!("payload_bytes out of range: {}", self.payload_bytes));
        }
        if !(self.bucket_depth_pkts >= 1.0) {
            return bad("bucket_depth_pkts must be >= 1".into());
        }
        if !(self.spacing_m > 0.0) {
            return bad("spacing_m must be positive".into());
        }
        if let Some(v) = self.rp_min_bytes_per_s {
            if !(v > 0.0) {
                return bad("rp_min_bytes_per_s must be positive".into());
            }
        }
        Ok(())
    }

    /// Applies one override. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SimError> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, SimError> {
            v.parse()
                .map_err(|_| SimError::Config(format!("bad value for {key}: `{v}`")))
        }
        fn flag(key: &str, v: &str) -> Result<bool, SimError> {
            match v {
                "1" | "true" | "yes" | "on" => Ok(true),
                "0" | "false" | "no" | "off" => Ok(false),
                _ => Err(SimError::Config(format!("bad boolean for {key}: `{v}`"))),
            }
        }
        match key {
            "thb" => self.thb = num(key, value)?,
            "t_c_ms" => self.t_c = SimTime::from_secs_f64(num::<f64>(key, value)? / 1e3),
            "tx_range_m" => self.channel.tx_range = num(key, value)?,
            "cs_range_m" => self.channel.cs_range = num(key, value)?,
            "bitrate_bps" => self.channel.bitrate = num(key, value)?,
            "payload_bytes" => self.payload_bytes = num(key, value)?,
            "cw_min" => self.dcf.cw_min = num(key, value)?,
            "cw_max" => self.dcf.cw_max = num(key, value)?,
            "retry_limit" => self.dcf.retry_limit = num(key, value)?,
            "queue_cap" => self.dcf.queue_cap = num(key, value)?,
            "rts_cts" => self.dcf.rts_cts = flag(key, value)?,
            "busy_includes_energy" => self.busy_includes_energy = flag(key, value)?,
            "fb_init_bytes_per_s" => self.fb_init_bytes_per_s = Some(num(key, value)?),
            "rp_min_bytes_per_s" => self.rp_min_bytes_per_s = Some(num(key, value)?),
            "bucket_depth_pkts" => self.bucket_depth_pkts = num(key, value)?,
            "spacing_m" => self.spacing_m = num(key, value)?,
            "flow_stagger_ms" => {
                self.flow_stagger = SimTime::from_secs_f64(num::<f64>(key, value)? / 1e3)
            }
            _ => return Err(SimError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines. `#` starts a comment; blank lines are
    /// skipped.
    pub fn apply_overrides(&mut self, text: &str) -> Result<(), SimError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                SimError::Config(format!("line {}: expected key=value, got `{line}`", lineno + 1))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut p = Self::default();
        p.apply_overrides(&text)?;
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub duration: SimTime,
    /// Excluded from throughput and RTT statistics.
    pub warmup: SimTime,
    pub params: SimParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            duration: SimTime::from_secs(110),
            warmup: SimTime::from_secs(10),
            params: SimParams::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.warmup > self.duration {
            return Err(SimError::Config(format!(
                "warmup {} exceeds duration {}",
                self.warmup, self.duration
            )));
        }
        self.params.validate()
    }
}
