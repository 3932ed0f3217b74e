//! End-to-end experiments: generate, compress, multiplex, measure, score and
//! write traces.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::analytics::{self, bws, bws_asymptote, MeasureOptions, RunReport, SavingsInput, SweepSpec};
use crate::error::{Error, Result};
use crate::iphc::{expected_reduced_header, RefreshPolicy};
use crate::mux::{self, added_delay_stats, MuxConfig};
use crate::profile::{Direction, GameProfile};
use crate::qoe::{self, DelayProfile, MosEstimate, QoeConfig};
use crate::trace::{self, Provenance};
use crate::traffic::generate_scenario;
use crate::NATIVE_HEADER_BYTES;

pub const NATIVE_TRACE: &str = "native.csv";
pub const BUNDLE_TRACE: &str = "bundles.csv";
pub const DELAY_TRACE: &str = "delays.csv";
pub const SUMMARY: &str = "summary.csv";
pub const SWEEP: &str = "sweep.csv";

/// Mean compressed header sizes measured on real World of Warcraft traces;
/// the reference values for the per-game saving limits.
pub const REFERENCE_REDUCED_HEADER_C2S: f64 = 8.72;
pub const REFERENCE_REDUCED_HEADER_S2C: f64 = 7.37;

pub fn reference_reduced_header(direction: Direction) -> f64 {
    match direction {
        Direction::ClientToServer => REFERENCE_REDUCED_HEADER_C2S,
        Direction::ServerToClient => REFERENCE_REDUCED_HEADER_S2C,
    }
}

/// Defaults an optional config file may override.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunDefaults {
    pub game: Option<String>,
    pub direction: Option<Direction>,
    pub players: Option<usize>,
    pub packets_per_player: Option<usize>,
    pub period_ms: Option<f64>,
    pub threshold: Option<u32>,
    pub network_delay_ms: Option<f64>,
    pub network_jitter_ms: Option<f64>,
    /// Resend a full header every this many packets; 0 means first packet only.
    pub refresh_every: Option<u32>,
}

/// Contents of a tool config file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolConfig {
    /// Extra game profile files, resolved relative to the config file.
    #[serde(default)]
    pub profiles: Vec<PathBuf>,
    #[serde(default)]
    pub run: RunDefaults,
    #[serde(default)]
    pub qoe: QoeConfig,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl ToolConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ToolConfig = toml::from_str(&text).map_err(|source| Error::Toml {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Built-in games followed by the configured extra profiles.
    pub fn games(&self) -> Result<Vec<GameProfile>> {
        let mut games = GameProfile::builtins();
        for p in &self.profiles {
            let profile = GameProfile::load(&self.base_dir.join(p))?;
            games.retain(|g| g.name != profile.name);
            games.push(profile);
        }
        Ok(games)
    }

    pub fn game(&self, name: &str) -> Result<GameProfile> {
        self.games()?
            .into_iter()
            .find(|g| g.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::UnknownProfile(name.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub profile: GameProfile,
    pub direction: Direction,
    pub n_players: usize,
    pub packets_per_player: usize,
    pub mux: MuxConfig,
    pub seed: u64,
    pub network_delay_ms: f64,
    pub network_jitter_ms: f64,
    pub refresh: RefreshPolicy,
    pub qoe: QoeConfig,
    pub out_dir: PathBuf,
}

impl ExperimentSpec {
    pub const DEFAULT_PACKETS_PER_PLAYER: usize = 5000;
    pub const DEFAULT_NETWORK_DELAY_MS: f64 = 40.0;
    pub const DEFAULT_NETWORK_JITTER_MS: f64 = 10.0;

    pub fn new(
        profile: GameProfile,
        direction: Direction,
        n_players: usize,
        period_us: u64,
        seed: u64,
        out_dir: impl Into<PathBuf>,
    ) -> Self {
        ExperimentSpec {
            profile,
            direction,
            n_players,
            packets_per_player: Self::DEFAULT_PACKETS_PER_PLAYER,
            mux: MuxConfig::with_period_us(period_us),
            seed,
            network_delay_ms: Self::DEFAULT_NETWORK_DELAY_MS,
            network_jitter_ms: Self::DEFAULT_NETWORK_JITTER_MS,
            refresh: RefreshPolicy::FirstOnly,
            qoe: QoeConfig::default(),
            out_dir: out_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_players == 0 {
            return Err(Error::Config("--players must be at least 1".into()));
        }
        if self.packets_per_player == 0 {
            return Err(Error::Config("--packets-per-player must be at least 1".into()));
        }
        if !(self.network_delay_ms >= 0.0 && self.network_jitter_ms >= 0.0) {
            return Err(Error::Config("network delay and jitter must be non-negative".into()));
        }
        self.mux.validate()?;
        self.profile.validate()?;
        self.qoe.build().map(|_| ())
    }

    /// Effective configuration, embedded in every output file.
    pub fn provenance(&self) -> Provenance {
        let mut p = Provenance::new();
        let mut put = |k: &str, v: String| {
            p.insert(k.to_string(), v);
        };
        put("game", self.profile.name.clone());
        put("direction", self.direction.to_string());
        put("players", self.n_players.to_string());
        put("packets_per_player", self.packets_per_player.to_string());
        put("period_us", self.mux.period_us.to_string());
        put("threshold", self.mux.size_threshold.to_string());
        put("common_header", self.mux.common_header.to_string());
        put("muxed_header", self.mux.muxed_header.to_string());
        put("mtu", self.mux.mtu.to_string());
        put("seed", self.seed.to_string());
        put("network_delay_ms", self.network_delay_ms.to_string());
        put("network_jitter_ms", self.network_jitter_ms.to_string());
        put(
            "refresh",
            match self.refresh {
                RefreshPolicy::FirstOnly => "first".to_string(),
                RefreshPolicy::Every(n) => n.to_string(),
            },
        );
        put("qoe_model", self.qoe.model.clone());
        p
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub mos: MosEstimate,
    pub oversized_bundles: u64,
    pub files: Vec<PathBuf>,
}

fn prepare_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn mos_for(
    bundles: &[mux::Bundle],
    network_mean_ms: f64,
    network_jitter_ms: f64,
    qoe: &QoeConfig,
) -> Result<MosEstimate> {
    let model = qoe.build()?;
    let profile = DelayProfile {
        network_mean_ms,
        network_stdev_ms: network_jitter_ms,
        mux_delay_ms: bundles
            .iter()
            .flat_map(|b| b.delays_us())
            .map(|d| d as f64 / 1000.0)
            .collect(),
    };
    qoe::estimate(model.as_ref(), &profile)
}

pub fn run(spec: &ExperimentSpec) -> Result<RunOutcome> {
    spec.validate()?;
    prepare_out_dir(&spec.out_dir)?;

    let native = generate_scenario(
        &spec.profile,
        spec.direction,
        spec.n_players,
        spec.packets_per_player,
        spec.seed,
    )?;
    let entries = mux::compress_stream(&native, spec.refresh)?;
    let mut multiplexer = mux::Multiplexer::new(spec.mux)?;
    let mut bundles = Vec::new();
    for e in entries {
        multiplexer.push(e, &mut bundles);
    }
    multiplexer.finish(&mut bundles);

    let report = analytics::measure_run(
        &native,
        &bundles,
        &spec.mux,
        spec.n_players,
        spec.direction,
        &MeasureOptions::default(),
    )?;
    let mos = mos_for(&bundles, spec.network_delay_ms, spec.network_jitter_ms, &spec.qoe)?;

    let prov = spec.provenance();
    let outputs = [
        (NATIVE_TRACE, trace::render_native(&prov, &native)),
        (BUNDLE_TRACE, trace::render_bundles(&prov, &bundles)),
        (DELAY_TRACE, trace::render_delays(&prov, &bundles)),
        (SUMMARY, trace::render_reports(&prov, std::slice::from_ref(&report))),
    ];
    let mut files = Vec::new();
    for (name, text) in outputs {
        let path = spec.out_dir.join(name);
        trace::write_atomic(&path, text.as_bytes())?;
        files.push(path);
    }
    Ok(RunOutcome {
        report,
        mos,
        oversized_bundles: multiplexer.oversized(),
        files,
    })
}

/// Runs a grid and writes `sweep.csv` into `out_dir`.
pub fn run_sweep(
    profile: &GameProfile,
    direction: Direction,
    spec: &SweepSpec,
    out_dir: &Path,
) -> Result<(Vec<RunReport>, PathBuf)> {
    if spec.players.is_empty() || spec.periods_us.is_empty() {
        return Err(Error::Config("empty sweep grid".into()));
    }
    if spec.players.contains(&0) {
        return Err(Error::Config("player counts must be at least 1".into()));
    }
    prepare_out_dir(out_dir)?;
    let reports = analytics::sweep(profile, direction, spec)?;
    let mut prov = Provenance::new();
    prov.insert("game".into(), profile.name.clone());
    prov.insert("direction".into(), direction.to_string());
    prov.insert("packets_per_player".into(), spec.packets_per_player.to_string());
    prov.insert("seed".into(), spec.seed.to_string());
    prov.insert("threshold".into(), spec.mux.size_threshold.to_string());
    prov.insert("common_header".into(), spec.mux.common_header.to_string());
    prov.insert("muxed_header".into(), spec.mux.muxed_header.to_string());
    let path = out_dir.join(SWEEP);
    trace::write_atomic(&path, trace::render_reports(&prov, &reports).as_bytes())?;
    Ok((reports, path))
}

/// Per-game saving limits, one row per (game, direction).
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoteRow {
    pub game: String,
    pub direction: Direction,
    pub expected_payload: f64,
    pub packet_rate: f64,
    pub reduced_header: f64,
    pub asymptote: f64,
    /// Same limit with the reduced header the game's field model predicts.
    pub model_reduced_header: f64,
    pub model_asymptote: f64,
}

pub fn asymptote_table(games: &[GameProfile]) -> Result<Vec<AsymptoteRow>> {
    let nh = f64::from(NATIVE_HEADER_BYTES);
    let mh = f64::from(MuxConfig::DEFAULT_MUXED_HEADER);
    let mut rows = Vec::new();
    for direction in Direction::ALL {
        for g in games {
            let d = g.direction(direction);
            let reduced = reference_reduced_header(direction);
            let model_reduced = expected_reduced_header(&g.field_model, direction);
            rows.push(AsymptoteRow {
                game: g.label().to_string(),
                direction,
                expected_payload: d.expected_payload,
                packet_rate: d.packet_rate,
                reduced_header: reduced,
                asymptote: bws_asymptote(nh, mh, d.expected_payload, reduced)?,
                model_reduced_header: model_reduced,
                model_asymptote: bws_asymptote(nh, mh, d.expected_payload, model_reduced)?,
            });
        }
    }
    Ok(rows)
}

/// Figures recomputed from the trace files of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSummary {
    pub native_packets: usize,
    pub bundles: usize,
    pub native_bytes: u64,
    pub muxed_bytes: u64,
    pub e_k: f64,
    pub e_p: f64,
    pub e_rh: f64,
    pub bws_measured: f64,
    pub bws_analytic: f64,
    pub max_delay_us: u64,
    pub mean_delay_us: f64,
    pub period_us: Option<u64>,
    pub mos: MosEstimate,
}

fn prov_num<T: std::str::FromStr>(prov: &Provenance, key: &str, default: T) -> T {
    prov.get(key).and_then(|v| v.parse().ok()).unwrap_or(default)
}

/// Re-reads the traces of a run directory and recomputes its figures without
/// touching the simulator.
pub fn summarize_traces(dir: &Path, qoe: &QoeConfig) -> Result<TraceSummary> {
    let (prov, native) = trace::read_native(&dir.join(NATIVE_TRACE))?;
    let (_, bundles) = trace::read_bundles(&dir.join(BUNDLE_TRACE))?;
    let (_, delays) = trace::read_delays(&dir.join(DELAY_TRACE))?;

    let carried: usize = bundles.iter().map(|b| b.n_records).sum();
    if carried != native.len() || delays.len() != native.len() {
        return Err(Error::Integrity(format!(
            "{} native packets, bundles carry {carried}, {} delay rows",
            native.len(),
            delays.len()
        )));
    }
    if native.is_empty() || bundles.is_empty() {
        return Err(Error::Integrity("empty trace".into()));
    }
    let ch = prov_num(&prov, "common_header", MuxConfig::DEFAULT_COMMON_HEADER);
    let mh = prov_num(&prov, "muxed_header", MuxConfig::DEFAULT_MUXED_HEADER);

    let n = native.len() as f64;
    let native_bytes: u64 = native.iter().map(|p| u64::from(p.wire_size())).sum();
    let payload: u64 = native.iter().map(|p| u64::from(p.payload_len)).sum();
    let muxed_bytes: u64 = bundles.iter().map(|b| u64::from(b.wire_size)).sum();
    let overhead = bundles.len() as u64 * u64::from(ch) + native.len() as u64 * u64::from(mh) + payload;
    let headers = muxed_bytes
        .checked_sub(overhead)
        .ok_or_else(|| Error::Integrity("bundle sizes are smaller than their declared overheads".into()))?;

    let e_k = n / bundles.len() as f64;
    let e_p = payload as f64 / n;
    let e_rh = headers as f64 / n;
    let bws_analytic = bws(&SavingsInput {
        packets_per_bundle: e_k,
        native_header: f64::from(NATIVE_HEADER_BYTES),
        common_header: f64::from(ch),
        muxed_header: f64::from(mh),
        mean_payload: e_p,
        reduced_header: e_rh,
    })?;

    let mut max_delay_us = 0;
    let mut sum = 0.0;
    let mut mux_delay_ms = Vec::with_capacity(delays.len());
    for d in &delays {
        let delay = d
            .send_us
            .checked_sub(d.arrival_us)
            .ok_or_else(|| Error::Integrity(format!("packet of flow {} sent before it arrived", d.flow_id)))?;
        max_delay_us = max_delay_us.max(delay);
        sum += delay as f64;
        mux_delay_ms.push(delay as f64 / 1000.0);
    }
    let model = qoe.build()?;
    let mos = qoe::estimate(
        model.as_ref(),
        &DelayProfile {
            network_mean_ms: prov_num(&prov, "network_delay_ms", ExperimentSpec::DEFAULT_NETWORK_DELAY_MS),
            network_stdev_ms: prov_num(&prov, "network_jitter_ms", ExperimentSpec::DEFAULT_NETWORK_JITTER_MS),
            mux_delay_ms,
        },
    )?;

    Ok(TraceSummary {
        native_packets: native.len(),
        bundles: bundles.len(),
        native_bytes,
        muxed_bytes,
        e_k,
        e_p,
        e_rh,
        bws_measured: 1.0 - muxed_bytes as f64 / native_bytes as f64,
        bws_analytic,
        max_delay_us,
        mean_delay_us: sum / n,
        period_us: prov.get("period_us").and_then(|v| v.parse().ok()),
        mos,
    })
}

pub fn render_asymptotes(rows: &[AsymptoteRow]) -> String {
    let mut out = String::new();
    writeln!(out, "Bandwidth saving limits (NH=40 B, MH=2 B)").unwrap();
    writeln!(
        out,
        "{:<4} {:<22} {:>8} {:>6} {:>7} {:>9} {:>11}",
        "dir", "game", "E[P]", "pps", "E[RH]", "max save", "model E[RH]"
    )
    .unwrap();
    for r in rows {
        writeln!(
            out,
            "{:<4} {:<22} {:>8.2} {:>6.2} {:>7.2} {:>7.2} % {:>6.2} ({:.2} %)",
            r.direction.as_str(),
            r.game,
            r.expected_payload,
            r.packet_rate,
            r.reduced_header,
            r.asymptote * 100.0,
            r.model_reduced_header,
            r.model_asymptote * 100.0
        )
        .unwrap();
    }
    out
}

pub fn render_summary(s: &TraceSummary) -> String {
    let mut out = String::new();
    writeln!(out, "native packets   {}", s.native_packets).unwrap();
    writeln!(out, "bundles          {}", s.bundles).unwrap();
    writeln!(out, "E[k]             {:.3}", s.e_k).unwrap();
    writeln!(out, "E[P]             {:.3} B", s.e_p).unwrap();
    writeln!(out, "E[RH]            {:.3} B", s.e_rh).unwrap();
    writeln!(out, "BWS measured     {:.2} %", s.bws_measured * 100.0).unwrap();
    writeln!(out, "BWS analytic     {:.2} %", s.bws_analytic * 100.0).unwrap();
    writeln!(
        out,
        "added delay      mean {:.2} ms, max {:.2} ms",
        s.mean_delay_us / 1000.0,
        s.max_delay_us as f64 / 1000.0
    )
    .unwrap();
    writeln!(
        out,
        "MOS              {:.2} ({}) at {:.1} ms mean delay, {:.1} ms jitter",
        s.mos.mos,
        if s.mos.acceptable {
            "acceptable"
        } else {
            "NOT acceptable"
        },
        s.mos.delay.mean_ms,
        s.mos.delay.stdev_ms
    )
    .unwrap();
    out
}

/// Delay statistics straight from bundles, for callers that skip the trace
/// files.
pub fn delay_stats(bundles: &[mux::Bundle]) -> mux::DelayStats {
    added_delay_stats(bundles, mux::DEFAULT_DELAY_BUCKET_US)
}
