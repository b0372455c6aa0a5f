//! Monte Carlo outage simulation and the compression-ratio sweeps.
//!
//! The only randomness is the CQI trace. It is drawn once per run from a
//! seed derived from the master seed, then every frame is evaluated
//! independently, so results do not depend on how frames are scheduled
//! across threads. Sums are always accumulated sequentially in frame
//! order.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use thiserror::Error;

use crate::channel::{self, ChannelError, ChannelModel, CqiTrace, Decision, LinkConfig, Policy};
use crate::corpus::CorpusLayout;
use crate::detector::{self, DetectorError, Evaluator, ObjectClass, OracleParams};
use crate::imageio::{self, ImageError, Mask};
use crate::latency::{self, FrameOutcome, LatencyParams};
use crate::protocol;
use crate::saliency::{self, MaskedImage, SrvsParams};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("CONV rows differ across ratios: {0}")]
    ConvNotConstant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Framework {
    /// Compress per policy when the channel is poor.
    Eodf,
    /// Always send the original frame.
    Conv,
}

impl fmt::Display for Framework {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Framework::Eodf => "EODF",
            Framework::Conv => "CONV",
        })
    }
}

impl std::str::FromStr for Framework {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "EODF" => Ok(Framework::Eodf),
            "CONV" => Ok(Framework::Conv),
            _ => Err(format!("unknown framework {s:?} (EODF | CONV)")),
        }
    }
}

/// Placement of the discarded pixels in the synthetic mask used when no
/// image corpus is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskLayout {
    /// One contiguous block of zeros: two runs, the typical case for
    /// blob-shaped saliency masks.
    Contiguous,
    /// Zeros spread evenly over the frame: the most runs, worst case.
    Scattered,
}

impl fmt::Display for MaskLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskLayout::Contiguous => "contiguous",
            MaskLayout::Scattered => "scattered",
        })
    }
}

impl std::str::FromStr for MaskLayout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "contiguous" => Ok(MaskLayout::Contiguous),
            "scattered" => Ok(MaskLayout::Scattered),
            _ => Err(format!("unknown mask layout {s:?} (contiguous | scattered)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub frames: usize,
    pub fps: f64,
    pub framework: Framework,
    pub compression_ratio: f64,
    pub frame_width: usize,
    pub frame_height: usize,
    pub frame_channels: usize,
    pub channel: ChannelModel,
    pub link: LinkConfig,
    pub latency: LatencyParams,
    pub policy: Policy,
    pub mask_layout: MaskLayout,
    /// When set, masked sizes are measured by compressing these frames.
    pub corpus: Option<PathBuf>,
    pub analysis_size: usize,
    pub master_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            frames: 100_000,
            fps: 30.0,
            framework: Framework::Eodf,
            compression_ratio: 0.2,
            frame_width: 1242,
            frame_height: 375,
            frame_channels: 3,
            channel: ChannelModel::default(),
            link: LinkConfig::default(),
            latency: LatencyParams::default(),
            policy: Policy::CqiThreshold,
            mask_layout: MaskLayout::Contiguous,
            corpus: None,
            analysis_size: 64,
            master_seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.frames == 0 {
            return bad("sim.frames must be at least 1".into());
        }
        if !(self.fps > 0.0) {
            return bad("sim.fps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.compression_ratio) {
            return bad(format!("compression ratio {} outside [0, 1)", self.compression_ratio));
        }
        if self.frame_width == 0 || self.frame_height == 0 || !matches!(self.frame_channels, 1 | 3) {
            return bad("frame geometry must be positive with 1 or 3 channels".into());
        }
        if !(self.latency.compression_fps > 0.0 && self.latency.detection_fps > 0.0) {
            return bad("processing speeds must be positive".into());
        }
        self.channel.validate()?;
        self.link.validate()?;
        Ok(())
    }

    pub fn raw_bytes(&self) -> u64 {
        (self.frame_width * self.frame_height * self.frame_channels) as u64
    }

    /// Seed of the CQI trace.
    pub fn trace_seed(&self) -> u64 {
        mix_seed(self.master_seed, self.channel.seed)
    }

    pub fn trace(&self) -> Result<CqiTrace, SimError> {
        let model = ChannelModel {
            seed: self.trace_seed(),
            ..self.channel.clone()
        };
        Ok(channel::sample_trace(&model, self.frames)?)
    }
}

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `splitmix64(master ^ splitmix64(stream))`.
pub fn mix_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream))
}

/// Synthetic mask with `round(ratio * N)` zeros in the given layout.
pub fn synthetic_mask(width: usize, height: usize, ratio: f64, layout: MaskLayout) -> Mask {
    let n = width * height;
    let zeros = ((ratio * n as f64).round() as usize).min(n);
    let mut bits = vec![1u8; n];
    match layout {
        MaskLayout::Contiguous => bits[..zeros].fill(0),
        MaskLayout::Scattered => {
            for k in 0..zeros {
                bits[k * n / zeros] = 0;
            }
        }
    }
    Mask::new(width, height, bits).expect("valid synthetic mask")
}

/// Masked payload size for a synthetic mask of the given ratio.
pub fn analytic_masked_bytes(cfg: &SimConfig, ratio: f64) -> u64 {
    let mask = synthetic_mask(cfg.frame_width, cfg.frame_height, ratio, cfg.mask_layout);
    protocol::masked_payload_len(&mask, cfg.frame_channels) as u64
}

/// Per-frame wire sizes (raw, masked) in bytes.
#[derive(Debug, Clone)]
enum WireSizes {
    Fixed { raw: u64, masked: u64 },
    Corpus(Vec<(u64, u64)>),
}

impl WireSizes {
    fn get(&self, frame: usize) -> (u64, u64) {
        match self {
            WireSizes::Fixed { raw, masked } => (*raw, *masked),
            WireSizes::Corpus(v) => v[frame % v.len()],
        }
    }
}

fn corpus_wire_sizes(dir: &Path, ratio: f64, analysis_size: usize) -> Result<Vec<(u64, u64)>, SimError> {
    let io = |source| SimError::Io {
        path: dir.display().to_string(),
        source,
    };
    let frames = CorpusLayout::locate(dir).and_then(|l| l.frame_ids()).map_err(io)?;
    if frames.is_empty() {
        return Err(SimError::Config(format!("{}: corpus has no frames", dir.display())));
    }
    frames
        .par_iter()
        .map(|(_, path)| {
            let image = imageio::read_image(path)?;
            let masked = saliency::srvs_compress(&image, ratio, analysis_size)?;
            Ok((image.pixels().len() as u64, protocol::encode_masked_payload(&masked).len() as u64))
        })
        .collect()
}

fn wire_sizes(cfg: &SimConfig) -> Result<WireSizes, SimError> {
    match &cfg.corpus {
        Some(dir) => Ok(WireSizes::Corpus(corpus_wire_sizes(dir, cfg.compression_ratio, cfg.analysis_size)?)),
        None => Ok(WireSizes::Fixed {
            raw: cfg.raw_bytes(),
            masked: analytic_masked_bytes(cfg, cfg.compression_ratio),
        }),
    }
}

#[derive(Debug, Clone)]
pub struct SimRun {
    pub outage_probability: f64,
    pub outcomes: Vec<FrameOutcome>,
}

impl SimRun {
    pub fn mean_latency(&self) -> f64 {
        self.outcomes.iter().map(|o| o.t_total).sum::<f64>() / self.outcomes.len() as f64
    }

    pub fn mean_wire_bytes(&self) -> f64 {
        self.outcomes.iter().map(|o| o.bytes_on_wire as f64).sum::<f64>() / self.outcomes.len() as f64
    }
}

fn evaluate_frames(cfg: &SimConfig, trace: &CqiTrace, sizes: &WireSizes) -> Result<SimRun, SimError> {
    let outcomes = trace
        .values
        .par_iter()
        .enumerate()
        .map(|(i, &cqi)| {
            let (raw, masked) = sizes.get(i);
            let decision = match cfg.framework {
                Framework::Conv => Decision::SendOriginal,
                Framework::Eodf => channel::decide(cfg.policy, cqi, raw, &cfg.link, &cfg.latency, cfg.fps)?,
            };
            let wire = match decision {
                Decision::SendOriginal => raw,
                Decision::Compress => masked,
            };
            latency::frame_latency(i as u64, decision, wire, cqi, &cfg.link, &cfg.latency, cfg.fps)
        })
        .collect::<Result<Vec<_>, ChannelError>>()?;
    let outage_probability = latency::outage_probability(&outcomes).map_err(|e| SimError::Config(e.to_string()))?;
    Ok(SimRun {
        outage_probability,
        outcomes,
    })
}

/// Run `f` on a dedicated pool of `threads` workers, or the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, SimError> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| SimError::Pool(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

pub fn run_sim(cfg: &SimConfig) -> Result<SimRun, SimError> {
    run_sim_with_threads(cfg, None)
}

/// `threads = None` uses the global pool.
pub fn run_sim_with_threads(cfg: &SimConfig, threads: Option<usize>) -> Result<SimRun, SimError> {
    cfg.validate()?;
    with_threads(threads, || {
        let trace = cfg.trace()?;
        let sizes = wire_sizes(cfg)?;
        evaluate_frames(cfg, &trace, &sizes)
    })?
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub compression_ratio: f64,
    pub framework: Framework,
    pub outage_probability: f64,
    pub mean_latency_s: f64,
    pub mean_wire_bytes: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn row(&self, ratio: f64, framework: Framework) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.compression_ratio == ratio && r.framework == framework)
    }

    pub fn outage_column(&self, framework: Framework) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.framework == framework)
            .map(|r| r.outage_probability)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("compression_ratio,framework,outage_probability,mean_latency_s,mean_wire_bytes\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.compression_ratio, r.framework, r.outage_probability, r.mean_latency_s, r.mean_wire_bytes
            ));
        }
        out
    }
}

/// Run every (ratio, framework) cell on one shared CQI trace.
pub fn sweep(template: &SimConfig, ratios: &[f64], frameworks: &[Framework], threads: Option<usize>) -> Result<SweepResult, SimError> {
    if ratios.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(SimError::Config("ratios must be sorted ascending".into()));
    }
    let mut cells = Vec::new();
    for &ratio in ratios {
        for &framework in frameworks {
            let cfg = SimConfig {
                compression_ratio: ratio,
                framework,
                ..template.clone()
            };
            cfg.validate()?;
            cells.push(cfg);
        }
    }
    let rows = with_threads(threads, || -> Result<Vec<SweepRow>, SimError> {
        let trace = template.trace()?;
        cells
            .par_iter()
            .map(|cfg| {
                let sizes = wire_sizes(cfg)?;
                let run = evaluate_frames(cfg, &trace, &sizes)?;
                Ok(SweepRow {
                    compression_ratio: cfg.compression_ratio,
                    framework: cfg.framework,
                    outage_probability: run.outage_probability,
                    mean_latency_s: run.mean_latency(),
                    mean_wire_bytes: run.mean_wire_bytes(),
                })
            })
            .collect()
    })??;

    let conv: Vec<&SweepRow> = rows.iter().filter(|r| r.framework == Framework::Conv).collect();
    if let Some(first) = conv.first() {
        for r in &conv[1..] {
            if (r.outage_probability, r.mean_latency_s, r.mean_wire_bytes)
                != (first.outage_probability, first.mean_latency_s, first.mean_wire_bytes)
            {
                return Err(SimError::ConvNotConstant(format!(
                    "ratio {} vs {}",
                    first.compression_ratio, r.compression_ratio
                )));
            }
        }
    }
    Ok(SweepResult { rows })
}

pub fn outcomes_csv(outcomes: &[FrameOutcome]) -> String {
    let mut out = String::from(
        "frame_id,decision,cqi,bytes_on_wire,t_compress,t_uplink,t_detect,t_downlink,t_total,outage\n",
    );
    for o in outcomes {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            o.frame_id,
            o.decision,
            o.cqi,
            o.bytes_on_wire,
            o.t_compress,
            o.t_uplink,
            o.t_detect,
            o.t_downlink,
            o.t_total,
            u8::from(o.outage)
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRow {
    pub ratio: f64,
    /// Class name, or `mAP` for the per-ratio mean.
    pub class: String,
    pub ap: f64,
    pub num_truths: usize,
    pub num_dets: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub rows: Vec<AccuracyRow>,
    pub frames: usize,
    pub skipped_frames: Vec<String>,
    /// Achieved full-resolution discard ratio per requested ratio, averaged
    /// over frames.
    pub mean_discard: Vec<(f64, f64)>,
}

impl AccuracyReport {
    pub fn map_at(&self, ratio: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.ratio == ratio && r.class == "mAP")
            .map(|r| r.ap)
    }

    pub fn ap_at(&self, ratio: f64, class: ObjectClass) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.ratio == ratio && r.class == class.as_str())
            .map(|r| r.ap)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("ratio,class,ap,num_truths,num_dets\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{}\n", r.ratio, r.class, r.ap, r.num_truths, r.num_dets));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub oracle: OracleParams,
    pub iou_threshold: f64,
    pub srvs: SrvsParams,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            oracle: OracleParams::default(),
            iou_threshold: 0.5,
            srvs: SrvsParams::default(),
        }
    }
}

/// Per-frame, per-ratio oracle detections.
struct FrameEval {
    id: String,
    truths: Vec<detector::GroundTruth>,
    per_ratio: Vec<(Vec<detector::Detection>, f64)>,
}

/// Compress every corpus frame at each ratio, run the oracle detector and
/// score AP per class plus mAP. Ratio 0 bypasses compression.
pub fn evaluate_accuracy(corpus: &Path, ratios: &[f64], settings: &EvalSettings) -> Result<AccuracyReport, SimError> {
    let layout = CorpusLayout::locate(corpus).map_err(|source| SimError::Io {
        path: corpus.display().to_string(),
        source,
    })?;
    let frames = layout.frame_ids().map_err(|source| SimError::Io {
        path: layout.images.display().to_string(),
        source,
    })?;
    if let Some(r) = ratios.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(SimError::Config(format!("ratio {r} outside [0, 1)")));
    }

    let results: Vec<Option<FrameEval>> = frames
        .par_iter()
        .map(|(id, path)| -> Result<Option<FrameEval>, SimError> {
            let label = layout.labels.join(format!("{id}.txt"));
            if !label.is_file() {
                warn!("frame {id}: no label file {}, skipped", label.display());
                return Ok(None);
            }
            let truths = detector::read_kitti_labels(&label)?;
            let image = imageio::read_image(path)?;
            let mut per_ratio = Vec::with_capacity(ratios.len());
            for &ratio in ratios {
                let masked = if ratio == 0.0 {
                    MaskedImage {
                        mask: Mask::ones(image.width(), image.height()),
                        image: image.clone(),
                        discard_ratio: 0.0,
                    }
                } else {
                    saliency::srvs_compress_with(&image, ratio, &settings.srvs)?.masked
                };
                let dets = detector::oracle_detect(&masked, &truths, &settings.oracle);
                per_ratio.push((dets, masked.discard_ratio));
            }
            Ok(Some(FrameEval {
                id: id.clone(),
                truths,
                per_ratio,
            }))
        })
        .collect::<Result<_, _>>()?;

    let skipped_frames: Vec<String> = frames
        .iter()
        .zip(&results)
        .filter(|(_, r)| r.is_none())
        .map(|((id, _), _)| id.clone())
        .collect();
    let evaluated: Vec<&FrameEval> = results.iter().flatten().collect();
    let mut rows = Vec::new();
    let mut mean_discard = Vec::new();
    for (k, &ratio) in ratios.iter().enumerate() {
        let mut ev = Evaluator::new();
        let mut discard_sum = 0.0;
        for f in &evaluated {
            ev.add_frame(&f.id, &f.per_ratio[k].0, &f.truths);
            discard_sum += f.per_ratio[k].1;
        }
        let report = ev.report(settings.iou_threshold);
        let per_class: BTreeMap<ObjectClass, f64> = report.iter().map(|r| (r.class, r.ap)).collect();
        let map = detector::mean_average_precision(&per_class).unwrap_or(f64::NAN);
        let (truths, dets) = report.iter().fold((0, 0), |(t, d), r| (t + r.num_truths, d + r.num_dets));
        for r in report {
            rows.push(AccuracyRow {
                ratio,
                class: r.class.to_string(),
                ap: r.ap,
                num_truths: r.num_truths,
                num_dets: r.num_dets,
            });
        }
        rows.push(AccuracyRow {
            ratio,
            class: "mAP".into(),
            ap: map,
            num_truths: truths,
            num_dets: dets,
        });
        let mean = if evaluated.is_empty() { f64::NAN } else { discard_sum / evaluated.len() as f64 };
        info!("ratio {ratio}: mAP {map:.4}, mean discard {mean:.4}");
        mean_discard.push((ratio, mean));
    }
    Ok(AccuracyReport {
        rows,
        frames: evaluated.len(),
        skipped_frames,
        mean_discard,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelKind;

    fn small(framework: Framework) -> SimConfig {
        SimConfig {
            frames: 2000,
            framework,
            master_seed: 11,
            ..SimConfig::default()
        }
    }

    #[test]
    fn unbounded_link_never_misses() {
        let cfg = SimConfig {
            link: LinkConfig {
                bandwidth_hz: f64::INFINITY,
                ..LinkConfig::default()
            },
            latency: LatencyParams {
                compression_fps: f64::INFINITY,
                detection_fps: f64::INFINITY,
                result_bytes: 256,
            },
            ..small(Framework::Eodf)
        };
        assert_eq!(run_sim(&cfg).unwrap().outage_probability, 0.0);
    }

    #[test]
    fn oversized_conv_frames_always_miss() {
        let cfg = SimConfig {
            frame_width: 4000,
            frame_height: 3000,
            ..small(Framework::Conv)
        };
        assert_eq!(run_sim(&cfg).unwrap().outage_probability, 1.0);
    }

    #[test]
    fn outage_recomputable_from_rows() {
        let run = run_sim(&small(Framework::Eodf)).unwrap();
        let csv = outcomes_csv(&run.outcomes);
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().ends_with(",outage"));
        let (mut late, mut total) = (0, 0);
        for line in lines {
            total += 1;
            late += usize::from(line.ends_with(",1"));
        }
        assert_eq!(total, 2000);
        assert_eq!(late as f64 / total as f64, run.outage_probability);
    }

    #[test]
    fn deadline_policy_outage_monotone_in_ratio() {
        let base = SimConfig {
            policy: Policy::DeadlineEstimate,
            ..small(Framework::Eodf)
        };
        let outage = |r| {
            run_sim(&SimConfig {
                compression_ratio: r,
                ..base.clone()
            })
            .unwrap()
            .outage_probability
        };
        let (lo, hi) = (outage(0.1), outage(0.3));
        assert!(hi <= lo, "{hi} > {lo}");
    }

    #[test]
    fn sweep_conv_rows_constant() {
        let cfg = SimConfig {
            channel: ChannelModel {
                kind: ChannelKind::Markov,
                ..ChannelModel::default()
            },
            ..small(Framework::Eodf)
        };
        let res = sweep(&cfg, &[0.0, 0.1, 0.2], &[Framework::Eodf, Framework::Conv], Some(2)).unwrap();
        assert_eq!(res.rows.len(), 6);
        let conv = res.outage_column(Framework::Conv);
        assert!(conv.iter().all(|&c| c == conv[0]));
        assert!(sweep(&cfg, &[0.2, 0.1], &[Framework::Conv], None).is_err());
    }

    #[test]
    fn synthetic_mask_sizes() {
        let cfg = SimConfig::default();
        for layout in [MaskLayout::Contiguous, MaskLayout::Scattered] {
            let m = synthetic_mask(100, 50, 0.3, layout);
            assert_eq!(m.count_zeros(), 1500);
        }
        let contiguous = analytic_masked_bytes(&cfg, 0.3);
        let n = 1242 * 375;
        let ones = n - (0.3 * n as f64).round() as usize;
        let runs = protocol::varint_len((n - ones) as u64) + protocol::varint_len(ones as u64);
        assert_eq!(contiguous, (ones * 3 + runs) as u64);
        let scattered = analytic_masked_bytes(
            &SimConfig {
                mask_layout: MaskLayout::Scattered,
                ..cfg
            },
            0.3,
        );
        assert!(scattered > contiguous);
    }

    #[test]
    fn seeds_mix() {
        assert_ne!(mix_seed(1, 0), mix_seed(0, 1));
        assert_eq!(mix_seed(5, 9), mix_seed(5, 9));
    }
}
