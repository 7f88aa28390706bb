use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use qec_stream::correlations::CorrelatedDecoder;
use qec_stream::engine::{EngineError, ExactDecoder};
use qec_stream::harness::{compute_lambda, fit_epsilon, FitPoint, FitResult, HarnessError, Sampler};
use qec_stream::model::{
    build_matching_graph, parse_dem, DemError, DetectorId, GraphError, MatchingGraph, ModelTemplate, NoiseModel,
    TemplateError,
};
use qec_stream::parallel::{choose_block_size, BlockSize, PipelineConfig, PlanError, PipelineError, Prediction, StreamingDecoder};
use qec_stream::stream::{
    decode_stream, emit_prediction, median, parse_mask, quantile, DriveError, FrameEvent, FrameReader, FrameWriter,
    MetricRecord, MetricsSink, PredictionLine, ShotLatency, StreamError, StreamHeader, TimingBudget,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{BenchArgs, DecodeArgs, FitArgs, LambdaArgs, ReplayArgs, SampleArgs, StreamArgs};

/// Malformed input that is not a stream or model parse error.
#[derive(Debug)]
struct Malformed(String);

impl fmt::Display for Malformed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Malformed {}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(d) = cause.downcast_ref::<DriveError>() {
            return match d {
                DriveError::Stream(StreamError::Io(_)) | DriveError::Output(_) => 1,
                DriveError::Stream(_) => 2,
                _ => 3,
            };
        }
        if let Some(s) = cause.downcast_ref::<StreamError>() {
            return if matches!(s, StreamError::Io(_)) { 1 } else { 2 };
        }
        if cause.is::<DemError>() || cause.is::<serde_json::Error>() || cause.is::<Malformed>() {
            return 2;
        }
        if cause.is::<PipelineError>()
            || cause.is::<EngineError>()
            || cause.is::<HarnessError>()
            || cause.is::<GraphError>()
            || cause.is::<TemplateError>()
            || cause.is::<PlanError>()
        {
            return 3;
        }
    }
    1
}

fn malformed(msg: impl Into<String>) -> anyhow::Error {
    Malformed(msg.into()).into()
}

fn load_model(path: &Path) -> Result<NoiseModel<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_dem(&text).with_context(|| format!("parsing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn pipeline(template: ModelTemplate<f64>, blocks: u64, workers: usize, preweights: bool) -> Result<StreamingDecoder<f64>> {
    let m = choose_block_size(BlockSize::Explicit(blocks))?;
    let config = PipelineConfig::new(m).workers(workers).correlations(preweights);
    Ok(StreamingDecoder::new(template, config)?)
}

fn write_prediction(out: &mut impl Write, p: &Prediction, latency: Option<&ShotLatency>) -> io::Result<()> {
    writeln!(out, "{}", emit_prediction(p, latency))
}

pub fn decode(args: DecodeArgs) -> Result<()> {
    let model = load_model(&args.dem)?;
    let template = ModelTemplate::new(&model)?;
    let mut reader = FrameReader::new(open(&args.shots)?)?;
    let mut out = create(&args.out)?;
    let preweights = !args.no_preweights;
    if args.exact {
        decode_exact_stream(&template, &mut reader, &mut out, preweights, args.timing)?;
    } else {
        let mut dec = pipeline(template, args.blocks, args.workers, preweights)?;
        let timing = args.timing;
        decode_stream(&mut dec, &mut reader, |_| Ok(()), |o| {
            write_prediction(&mut out, &o.prediction, timing.then_some(&o.latency))
        })?;
    }
    out.flush()?;
    Ok(())
}

fn decode_exact_stream<R: Read>(
    template: &ModelTemplate<f64>,
    reader: &mut FrameReader<R>,
    out: &mut impl Write,
    preweights: bool,
    timing: bool,
) -> Result<()> {
    let header = *reader.header();
    if header.detectors_per_cycle != template.detectors_per_cycle() {
        return Err(DriveError::DetectorMismatch {
            stream: header.detectors_per_cycle,
            model: template.detectors_per_cycle(),
        }
        .into());
    }
    let dpc = header.detectors_per_cycle as u64;
    let clock = Instant::now();
    let mut graphs: HashMap<u64, (MatchingGraph<f64>, ExactDecoder<f64>)> = HashMap::new();
    let mut events = Vec::new();
    let (mut cycle, mut shot) = (0u64, 0u64);
    while let Some(ev) = reader.next_event()? {
        match ev {
            FrameEvent::Cycle(fired) => {
                events.extend(fired.iter().map(|&i| DetectorId(cycle * dpc + i as u64)));
                cycle += 1;
            }
            FrameEvent::EndOfShot => {
                let received = clock.elapsed();
                if let std::collections::hash_map::Entry::Vacant(e) = graphs.entry(cycle) {
                    let graph = build_matching_graph(&template.extend_to(cycle)?)?;
                    let dec = ExactDecoder::new(&graph);
                    e.insert((graph, dec));
                }
                let (graph, dec) = graphs.get_mut(&cycle).unwrap();
                let matching = if preweights {
                    CorrelatedDecoder::new(graph).decode(&events)?
                } else {
                    dec.decode(&events)?
                };
                let prediction = Prediction { shot_index: shot, observables: matching.observable_mask, heralded: false };
                let latency = timing.then(|| {
                    let ns = (clock.elapsed() - received).as_nanos() as u64;
                    ShotLatency { shot_index: shot, end_of_shot_latency_ns: ns, t_software_median_ns: ns, t_software_p99_ns: ns }
                });
                write_prediction(out, &prediction, latency.as_ref())?;
                events.clear();
                cycle = 0;
                shot += 1;
            }
        }
    }
    Ok(())
}

pub fn stream(args: StreamArgs) -> Result<()> {
    let model = load_model(&args.dem)?;
    let template = ModelTemplate::new(&model)?;
    let mut dec = pipeline(template, args.blocks, args.workers, !args.no_preweights)?;
    let input: Box<dyn Read> = match &args.listen {
        Some(addr) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            let (conn, peer) = listener.accept()?;
            eprintln!("streaming from {peer}");
            Box::new(conn)
        }
        None => Box::new(io::stdin().lock()),
    };
    let mut reader = FrameReader::new(BufReader::new(input))?;
    let mut out: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    let us = |x: f64| (x * 1e3).round().max(0.0) as u64;
    let budget = TimingBudget {
        t_input_ns: us(args.t_input_us),
        t_output_ns: us(args.t_output_us),
        t_control_ns: us(args.t_control_us),
    };
    let sink = std::cell::RefCell::new(match &args.metrics {
        Some(p) => Some(MetricsSink::new(create(p)?, budget)),
        None => None,
    });
    let shots = decode_stream(
        &mut dec,
        &mut reader,
        |r| {
            if let Some(s) = sink.borrow_mut().as_mut() {
                if let Some(alarm) = s.record(r)? {
                    eprintln!(
                        "backlog: queue depth {} at shot {} block {} grew by {}",
                        alarm.queue_depth, alarm.shot_index, alarm.block_index, alarm.growth
                    );
                }
            }
            Ok(())
        },
        |o| {
            if let Some(s) = sink.borrow_mut().as_mut() {
                s.shot(&o.latency)?;
            }
            write_prediction(&mut out, &o.prediction, Some(&o.latency))?;
            out.flush()
        },
    )?;
    if let Some(s) = sink.into_inner().as_mut() {
        s.flush()?;
        if s.alarms() > 0 {
            eprintln!("{} backlog alarms", s.alarms());
        }
    }
    eprintln!("decoded {shots} shots");
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct TruthLine {
    shot: u64,
    observables: String,
    cycles: u64,
}

pub fn sample(args: SampleArgs) -> Result<()> {
    let model = load_model(&args.dem)?;
    let sampler = Sampler::new(&model, args.cycles)?;
    let dpc = model.detectors_per_cycle;
    let observables = u16::try_from(model.num_observables).map_err(|_| malformed("too many observables"))?;
    let header = StreamHeader::new(dpc, observables, (!args.unbounded).then_some(args.cycles));
    let mut writer = FrameWriter::new(create(&args.out)?, header)?;
    let mut truth = match &args.truth {
        Some(p) => Some(create(p)?),
        None => None,
    };
    const CHUNK: u64 = 1024;
    let mut fired = Vec::new();
    for start in (0..args.shots).step_by(CHUNK as usize) {
        let end = (start + CHUNK).min(args.shots);
        let batch: Vec<_> = (start..end).into_par_iter().map(|k| sampler.sample(args.seed, k)).collect();
        for s in batch {
            let mut k = 0;
            for c in 0..s.cycles {
                fired.clear();
                while k < s.events.len() && s.events[k].cycle(dpc) == c {
                    fired.push((s.events[k].0 - c * dpc as u64) as u32);
                    k += 1;
                }
                writer.write_cycle(&fired)?;
            }
            writer.end_shot()?;
            if let Some(t) = truth.as_mut() {
                let line = TruthLine { shot: s.shot, observables: format!("{:#x}", s.true_observables), cycles: s.cycles };
                serde_json::to_writer(&mut *t, &line)?;
                t.write_all(b"\n")?;
            }
        }
    }
    writer.flush()?;
    if let Some(t) = truth.as_mut() {
        t.flush()?;
    }
    Ok(())
}

pub fn replay(args: ReplayArgs) -> Result<()> {
    if !(args.rate > 0.0) {
        bail!("--rate must be positive");
    }
    let mut reader = FrameReader::new(open(&args.input)?)?;
    let conn = TcpStream::connect(&args.to).with_context(|| format!("connecting to {}", args.to))?;
    conn.set_nodelay(true)?;
    let mut writer = FrameWriter::new(BufWriter::new(conn), *reader.header())?;
    let start = Instant::now();
    let mut cycles = 0u64;
    while let Some(ev) = reader.next_event()? {
        match ev {
            FrameEvent::Cycle(fired) => {
                let due = Duration::from_secs_f64(cycles as f64 / args.rate);
                let now = start.elapsed();
                if due > now {
                    writer.flush()?;
                    std::thread::sleep(due - now);
                }
                writer.write_cycle(&fired)?;
                cycles += 1;
            }
            FrameEvent::EndOfShot => writer.end_shot()?,
        }
    }
    writer.flush()?;
    let secs = start.elapsed().as_secs_f64();
    eprintln!("sent {cycles} cycles in {secs:.2} s ({:.0} cycles/s)", cycles as f64 / secs.max(1e-9));
    Ok(())
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

pub fn fit(args: FitArgs) -> Result<()> {
    let predictions: Vec<PredictionLine> = read_lines(&args.predictions)?;
    let truth: Vec<TruthLine> = read_lines(&args.truth)?;
    let by_shot: HashMap<u64, &PredictionLine> = predictions.iter().map(|p| (p.shot, p)).collect();
    // cycles -> (shots, errors)
    let mut groups: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    let mut heralded = 0u64;
    for t in truth.iter().filter(|t| t.cycles >= args.min_cycles) {
        let p = by_shot.get(&t.shot).ok_or_else(|| malformed(format!("no prediction for shot {}", t.shot)))?;
        let predicted = p.mask().ok_or_else(|| malformed(format!("bad mask {:?}", p.observables)))?;
        let actual = parse_mask(&t.observables).ok_or_else(|| malformed(format!("bad mask {:?}", t.observables)))?;
        let entry = groups.entry(t.cycles).or_default();
        if p.heralded {
            heralded += 1;
            if !args.herald_as_error {
                continue;
            }
            entry.0 += 1;
            entry.1 += 1;
            continue;
        }
        entry.0 += 1;
        entry.1 += u64::from(predicted != actual);
    }
    let points: Vec<FitPoint> = groups
        .iter()
        .filter(|(_, &(n, _))| n > 0)
        .map(|(&cycles, &(n, k))| FitPoint { cycles, p_l: k as f64 / n as f64, shots: n })
        .collect();
    let result: FitResult<f64> = fit_epsilon(&points, &args.label)?;
    if heralded > 0 {
        eprintln!("{heralded} heralded shots {}", if args.herald_as_error { "counted as errors" } else { "excluded" });
    }
    print_json(&result)
}

#[derive(Deserialize)]
struct DistanceFit {
    distance: u32,
    fit: FitResult<f64>,
}

pub fn lambda(args: LambdaArgs) -> Result<()> {
    let fits: Vec<DistanceFit> = serde_json::from_reader(open(&args.fits)?)?;
    let pairs: Vec<(u32, FitResult<f64>)> = fits.into_iter().map(|f| (f.distance, f.fit)).collect();
    let result = compute_lambda(&pairs)?;
    print_json(&result)
}

#[derive(Serialize)]
struct BlockPoint {
    shot: u64,
    block: u64,
    latency_us: f64,
    queue_depth: u64,
}

#[derive(Serialize)]
struct BenchSummary {
    blocks: usize,
    shots: usize,
    median_latency_us: f64,
    latency_deciles_us: Vec<f64>,
    first_decile_median_us: f64,
    last_decile_median_us: f64,
    max_queue_depth: u64,
    end_of_shot_median_us: Option<f64>,
    backlog_alarms: usize,
    series: Vec<BlockPoint>,
}

pub fn bench(args: BenchArgs) -> Result<()> {
    let records: Vec<MetricRecord> = read_lines(&args.metrics)?;
    let mut blocks = Vec::new();
    let mut end_of_shot = Vec::new();
    let mut alarms = 0;
    for r in records {
        match r {
            MetricRecord::Block(b) => blocks.push(b),
            MetricRecord::Shot(v) => {
                let ns = v
                    .get("end_of_shot_latency_ns")
                    .and_then(|x| x.as_u64())
                    .ok_or_else(|| malformed("shot record without end_of_shot_latency_ns"))?;
                end_of_shot.push(ns);
            }
            MetricRecord::Backlog(_) => alarms += 1,
        }
    }
    if blocks.is_empty() {
        return Err(malformed("no block records"));
    }
    let us = |ns: u64| ns as f64 / 1e3;
    let lat: Vec<u64> = blocks.iter().map(|b| b.sub_shot_latency_ns).collect();
    let mut sorted = lat.clone();
    sorted.sort_unstable();
    let decile = (lat.len() / 10).max(1);
    let summary = BenchSummary {
        blocks: blocks.len(),
        shots: end_of_shot.len(),
        median_latency_us: us(quantile(&sorted, 0.5)),
        latency_deciles_us: (1..=9).map(|k| us(quantile(&sorted, k as f64 / 10.0))).collect(),
        first_decile_median_us: us(median(&lat[..decile])),
        last_decile_median_us: us(median(&lat[lat.len() - decile..])),
        max_queue_depth: blocks.iter().map(|b| b.queue_depth).max().unwrap_or(0),
        end_of_shot_median_us: (!end_of_shot.is_empty()).then(|| us(median(&end_of_shot))),
        backlog_alarms: alarms,
        series: blocks
            .iter()
            .map(|b| BlockPoint {
                shot: b.shot_index,
                block: b.block_index,
                latency_us: us(b.sub_shot_latency_ns),
                queue_depth: b.queue_depth,
            })
            .collect(),
    };
    print_json(&summary)
}
