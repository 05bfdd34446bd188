use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde_json::json;
use weavecache::memory::{read_stream_jsonl, MemoryBuffer};
use weavecache::retrieval::{c2f_load, coarse_load, fine_oracle};
use weavecache::simulator::{
    csv_row, dedup_deltas, generate_stream, run_episode, sweep_threshold, write_sweep_csv,
    EpisodeMetrics, GeneratedStream, Policy, QueryHorizon, StreamConfig, CSV_HEADER,
};
use weavecache::sope::{
    build_reorder_prompt, evaluate, read_jsonl, shuffle_with_timestamps, write_jsonl,
    OverlapHistogram, ReorderPrediction, SopeRecord,
};

use crate::config::RunConfig;
use crate::{
    BenchArgs, Cli, Command, EngineArgs, EvalReorderArgs, GenerateArgs, HorizonArg, PolicyArg,
    ShuffleArgs, SimulateArgs, StreamArgs, SweepArgs,
};

const STREAM_FILE: &str = "stream.jsonl";
const QUERIES_FILE: &str = "queries.jsonl";

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate(args) => generate(&mut cfg, args, cli.json),
        Command::Simulate(args) => simulate(&mut cfg, args, cli.json),
        Command::Sweep(args) => sweep(&mut cfg, args, cli.json),
        Command::Shuffle(args) => shuffle(args, cli.json),
        Command::EvalReorder(args) => eval_reorder(args, cli.json),
        Command::Bench(args) => bench(&cfg, args, cli.json),
    }
}

fn apply_stream(cfg: &mut StreamConfig, a: &StreamArgs) {
    macro_rules! set {
        ($field:ident, $flag:ident) => {
            if let Some(v) = a.$flag {
                cfg.$field = v;
            }
        };
    }
    set!(n_frames, frames);
    set!(n_events, events);
    set!(dim, dim);
    set!(tokens_per_frame, tokens);
    set!(query_tokens, query_tokens);
    set!(n_queries, queries);
    set!(n_options, options);
    set!(noise_sigma, noise);
    set!(ambiguity, ambiguity);
    set!(fps, fps);
    set!(seed, seed);
    if let Some(h) = a.horizon {
        cfg.query_horizon = match h {
            HorizonArg::Current => QueryHorizon::Current,
            HorizonArg::Past => QueryHorizon::Past,
            HorizonArg::Mixed => QueryHorizon::Mixed,
        };
    }
}

fn apply_engine(cfg: &mut RunConfig, a: &EngineArgs) {
    if let Some(v) = a.window {
        cfg.memory.window_c = v;
    }
    if let Some(v) = a.k {
        cfg.retrieval.k = v;
    }
    if let Some(v) = a.m_coarse {
        cfg.retrieval.m_coarse = v;
    }
    if let Some(v) = a.tau {
        cfg.answerer.tau = v;
    }
    cfg.stream.window_c = cfg.memory.window_c;
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn load_or_generate(cfg: &RunConfig, input: Option<&Path>) -> Result<GeneratedStream> {
    match input {
        Some(dir) => {
            let frames = open(&dir.join(STREAM_FILE))?;
            let queries = open(&dir.join(QUERIES_FILE))?;
            GeneratedStream::read_jsonl(frames, queries)
                .with_context(|| format!("reading stream from {}", dir.display()))
        }
        None => Ok(generate_stream(&cfg.stream)?),
    }
}

fn generate(cfg: &mut RunConfig, args: GenerateArgs, json: bool) -> Result<()> {
    apply_stream(&mut cfg.stream, &args.stream);
    if let Some(w) = args.window {
        cfg.memory.window_c = w;
    }
    cfg.stream.window_c = cfg.memory.window_c;
    let stream = generate_stream(&cfg.stream)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let (fp, qp) = (args.out.join(STREAM_FILE), args.out.join(QUERIES_FILE));
    let (mut fw, mut qw) = (create(&fp)?, create(&qp)?);
    stream.write_jsonl(&mut fw, &mut qw)?;
    fw.flush()?;
    qw.flush()?;
    if json {
        println!(
            "{}",
            json!({
                "frames": stream.frames.len(),
                "queries": stream.queries.len(),
                "stream": fp,
                "queries_file": qp,
            })
        );
    } else {
        println!(
            "wrote {} frames to {} and {} queries to {}",
            stream.frames.len(),
            fp.display(),
            stream.queries.len(),
            qp.display()
        );
    }
    Ok(())
}

fn delta_json(d: f64) -> serde_json::Value {
    if d.is_infinite() {
        json!("inf")
    } else {
        json!(d)
    }
}

fn print_metrics(delta: f64, label: &str, m: &EpisodeMetrics, json: bool) {
    if json {
        println!(
            "{}",
            json!({ "policy": label, "delta": delta_json(delta), "metrics": m })
        );
    } else {
        println!("{CSV_HEADER}");
        println!("{}", csv_row(delta, m));
    }
}

fn simulate(cfg: &mut RunConfig, args: SimulateArgs, json: bool) -> Result<()> {
    apply_stream(&mut cfg.stream, &args.stream);
    apply_engine(cfg, &args.engine);
    if let Some(d) = args.delta {
        cfg.gate.delta_nats = d;
    }
    let policy = match args.policy {
        PolicyArg::LocalOnly => Policy::LocalOnly,
        PolicyArg::AlwaysRecall => Policy::AlwaysRecall,
        PolicyArg::Gated => Policy::Gated(cfg.gate.delta_nats),
    };
    let stream = load_or_generate(cfg, args.input.as_deref())?;
    let report = run_episode(&stream, policy, &cfg.episode())?;
    if let Some(path) = &args.trace {
        let mut w = create(path)?;
        write_jsonl(&mut w, &report.outcomes)?;
        w.flush()?;
    }
    print_metrics(policy.delta(), &policy.to_string(), &report.metrics, json);
    Ok(())
}

fn sweep(cfg: &mut RunConfig, args: SweepArgs, json: bool) -> Result<()> {
    apply_stream(&mut cfg.stream, &args.stream);
    apply_engine(cfg, &args.engine);
    let (deltas, dropped) = dedup_deltas(&args.deltas);
    for d in dropped {
        eprintln!("warning: duplicate delta {d} ignored");
    }
    let stream = load_or_generate(cfg, args.input.as_deref())?;
    let rows = sweep_threshold(&stream, &deltas, &cfg.episode())?;
    if let Some(path) = &args.out {
        let mut w = create(path)?;
        write_sweep_csv(&mut w, &rows)?;
        w.flush()?;
    }
    if json {
        let rows: Vec<_> = rows
            .iter()
            .map(|r| json!({ "delta": delta_json(r.delta), "metrics": r.metrics }))
            .collect();
        println!("{}", serde_json::Value::Array(rows));
    } else if args.out.is_none() {
        write_sweep_csv(io::stdout().lock(), &rows)?;
    } else {
        println!("wrote {} rows", rows.len());
    }
    Ok(())
}

fn shuffle(args: ShuffleArgs, json: bool) -> Result<()> {
    if args.examples == 0 {
        bail!("--examples must be at least 1");
    }
    let frames = read_stream_jsonl(open(&args.input)?)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let memory = MemoryBuffer::from_stream(&frames, 1)?;
    let mut records = Vec::with_capacity(args.examples as usize);
    for i in 0..args.examples {
        let (seq, _) =
            shuffle_with_timestamps(memory.frames(), args.group, args.seed.wrapping_add(i))?;
        records.push(SopeRecord::new(&seq, &build_reorder_prompt(&seq)));
    }
    let mut w = create(&args.out)?;
    write_jsonl(&mut w, &records)?;
    w.flush()?;
    let segments = records[0].slots.len();
    if json {
        println!(
            "{}",
            json!({ "examples": records.len(), "segments": segments, "out": args.out })
        );
    } else {
        println!(
            "wrote {} examples of {} segments to {}",
            records.len(),
            segments,
            args.out.display()
        );
    }
    Ok(())
}

fn eval_reorder(args: EvalReorderArgs, json: bool) -> Result<()> {
    let preds: Vec<ReorderPrediction> = read_jsonl(open(&args.pred)?)
        .with_context(|| format!("reading {}", args.pred.display()))?;
    let truth: Vec<SopeRecord> = read_jsonl(open(&args.truth)?)
        .with_context(|| format!("reading {}", args.truth.display()))?;
    let scores = evaluate(&preds, &truth)?;
    let hist = OverlapHistogram::from_scores(&scores);
    if json {
        println!("{}", serde_json::to_string(&hist)?);
        return Ok(());
    }
    println!("{:<10} count", "overlap");
    for (i, c) in hist.bins.iter().enumerate() {
        println!("{:<10} {c}", OverlapHistogram::bin_label(i));
    }
    println!(
        "mean exact_match {:.4}, mean kendall_tau {:.4} over {} examples",
        hist.mean_exact_match, hist.mean_kendall_tau, hist.count
    );
    Ok(())
}

fn bench(cfg: &RunConfig, args: BenchArgs, json: bool) -> Result<()> {
    let k = args.k.unwrap_or(cfg.retrieval.k);
    let m_coarse = args.m_coarse.unwrap_or(cfg.retrieval.m_coarse);
    let stream = generate_stream(&StreamConfig {
        n_frames: args.frames,
        dim: args.dim,
        tokens_per_frame: args.tokens,
        query_tokens: args.query_tokens,
        n_events: args.frames.min(8),
        n_options: 1,
        n_queries: 1,
        query_horizon: QueryHorizon::Current,
        noise_sigma: 0.3,
        seed: args.seed,
        ..StreamConfig::default()
    })?;
    let memory = MemoryBuffer::from_stream(&stream.frames, cfg.memory.window_c)?;
    let view = memory.snapshot();
    let q = stream.queries[0].record()?;

    let mut rows = Vec::new();
    let t = Instant::now();
    let r = coarse_load(&view, &q, m_coarse)?;
    rows.push(("coarse", r.sim_ops, t.elapsed().as_secs_f64() * 1e3));
    let t = Instant::now();
    let r = c2f_load(&view, &q, m_coarse, k)?;
    rows.push(("c2f", r.sim_ops, t.elapsed().as_secs_f64() * 1e3));
    let t = Instant::now();
    let r = fine_oracle(&view, &q, k)?;
    rows.push(("fine", r.sim_ops, t.elapsed().as_secs_f64() * 1e3));

    if json {
        let v: Vec<_> = rows
            .iter()
            .map(|(stage, ops, ms)| json!({ "stage": stage, "sim_ops": ops, "wall_ms": ms }))
            .collect();
        println!("{}", serde_json::Value::Array(v));
    } else {
        println!("stage,sim_ops,wall_ms");
        for (stage, ops, ms) in rows {
            println!("{stage},{ops},{ms:.3}");
        }
    }
    Ok(())
}
