//! `avtx`: encode, decode and verify residual corpora, and inspect the
//! codec's fixed tables.

mod config;
mod corpus;
mod report;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use avtx::block_codec::{
    container_from_bytes, container_read, container_to_bytes, container_write, fresh_context_bank, BlockRecord, CbDecoder,
    CbEncoder, CbInput, ChromaFormat, CodecConfig, CodingStats,
};
use avtx::entropy_core::MemoryReport;
use avtx::primary_xform::KernelBank;
use avtx::tx_signaling::mdtx_table;
use avtx::{Block, Error, IntraMode};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::config::{parse_chroma, parse_seed, read_qm_file, ConfigFile};
use crate::corpus::{synthesize, Corpus, CorpusBlock, SynthParams};
use crate::report::{emit, Format, Report};

#[derive(Parser, Debug)]
#[command(name = "avtx", version, about = "Residual transform coding: encode, decode and verify block corpora")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encode residual corpora into containers.
    Encode {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Output file, or directory when several inputs are given.
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        codec: CodecArgs,
        #[command(flatten)]
        out: OutputArgs,
        /// Write the per-symbol trace to FILE, or stdout when no file is given.
        #[arg(long, value_name = "FILE", num_args = 0..=1, default_missing_value = "-")]
        trace: Option<PathBuf>,
    },
    /// Decode containers back into residual corpora.
    Decode {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Output file, or directory when several inputs are given.
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Encode, serialize, parse and decode in memory, checking every block.
    Roundtrip {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        codec: CodecArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Print fixed tables.
    Dump {
        what: DumpWhat,
        /// Seed of the generated kernels.
        #[arg(long, value_parser = seed_arg)]
        seed: Option<u64>,
        #[arg(long)]
        csv: bool,
    },
    /// Context memory of the entropy coder.
    Memreport {
        #[arg(long)]
        csv: bool,
    },
    /// Write a synthetic residual corpus.
    Synth {
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 200)]
        blocks: usize,
        #[arg(long, default_value = "1", value_parser = seed_arg)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        bitdepth: u8,
        #[arg(long, default_value = "420", value_parser = chroma_arg)]
        chroma: ChromaFormat,
        /// Largest block side.
        #[arg(long, default_value_t = 64)]
        max_size: usize,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum DumpWhat {
    Kernels,
    Mdtx,
    Contexts,
}

fn seed_arg(s: &str) -> std::result::Result<u64, String> {
    parse_seed(s).map_err(|e| e.to_string())
}

fn chroma_arg(s: &str) -> std::result::Result<ChromaFormat, String> {
    parse_chroma(s).map_err(|e| e.to_string())
}

#[derive(Args, Debug, Clone, Default)]
struct CodecArgs {
    /// key = value file; flags override it.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    qindex: Option<u16>,
    /// Must match the corpus when given.
    #[arg(long)]
    bitdepth: Option<u8>,
    /// Lossless coding; implies q index 0.
    #[arg(long)]
    lossless: bool,
    #[arg(long, overrides_with = "no_tcq")]
    tcq: bool,
    #[arg(long, overrides_with = "tcq")]
    no_tcq: bool,
    #[arg(long, overrides_with = "no_ph")]
    ph: bool,
    #[arg(long, overrides_with = "ph")]
    no_ph: bool,
    #[arg(long, overrides_with = "no_fsc")]
    fsc: bool,
    #[arg(long, overrides_with = "fsc")]
    no_fsc: bool,
    #[arg(long, overrides_with = "no_ist")]
    ist: bool,
    #[arg(long, overrides_with = "ist")]
    no_ist: bool,
    #[arg(long, overrides_with = "no_cctx")]
    cctx: bool,
    #[arg(long, overrides_with = "cctx")]
    no_cctx: bool,
    /// Quantization-matrix file.
    #[arg(long, value_name = "FILE")]
    qm: Option<PathBuf>,
    #[arg(long, value_parser = seed_arg)]
    seed: Option<u64>,
    /// Lagrangian scale of the rate-distortion search.
    #[arg(long)]
    lambda: Option<f64>,
}

fn switch(on: bool, off: bool) -> Option<bool> {
    match (on, off) {
        (true, _) => Some(true),
        (_, true) => Some(false),
        _ => None,
    }
}

impl CodecArgs {
    /// Defaults, then the config file, then flags. Bit depth and chroma
    /// format come from the corpus and must agree with any explicit value.
    fn resolve(&self, corpus: &Corpus) -> Result<CodecConfig> {
        let mut cfg = CodecConfig { bit_depth: corpus.bit_depth, chroma: corpus.chroma, ..Default::default() };
        let file = match &self.config {
            Some(p) => ConfigFile::read(p)?,
            None => ConfigFile::default(),
        };
        file.apply(&mut cfg)?;
        if let Some(b) = self.bitdepth {
            cfg.bit_depth = b;
        }
        if cfg.bit_depth != corpus.bit_depth {
            bail!("configured bit depth {} does not match the {}-bit corpus", cfg.bit_depth, corpus.bit_depth);
        }
        if cfg.chroma != corpus.chroma {
            bail!("configured chroma format {:?} does not match the corpus ({:?})", cfg.chroma, corpus.chroma);
        }
        let t = &mut cfg.tools;
        for (dst, on, off) in [
            (&mut t.tcq, self.tcq, self.no_tcq),
            (&mut t.ph, self.ph, self.no_ph),
            (&mut t.fsc, self.fsc, self.no_fsc),
            (&mut t.ist, self.ist, self.no_ist),
            (&mut t.cctx, self.cctx, self.no_cctx),
        ] {
            if let Some(v) = switch(on, off) {
                *dst = v;
            }
        }
        if self.lossless {
            cfg.tools.lossless = true;
        }
        match self.qindex {
            Some(q) => cfg.base_q_idx = q,
            None if cfg.tools.lossless && file.base_q_idx.is_none() => cfg.base_q_idx = 0,
            None => {}
        }
        if let Some(p) = &self.qm {
            cfg.qm = read_qm_file(p)?;
            cfg.tools.qm = true;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(l) = self.lambda {
            cfg.lambda_scale = l;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone, Copy)]
struct OutputArgs {
    /// Machine-readable statistics.
    #[arg(long)]
    csv: bool,
    /// Files processed in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

/// A verification failure, as opposed to bad input or I/O.
#[derive(Debug)]
struct Mismatch(String);

impl std::fmt::Display for Mismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Mismatch {}

fn is_conformance(e: &Error) -> bool {
    match e {
        Error::Conformance(_) => true,
        Error::Block { source, .. } => is_conformance(source),
        _ => false,
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let verification = e.chain().any(|c| {
        c.downcast_ref::<Mismatch>().is_some() || c.downcast_ref::<Error>().is_some_and(is_conformance)
    });
    if verification {
        1
    } else {
        2
    }
}

fn inputs_to_input(b: &CorpusBlock) -> CbInput {
    CbInput { width: b.width, height: b.height, pred: b.pred, planes: b.planes.clone() }
}

fn output_path(inputs: &[PathBuf], i: usize, output: &Path, ext: &str) -> Result<PathBuf> {
    if inputs.len() == 1 {
        return Ok(output.to_path_buf());
    }
    std::fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    let stem = inputs[i].file_stem().ok_or_else(|| anyhow!("{} has no file name", inputs[i].display()))?;
    Ok(output.join(stem).with_extension(ext))
}

/// Run `f` over the inputs on `jobs` threads, keeping input order.
fn par_map<T: Send>(jobs: usize, n: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    pool.install(|| (0..n).into_par_iter().map(&f).collect())
}

struct Encoded {
    cfg: CodecConfig,
    records: Vec<BlockRecord>,
    recon: Vec<Vec<Block>>,
    stats: CodingStats,
    trace: String,
}

fn encode_corpus(corpus: &Corpus, cfg: CodecConfig, trace: bool) -> Result<Encoded> {
    let mut enc = CbEncoder::new(cfg.clone())?;
    enc.set_trace(trace);
    let mut out = Encoded { cfg, records: Vec::new(), recon: Vec::new(), stats: CodingStats::default(), trace: String::new() };
    for (i, b) in corpus.blocks.iter().enumerate() {
        let (e, events) = enc
            .encode_traced(&inputs_to_input(b))
            .map_err(|e| e.at_block(i, b.x as u32, b.y as u32))?;
        if trace {
            let _ = writeln!(out.trace, "# block {i} at ({},{}) {}x{}", b.x, b.y, b.width, b.height);
            for ev in events {
                let _ = writeln!(out.trace, "{ev}");
            }
        }
        let mut rec = e.record;
        (rec.x, rec.y) = (b.x, b.y);
        out.records.push(rec);
        out.recon.push(e.recon);
        out.stats.merge(&e.stats);
    }
    Ok(out)
}

fn cmd_encode(inputs: &[PathBuf], output: &Path, codec: &CodecArgs, out: OutputArgs, trace: Option<&Path>) -> Result<()> {
    let results = par_map(out.jobs, inputs.len(), |i| {
        let corpus = Corpus::read(&inputs[i])?;
        let cfg = codec.resolve(&corpus).with_context(|| format!("configuring {}", inputs[i].display()))?;
        let e = encode_corpus(&corpus, cfg, trace.is_some()).with_context(|| format!("encoding {}", inputs[i].display()))?;
        let path = output_path(inputs, i, output, "avtx")?;
        container_write(&path, &e.cfg, &e.records).with_context(|| format!("writing {}", path.display()))?;
        Ok((path, e))
    })?;
    let mut report = Report::new(if out.csv { Format::Csv } else { Format::Table });
    let mut total = CodingStats::default();
    for (path, e) in &results {
        report.stats(&path.display().to_string(), &e.stats, true);
        total.merge(&e.stats);
    }
    if results.len() > 1 {
        report.stats("total", &total, true);
    }
    if let Some(t) = trace {
        let text: String = results.iter().map(|(_, e)| e.trace.as_str()).collect();
        if t == Path::new("-") {
            emit(&text)?;
        } else {
            std::fs::write(t, text).with_context(|| format!("writing {}", t.display()))?;
        }
    }
    report.print()?;
    Ok(())
}

fn decode_container(cfg: &CodecConfig, records: &[BlockRecord]) -> Result<(Corpus, CodingStats)> {
    let mut dec = CbDecoder::new(cfg.clone())?;
    let mut stats = CodingStats::default();
    let mut blocks = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let d = dec.decode(r).map_err(|e| e.at_block(i, r.x as u32, r.y as u32))?;
        stats.blocks += 1;
        stats.payload_bytes += r.payload.len() as u64;
        stats.add_syntax(cfg, r.pred, &d.syntax);
        blocks.push(CorpusBlock {
            x: r.x,
            y: r.y,
            width: r.width as usize,
            height: r.height as usize,
            pred: r.pred,
            planes: d.planes,
        });
    }
    let width = blocks.iter().map(|b| b.x as usize + b.width).max().unwrap_or(0);
    let height = blocks.iter().map(|b| b.y as usize + b.height).max().unwrap_or(0);
    let corpus = Corpus {
        width: u16::try_from(width).context("frame wider than 65535")?,
        height: u16::try_from(height).context("frame taller than 65535")?,
        bit_depth: cfg.bit_depth,
        chroma: cfg.chroma,
        blocks,
    };
    Ok((corpus, stats))
}

fn cmd_decode(inputs: &[PathBuf], output: &Path, out: OutputArgs) -> Result<()> {
    let results = par_map(out.jobs, inputs.len(), |i| {
        let (cfg, records) = container_read(&inputs[i]).with_context(|| format!("reading {}", inputs[i].display()))?;
        let (corpus, stats) = decode_container(&cfg, &records).with_context(|| format!("decoding {}", inputs[i].display()))?;
        let path = output_path(inputs, i, output, "avrc")?;
        corpus.write(&path)?;
        Ok((path, stats))
    })?;
    let mut report = Report::new(if out.csv { Format::Csv } else { Format::Table });
    for (path, stats) in &results {
        report.stats(&path.display().to_string(), stats, false);
    }
    report.print()?;
    Ok(())
}

/// Full round trip of one corpus; `Err(Mismatch)` names the first bad block.
fn roundtrip_corpus(corpus: &Corpus, cfg: CodecConfig) -> Result<(CodingStats, usize)> {
    let e = encode_corpus(corpus, cfg, false)?;
    let bytes = container_to_bytes(&e.cfg, &e.records);
    let (cfg2, records) = container_from_bytes(&bytes)?;
    if cfg2 != e.cfg || records != e.records {
        return Err(Mismatch("container does not reproduce the encoded records".into()).into());
    }
    let mut dec = CbDecoder::new(cfg2)?;
    for (i, (r, b)) in records.iter().zip(&corpus.blocks).enumerate() {
        let at = format!("block {i} at ({},{}) {}x{}", b.x, b.y, b.width, b.height);
        let d = match dec.decode(r) {
            Ok(d) => d,
            Err(err) if is_conformance(&err) => {
                return Err(Mismatch(format!("{at}: {:#}", anyhow::Error::from(err))).into())
            }
            Err(err) => return Err(anyhow::Error::from(err).context(at)),
        };
        if d.digest != r.digest {
            return Err(Mismatch(format!("{at}: levels digest {:016x} != {:016x}", d.digest, r.digest)).into());
        }
        if d.planes != e.recon[i] {
            return Err(Mismatch(format!("{at}: decoder reconstruction differs from the encoder's")).into());
        }
        if e.cfg.tools.lossless && d.planes != b.planes {
            return Err(Mismatch(format!("{at}: lossless reconstruction differs from the input")).into());
        }
    }
    Ok((e.stats, bytes.len()))
}

fn cmd_roundtrip(inputs: &[PathBuf], codec: &CodecArgs, out: OutputArgs) -> Result<()> {
    let results = par_map(out.jobs, inputs.len(), |i| {
        let corpus = Corpus::read(&inputs[i])?;
        let cfg = codec.resolve(&corpus).with_context(|| format!("configuring {}", inputs[i].display()))?;
        Ok(roundtrip_corpus(&corpus, cfg))
    })?;
    let mut report = Report::new(if out.csv { Format::Csv } else { Format::Table });
    let mut first_failure = None;
    for (path, r) in inputs.iter().zip(results) {
        let name = path.display().to_string();
        match r {
            Ok((stats, bytes)) => {
                report.verdict(&name, true, &format!("{} blocks, {bytes} container bytes", stats.blocks));
                report.stats(&name, &stats, true);
            }
            Err(e) => {
                report.verdict(&name, false, &format!("{e:#}"));
                first_failure.get_or_insert(e.context(format!("round trip of {name} failed")));
            }
        }
    }
    report.print()?;
    match first_failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn cmd_dump(what: DumpWhat, seed: Option<u64>, csv: bool) -> Result<()> {
    let mut s = String::new();
    match what {
        DumpWhat::Kernels => {
            let bank = KernelBank::new(seed.unwrap_or(avtx::primary_xform::DEFAULT_SEED));
            if csv {
                s.push_str("kernel,n,shift,row,col,value\n");
            }
            for k in bank.kernels() {
                let name = k.id.name();
                if !csv {
                    let _ = writeln!(s, "# {name} n={} shift={}", k.n(), k.shift);
                }
                for r in 0..k.n() {
                    let row: Vec<i32> = (0..k.n()).map(|c| k.at(r, c)).collect();
                    if csv {
                        for (c, v) in row.iter().enumerate() {
                            let _ = writeln!(s, "{name},{},{},{r},{c},{v}", k.n(), k.shift);
                        }
                    } else {
                        let cells: Vec<String> = row.iter().map(|v| format!("{v:>4}")).collect();
                        let _ = writeln!(s, "{}", cells.join(" "));
                    }
                }
            }
        }
        DumpWhat::Mdtx => {
            const GROUPS: [&str; 3] = ["4", "8", "16"];
            s.push_str(if csv { "class,min_side,mode,t0,t1,t2,t3,t4,t5,t6\n" } else { "# class min_side mode: transform ids\n" });
            for (m, row) in mdtx_table().iter().enumerate() {
                let mode = IntraMode::ALL[m % 13];
                let ids: Vec<String> = row.iter().map(u8::to_string).collect();
                if csv {
                    let _ = writeln!(s, "{m},{},{mode},{}", GROUPS[m / 13], ids.join(","));
                } else {
                    let _ = writeln!(s, "{m:>2} {:>2} {mode:<9}: {}", GROUPS[m / 13], ids.join(" "));
                }
            }
        }
        DumpWhat::Contexts => {
            let bank = fresh_context_bank();
            s.push_str(if csv { "index,label,alphabet,para,cdf\n" } else { "# index label alphabet para cdf\n" });
            for (i, (label, e)) in bank.entries().enumerate() {
                let para = e.para().map(|p| p.to_string()).join(" ");
                let cdf: Vec<String> = e.cdf().iter().map(u16::to_string).collect();
                if csv {
                    let _ = writeln!(s, "{i},{label},{},{para},{}", e.alphabet(), cdf.join(" "));
                } else {
                    let _ = writeln!(s, "{i:>4} {label:<28} {:>2} [{para}] {}", e.alphabet(), cdf.join(" "));
                }
            }
        }
    }
    emit(&s)
}

fn cmd_memreport(csv: bool) -> Result<()> {
    let table = MemoryReport::table(&fresh_context_bank());
    if !csv {
        return emit(&table);
    }
    let mut s = String::new();
    for line in table.lines().filter(|l| !l.starts_with('#')) {
        let _ = writeln!(s, "{}", line.split_whitespace().collect::<Vec<_>>().join(","));
    }
    emit(&s)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Encode { inputs, output, codec, out, trace } => cmd_encode(&inputs, &output, &codec, out, trace.as_deref()),
        Command::Decode { inputs, output, out } => cmd_decode(&inputs, &output, out),
        Command::Roundtrip { inputs, codec, out } => cmd_roundtrip(&inputs, &codec, out),
        Command::Dump { what, seed, csv } => cmd_dump(what, seed, csv),
        Command::Memreport { csv } => cmd_memreport(csv),
        Command::Synth { output, blocks, seed, bitdepth, chroma, max_size } => {
            if !matches!(bitdepth, 8 | 10 | 12) {
                bail!("bit depth {bitdepth} not supported; use 8, 10 or 12");
            }
            let c = synthesize(&SynthParams { blocks, bit_depth: bitdepth, chroma, seed, max_size });
            c.write(&output)?;
            emit(&format!("wrote {} blocks to {}\n", c.blocks.len(), output.display()))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
