//! The `mementomap` command line.
//!
//! Exit codes: 0 success, 1 negative result (lookup miss), 2 usage error,
//! 3 data error. Diagnostics go to standard error.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{ArgAction, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::Serialize;

use crate::analytics::{archive_summary, write_depth_stats_tsv, DepthStats};
use crate::compactor::{compact, CompactionParams, CutoffTable, MeanChildModel};
use crate::config::Config;
use crate::discovery::{discover, fetch_mementomap, DiscoveryMethod, DiscoverySource, HttpTransport};
use crate::error::{Error, Result};
use crate::evaluator::{count_records, evaluate, EvalOptions, GroundTruth};
use crate::lookup::{batch_lookup, Disposition, MapFile};
use crate::profile::{generate, generate_from_urilist, FilterPolicy, GenerateOptions};
use crate::sweep::{sweep, write_summary_tsv, SweepEval, SweepOptions};
use crate::ukvs::{default_headers, now_timestamp, open_input, parse_frequency, ParseMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NEGATIVE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "mementomap", version, about = "Build, compact, query and evaluate MementoMaps")]
struct Cli {
    /// JSON config with depth caps, cutoffs, weights and filter policy.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// `text`, `json`, or a file path to receive the JSON report.
    #[arg(long, global = true, value_name = "FORMAT|PATH", default_value = "text")]
    report: String,
    /// Fail on the first malformed input line instead of skipping it.
    #[arg(long, global = true)]
    strict: bool,
    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a baseline map from CDXJ indexes or URI lists.
    Generate {
        /// Input files; `-` reads standard input.
        #[arg(required = true)]
        inputs: Vec<String>,
        /// Output map; `-` writes standard output.
        #[arg(short, long, default_value = "-")]
        output: String,
        /// Inputs are URI lists, one URI per line.
        #[arg(long)]
        urilist: bool,
        /// Count every capture regardless of status or MIME type.
        #[arg(long)]
        no_filter: bool,
        /// Count revisit records as captures.
        #[arg(long)]
        include_revisits: bool,
        /// Input keys are already sorted.
        #[arg(long)]
        presorted: bool,
        /// Gzip the output (implied by a `.gz` output name).
        #[arg(long)]
        gzip: bool,
    },
    /// Roll dense sub-trees of a map up into wildcard keys.
    Compact {
        /// Sorted input map; `-` reads standard input.
        input: String,
        /// Output map; must be a seekable file.
        output: PathBuf,
        /// Host weight scaling the fitted host cutoffs.
        #[arg(long)]
        wh: Option<f64>,
        /// Path weight scaling the fitted path cutoffs.
        #[arg(long)]
        wp: Option<f64>,
        /// JSON cutoff table; overrides weights.
        #[arg(long, value_name = "PATH")]
        cutoffs: Option<PathBuf>,
        /// Map whose depth statistics calibrate cutoffs: `self` or a path.
        #[arg(long, default_value = "self", value_name = "self|PATH")]
        stats_from: String,
        /// Write the cutoff table used to this path.
        #[arg(long, value_name = "PATH")]
        emit_cutoffs: Option<PathBuf>,
    },
    /// Look up one URI, or a file of URIs with --batch.
    Lookup {
        /// Uncompressed map file.
        map: PathBuf,
        #[arg(required_unless_present = "batch", conflicts_with = "batch")]
        uri: Option<String>,
        /// File of URIs, one per line; `-` reads standard input.
        #[arg(long, value_name = "PATH")]
        batch: Option<String>,
    },
    /// Look up every URI of a file; prints TSV.
    BatchLookup {
        /// Uncompressed map file.
        map: PathBuf,
        /// File of URIs, one per line; `-` reads standard input.
        uris: String,
    },
    /// Per-depth statistics of a map or sorted key file.
    Stats {
        /// Map or sorted key file; `-` reads standard input.
        input: String,
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
        /// Archive-level summary of URI-M counts instead of depth rows.
        #[arg(long)]
        summary: bool,
    },
    /// Score a map against a lookup log and ground truth.
    Eval {
        /// Uncompressed map file.
        map: PathBuf,
        /// Lookup log, one URI per line.
        #[arg(long)]
        log: String,
        /// URI list or baseline map.
        #[arg(long)]
        truth: String,
        /// Score every log line instead of unique keys.
        #[arg(long)]
        raw: bool,
        /// Denominator of relative cost; defaults to the truth's URI-R count.
        #[arg(long)]
        urir_count: Option<u64>,
    },
    /// Discover and download an archive's map.
    Fetch {
        /// Archive base URI, or the map URI with --direct.
        archive_uri: String,
        /// Destination file; `-` writes standard output.
        #[arg(short, long)]
        output: String,
        /// Treat ARCHIVE_URI as the map itself and skip discovery.
        #[arg(long)]
        direct: bool,
        /// Give up after this many pages.
        #[arg(long, default_value_t = crate::discovery::DEFAULT_MAX_PAGES)]
        max_pages: usize,
    },
    /// Compact along chained weight pairs and summarize each result.
    Sweep {
        /// Baseline map.
        input: PathBuf,
        /// Directory receiving one map per weight pair and summary.tsv.
        outdir: PathBuf,
        /// Comma-separated descending weights.
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        /// Lookup log used to score each map.
        #[arg(long, requires = "truth")]
        log: Option<String>,
        /// URI list or baseline map holding the true holdings.
        #[arg(long, requires = "log")]
        truth: Option<String>,
        /// Map whose depth statistics calibrate cutoffs; defaults to INPUT.
        #[arg(long, value_name = "PATH")]
        stats_from: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Tsv,
    Json,
}

enum Report {
    Text,
    Json,
    File(PathBuf),
}

struct Ctx {
    config: Config,
    report: Report,
    mode: ParseMode,
}

impl Ctx {
    /// Emits `value` as requested; `text` is the human rendering.
    fn emit<T: Serialize>(&self, value: &T, text: &str, to_stderr: bool) -> Result<()> {
        let json = || serde_json::to_string(value).map_err(|e| Error::Config(e.to_string()));
        let line = match &self.report {
            Report::Text => text.trim_end().to_owned(),
            Report::Json => json()?,
            Report::File(p) => {
                fs::write(p, json()? + "\n")?;
                text.trim_end().to_owned()
            }
        };
        if line.is_empty() {
            return Ok(());
        }
        if to_stderr {
            eprintln!("{line}");
        } else {
            let mut out = io::stdout().lock();
            writeln!(out, "{line}")?;
            out.flush()?;
        }
        Ok(())
    }

    fn json(&self) -> bool {
        matches!(self.report, Report::Json)
    }
}

/// Maps an error to its exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::SinkNotSeekable | Error::GzipNotSeekable(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn no_color() -> bool {
    std::env::var_os("NO_COLOR").is_some_and(|v| !v.is_empty())
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let mut builder = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level));
    if no_color() {
        builder.write_style(env_logger::WriteStyle::Never);
    }
    let _ = builder.format_timestamp(None).try_init();
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut cmd = Cli::command();
    if no_color() {
        cmd = cmd.color(clap::ColorChoice::Never);
    }
    let cli = match cmd.try_get_matches_from(args).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("mementomap: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: Cli) -> Result<i32> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let report = match cli.report.as_str() {
        "text" => Report::Text,
        "json" => Report::Json,
        p => Report::File(PathBuf::from(p)),
    };
    let ctx = Ctx {
        config,
        report,
        mode: if cli.strict { ParseMode::Strict } else { ParseMode::Lenient },
    };
    match cli.command {
        Command::Generate {
            inputs,
            output,
            urilist,
            no_filter,
            include_revisits,
            presorted,
            gzip,
        } => cmd_generate(&ctx, &inputs, &output, urilist, no_filter, include_revisits, presorted, gzip),
        Command::Compact {
            input,
            output,
            wh,
            wp,
            cutoffs,
            stats_from,
            emit_cutoffs,
        } => cmd_compact(&ctx, &input, &output, wh, wp, cutoffs.as_deref(), &stats_from, emit_cutoffs.as_deref()),
        Command::Lookup { map, uri, batch } => match (uri, batch) {
            (_, Some(file)) => cmd_batch(&ctx, &map, &file),
            (Some(uri), None) => cmd_lookup(&ctx, &map, &uri),
            (None, None) => Err(Error::Config("missing URI".into())),
        },
        Command::BatchLookup { map, uris } => cmd_batch(&ctx, &map, &uris),
        Command::Stats { input, format, summary } => cmd_stats(&ctx, &input, format, summary),
        Command::Eval {
            map,
            log,
            truth,
            raw,
            urir_count,
        } => cmd_eval(&ctx, &map, &log, &truth, raw, urir_count),
        Command::Fetch {
            archive_uri,
            output,
            direct,
            max_pages,
        } => cmd_fetch(&ctx, &archive_uri, &output, direct, max_pages),
        Command::Sweep {
            input,
            outdir,
            weights,
            log,
            truth,
            stats_from,
        } => cmd_sweep(&ctx, &input, &outdir, weights, log.zip(truth), stats_from.as_deref()),
    }
}

fn open_output(path: &str) -> Result<Box<dyn Write>> {
    Ok(if path == "-" {
        Box::new(BufWriter::new(io::stdout().lock()))
    } else {
        Box::new(BufWriter::new(File::create(path)?))
    })
}

fn read_lines(path: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for line in open_input(path)?.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(line.trim().to_owned());
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_generate(
    ctx: &Ctx,
    inputs: &[String],
    output: &str,
    urilist: bool,
    no_filter: bool,
    include_revisits: bool,
    presorted: bool,
    gzip: bool,
) -> Result<i32> {
    let mut policy = if no_filter { FilterPolicy::none() } else { ctx.config.filter.clone() };
    policy.include_revisits |= include_revisits;
    let opts = GenerateOptions {
        policy,
        mode: ctx.mode,
        headers: default_headers(&now_timestamp()),
        sort_buffer: ctx.config.sort_buffer,
        presorted,
    };
    let mut input: Box<dyn BufRead> = Box::new(io::empty());
    for path in inputs {
        input = Box::new(Read::chain(input, open_input(path)?));
    }
    let sink = open_output(output)?;
    let sink: Box<dyn Write> = if gzip || output.ends_with(".gz") {
        Box::new(GzEncoder::new(sink, Compression::default()))
    } else {
        sink
    };
    let mut sink = sink;
    let report = if urilist {
        generate_from_urilist(input, &mut sink, &opts)?
    } else {
        generate(input, &mut sink, &opts)?
    };
    sink.flush()?;
    drop(sink);
    let text = format!(
        "lines_in={} kept={} malformed={} unique_hxpx={} urim_total={}",
        report.lines_in, report.lines_kept, report.lines_malformed, report.unique_hxpx, report.urim_total
    );
    ctx.emit(&report, &text, output == "-" || matches!(ctx.report, Report::Text))?;
    Ok(EXIT_OK)
}

/// Cutoffs from an explicit table, the config, or a fit scaled by weights.
fn resolve_params(
    ctx: &Ctx,
    wh: Option<f64>,
    wp: Option<f64>,
    cutoffs: Option<&Path>,
    stats_source: impl FnOnce() -> Result<Vec<crate::analytics::DepthStatsRow>>,
) -> Result<CompactionParams> {
    let table = match cutoffs {
        Some(p) => {
            Some(CutoffTable::from_json(&fs::read_to_string(p)?)?)
        }
        None => ctx.config.cutoffs.clone(),
    };
    if let Some(t) = table {
        return Ok(ctx.config.apply(CompactionParams::from_table(&t)));
    }
    let (Some(wh), Some(wp)) = (wh, wp) else {
        return Err(Error::Config("compact needs --wh and --wp, or a cutoff table".into()));
    };
    if !(wh >= 0.0 && wp >= 0.0) {
        return Err(Error::Config(format!("weights must be non-negative, got wh={wh} wp={wp}")));
    }
    let model = MeanChildModel::fit(&stats_source()?)?;
    Ok(ctx.config.apply(model.params(wh, wp)))
}

fn depth_stats_of(ctx: &Ctx, path: &str) -> Result<Vec<crate::analytics::DepthStatsRow>> {
    let mut stats = DepthStats::new(ctx.config.max_host_depth, ctx.config.max_path_depth.saturating_sub(1));
    scan_keys(path, ctx.mode, |key, _| stats.push(key))?;
    Ok(stats.finish())
}

/// Visits the data lines of a map or key file: key plus optional URI-M count.
fn scan_keys(path: &str, mode: ParseMode, mut f: impl FnMut(&str, Option<u64>) -> Result<()>) -> Result<()> {
    for (n, line) in open_input(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('!') {
            continue;
        }
        let mut fields = line.split_ascii_whitespace();
        let key = fields.next().unwrap_or("");
        let count = match fields.next().map(parse_frequency) {
            None => None,
            Some(Ok(f)) => Some(f.urim.value),
            Some(Err(e)) if mode == ParseMode::Strict => {
                return Err(Error::MalformedLine {
                    line: n as u64 + 1,
                    reason: e.to_string(),
                })
            }
            Some(Err(e)) => {
                log::debug!("line {}: {e}", n + 1);
                continue;
            }
        };
        f(key, count)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_compact(
    ctx: &Ctx,
    input: &str,
    output: &Path,
    wh: Option<f64>,
    wp: Option<f64>,
    cutoffs: Option<&Path>,
    stats_from: &str,
    emit_cutoffs: Option<&Path>,
) -> Result<i32> {
    if output.as_os_str() == "-" {
        return Err(Error::SinkNotSeekable);
    }
    if input != "-" && output.exists() && fs::canonicalize(input)? == fs::canonicalize(output)? {
        return Err(Error::Config("output must differ from input".into()));
    }
    let stats_path = if stats_from == "self" { input } else { stats_from };
    let params = resolve_params(ctx, wh, wp, cutoffs, || {
        if stats_path == "-" {
            return Err(Error::Config("--stats-from self needs a file input; pass --stats-from PATH".into()));
        }
        depth_stats_of(ctx, stats_path)
    })?;
    if let Some(p) = emit_cutoffs {
        fs::write(p, params.to_table().to_json() + "\n")?;
    }
    let sink = File::options().read(true).write(true).create(true).truncate(false).open(output)?;
    let report = compact(open_input(input)?, BufWriter::new(sink), &params)?;
    let text = format!(
        "Lines in\t{}\nLines out\t{}\nRollups\t{}\nSize\t{}\nTime\t{:.3}s",
        report.lines_in, report.lines_out, report.rollups, report.bytes_out, report.wall_seconds
    );
    ctx.emit(&report, &text, false)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct LookupOutput<'a> {
    uri: &'a str,
    disposition: Disposition,
    matched_key: Option<&'a str>,
    frequency: Option<String>,
    probes: u64,
}

fn cmd_lookup(ctx: &Ctx, map: &Path, uri: &str) -> Result<i32> {
    let mut m = MapFile::open(map)?.with_mode(ctx.mode);
    let result = m.lookup(uri)?;
    let disposition = result.as_ref().map_or(Disposition::AbsentNoMatch, |r| r.disposition());
    let out = LookupOutput {
        uri,
        disposition,
        matched_key: result.as_ref().map(|r| r.matched_key.as_str()),
        frequency: result.as_ref().map(|r| r.frequency.to_string()),
        probes: m.probes(),
    };
    let text = format!(
        "{}\t{}\t{}",
        disposition,
        out.matched_key.unwrap_or(""),
        out.frequency.as_deref().unwrap_or("")
    );
    ctx.emit(&out, &text, false)?;
    Ok(if disposition == Disposition::Present { EXIT_OK } else { EXIT_NEGATIVE })
}

fn cmd_batch(ctx: &Ctx, map: &Path, uris: &str) -> Result<i32> {
    let mut m = MapFile::open(map)?.with_mode(ctx.mode);
    let lines = open_input(uris)?.lines().collect::<io::Result<Vec<_>>>()?;
    let lines = lines.into_iter().filter(|l| !l.trim().is_empty());
    let mut out = BufWriter::new(io::stdout().lock());
    for item in batch_lookup(&mut m, lines) {
        if ctx.json() {
            writeln!(out, "{}", serde_json::to_string(&item).map_err(|e| Error::Config(e.to_string()))?)?;
        } else {
            writeln!(out, "{}", item.to_tsv())?;
        }
    }
    out.flush()?;
    Ok(EXIT_OK)
}

fn cmd_stats(ctx: &Ctx, input: &str, format: Format, summary: bool) -> Result<i32> {
    let json = format == Format::Json || ctx.json();
    let mut out = BufWriter::new(io::stdout().lock());
    if summary {
        let mut counts = Vec::new();
        scan_keys(input, ctx.mode, |_, c| {
            counts.push(c.ok_or_else(|| Error::MalformedFrequency("summary needs a map with frequencies".into()))?);
            Ok(())
        })?;
        let s = archive_summary(counts)?;
        if json {
            writeln!(out, "{}", serde_json::to_string(&s).map_err(|e| Error::Config(e.to_string()))?)?;
        } else {
            writeln!(out, "{s}")?;
        }
    } else {
        let rows = depth_stats_of(ctx, input)?;
        if json {
            writeln!(out, "{}", serde_json::to_string(&rows).map_err(|e| Error::Config(e.to_string()))?)?;
        } else {
            write_depth_stats_tsv(&rows, &mut out)?;
        }
    }
    out.flush()?;
    Ok(EXIT_OK)
}

/// A URI list unless its first data line looks like a map record.
fn load_truth(path: &str) -> Result<GroundTruth> {
    let mut reader = open_input(path)?;
    let mut first = String::new();
    let mut head = Vec::new();
    while reader.read_line(&mut first)? > 0 {
        head.push(first.clone());
        if !first.trim().is_empty() && !first.starts_with('!') {
            break;
        }
        first.clear();
    }
    let is_uri = first.contains("://");
    let joined = io::Cursor::new(head.concat()).chain(reader);
    if is_uri {
        GroundTruth::from_uris(joined)
    } else {
        GroundTruth::from_map(joined)
    }
}

fn cmd_eval(ctx: &Ctx, map: &Path, log: &str, truth: &str, raw: bool, urir_count: Option<u64>) -> Result<i32> {
    let mut truth = load_truth(truth)?;
    if let Some(n) = urir_count {
        truth.urir_count = n;
    }
    let keys = count_records(BufReader::new(File::open(map)?))?;
    let mut m = MapFile::open(map)?.with_mode(ctx.mode);
    let log = read_lines(log)?;
    let report = evaluate(&mut m, keys, &log, &truth, EvalOptions { raw })?;
    ctx.emit(&report, &report.to_string(), false)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct FetchOutput {
    source: DiscoverySource,
    #[serde(flatten)]
    report: crate::discovery::FetchReport,
}

fn cmd_fetch(ctx: &Ctx, archive: &str, output: &str, direct: bool, max_pages: usize) -> Result<i32> {
    let transport = HttpTransport::default();
    let source = if direct {
        DiscoverySource {
            archive_base: archive.to_owned(),
            resolved_map_uri: archive.to_owned(),
            method: DiscoveryMethod::WellKnown,
            anchor: None,
        }
    } else {
        discover(archive, &transport)?
    };
    log::info!("fetching {} ({:?})", source.resolved_map_uri, source.method);
    let sink = open_output(output)?;
    let report = match fetch_mementomap(&source.resolved_map_uri, &transport, sink, max_pages) {
        Ok(r) => r,
        Err(e) => {
            if output != "-" {
                let _ = fs::remove_file(output);
            }
            return Err(e);
        }
    };
    let text = format!(
        "{} -> {}: {} records, {} pages, {} bytes",
        source.resolved_map_uri, output, report.records, report.pages, report.bytes
    );
    ctx.emit(&FetchOutput { source, report }, &text, output == "-")?;
    Ok(EXIT_OK)
}

fn cmd_sweep(
    ctx: &Ctx,
    input: &Path,
    outdir: &Path,
    weights: Option<Vec<f64>>,
    eval: Option<(String, String)>,
    stats_from: Option<&Path>,
) -> Result<i32> {
    let weights = weights.unwrap_or_else(|| ctx.config.weights.clone());
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::Config("weights must be finite and non-negative".into()));
    }
    let stats = depth_stats_of(ctx, &stats_from.unwrap_or(input).to_string_lossy())?;
    let eval = match eval {
        Some((log, truth)) => Some(SweepEval {
            log: read_lines(&log)?,
            truth: load_truth(&truth)?,
        }),
        None => None,
    };
    let opts = SweepOptions {
        weights,
        model: Some(MeanChildModel::fit(&stats)?),
        eval,
    };
    let rows = sweep(input, outdir, &opts)?;
    let mut tsv = Vec::new();
    write_summary_tsv(&rows, &mut tsv)?;
    fs::write(outdir.join("summary.tsv"), &tsv)?;
    ctx.emit(&rows, &String::from_utf8_lossy(&tsv), false)?;
    Ok(EXIT_OK)
}
