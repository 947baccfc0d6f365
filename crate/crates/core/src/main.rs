// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied. See the
// License for the specific language governing permissions and limitations
// under the License.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ovcomm::belonging::{Cover, CoverDocument, LogisticParams};
use ovcomm::farm::speedup::MeasureError;
use ovcomm::farm::{
    measure_speedup, run_worker, BackendError, EvalContext, Farm, FitnessBackend, SequentialBackend,
    Transport,
};
use ovcomm::ga::{run, GaConfig, GaError};
use ovcomm::graph::DirectedGraph;
use ovcomm::qov::qov;
use ovcomm::report::{self, DetectReport, InputDescriptor, DATASETS, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "ovcomm", version, about = "Overlapping community detection on directed graphs")]
struct Cli {
    /// Base seed; run k of `--runs` uses seed + k.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker count (detect; 0 = sequential) or comma list (speedup).
    #[arg(long, global = true, value_delimiter = ',')]
    workers: Option<Vec<usize>>,
    #[arg(long, global = true, default_value_t = 1)]
    runs: usize,
    #[arg(long, global = true, default_value_t = 8)]
    max_communities: usize,
    #[arg(long, global = true, default_value_t = 30.0)]
    logistic_p: f64,
    #[arg(long, global = true)]
    max_epochs: Option<usize>,
    /// Omit the timestamp so output is reproducible byte for byte.
    #[arg(long, global = true)]
    deterministic: bool,
    #[arg(long, global = true, default_value_t = report::DEFAULT_OVERLAP_THRESHOLD)]
    overlap_threshold: f64,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Worker transport: pipe, tcp or inprocess.
    #[arg(long, global = true, default_value = "pipe")]
    transport: Transport,
    /// Recompute every fitness this many times.
    #[arg(long, global = true, default_value_t = 1)]
    busywork: u32,
    /// Write to this file instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Run as a farm worker.
    #[arg(long, requires = "connect")]
    worker: bool,
    /// Worker endpoint: `stdio` for pipes, `host:port` for tcp.
    #[arg(long)]
    connect: Option<String>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Search for the best cover and print a report.
    Detect { graph: String },
    /// Score a cover.
    Qov { graph: String, cover: PathBuf },
    /// Time full runs over worker counts.
    Speedup {
        graph: String,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
    },
    /// Render a cover as Graphviz DOT.
    ExportDot { graph: String, cover: PathBuf },
    /// List bundled datasets with checksums.
    Datasets,
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Backend(String),
    Measurement(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Input(_) => 2,
            Self::Backend(_) => 3,
            Self::Measurement(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Input(m) | Self::Backend(m) | Self::Measurement(m) => m,
        }
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        Self::Backend(e.to_string())
    }
}

impl From<GaError> for CliError {
    fn from(e: GaError) -> Self {
        match e {
            GaError::Backend(b) => b.into(),
            other => Self::Input(other.to_string()),
        }
    }
}

impl From<MeasureError> for CliError {
    fn from(e: MeasureError) -> Self {
        match e {
            MeasureError::Backend(b) | MeasureError::Ga(GaError::Backend(b)) => b.into(),
            MeasureError::InvalidWorkers(_) | MeasureError::TooFewRepetitions(_) | MeasureError::Ga(_) => {
                Self::Input(e.to_string())
            }
            MeasureError::EpochMismatch { .. } | MeasureError::ZeroDuration { .. } => Self::Measurement(e.to_string()),
        }
    }
}

fn load_graph(spec: &str) -> Result<DirectedGraph, CliError> {
    let path = Path::new(spec);
    if !path.exists() {
        if let Some(d) = report::dataset(spec) {
            return Ok(d.graph());
        }
    }
    DirectedGraph::load(path).map_err(|e| CliError::Input(format!("{spec}: {e}")))
}

fn load_cover(path: &Path, g: &DirectedGraph) -> Result<Cover, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let doc: CoverDocument =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let cover = doc.to_cover().map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if cover.node_count() != g.node_count() {
        return Err(CliError::Input(format!(
            "cover has {} rows but the graph has {} nodes",
            cover.node_count(),
            g.node_count()
        )));
    }
    Ok(cover)
}

fn require_arcs(spec: &str, g: &DirectedGraph) -> Result<(), CliError> {
    if g.link_count() == 0 {
        return Err(CliError::Input(format!("{spec}: graph has no arcs")));
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

impl Cli {
    fn params(&self) -> Result<LogisticParams, CliError> {
        LogisticParams::new(self.logistic_p).map_err(|e| CliError::Input(e.to_string()))
    }

    fn ga_config(&self, seed: u64) -> Result<GaConfig, CliError> {
        let base = GaConfig::default();
        let cfg = GaConfig {
            seed,
            max_communities: self.max_communities,
            max_epochs: self.max_epochs.unwrap_or(base.max_epochs),
            logistic: self.params()?,
            ..base
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn backend(&self, workers: usize, ctx: &EvalContext) -> Result<Box<dyn FitnessBackend>, BackendError> {
        if workers == 0 {
            Ok(Box::new(SequentialBackend::new(ctx.clone())))
        } else {
            Ok(Box::new(Farm::launch(self.transport, workers, ctx, None)?))
        }
    }

    fn emit(&self, text: &str) -> Result<(), CliError> {
        match &self.output {
            Some(path) => std::fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display()))),
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(text.as_bytes())
                    .and_then(|_| out.flush())
                    .map_err(|e| CliError::Input(e.to_string()))
            }
        }
    }

    fn detect(&self, spec: &str) -> Result<(), CliError> {
        let g = load_graph(spec)?;
        require_arcs(spec, &g)?;
        let workers = match self.workers.as_deref() {
            None => 0,
            Some([w]) => *w,
            Some(_) => return Err(CliError::Input("detect takes a single --workers value".into())),
        };
        if self.runs == 0 {
            return Err(CliError::Input("--runs must be at least 1".into()));
        }
        let ctx = EvalContext::new(g.clone(), self.params()?).with_busywork(self.busywork);
        let mut backend = self.backend(workers, &ctx)?;
        let mut results = Vec::with_capacity(self.runs);
        for k in 0..self.runs as u64 {
            let cfg = self.ga_config(self.seed.wrapping_add(k))?;
            results.push(run(&g, &cfg, backend.as_mut())?);
        }
        let timestamp = (!self.deterministic)
            .then(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()));
        let rep = DetectReport::new(
            InputDescriptor::new(spec, &g),
            &g,
            &results,
            workers,
            self.overlap_threshold,
            timestamp,
        );
        match self.format.unwrap_or(Format::Json) {
            Format::Json => self.emit(&to_json(&rep)),
            Format::Csv => self.emit(&rep.to_csv()),
        }
    }

    fn qov(&self, spec: &str, cover_path: &Path) -> Result<(), CliError> {
        let g = load_graph(spec)?;
        let cover = load_cover(cover_path, &g)?;
        let q = qov(&g, &cover, self.params()?).map_err(|e| CliError::Input(e.to_string()))?;
        match self.format.unwrap_or(Format::Json) {
            Format::Json => {
                #[derive(Serialize)]
                struct Doc<'a> {
                    schema_version: u32,
                    input: InputDescriptor,
                    logistic_p: f64,
                    total: f64,
                    per_community: &'a [f64],
                }
                self.emit(&to_json(&Doc {
                    schema_version: SCHEMA_VERSION,
                    input: InputDescriptor::new(spec, &g),
                    logistic_p: self.logistic_p,
                    total: q.total,
                    per_community: &q.per_community,
                }))
            }
            Format::Csv => {
                let mut out = String::from("community,contribution\n");
                for (c, v) in q.per_community.iter().enumerate() {
                    writeln!(out, "{c},{v}").unwrap();
                }
                writeln!(out, "total,{}", q.total).unwrap();
                self.emit(&out)
            }
        }
    }

    fn speedup(&self, spec: &str, repetitions: usize) -> Result<(), CliError> {
        let g = load_graph(spec)?;
        require_arcs(spec, &g)?;
        let workers = self.workers.clone().unwrap_or_else(|| vec![1, 2, 3, 4]);
        let cfg = self.ga_config(self.seed)?;
        let ctx = EvalContext::new(g.clone(), cfg.logistic).with_busywork(self.busywork);
        let record = measure_speedup(&g, &cfg, &workers, repetitions, |w| self.backend(w, &ctx))?;
        match self.format.unwrap_or(Format::Csv) {
            Format::Csv => self.emit(&record.to_csv()),
            Format::Json => self.emit(&to_json(&record)),
        }
    }

    fn export_dot(&self, spec: &str, cover_path: &Path) -> Result<(), CliError> {
        let g = load_graph(spec)?;
        let cover = load_cover(cover_path, &g)?;
        self.emit(&report::export_dot(&g, &cover, self.overlap_threshold))
    }

    fn datasets(&self) -> Result<(), CliError> {
        let infos: Vec<_> = DATASETS.iter().map(|d| d.info()).collect();
        match self.format.unwrap_or(Format::Json) {
            Format::Json => self.emit(&to_json(&infos)),
            Format::Csv => {
                let mut out = String::from("name,file,nodes,links,bytes,sha256\n");
                for d in &infos {
                    writeln!(out, "{},{},{},{},{},{}", d.name, d.file, d.nodes, d.links, d.bytes, d.sha256).unwrap();
                }
                self.emit(&out)
            }
        }
    }

    fn dispatch(&self) -> Result<(), CliError> {
        if self.worker {
            let connect = self.connect.as_deref().unwrap_or("stdio");
            return run_worker(self.transport, connect).map_err(CliError::from);
        }
        match &self.command {
            Some(Command::Detect { graph }) => self.detect(graph),
            Some(Command::Qov { graph, cover }) => self.qov(graph, cover),
            Some(Command::Speedup { graph, repetitions }) => self.speedup(graph, *repetitions),
            Some(Command::ExportDot { graph, cover }) => self.export_dot(graph, cover),
            Some(Command::Datasets) => self.datasets(),
            None => Err(CliError::Input("no subcommand given; see --help".into())),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.dispatch() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ovcomm: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
