use std::io::{self, BufReader, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kpcc::corpus::build_corpus;
use kpcc::pipeline::{bench, decode_file, describe, encode_file, DecodeConfig, EncodeConfig};
use kpcc::pointcloud::{load_ply, save_ply};
use kpcc::probmodel::bridge::{serve, ServeOptions};
use kpcc::probmodel::{FixedSchedule, ModelSpec};
use kpcc::synthgen::{gen, Shape, ShapeKind};
use kpcc::tokenmap::{default_codebook, DEFAULT_BASE_ID, DEFAULT_CHUNK_LEN};
use kpcc::{Error, KMode, Result};

#[derive(Parser)]
#[command(name = "kpcc", version, about = "Lossless point cloud geometry codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress a PLY point cloud
    Encode {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 12)]
        clusters: usize,
        #[arg(long, default_value = "octree8")]
        k_mode: KMode,
        /// uniform | adaptive[:order] | transformer:<weights> | bridge[:command]
        #[arg(long, default_value = "adaptive")]
        model: ModelSpec,
        #[arg(long, default_value_t = DEFAULT_CHUNK_LEN)]
        chunk: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// 0 uses every core
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Decode in-process and compare before writing
        #[arg(long)]
        verify: bool,
        #[arg(long)]
        codebook: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<usize>,
    },
    /// Decompress to a PLY point cloud
    Decode {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Needed for transformer files or to override the inferred model
        #[arg(long)]
        model: Option<ModelSpec>,
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long)]
        codebook: Option<PathBuf>,
    },
    /// Tabulate bits per point for several models
    Bench {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        models: Vec<ModelSpec>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = 12)]
        clusters: usize,
        #[arg(long, default_value = "octree8")]
        k_mode: KMode,
        #[arg(long, default_value_t = DEFAULT_CHUNK_LEN)]
        chunk: usize,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Print a compressed file's header and layout
    Info { file: PathBuf },
    /// Write a synthetic point cloud
    Gen {
        /// plane | sphere | box | boxes | noise | figure
        #[arg(long)]
        shape: ShapeKind,
        #[arg(long, default_value_t = 8)]
        depth: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sphere radius, plane level, or box/noise count
        #[arg(long)]
        size: Option<u32>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Export training tokens for a set of PLY files
    Corpus {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 12)]
        clusters: usize,
        #[arg(long, default_value = "octree8")]
        k_mode: KMode,
        #[arg(long, default_value_t = DEFAULT_CHUNK_LEN)]
        chunk: usize,
    },
    /// Scripted model peer speaking the bridge protocol on stdin/stdout
    #[command(hide = true)]
    MockBridge {
        #[arg(long, default_value_t = 258)]
        vocab: usize,
        /// Exit abruptly after answering this many requests
        #[arg(long)]
        die_after: Option<usize>,
    },
}

fn shape_with_size(kind: ShapeKind, depth: u8, size: Option<u32>) -> Shape {
    let shape = kind.default_shape(depth);
    let Some(n) = size else { return shape };
    match shape {
        Shape::Plane { axis, .. } => Shape::Plane { axis, level: n },
        Shape::Sphere { .. } => Shape::Sphere { radius: n },
        Shape::Box { .. } => {
            let hi = n.saturating_sub(1);
            Shape::Box {
                min: [0; 3],
                max: [hi; 3],
            }
        }
        Shape::BoxUnion { .. } => Shape::BoxUnion { count: n as usize },
        Shape::Noise { .. } => Shape::Noise { count: n as usize },
        Shape::Figure => Shape::Figure,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Encode {
            input,
            output,
            clusters,
            k_mode,
            model,
            chunk,
            seed,
            threads,
            verify,
            codebook,
            vocab,
        } => {
            let cfg = EncodeConfig {
                num_clusters: clusters,
                k_mode,
                max_chunk_len: chunk,
                model,
                seed,
                threads,
                verify,
                codebook,
                vocab_size: vocab,
            };
            let r = encode_file(&input, &output, &cfg)?;
            println!(
                "{} points, {} clusters, {} chunks -> {} bytes, {:.4} bpp in {:.2?}",
                r.points, r.clusters, r.chunks, r.bytes, r.bpp, r.wall_time
            );
        }
        Command::Decode {
            input,
            output,
            model,
            threads,
            codebook,
        } => {
            let cfg = DecodeConfig {
                model,
                threads,
                codebook,
            };
            let r = decode_file(&input, &output, &cfg)?;
            println!("{} points, {} clusters in {:.2?}", r.points, r.clusters, r.wall_time);
        }
        Command::Bench {
            inputs,
            models,
            csv,
            clusters,
            k_mode,
            chunk,
            threads,
        } => {
            let cfg = EncodeConfig {
                num_clusters: clusters,
                k_mode,
                max_chunk_len: chunk,
                threads,
                ..EncodeConfig::default()
            };
            let table = bench(&inputs, &models, &cfg)?;
            print!("{}", table.to_text());
            if let Some(path) = csv {
                std::fs::write(path, table.to_csv())?;
            }
        }
        Command::Info { file } => print!("{}", describe(&std::fs::read(file)?)?),
        Command::Gen {
            shape,
            depth,
            seed,
            size,
            output,
        } => {
            let pc = gen(&shape_with_size(shape, depth, size), depth, seed)?;
            save_ply(&pc, &output)?;
            println!("{} points at depth {depth}", pc.len());
        }
        Command::Corpus {
            inputs,
            output,
            clusters,
            k_mode,
            chunk,
        } => {
            let clouds = inputs.iter().map(load_ply).collect::<Result<Vec<_>>>()?;
            let cb = default_codebook(k_mode.k(), DEFAULT_BASE_ID)?;
            let corpus = build_corpus(&clouds, clusters, k_mode, chunk, &cb)?;
            std::fs::write(&output, corpus.to_bytes())?;
            println!("{} chunks, vocabulary {}", corpus.chunks.len(), corpus.vocab_size);
        }
        Command::MockBridge { vocab, die_after } => {
            let mut model = FixedSchedule::demo(vocab);
            let stdin = io::stdin();
            let stdout = io::stdout();
            serve(
                &mut model,
                &mut BufReader::new(stdin.lock()),
                &mut BufWriter::new(stdout.lock()),
                ServeOptions {
                    max_requests: die_after,
                },
            )?;
            if die_after.is_some() {
                // Simulate a crash rather than a clean shutdown.
                std::process::exit(3);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kpcc: {e}");
            if matches!(e.root(), Error::Usage(_) | Error::Parameter(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
