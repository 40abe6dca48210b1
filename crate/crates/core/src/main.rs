//! Command-line front end: pattern inspection, toy forward passes, KV-cache
//! reports, MoE routing, quantization, parameter accounting, the chat
//! template, and the scaling-curve data emitter.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation error.

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use phi3lab::archconfig::{self, bundled, ChatTurn, LoadedConfig};
use phi3lab::attention::{
    blocksparse_attention, masked_attention_per_head, per_head_token_masks, AttnTensors, Scalar,
};
use phi3lab::kvcache::{kv_savings, paged_footprint, retained_blocks};
use phi3lab::moe::{route_top2, RoutingDecision};
use phi3lab::quant::{dequantize, footprint, quantize_int4};
use phi3lab::scaling::{bundled_entries, scaling_points, BenchEntry};
use phi3lab::sparsity::{
    assign_offsets, block_mask, cell_kind, CellKind, SparsePattern, TokenMask,
};

const DEFAULT_SEED: u64 = 42;

fn default_seed() -> u64 {
    std::env::var("PHI3LAB_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(DEFAULT_SEED)
}

#[derive(Parser)]
#[command(name = "phi3lab", version, about = "Phi-3 family architecture lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct PatternArgs {
    #[arg(long, default_value_t = 2)]
    local_blocks: usize,
    #[arg(long, default_value_t = 3)]
    stride: usize,
    #[arg(long, default_value_t = 0)]
    offset: usize,
    #[arg(long, default_value_t = 64)]
    block_size: usize,
    #[arg(long, default_value_t = 8)]
    blocks: usize,
    /// Emit {allowed: run-length encoded rows} instead of the ASCII grid.
    #[arg(long)]
    json: bool,
    /// Also write the mask as a binary PGM image.
    #[arg(long)]
    pgm: Option<PathBuf>,
}

#[derive(Args)]
struct ForwardArgs {
    /// Bundled config name or path to a JSON config file.
    #[arg(long, default_value = "phi-3-small")]
    config: String,
    #[arg(long, default_value_t = 64)]
    seq: usize,
    #[arg(long, default_value_t = 8)]
    block_size: usize,
    #[arg(long, default_value_t = 2)]
    local_blocks: usize,
    #[arg(long, default_value_t = 3)]
    stride: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Oracle precision for the comparison column.
    #[arg(long, default_value = "single", value_parser = ["single", "double"])]
    oracle: String,
}

#[derive(Args)]
struct KvReportArgs {
    #[arg(long, default_value_t = 3)]
    stride: usize,
    #[arg(long, default_value_t = 2)]
    local_blocks: usize,
    #[arg(long, default_value_t = 64)]
    block_size: usize,
    #[arg(long, default_value_t = 96)]
    blocks: usize,
    #[arg(long, default_value_t = 16)]
    page_size: usize,
    #[arg(long, default_value_t = 32)]
    heads: usize,
    #[arg(long, default_value_t = 8)]
    kv_heads: usize,
    #[arg(long, default_value_t = 128)]
    head_dim: usize,
    #[arg(long, default_value_t = 2)]
    bytes_per_scalar: usize,
}

#[derive(Args)]
struct MoeRouteArgs {
    #[arg(long, default_value_t = 16)]
    experts: usize,
    #[arg(long, default_value_t = 2)]
    top_k: usize,
    #[arg(long, default_value_t = 1000)]
    tokens: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 256)]
    len: usize,
    #[arg(long, default_value_t = 32)]
    group_size: usize,
}

#[derive(Args)]
struct FootprintArgs {
    #[arg(long)]
    params: u64,
    #[arg(long, default_value_t = 4)]
    bits: u64,
    #[arg(long, default_value_t = 32)]
    group_size: u64,
    #[arg(long, default_value_t = 16)]
    scale_bits: u64,
}

#[derive(Args)]
struct ChatArgs {
    /// User turns, in order.
    #[arg(long = "user", required = true)]
    user: Vec<String>,
    /// Assistant turns interleaved after each user turn.
    #[arg(long = "assistant")]
    assistant: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Print a blocksparse mask as an ASCII grid, JSON RLE, or PGM.
    Pattern(PatternArgs),
    /// Toy blocksparse forward pass: per-head max-abs-diff vs the masked
    /// oracle and tile counts, as CSV.
    Forward(ForwardArgs),
    /// Per-head KV retention, savings, and paged-memory statistics as CSV.
    KvReport(KvReportArgs),
    /// Route random tokens through a top-k router; decisions CSV plus a
    /// load histogram.
    MoeRoute(MoeRouteArgs),
    /// Quantize a fixed-seed random vector; codes/scales CSV and error stats.
    Quantize(QuantizeArgs),
    /// Byte report for a quantized parameter set.
    Footprint(FootprintArgs),
    /// Parameter counts for a model config.
    Params {
        /// Bundled config name or path to a JSON config file.
        #[arg(long)]
        config: String,
    },
    /// Render turns in the chat template.
    Chat(ChatArgs),
    /// Scaling-curve points (ln size, ln MMLU error) as CSV.
    Scaling {
        /// Optional JSON bench table; defaults to the bundled phi-3 entries.
        #[arg(long)]
        bench: Option<PathBuf>,
    },
}

fn load_named_config(name: &str) -> phi3lab::Result<LoadedConfig> {
    if bundled::NAMES.contains(&name) {
        bundled::by_name(name)
    } else {
        archconfig::load_config(name.as_ref())
    }
}

fn run_pattern(args: &PatternArgs) -> phi3lab::Result<()> {
    let p = SparsePattern::new(args.block_size, args.local_blocks, args.stride, args.offset)?;
    let m = block_mask(&p, args.blocks)?;
    if let Some(path) = &args.pgm {
        write_pgm(path, &m)?;
    }
    if args.json {
        let rows: Vec<Vec<(usize, usize)>> = (0..args.blocks)
            .map(|q| {
                let mut runs = Vec::new();
                let mut k = 0;
                while k < args.blocks {
                    if m.allowed(q, k) {
                        let start = k;
                        while k < args.blocks && m.allowed(q, k) {
                            k += 1;
                        }
                        runs.push((start, k - start));
                    } else {
                        k += 1;
                    }
                }
                runs
            })
            .collect();
        let json = serde_json::json!({ "allowed": rows });
        println!("{json}");
    } else {
        for q in 0..args.blocks {
            let line: String = (0..args.blocks)
                .map(|k| match cell_kind(&p, q, k) {
                    CellKind::Local => 'L',
                    CellKind::Vertical => 'V',
                    CellKind::Skipped => '.',
                    CellKind::Acausal => ' ',
                })
                .collect();
            println!("{line}");
        }
    }
    Ok(())
}

fn write_pgm(path: &std::path::Path, m: &phi3lab::sparsity::BlockMask) -> phi3lab::Result<()> {
    let n = m.num_blocks;
    let mut bytes = Vec::with_capacity(n * n + 32);
    bytes.extend_from_slice(format!("P5\n{n} {n}\n255\n").as_bytes());
    for q in 0..n {
        for k in 0..n {
            bytes.push(if m.allowed(q, k) { 255 } else { 0 });
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

fn forward_csv<T: Scalar + std::fmt::LowerExp>(
    args: &ForwardArgs,
    heads: usize,
    kv_heads: usize,
    head_dim: usize,
    seed: u64,
) -> phi3lab::Result<()> {
    let p = SparsePattern::new(args.block_size, args.local_blocks, args.stride, 0)?;
    let a = assign_offsets(heads, kv_heads, args.stride)?;
    let t = AttnTensors::<T>::random(seed, heads, kv_heads, args.seq, head_dim)?;
    let (out, stats) = blocksparse_attention(&t, &a, &p)?;
    let masks = per_head_token_masks(&a, &p, args.seq)?;
    let refs: Vec<&TokenMask> = masks.iter().collect();
    let oracle = masked_attention_per_head(&t, &refs)?;
    println!("head,offset,max_abs_diff");
    let per_head = args.seq * head_dim;
    for h in 0..heads {
        let diff = out[h * per_head..(h + 1) * per_head]
            .iter()
            .zip(&oracle[h * per_head..(h + 1) * per_head])
            .map(|(&x, &y)| (x - y).abs())
            .fold(T::zero(), T::max);
        println!("{h},{},{:e}", a.offsets[h], diff);
    }
    println!("tiles_computed,{}", stats.tiles_computed);
    println!("dense_tiles,{}", stats.dense_tiles);
    Ok(())
}

fn run_forward(args: &ForwardArgs) -> phi3lab::Result<()> {
    let cfg = load_named_config(&args.config)?;
    let base = cfg.base();
    let seed = args.seed.unwrap_or_else(default_seed);
    let (h, kv, hd) = (
        base.num_heads as usize,
        base.num_kv_heads as usize,
        base.head_dim as usize,
    );
    match args.oracle.as_str() {
        "double" => forward_csv::<f64>(args, h, kv, hd, seed),
        _ => forward_csv::<f32>(args, h, kv, hd, seed),
    }
}

fn run_kv_report(args: &KvReportArgs) -> phi3lab::Result<()> {
    let template = SparsePattern::new(args.block_size, args.local_blocks, args.stride, 0)?;
    let a = assign_offsets(args.heads, args.kv_heads, args.stride)?;
    let group = args.heads / args.kv_heads;
    println!("kv_head,offset,retained_blocks,savings,pages,bytes");
    let mut total_retained_tokens = 0usize;
    let mut total_bytes = 0u64;
    for kv in 0..args.kv_heads {
        let p = template.with_offset(a.offsets[kv * group])?;
        let retained = retained_blocks(&p, args.blocks - 1).len();
        let savings = kv_savings(&p, args.blocks);
        let tokens = retained * args.block_size;
        let layout = paged_footprint(tokens, args.page_size, 1, args.head_dim, args.bytes_per_scalar)?;
        total_retained_tokens += tokens;
        total_bytes += layout.total_bytes;
        println!(
            "{kv},{},{retained},{savings:.6},{},{}",
            p.head_offset, layout.pages_per_kv_head, layout.total_bytes
        );
    }
    let dense_tokens = args.blocks * args.block_size * args.kv_heads;
    let overall = 1.0 - total_retained_tokens as f64 / dense_tokens as f64;
    println!("total,,{total_retained_tokens},{overall:.6},,{total_bytes}");
    Ok(())
}

fn run_moe_route(args: &MoeRouteArgs) -> phi3lab::Result<()> {
    use rand::{Rng, SeedableRng};
    let seed = args.seed.unwrap_or_else(default_seed);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut decisions: Vec<RoutingDecision> = Vec::with_capacity(args.tokens);
    println!("token,experts,gates");
    for tok in 0..args.tokens {
        let logits: Vec<f64> = (0..args.experts).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d = route_top2(&logits, args.top_k)?;
        let experts: Vec<String> = d.expert_indices.iter().map(|i| i.to_string()).collect();
        let gates: Vec<String> = d.gates.iter().map(|g| format!("{g:.6}")).collect();
        println!("{tok},{},{}", experts.join(" "), gates.join(" "));
        decisions.push(d);
    }
    let stats = phi3lab::moe::load_stats(&decisions, args.experts);
    println!("expert,count");
    for (e, c) in stats.counts.iter().enumerate() {
        println!("{e},{c}");
    }
    println!("max_over_mean,{:.6}", stats.max_over_mean);
    Ok(())
}

fn run_quantize(args: &QuantizeArgs) -> phi3lab::Result<()> {
    use rand::{Rng, SeedableRng};
    let seed = args.seed.unwrap_or_else(default_seed);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..args.len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let groups = quantize_int4(&w, args.group_size)?;
    let dq = dequantize(&groups);
    println!("group,scale,codes");
    for (g, group) in groups.iter().enumerate() {
        let codes: Vec<String> = group.codes.iter().map(|c| c.to_string()).collect();
        println!("{g},{:.6},{}", group.scale, codes.join(" "));
    }
    let max_err = w.iter().zip(&dq).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mean_err = w.iter().zip(&dq).map(|(a, b)| (a - b).abs()).sum::<f64>() / w.len() as f64;
    let max_half_scale = groups.iter().map(|g| g.scale / 2.0).fold(0.0, f64::max);
    println!("max_abs_err,{max_err:.6}");
    println!("mean_abs_err,{mean_err:.6}");
    println!("max_half_scale,{max_half_scale:.6}");
    Ok(())
}

fn run_footprint(args: &FootprintArgs) -> phi3lab::Result<()> {
    let r = footprint(args.params, args.bits, args.group_size, args.scale_bits)?;
    println!("weight_bytes,{}", r.weight_bytes);
    println!("scale_bytes,{}", r.scale_bytes);
    println!("total_bytes,{}", r.total_bytes);
    println!("weight_gib,{:.4}", r.weight_bytes as f64 / (1u64 << 30) as f64);
    println!("total_gib,{:.4}", r.total_bytes as f64 / (1u64 << 30) as f64);
    Ok(())
}

fn run_params(config: &str) -> phi3lab::Result<()> {
    let cfg = load_named_config(config)?;
    let pc = cfg.param_count()?;
    println!("name,{}", cfg.base().name);
    println!("total,{}", pc.total);
    println!("active,{}", pc.active);
    Ok(())
}

fn run_chat(args: &ChatArgs) -> phi3lab::Result<()> {
    let mut turns = Vec::new();
    for (i, u) in args.user.iter().enumerate() {
        turns.push(ChatTurn::user(u.clone()));
        if let Some(a) = args.assistant.get(i) {
            turns.push(ChatTurn::assistant(a.clone()));
        }
    }
    let rendered = archconfig::chat_format(&turns)?;
    print!("{rendered}");
    std::io::stdout().flush()?;
    Ok(())
}

fn run_scaling(bench: Option<&PathBuf>) -> phi3lab::Result<()> {
    let entries: Vec<BenchEntry> = match bench {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| phi3lab::Error::Parse(e.to_string()))?
        }
        None => bundled_entries()?,
    };
    let points = scaling_points(&entries)?;
    println!("model_name,param_count,mmlu,ln_size,ln_error");
    for (e, p) in entries.iter().zip(&points) {
        println!(
            "{},{},{},{:.6},{:.6}",
            e.model_name, e.param_count, e.mmlu, p.ln_size, p.ln_error
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are success, anything else is usage
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match &cli.command {
        Command::Pattern(args) => run_pattern(args),
        Command::Forward(args) => run_forward(args),
        Command::KvReport(args) => run_kv_report(args),
        Command::MoeRoute(args) => run_moe_route(args),
        Command::Quantize(args) => run_quantize(args),
        Command::Footprint(args) => run_footprint(args),
        Command::Params { config } => run_params(config),
        Command::Chat(args) => run_chat(args),
        Command::Scaling { bench } => run_scaling(bench.as_ref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
