//! Command-line entry point: wires models, simulations and statistical
//! checks into reproducible experiments emitting CSV/JSON artifacts.
//!
//! Every output file starts with a `#` metadata line carrying the tool
//! version, the seed and a hash of the resolved configuration, so a result
//! can always be replayed. Exit codes: 0 ok, 1 statistical gate failed,
//! 2 configuration error.

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use levytree::conditioned::{spine_sample, spine_vs_rejection};
use levytree::contour::{height_and_rho, jccp_from_tree, martingale_m, JccpPath, Jump};
use levytree::mc::{seed_stream, Estimator};
use levytree::model::{LevyModel, ModelConfig};
use levytree::pathsim::{record_stats, simulate_levy_path, time_reverse};
use levytree::suite;
use levytree::tree::{sample_tree, ChronologicalTree, TreeCaps};
use levytree::BrownianModel;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "levytree",
    version,
    about = "Splitting trees, contour processes and height-conditioned Lévy processes"
)]
struct Cli {
    /// Worker threads for replica-parallel commands (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ShardArgs {
    /// Total number of shards for external parallel launch.
    #[arg(long, default_value_t = 1)]
    shards: u64,
    /// Index of this shard in [0, shards).
    #[arg(long, default_value_t = 0)]
    shard_index: u64,
}

impl ShardArgs {
    fn validate(&self) -> anyhow::Result<()> {
        if self.shards == 0 || self.shard_index >= self.shards {
            bail!("need shards >= 1 and shard_index < shards");
        }
        Ok(())
    }

    /// Replica indices owned by this shard.
    fn replicas(&self, n: u64) -> Vec<u64> {
        (0..n)
            .filter(|k| k % self.shards == self.shard_index)
            .collect()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample a splitting tree and write it in `label alpha omega` rows.
    SimulateTree {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        x: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write a nested JSON export next to the text file.
        #[arg(long)]
        json: bool,
        #[arg(long, default_value_t = 1_000_000)]
        max_nodes: usize,
        #[arg(long, default_value_t = 1_000)]
        max_generation: u32,
    },
    /// Contour (jumping chronological contour process) of a stored tree.
    Contour {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Height and record masses of a stored path at time t.
    Height {
        #[arg(long)]
        path: PathBuf,
        #[arg(long)]
        t: f64,
    },
    /// Empirical mean of the height martingale across a time grid.
    MartingaleCheck {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        x: f64,
        /// Comma-separated grid, e.g. 0.25,0.5,1,2,4.
        #[arg(long, value_delimiter = ',')]
        t_grid: Vec<f64>,
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        shard: ShardArgs,
    },
    /// Per-replica record statistics of the time-reversed path at t.
    Records {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        x: f64,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        shard: ShardArgs,
    },
    /// Sample the conditioned law by rejection, importance weighting or the
    /// spine construction.
    Condition {
        #[arg(long, value_parser = ["rejection", "importance", "spine"])]
        route: String,
        #[arg(long)]
        model: PathBuf,
        /// Initial value (rejection/importance routes).
        #[arg(long, default_value_t = 1.0)]
        x: f64,
        /// Conditioning generation (rejection) or spine depth (spine).
        #[arg(long, default_value_t = 4)]
        a: u32,
        /// Evaluation time (importance route).
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        /// Replicas (importance), attempts (rejection) or spines (spine).
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        shard: ShardArgs,
    },
    /// Statistical comparison between rejection-conditioned trees and the
    /// direct spine sampler; writes the report as JSON.
    SpineCompare {
        #[arg(long)]
        model: PathBuf,
        /// Conditioning generation n.
        #[arg(long)]
        n_gen: u32,
        /// Spine generation k < n to examine.
        #[arg(long)]
        k: u32,
        #[arg(long, default_value_t = 20_000)]
        n_accept: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Brownian checks: survival probability, Kennedy martingale mean, or
    /// the minimum decomposition under importance weighting.
    Brownian {
        #[arg(value_parser = ["survival", "kennedy", "minimum"])]
        check: String,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 1.0)]
        x: f64,
        /// Height threshold (survival check).
        #[arg(long, default_value_t = 1.0)]
        a: f64,
        /// Step sizes; survival runs a refinement across all of them.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1e-2, 1e-3, 1e-4])]
        dt: Vec<f64>,
        /// Evaluation grid (kennedy) or horizon (minimum).
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.25, 0.5, 1.0])]
        t: Vec<f64>,
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named verification suite and write a JSON summary.
    Suite {
        /// Only `acceptance` is defined.
        #[arg(value_parser = ["acceptance"])]
        which: String,
        #[arg(long, default_value_t = suite::DEFAULT_SEED)]
        seed: u64,
        /// Run a single criterion instead of the whole matrix.
        #[arg(long)]
        only: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
            .ok();
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// FNV-1a over the canonical config string; stamped into output headers.
fn config_hash(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn header(seed: u64, config: &str) -> String {
    format!(
        "# levytree v{} seed={} config-hash={:016x} config={}\n",
        env!("CARGO_PKG_VERSION"),
        seed,
        config_hash(config),
        config
    )
}

fn load_model(path: &Path) -> anyhow::Result<(LevyModel, String)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading model file {}", path.display()))?;
    let cfg: ModelConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing model config {}", path.display()))?;
    let model = cfg.build().context("invalid model")?;
    let canon = serde_json::to_string(&cfg).expect("serializable config");
    Ok((model, canon))
}

fn write_artifact(path: Option<&Path>, content: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => {
            std::fs::write(p, content).with_context(|| format!("writing {}", p.display()))?;
        }
        None => {
            std::io::stdout().write_all(content.as_bytes())?;
        }
    }
    Ok(())
}

fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::SimulateTree {
            model,
            x,
            seed,
            out,
            json,
            max_nodes,
            max_generation,
        } => {
            let (model, canon) = load_model(&model)?;
            let measure = model
                .as_finite_variation()
                .context("tree simulation needs a lifespan model")?;
            let caps = TreeCaps {
                max_nodes,
                max_generation,
            };
            let mut rng = seed_stream(seed, 0);
            let tree = sample_tree(measure, x, caps, &mut rng)?;
            let mut content = header(seed, &format!("{canon} x={x}"));
            if tree.is_truncated() {
                content.push_str("# truncated=true\n");
            }
            content.push_str(&tree.to_text());
            write_artifact(Some(&out), &content)?;
            if json {
                let jpath = out.with_extension("json");
                write_artifact(Some(&jpath), &tree.to_json())?;
            }
            eprintln!("wrote {} nodes to {}", tree.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }

        Command::Contour { tree, out } => {
            let text = std::fs::read_to_string(&tree)
                .with_context(|| format!("reading tree {}", tree.display()))?;
            let tree = ChronologicalTree::from_text(&text)?;
            let path = jccp_from_tree(&tree)?;
            let content = format!("{}{}", header(0, "contour"), path_to_csv(&path));
            write_artifact(out.as_deref(), &content)?;
            Ok(ExitCode::SUCCESS)
        }

        Command::Height { path, t } => {
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading path {}", path.display()))?;
            let p = path_from_csv(&text)?;
            let rho = height_and_rho(&p, t)?;
            println!("t,{t}");
            println!("H,{}", rho.height());
            println!("X,{}", rho.total_mass());
            for (i, mass) in rho.masses.iter().enumerate() {
                println!("rho_{i},{mass}");
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::MartingaleCheck {
            model,
            x,
            t_grid,
            n,
            seed,
            out,
            shard,
        } => {
            shard.validate()?;
            let (model, canon) = load_model(&model)?;
            let measure = model.as_finite_variation()?.clone();
            if t_grid.is_empty() {
                bail!("empty --t-grid");
            }
            let m = measure.m();
            let t_max = t_grid.iter().cloned().fold(0.0, f64::max);
            let replicas = shard.replicas(n);
            let per: Vec<Vec<f64>> = replicas
                .par_iter()
                .map(|&k| {
                    let mut rng = seed_stream(seed, k);
                    let path = levytree::pathsim::simulate_cpp(&measure, x, t_max, &mut rng)
                        .expect("valid inputs");
                    t_grid
                        .iter()
                        .map(|&t| martingale_m(&path, t, m).expect("valid m"))
                        .collect()
                })
                .collect();
            let mut ests = vec![Estimator::new(); t_grid.len()];
            for row in per {
                for (e, v) in ests.iter_mut().zip(row) {
                    e.push(v);
                }
            }
            let mut content = header(
                seed,
                &format!(
                    "{canon} x={x} n={n} shards={}/{}",
                    shard.shard_index, shard.shards
                ),
            );
            content.push_str("t,mean_M,stderr\n");
            for (e, t) in ests.iter().zip(&t_grid) {
                writeln!(content, "{t},{},{}", e.mean(), e.stderr()).unwrap();
            }
            write_artifact(out.as_deref(), &content)?;
            Ok(ExitCode::SUCCESS)
        }

        Command::Records {
            model,
            x,
            t,
            n,
            seed,
            out,
            shard,
        } => {
            shard.validate()?;
            let (model, canon) = load_model(&model)?;
            let measure = model.as_finite_variation()?.clone();
            let rows: Vec<String> = shard
                .replicas(n)
                .par_iter()
                .map(|&k| {
                    let mut rng = seed_stream(seed, k);
                    let p = simulate_levy_path(&measure, x, t, &mut rng).expect("valid inputs");
                    let rev = time_reverse(&p, t).expect("t in window");
                    let rec = record_stats(&rev);
                    let h = height_and_rho(&p, t).expect("t in window").height();
                    let (rho1, t1) = match (rec.overshoots.first(), rec.times.first()) {
                        (Some(r), Some(tt)) => (r.to_string(), tt.to_string()),
                        _ => (String::new(), String::new()),
                    };
                    format!("{k},{},{rho1},{t1},{},{h}", rec.count(), p.value(t))
                })
                .collect();
            let mut content = header(
                seed,
                &format!(
                    "{canon} x={x} t={t} n={n} shards={}/{}",
                    shard.shard_index, shard.shards
                ),
            );
            content.push_str("replica,R_t,rho1,T1,X_t,H_t\n");
            for r in rows {
                content.push_str(&r);
                content.push('\n');
            }
            write_artifact(out.as_deref(), &content)?;
            Ok(ExitCode::SUCCESS)
        }

        Command::Condition {
            route,
            model,
            x,
            a,
            t,
            n,
            seed,
            out,
            shard,
        } => {
            shard.validate()?;
            let (model, canon) = load_model(&model)?;
            let measure = model.as_finite_variation()?.clone();
            let meta = format!(
                "{canon} route={route} x={x} a={a} t={t} n={n} shards={}/{}",
                shard.shard_index, shard.shards
            );
            let mut content = header(seed, &meta);
            match route.as_str() {
                "rejection" => {
                    // sharded by attempt index; each accepted tree yields one row
                    content.push_str("attempt,T0,X_t,alive_at_t\n");
                    let rows: Vec<Option<String>> = shard
                        .replicas(n)
                        .par_iter()
                        .map(|&k| {
                            let mut rng = seed_stream(seed, k);
                            let tree =
                                sample_tree(&measure, x, TreeCaps::default(), &mut rng).ok()?;
                            if !tree.alive_at_generation(a).unwrap_or(false) {
                                return None;
                            }
                            let p = jccp_from_tree(&tree).ok()?;
                            let alive = p.end_time() > t;
                            Some(format!(
                                "{k},{},{},{}",
                                p.end_time(),
                                if alive {
                                    p.value(t).to_string()
                                } else {
                                    String::new()
                                },
                                u8::from(alive)
                            ))
                        })
                        .collect();
                    let accepted = rows.iter().flatten().count();
                    for r in rows.into_iter().flatten() {
                        content.push_str(&r);
                        content.push('\n');
                    }
                    eprintln!(
                        "accepted {accepted} of {} attempts (exact survival {:.6})",
                        shard.replicas(n).len(),
                        measure.survival_exact(a, x)?
                    );
                }
                "importance" => {
                    content.push_str("replica,weight,X_t\n");
                    let m = measure.m();
                    let rows: Vec<String> = shard
                        .replicas(n)
                        .par_iter()
                        .map(|&k| {
                            let mut rng = seed_stream(seed, k);
                            let p = levytree::pathsim::simulate_cpp(&measure, x, t, &mut rng)
                                .expect("valid inputs");
                            if p.hit_zero() {
                                format!("{k},0,")
                            } else {
                                let w = martingale_m(&p, t, m).expect("valid m") / x;
                                format!("{k},{w},{}", p.value(t))
                            }
                        })
                        .collect();
                    for r in rows {
                        content.push_str(&r);
                        content.push('\n');
                    }
                }
                "spine" => {
                    content.push_str("replica,k,A_k,R_k,T_k,grafts\n");
                    let rows: Vec<String> = shard
                        .replicas(n)
                        .par_iter()
                        .map(|&r| {
                            let mut rng = seed_stream(seed, r);
                            let spine = spine_sample(&measure, a, TreeCaps::default(), &mut rng)
                                .expect("depth >= 1");
                            let mut s = String::new();
                            for (k, node) in spine.nodes.iter().enumerate() {
                                writeln!(
                                    s,
                                    "{r},{k},{},{},{},{}",
                                    node.record.birth_age,
                                    node.record.residual,
                                    node.record.lifetime(),
                                    node.graft_ages.len()
                                )
                                .unwrap();
                            }
                            s
                        })
                        .collect();
                    for r in rows {
                        content.push_str(&r);
                    }
                }
                _ => unreachable!("clap validated"),
            }
            write_artifact(Some(&out), &content)?;
            Ok(ExitCode::SUCCESS)
        }

        Command::SpineCompare {
            model,
            n_gen,
            k,
            n_accept,
            seed,
            out,
        } => {
            let (model, _canon) = load_model(&model)?;
            let measure = model.as_finite_variation()?.clone();
            let mut rng = seed_stream(seed, 0);
            let report = spine_vs_rejection(&measure, n_gen, k, n_accept, &mut rng)?;
            let json = serde_json::to_string_pretty(&report)?;
            write_artifact(out.as_deref(), &format!("{json}\n"))?;
            for line in [
                report.lifetime_vs_size_biased.one_line(),
                report.birth_fraction_vs_uniform.one_line(),
                report.lifetime_two_sample.one_line(),
                report.offspring_two_sample.one_line(),
                report.negative_control.one_line(),
            ] {
                eprintln!("{line}");
            }
            Ok(if report.all_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }

        Command::Brownian {
            check,
            alpha,
            beta,
            x,
            a,
            dt,
            t,
            n,
            seed,
            out,
        } => {
            let model = BrownianModel::new(alpha, beta)?;
            let meta = format!("brownian alpha={alpha} beta={beta} x={x} check={check} n={n}");
            let mut content = header(seed, &meta);
            let ok;
            match check.as_str() {
                "survival" => {
                    let rep =
                        levytree::brownian::survival_check(&model, x, a, &dt, n, 500.0, seed)?;
                    content.push_str("dt,n,estimate,stderr,target,abs_error,unresolved\n");
                    for row in &rep.rows {
                        writeln!(
                            content,
                            "{},{},{},{},{},{},{}",
                            row.dt,
                            row.n,
                            row.estimate,
                            row.stderr,
                            rep.target,
                            row.abs_error,
                            row.unresolved
                        )
                        .unwrap();
                    }
                    ok = rep.final_gate();
                    eprintln!(
                        "target {:.6}, final |error| {:.6}, trend {:.6}, gate {}",
                        rep.target,
                        rep.rows.last().map(|r| r.abs_error).unwrap_or(f64::NAN),
                        rep.trend(),
                        ok
                    );
                }
                "kennedy" => {
                    let step = dt.first().copied().unwrap_or(1e-4);
                    let (ests, rep) =
                        levytree::brownian::kennedy_check(&model, x, &t, step, n, seed)?;
                    content.push_str("t,mean_M,stderr\n");
                    for (e, tt) in ests.iter().zip(&t) {
                        writeln!(content, "{tt},{},{}", e.mean(), e.stderr()).unwrap();
                    }
                    ok = rep.pass;
                    eprintln!("{}", rep.one_line());
                }
                "minimum" => {
                    let step = dt.first().copied().unwrap_or(1e-3);
                    let horizon = t.first().copied().unwrap_or(10.0);
                    let rep = levytree::brownian::minimum_decomposition_check(
                        &model, x, horizon, step, n, seed,
                    )?;
                    content.push_str("key,value\n");
                    writeln!(
                        content,
                        "weighted_ks_p,{}",
                        rep.weighted_ks.p_value.unwrap_or(f64::NAN)
                    )
                    .unwrap();
                    writeln!(content, "weighted_ks_stat,{}", rep.weighted_ks.statistic).unwrap();
                    writeln!(
                        content,
                        "unweighted_rejects,{}",
                        rep.unweighted_control.pass
                    )
                    .unwrap();
                    writeln!(content, "p_half,{}", rep.p_half).unwrap();
                    writeln!(content, "p_half_stderr,{}", rep.p_half_stderr).unwrap();
                    writeln!(content, "mean_inf,{}", rep.mean_inf).unwrap();
                    writeln!(content, "pre_post_corr,{}", rep.pre_post_corr).unwrap();
                    writeln!(content, "ess,{}", rep.effective_sample_size).unwrap();
                    writeln!(content, "alive,{}", rep.alive).unwrap();
                    ok = rep.weighted_ks.pass && rep.unweighted_control.pass;
                    eprintln!("{}", rep.weighted_ks.one_line());
                }
                _ => unreachable!("clap validated"),
            }
            write_artifact(out.as_deref(), &content)?;
            Ok(if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }

        Command::Suite {
            which: _,
            seed,
            only,
            out,
        } => {
            let results = match only {
                Some(id) => vec![suite::criterion(id, seed)?],
                None => suite::run_all(seed)?,
            };
            for r in &results {
                println!("{}", r.one_line());
                for d in &r.details {
                    println!("    {d}");
                }
            }
            let all_pass = results.iter().all(|r| r.pass);
            let summary = serde_json::json!({
                "version": env!("CARGO_PKG_VERSION"),
                "seed": seed,
                "pass": all_pass,
                "criteria": results,
            });
            if let Some(p) = out {
                std::fs::write(&p, format!("{}\n", serde_json::to_string_pretty(&summary)?))
                    .with_context(|| format!("writing {}", p.display()))?;
            }
            Ok(if all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Path CSV format: `t,jump_size` rows with x0 carried by the header
// ---------------------------------------------------------------------------

fn path_to_csv(p: &JccpPath) -> String {
    let mut s = format!(
        "# x0={} end_time={} hit_zero={}\nt,jump_size\n",
        p.x0(),
        p.end_time(),
        p.hit_zero()
    );
    for j in p.jumps() {
        writeln!(s, "{},{}", j.time, j.size).unwrap();
    }
    s
}

fn path_from_csv(text: &str) -> anyhow::Result<JccpPath> {
    let mut x0 = None;
    let mut end_time = None;
    let mut hit_zero = false;
    let mut jumps = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            for tok in rest.split_whitespace() {
                if let Some(v) = tok.strip_prefix("x0=") {
                    x0 = Some(v.parse::<f64>().context("bad x0")?);
                } else if let Some(v) = tok.strip_prefix("end_time=") {
                    end_time = Some(v.parse::<f64>().context("bad end_time")?);
                } else if let Some(v) = tok.strip_prefix("hit_zero=") {
                    hit_zero = v.parse::<bool>().unwrap_or(false);
                }
            }
            continue;
        }
        if line.starts_with("t,") {
            continue; // column header
        }
        let (t, r) = line
            .split_once(',')
            .with_context(|| format!("bad path row: {line}"))?;
        jumps.push(Jump {
            time: t.trim().parse().context("bad jump time")?,
            size: r.trim().parse().context("bad jump size")?,
        });
    }
    let x0 = x0.context("path header missing x0")?;
    let end_time = end_time.context("path header missing end_time")?;
    Ok(JccpPath::new(x0, jumps, end_time, hit_zero)?)
}
