use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ita::baselines::AllocatorKind;
use ita::context::{sample_context, ScenarioSpec};
use ita::harness::{
    checkpoint_path, compare, evaluate_template, export_attention, load_allocator, parse_scoring_mode, parse_setting,
    write_checkpoint, CheckpointHeader, EvalReport, Metric, MetricsLog, TrainConfig, Trainer,
};
use ita::baselines::Allocator;

#[derive(Parser)]
#[command(name = "ita", version, about = "Initial task assignment for human-robot teams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an allocator and write its checkpoint into a directory.
    Train(TrainArgs),
    /// Score a checkpoint on held-out scenarios.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenarios: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "expected")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Welch t-test between two evaluation reports.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "total")]
        metric: String,
    },
    /// Export refined representations and attention weights as JSON.
    Attn {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        setting: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Export a single option instead of all of them.
        #[arg(long)]
        option: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    variant: String,
    #[arg(long)]
    setting: String,
    /// Total training episodes.
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Continue from the checkpoint in `--out` up to the new budget.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    ff_mult: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    episodes_per_update: Option<usize>,
    #[arg(long)]
    minibatch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Scoring used for training rewards.
    #[arg(long, default_value = "expected")]
    reward_mode: String,
    /// Save a checkpoint every this many updates (0 saves only at the end).
    #[arg(long, default_value_t = 10)]
    save_every: usize,
}

fn train(args: TrainArgs) -> Result<()> {
    let kind: AllocatorKind = args.variant.parse()?;
    let setting = parse_setting(&args.setting)?;
    if !kind.is_learned() {
        ScenarioSpec::new(setting.0, setting.1, setting.2, args.seed).validate()?;
        std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
        write_checkpoint(&checkpoint_path(&args.out), &CheckpointHeader::random(setting), None)?;
        MetricsLog::open(&args.out)?;
        println!("{kind}: nothing to train; wrote {}", checkpoint_path(&args.out).display());
        return Ok(());
    }
    let mut trainer = if args.resume && checkpoint_path(&args.out).exists() {
        let mut t = Trainer::load(&args.out)?;
        let m = &t.config.model;
        if m.kind != kind || (m.k, m.i, m.j) != setting {
            bail!("checkpoint in {} is {} on {:?}, not {kind} on {setting:?}", args.out.display(), m.kind, (m.k, m.i, m.j));
        }
        t.config.budget = args.budget;
        t
    } else {
        let mut cfg = TrainConfig::new(kind, setting, args.budget, args.seed);
        let r = cfg.model.repr;
        cfg.model = cfg.model.with_width(
            args.d_model.unwrap_or(r.d_model),
            args.heads.unwrap_or(r.heads),
            args.ff_mult.unwrap_or(r.ff_mult),
        );
        cfg.model.init_seed = args.seed;
        if let Some(v) = args.lr {
            cfg.ppo.lr = v;
        }
        if let Some(v) = args.episodes_per_update {
            cfg.ppo.episodes_per_update = v;
        }
        if let Some(v) = args.minibatch {
            cfg.ppo.minibatch = v;
        }
        if let Some(v) = args.epochs {
            cfg.ppo.epochs = v;
        }
        cfg.reward_mode = parse_scoring_mode(&args.reward_mode)?;
        Trainer::new(cfg)?
    };
    let mut env = trainer.config.environment()?;
    let log = MetricsLog::open(&args.out)?;
    let out = args.out.clone();
    trainer.run(&mut env, |t, rec| {
        log.append(rec)?;
        if args.save_every > 0 && rec.update % args.save_every == 0 {
            t.save(&out)?;
        }
        eprintln!(
            "update {:>5}  episodes {:>8}  mean reward {:>10.3}  entropy {:.4}",
            rec.update, rec.episodes_done, rec.metrics.mean_reward, rec.metrics.entropy
        );
        Ok(())
    })?;
    trainer.save(&args.out)?;
    println!("wrote {}", checkpoint_path(&args.out).display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(args) => train(args),
        Command::Eval {
            checkpoint,
            scenarios,
            seed,
            mode,
            out,
        } => {
            let (allocator, header) = load_allocator(&checkpoint)?;
            let (k, i, j) = header.setting;
            let template = match header.train {
                Some(state) => state.config.scenario,
                None => ScenarioSpec::new(k, i, j, seed),
            };
            let report = evaluate_template(&allocator, &template, scenarios, seed, parse_scoring_mode(&mode)?)?;
            report.write(&out)?;
            let (mean, std) = report.aps(Metric::Total);
            println!("{}: {} scenarios, total score {mean:.4} ± {std:.4}", report.kind, report.n_scenarios());
            Ok(())
        }
        Command::Compare { a, b, metric } => {
            let ra = EvalReport::read(&a)?;
            let rb = EvalReport::read(&b)?;
            if ra.n_scenarios() != rb.n_scenarios() {
                bail!("reports have {} and {} scenarios", ra.n_scenarios(), rb.n_scenarios());
            }
            println!("{}", compare(&ra, &rb, metric.parse()?)?.to_line());
            Ok(())
        }
        Command::Attn {
            checkpoint,
            setting,
            seed,
            option,
            out,
        } => {
            let (allocator, header) = load_allocator(&checkpoint)?;
            let setting = parse_setting(&setting)?;
            if setting != header.setting {
                bail!("checkpoint was trained on {:?}, not {setting:?}", header.setting);
            }
            let Allocator::Learned(model) = allocator else {
                bail!("{} has no attention to export", header.kind);
            };
            let ctx = sample_context(&ScenarioSpec::new(setting.0, setting.1, setting.2, seed))?;
            let export = export_attention(&model, &ctx, option)?;
            std::fs::write(&out, export.to_json()?).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}
