use std::path::Path;

use anyhow::Context;
use rpslab::config::{parse_buffer_list, KvConfig};
use rpslab::mixing::{alpha_bounds, sweep_alphas, SweepMode};
use rpslab::netsim::{sweep_priority, sweep_sustainable, Scheduling, Topology, TrafficModel};
use rpslab::protocol::OwnerMode;
use rpslab::report::{num, CsvTable};
use rpslab::trainer::{
    compare_strategies, corollary1_lr, lemma1_rhs, mean_trace, mixing_constants, resolve_gamma, run_seeds,
    theorem1_rhs, LearningRate, Strategy, TaskParams, TrainConfig,
};
use rpslab::Error;

pub const MIXING_KEYS: &[(&str, &str)] = &[
    ("n", "2..8"),
    ("p", "0.1"),
    ("mode", "exact"),
    ("samples", "100000"),
    ("owner_mode", "random-permutation"),
    ("seed", "0"),
];

pub const TRAIN_KEYS: &[(&str, &str)] = &[
    ("n", "8"),
    ("d", "16"),
    ("iterations", "2000"),
    ("p", "0"),
    ("gamma", "corollary1"),
    ("strategy", "rps"),
    ("owner_mode", "random-permutation"),
    ("heterogeneity", "1"),
    ("noise_sigma", "0.25"),
    ("mu", "0.5"),
    ("l", "1"),
    ("seed", "0"),
    ("seeds", "1"),
    ("task_seed", "none"),
];

pub const BOUNDS_KEYS: &[(&str, &str)] = &[
    ("n", "8"),
    ("p", "0.1"),
    ("gamma", "corollary1"),
    ("l", "1"),
    ("sigma", "1"),
    ("zeta", "1"),
    ("f0", "1"),
    ("fstar", "0"),
    ("iterations", "1000"),
    ("alpha2", "exact"),
    ("beta", "exact"),
];

pub const NETSIM_KEYS: &[(&str, &str)] = &[
    ("lambda", "2000,5000,10000"),
    ("buffers", "inf,300000,150000,100000,60000,30000,15000,6000,3000,1500"),
    ("scheduling", "shared-fifo"),
    ("servers", "16"),
    ("link_rate", "1e9"),
    ("packet_bytes", "1500"),
    ("web_bytes", "100000"),
    ("learning_load", "2.4e9"),
    ("learning_burst", "1"),
    ("duration", "1"),
    ("seed", "0"),
    ("seeds", "4"),
    ("target_ms", "none"),
    ("lambda_max", "20000"),
];

fn write(table: &CsvTable, out: &Path, name: &str) -> anyhow::Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(name);
    table.write(&path).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn seed_list(cfg: &KvConfig) -> Result<Vec<u64>, Error> {
    let seed: u64 = cfg.parse_value("seed")?;
    let count: u64 = cfg.parse_value("seeds")?;
    if count == 0 {
        return Err(Error::Config("seeds must be >= 1".into()));
    }
    Ok((seed..seed + count).collect())
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn mixing(cfg: &KvConfig, out: &Path) -> anyhow::Result<()> {
    let ns = cfg.usize_list("n")?;
    let ps = cfg.f64_list("p")?;
    let owner_mode: OwnerMode = cfg.parse_value::<String>("owner_mode")?.parse()?;
    let mode = match cfg.get("mode") {
        Some("exact") => SweepMode::Exact,
        Some("mc") => SweepMode::MonteCarlo {
            samples: cfg.parse_value("samples")?,
            seed: cfg.parse_value("seed")?,
            owner_mode,
        },
        other => return Err(Error::Config(format!("mode must be exact or mc, got {other:?}")).into()),
    };
    let rows = sweep_alphas(&ns, &ps, mode)?;
    let mut table = CsvTable::new(
        "mixing",
        cfg.clone(),
        &["n", "p", "mode", "samples", "alpha_ew", "alpha1", "alpha2", "beta", "alpha1_bound", "alpha2_bound", "residual_max"],
    );
    for r in rows {
        table.push(vec![
            r.n.to_string(),
            num(r.p),
            r.mode.to_string(),
            r.samples.to_string(),
            num(r.alpha_ew),
            num(r.alpha1),
            num(r.alpha2),
            num(r.beta),
            num(r.alpha1_bound),
            num(r.alpha2_bound),
            num(r.residual_max),
        ]);
    }
    write(&table, out, "mixing.csv")
}

fn train_config(cfg: &KvConfig, p: f64, strategy: Strategy) -> Result<TrainConfig, Error> {
    let tc = TrainConfig {
        n: cfg.parse_value("n")?,
        d: cfg.parse_value("d")?,
        iterations: cfg.parse_value("iterations")?,
        p,
        gamma: cfg.parse_value::<String>("gamma")?.parse::<LearningRate>()?,
        strategy,
        owner_mode: cfg.parse_value::<String>("owner_mode")?.parse()?,
        task: TaskParams {
            heterogeneity: cfg.parse_value("heterogeneity")?,
            noise_sigma: cfg.parse_value("noise_sigma")?,
            mu: cfg.parse_value("mu")?,
            l: cfg.parse_value("l")?,
        },
        seed: cfg.parse_value("seed")?,
        task_seed: match cfg.get("task_seed") {
            Some("none") | None => None,
            Some(_) => Some(cfg.parse_value("task_seed")?),
        },
    };
    tc.validate()?;
    Ok(tc)
}

pub fn train(cfg: &KvConfig, out: &Path) -> anyhow::Result<()> {
    let seeds = seed_list(cfg)?;
    let ps = cfg.f64_list("p")?;
    let strategy_name: String = cfg.parse_value("strategy")?;
    if strategy_name == "both" {
        let base = train_config(cfg, ps[0], Strategy::Rps)?;
        let rows = compare_strategies(&base, &ps, &seeds)?;
        let mut table = CsvTable::new(
            "train",
            cfg.clone(),
            &["p", "strategy", "seeds", "gamma", "mean_final_loss", "sd_final_loss", "mean_excess_loss", "p_value", "diverged"],
        );
        for r in &rows {
            println!(
                "p={} {:<18} final loss {:.6} +- {:.6} (excess {:.3e})",
                r.p, r.strategy, r.mean_final_loss, r.sd_final_loss, r.mean_excess_loss
            );
            table.push(vec![
                num(r.p),
                r.strategy.to_string(),
                r.seeds.to_string(),
                num(r.gamma),
                num(r.mean_final_loss),
                num(r.sd_final_loss),
                num(r.mean_excess_loss),
                opt(r.p_value),
                r.diverged.to_string(),
            ]);
        }
        return write(&table, out, "summary.csv");
    }

    if ps.len() != 1 {
        return Err(Error::Config("a list of drop rates needs strategy = both".into()).into());
    }
    let tc = train_config(cfg, ps[0], strategy_name.parse()?)?;
    let task = tc.build_task()?;
    let gamma = resolve_gamma(&tc, &task)?;
    let traces = run_seeds(&tc, &seeds)?;
    let mut table = CsvTable::new(
        "train",
        cfg.clone(),
        &["t", "loss", "grad_norm_sq_mean_model", "grad_norm_sq_avg", "consensus", "local_loss"],
    );
    table.note("gamma", num(gamma));
    table.note("diverged", traces.iter().filter(|t| t.diverged).count());
    if seeds.len() == 1 {
        table.note("f_star", num(traces[0].f_star));
    }
    for r in mean_trace(&traces)? {
        table.push(vec![
            r.t.to_string(),
            num(r.loss),
            num(r.grad_norm_sq_mean_model),
            num(r.grad_norm_sq_avg),
            num(r.consensus),
            num(r.local_loss),
        ]);
    }
    println!("gamma = {gamma}");
    write(&table, out, "trace.csv")
}

pub fn bounds(cfg: &KvConfig, out: &Path) -> anyhow::Result<()> {
    let n: usize = cfg.parse_value("n")?;
    let p: f64 = cfg.parse_value("p")?;
    let l: f64 = cfg.parse_value("l")?;
    let sigma: f64 = cfg.parse_value("sigma")?;
    let zeta: f64 = cfg.parse_value("zeta")?;
    let f0: f64 = cfg.parse_value("f0")?;
    let fstar: f64 = cfg.parse_value("fstar")?;
    let t: usize = cfg.parse_value("iterations")?;
    let b = alpha_bounds(n, p)?;
    let (exact_a2, exact_beta) = if cfg.get("alpha2") == Some("exact") || cfg.get("beta") == Some("exact") {
        mixing_constants(n, p)?
    } else {
        (f64::NAN, f64::NAN)
    };
    let alpha2 = match cfg.get("alpha2") {
        Some("exact") => exact_a2,
        _ => cfg.parse_value("alpha2")?,
    };
    let beta = match cfg.get("beta") {
        Some("exact") => exact_beta,
        _ => cfg.parse_value("beta")?,
    };
    let gamma = match cfg.parse_value::<String>("gamma")?.parse::<LearningRate>()? {
        LearningRate::Corollary1 => corollary1_lr(l, sigma, zeta, alpha2, beta, n, t)?,
        LearningRate::Explicit(g) => g,
    };
    let theorem = theorem1_rhs(gamma, n, sigma, zeta, l, f0, fstar, t, alpha2, beta)?;
    let lemma = lemma1_rhs(gamma, n, sigma, zeta, l, t, beta)?;

    let mut table = CsvTable::new("bounds", cfg.clone(), &["quantity", "value"]);
    let values = [
        ("t1", b.t1),
        ("t2", b.t2),
        ("t3", b.t3),
        ("alpha1_bound", b.alpha1_upper),
        ("alpha2_bound", b.alpha2_upper),
        ("alpha2", alpha2),
        ("beta", beta),
        ("gamma", gamma),
        ("theorem1_rhs", theorem),
        ("lemma1_rhs", lemma),
    ];
    for (k, v) in values {
        println!("{k:<14} {v}");
        table.push(vec![k.to_string(), num(v)]);
    }
    write(&table, out, "bounds.csv")
}

pub fn netsim(cfg: &KvConfig, out: &Path) -> anyhow::Result<()> {
    let topo = Topology {
        servers: cfg.parse_value("servers")?,
        link_rate: cfg.parse_value("link_rate")?,
        packet_bytes: cfg.parse_value("packet_bytes")?,
    };
    let base = TrafficModel {
        web_rate: 0.0,
        web_message_bytes: cfg.parse_value("web_bytes")?,
        learning_load: cfg.parse_value("learning_load")?,
        learning_burst: cfg.parse_value("learning_burst")?,
    };
    let scheduling: Scheduling = cfg.parse_value::<String>("scheduling")?.parse()?;
    let buffers = parse_buffer_list(cfg.get("buffers").unwrap_or_default()).map_err(Error::Config)?;
    let lambdas = cfg.f64_list("lambda")?;
    let duration: f64 = cfg.parse_value("duration")?;
    let seeds = seed_list(cfg)?;

    let mut table = CsvTable::new(
        "netsim",
        cfg.clone(),
        &["drop_rate", "lambda", "web_mean_ms", "web_p99_ms", "speedup", "sustainable_lambda", "learning_buffer_bytes", "target_ms"],
    );
    let buf = |b: Option<u64>| b.map_or("inf".to_string(), |v| v.to_string());
    for &lambda in &lambdas {
        let traffic = TrafficModel { web_rate: lambda, ..base };
        for r in sweep_priority(&topo, &traffic, scheduling, &buffers, duration, &seeds)? {
            table.push(vec![
                num(r.drop_rate),
                num(lambda),
                num(r.web_mean_ms),
                num(r.web_p99_ms),
                num(r.speedup),
                String::new(),
                buf(r.learning_buffer_bytes),
                String::new(),
            ]);
        }
    }
    if cfg.get("target_ms") != Some("none") {
        let lambda_max: f64 = cfg.parse_value("lambda_max")?;
        for target in cfg.f64_list("target_ms")? {
            let rows =
                sweep_sustainable(&topo, &base, scheduling, &buffers, target * 1e-3, duration, &seeds, lambda_max)?;
            for r in rows {
                table.push(vec![
                    num(r.drop_rate),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    num(r.sustainable_lambda),
                    buf(r.learning_buffer_bytes),
                    num(target),
                ]);
            }
        }
    }
    write(&table, out, "netsim.csv")
}
