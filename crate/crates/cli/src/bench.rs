//! Per-evaluation timing of the dynamics terms: naive recursive evaluation
//! of the uncompressed expression graph (every shared subexpression is
//! recomputed at each reference) against the compiled tape of the CSE'd
//! graph.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wingfit::exprgraph::{CompiledTape, NodeId};
use wingfit::multibody::{derive_dynamics, DynamicsTerms};

use crate::config::ExperimentConfig;
use crate::error::{io_error, CliError};
use crate::simulate::{create_out_dir, load_model};

pub const BENCH_CSV: &str = "bench.csv";
pub const BENCH_TXT: &str = "bench.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    Naive,
    Tape,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Naive => "naive",
            Backend::Tape => "tape",
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchRow {
    pub term: &'static str,
    pub backend: Backend,
    pub iters: usize,
    pub median_ns: f64,
    pub p95_ns: f64,
    /// Naive median over this backend's median.
    pub speedup: f64,
    /// Largest `|naive - tape|` over the benchmark states.
    pub max_abs_diff: f64,
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub csv: PathBuf,
    pub text: PathBuf,
}

impl BenchReport {
    pub fn row(&self, term: &str, backend: Backend) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.term == term && r.backend == backend)
    }

    pub fn speedup(&self, term: &str) -> Option<f64> {
        self.row(term, Backend::Tape).map(|r| r.speedup)
    }
}

/// Median and 95th percentile (nearest rank) of `v`.
pub fn median_p95(v: &mut [f64]) -> (f64, f64) {
    assert!(!v.is_empty());
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    (median, v[rank - 1])
}

struct Term<'a> {
    name: &'static str,
    raw: &'a [NodeId],
    tape: &'a CompiledTape,
}

fn time_term(
    dt: &DynamicsTerms,
    term: &Term,
    states: &[Vec<f64>],
    iters: usize,
    warmup: usize,
) -> Result<[BenchRow; 2], CliError> {
    let raw = &dt.derivation().raw;
    let eval_err = |e| CliError::Divergence(format!("{} evaluation failed: {e}", term.name));
    let mut ws = term.tape.workspace();
    let mut out = vec![0.0; term.tape.n_outputs()];

    let mut max_abs_diff = 0.0f64;
    for x in states {
        let naive = raw.eval_tree(x, term.raw).map_err(eval_err)?;
        term.tape.eval(x, &mut ws, &mut out).map_err(eval_err)?;
        for (a, b) in naive.iter().zip(&out) {
            max_abs_diff = max_abs_diff.max((a - b).abs());
        }
    }

    let mut sink = 0.0;
    let mut naive_ns = Vec::with_capacity(iters);
    for k in 0..warmup + iters {
        let x = &states[k % states.len()];
        let t0 = Instant::now();
        let v = raw.eval_tree(x, term.raw).map_err(eval_err)?;
        let el = t0.elapsed();
        sink += v.first().copied().unwrap_or(0.0);
        if k >= warmup {
            naive_ns.push(el.as_nanos() as f64);
        }
    }
    let mut tape_ns = Vec::with_capacity(iters);
    for k in 0..warmup + iters {
        let x = &states[k % states.len()];
        let t0 = Instant::now();
        term.tape.eval(x, &mut ws, &mut out).map_err(eval_err)?;
        let el = t0.elapsed();
        sink += out.first().copied().unwrap_or(0.0);
        if k >= warmup {
            tape_ns.push(el.as_nanos() as f64);
        }
    }
    std::hint::black_box(sink);

    let (nm, np) = median_p95(&mut naive_ns);
    let (tm, tp) = median_p95(&mut tape_ns);
    let row = |backend, median_ns, p95_ns| BenchRow {
        term: term.name,
        backend,
        iters,
        median_ns,
        p95_ns,
        speedup: nm / median_ns,
        max_abs_diff,
    };
    Ok([row(Backend::Naive, nm, np), row(Backend::Tape, tm, tp)])
}

/// Random non-singular states `[q; q']`, angles within ±0.5 rad.
pub fn bench_states(n_q: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count.max(1))
        .map(|_| {
            (0..2 * n_q)
                .map(|i| {
                    if i < n_q {
                        rng.random_range(-0.5..0.5)
                    } else {
                        rng.random_range(-1.0..1.0)
                    }
                })
                .collect()
        })
        .collect()
}

pub fn format_table(rows: &[BenchRow]) -> String {
    let header = [
        "term",
        "backend",
        "iters",
        "median_ns",
        "p95_ns",
        "speedup",
        "max_abs_diff",
    ];
    let cells: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            [
                r.term.to_string(),
                r.backend.name().to_string(),
                r.iters.to_string(),
                format!("{:.1}", r.median_ns),
                format!("{:.1}", r.p95_ns),
                format!("{:.2}", r.speedup),
                format!("{:.3e}", r.max_abs_diff),
            ]
        })
        .collect();
    let mut width = header.map(str::len);
    for c in &cells {
        for (w, s) in width.iter_mut().zip(c) {
            *w = (*w).max(s.len());
        }
    }
    let mut s = String::new();
    let line = |s: &mut String, c: &[&str]| {
        for (i, (w, v)) in width.iter().zip(c).enumerate() {
            if i < 2 {
                let _ = write!(s, "{v:<w$}  ");
            } else {
                let _ = write!(s, "{v:>w$}  ");
            }
        }
        s.truncate(s.trim_end().len());
        s.push('\n');
    };
    line(&mut s, &header);
    for c in &cells {
        line(&mut s, &c.iter().map(String::as_str).collect::<Vec<_>>());
    }
    s
}

pub fn to_csv(rows: &[BenchRow]) -> Result<String, CliError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let e = |e: csv::Error| CliError::Input(format!("csv: {e}"));
    w.write_record([
        "term",
        "backend",
        "iters",
        "median_ns",
        "p95_ns",
        "speedup",
        "max_abs_diff",
    ])
    .map_err(e)?;
    for r in rows {
        w.write_record([
            r.term.to_string(),
            r.backend.name().to_string(),
            r.iters.to_string(),
            format!("{:.16e}", r.median_ns),
            format!("{:.16e}", r.p95_ns),
            format!("{:.16e}", r.speedup),
            format!("{:.16e}", r.max_abs_diff),
        ])
        .map_err(e)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Input(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is ascii"))
}

/// `bench`: D, C, G and Pjac under both backends, on a single thread.
pub fn cmd_bench(cfg: &ExperimentConfig) -> Result<BenchReport, CliError> {
    let model = load_model(cfg.model_path()?)?;
    let b = &cfg.bench;
    if b.iters == 0 {
        return Err(CliError::Usage("bench needs at least one iteration".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    let (rows, header) = pool.install(|| -> Result<_, CliError> {
        let dt = derive_dynamics(&model);
        let states = bench_states(model.n_q(), b.states, cfg.seed);
        let dv = dt.derivation();
        let terms = [
            Term {
                name: "D",
                raw: &dv.raw_nodes.d,
                tape: dt.d_tape(),
            },
            Term {
                name: "C",
                raw: &dv.raw_nodes.c,
                tape: dt.c_tape(),
            },
            Term {
                name: "G",
                raw: &dv.raw_nodes.g,
                tape: dt.g_tape(),
            },
            Term {
                name: "Pjac",
                raw: &dv.raw_nodes.pjac,
                tape: dt.pjac_tape(),
            },
        ];
        let mut rows = Vec::with_capacity(8);
        for t in &terms {
            rows.extend(time_term(&dt, t, &states, b.iters, b.warmup)?);
        }
        let st = dt.stats();
        let header = format!(
            "bench: {} ({} DOF), {} iterations after {} warm-up, 1 thread\n\
             graph nodes: {} raw, {} after CSE; D+C+G tape {} instructions\n",
            model.name,
            model.n_q(),
            b.iters,
            b.warmup,
            st.raw_nodes,
            st.cse_nodes,
            st.dcg_tape_len
        );
        Ok((rows, header))
    })?;

    create_out_dir(&cfg.out)?;
    let csv_path = cfg.out.join(BENCH_CSV);
    let txt_path = cfg.out.join(BENCH_TXT);
    let table = format_table(&rows);
    std::fs::write(&csv_path, to_csv(&rows)?).map_err(|e| io_error(&csv_path, e))?;
    std::fs::write(&txt_path, format!("{header}\n{table}")).map_err(|e| io_error(&txt_path, e))?;
    print!("{header}\n{table}");
    for t in ["D", "C", "G", "Pjac"] {
        if let Some(r) = rows
            .iter()
            .find(|r| r.term == t && r.backend == Backend::Tape)
        {
            println!("speedup {t}: {:.1}x", r.speedup);
        }
    }
    Ok(BenchReport {
        rows,
        csv: csv_path,
        text: txt_path,
    })
}
