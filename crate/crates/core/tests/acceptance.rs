//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its criterion.
//! Run with `cargo test -p tempo --test acceptance -- --nocapture`.

mod common;

use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempo::cli::{cmd_adv, cmd_tree, AdvOptions, TreeNodeRecord};
use tempo::sim::{
    median_final_success, median_updates_to_threshold, sweep, train, BranchEnv, RewardRule,
    SweepAxis, TrainConfig,
};
use tempo::{
    clipped_surrogate, gae_advantages, group_stats, grpo_advantages, hepo_advantages,
    td_corrections, tempo_advantages, AdvantageMatrix, ClipConfig, GaeConfig, Group, Method,
    PrefixTree, Rollout, TokenId,
};

const SEEDS: [u64; 10] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];

fn report(n: usize, name: &str, ok: bool, detail: String) {
    println!(
        "{} criterion {n} ({name}): {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {n} failed: {detail}");
}

#[test]
fn c01_tree_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut mismatches = 0usize;
    let mut nodes = 0usize;
    for _ in 0..1000 {
        let g = common::random_group(&mut rng, 8, 32, 5);
        let tree = PrefixTree::build(&g).unwrap();
        for p in common::all_prefixes(&g) {
            nodes += 1;
            if tree.prefix_value(&p).unwrap() != common::brute_value(&g, &p) {
                mismatches += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    report(
        1,
        "tree oracle",
        mismatches == 0 && elapsed < Duration::from_secs(10),
        format!("1000 groups, {nodes} nodes, {mismatches} mismatches, {elapsed:.2?}"),
    );
}

#[test]
fn c02_reduction_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut off_branch, mut off_mismatch) = (0usize, 0usize);
    let (mut informative, mut informative_ok) = (0usize, 0usize);
    for _ in 0..1000 {
        let g = common::random_group(&mut rng, 8, 16, 3);
        let tree = PrefixTree::build(&g).unwrap();
        let stats = group_stats(&g);
        let tempo = tempo_advantages(&g, &tree, &stats).unwrap();
        let grpo = grpo_advantages(&g, &stats);
        let mut differs = false;
        for (i, r) in g.rollouts.iter().enumerate() {
            let path = tree.path(&r.tokens).unwrap();
            for t in 0..r.len() {
                if tree.node(path[t]).is_branch() {
                    differs |= tempo.rows[i][t] != grpo.rows[i][t];
                } else {
                    off_branch += 1;
                    off_mismatch += usize::from(tempo.rows[i][t] != grpo.rows[i][t]);
                }
            }
        }
        // some branch child whose value departs from its parent's
        let split = tree.branch_nodes().iter().any(|b| {
            let parent = tree.node(b.node);
            parent
                .children
                .values()
                .any(|&c| tree.node(c).value() != parent.value())
        });
        if split {
            informative += 1;
            informative_ok += usize::from(differs);
        }
    }
    report(
        2,
        "reduction identity",
        off_mismatch == 0 && informative > 0 && informative_ok == informative,
        format!(
            "{off_mismatch}/{off_branch} non-branch mismatches; {informative_ok}/{informative} split groups differ at a branch"
        ),
    );
}

#[test]
fn c03_telescoping() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut checked, mut worst) = (0usize, 0f64);
    for _ in 0..1000 {
        let g = common::random_group(&mut rng, 8, 16, 4);
        let tree = PrefixTree::build(&g).unwrap();
        let td = td_corrections(&g, &tree).unwrap();
        let mean = group_stats(&g).mean;
        for (i, r) in g.rollouts.iter().enumerate() {
            // unique and not a strict prefix of another rollout
            if common::matching(&g, &r.tokens).count() == 1 {
                let sum: f64 = td[i].iter().sum();
                worst = worst.max((sum - (r.reward - mean)).abs());
                checked += 1;
            }
        }
    }
    report(
        3,
        "telescoping",
        checked > 0 && worst <= 1e-9,
        format!("{checked} rollouts, max error {worst:e}"),
    );
}

#[test]
fn c04_gae_limits() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut e0, mut e1, mut eg) = (0f64, 0f64, 0f64);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=40);
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut values: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        values.push(0.0);
        let lambda: f64 = rng.gen_range(0.0..=1.0);

        let zero = gae_advantages(&rewards, &values, &GaeConfig::new(0.0).unwrap()).unwrap();
        for t in 0..n {
            let delta = rewards[t] + values[t + 1] - values[t];
            e0 = e0.max((zero[t] - delta).abs());
        }
        let one = gae_advantages(&rewards, &values, &GaeConfig::new(1.0).unwrap()).unwrap();
        for t in 0..n {
            let ret: f64 = rewards[t..].iter().sum();
            e1 = e1.max((one[t] - (ret - values[t])).abs());
        }
        let got = gae_advantages(&rewards, &values, &GaeConfig::new(lambda).unwrap()).unwrap();
        for (a, b) in got
            .iter()
            .zip(common::gae_oracle(&rewards, &values, lambda))
        {
            eg = eg.max((a - b).abs());
        }
    }
    report(
        4,
        "GAE limits",
        e0 <= 1e-12 && e1 <= 1e-12 && eg <= 1e-12,
        format!("1000 instances; max error lambda=0 {e0:e}, lambda=1 {e1:e}, general {eg:e}"),
    );
}

#[test]
fn c05_clipping() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = 0f64;
    for _ in 0..1000 {
        let rows = rng.gen_range(1..=6);
        let eps = rng.gen_range(0.05..0.5);
        let mut adv = Vec::new();
        let mut old = Vec::new();
        let mut new = Vec::new();
        for _ in 0..rows {
            let t = rng.gen_range(1..=20);
            adv.push(
                (0..t)
                    .map(|_| rng.gen_range(-3.0..3.0))
                    .collect::<Vec<f64>>(),
            );
            let o: Vec<f64> = (0..t).map(|_| rng.gen_range(-4.0..0.0)).collect();
            new.push(
                o.iter()
                    .map(|x| (x + rng.gen_range(-0.7..0.7)).min(0.0))
                    .collect::<Vec<_>>(),
            );
            old.push(o);
        }
        let m = AdvantageMatrix {
            rows: adv.clone(),
            method: Method::Grpo,
        };
        let got = clipped_surrogate(&m, &old, &new, &ClipConfig::symmetric(eps).unwrap()).unwrap();
        worst = worst.max((got.objective - common::ppo_reference(&adv, &old, &new, eps)).abs());
    }

    let clip = ClipConfig::new(0.2, 0.28).unwrap();
    let single = |a: f64, ratio: f64| {
        let m = AdvantageMatrix {
            rows: vec![vec![a]],
            method: Method::Tempo,
        };
        let old = vec![vec![0.5f64.ln()]];
        let new = vec![vec![(0.5 * ratio).ln()]];
        clipped_surrogate(&m, &old, &new, &clip).unwrap().objective
    };
    let up = single(1.0, 1.5);
    let down = single(-1.0, 0.5);
    report(
        5,
        "clipping",
        worst <= 1e-12 && (up - 1.28).abs() <= 1e-12 && (down + 0.8).abs() <= 1e-12,
        format!("symmetric max error {worst:e}; asymmetric cases {up} and {down}"),
    );
}

#[test]
fn c06_degenerate_groups() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut faults = 0usize;
    for case in 0..200 {
        let reward: f64 = if case % 2 == 0 { 0.0 } else { 1.0 };
        let g = common::random_group(&mut rng, 8, 12, 3);
        let rollouts = g
            .rollouts
            .iter()
            .map(|r| {
                let ent = (0..r.len()).map(|_| rng.gen_range(0.0..2.0)).collect();
                Rollout::new("p", r.tokens.clone(), reward).with_entropies(ent)
            })
            .collect();
        let g = Group::new("p", rollouts).unwrap();
        let stats = group_stats(&g);
        let tree = PrefixTree::build(&g).unwrap();
        let all = [
            grpo_advantages(&g, &stats),
            tempo_advantages(&g, &tree, &stats).unwrap(),
            hepo_advantages(&g, &stats, 0.2).unwrap(),
        ];
        for m in &all {
            faults += m
                .rows
                .iter()
                .flatten()
                .filter(|&&a| a != 0.0 || !a.is_finite())
                .count();
        }
    }
    report(
        6,
        "degenerate groups",
        faults == 0,
        format!("200 uniform-reward groups, {faults} nonzero or non-finite advantages"),
    );
}

#[test]
fn c07_simulator_convergence() {
    let start = Instant::now();
    let env = BranchEnv::default();
    let base = TrainConfig::default();
    let runs = |m: Method| {
        let reports = tempo::sim::train_seeds(&env, &base.with_method(m), &SEEDS).unwrap();
        median_updates_to_threshold(&reports)
    };
    let tempo = runs(Method::Tempo);
    let grpo = runs(Method::Grpo);
    let elapsed = start.elapsed();
    report(
        7,
        "simulator convergence",
        tempo < grpo && elapsed < Duration::from_secs(300),
        format!("median updates to 0.9: tempo {tempo}, grpo {grpo}; {elapsed:.1?}"),
    );
}

#[test]
fn c08_group_size_direction() {
    let env = BranchEnv::default();
    let sizes = [3usize, 5, 7, 9];
    let base = TrainConfig {
        updates: 150,
        ..TrainConfig::default()
    };
    let curve = |m: Method| -> Vec<f64> {
        let reports = sweep(
            &env,
            &base.with_method(m),
            SweepAxis::GroupSize,
            &sizes,
            &SEEDS,
        )
        .unwrap();
        reports
            .chunks(SEEDS.len())
            .map(median_final_success)
            .collect()
    };
    let tempo = curve(Method::Tempo);
    let grpo = curve(Method::Grpo);
    let nondecreasing = |v: &[f64]| v.windows(2).all(|w| w[1] >= w[0]);
    let ahead = tempo.iter().zip(&grpo).all(|(t, g)| t >= g);
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.4}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    report(
        8,
        "group-size direction",
        nondecreasing(&tempo) && nondecreasing(&grpo) && ahead,
        format!(
            "G=3,5,7,9 median final success: tempo [{}], grpo [{}]",
            fmt(&tempo),
            fmt(&grpo)
        ),
    );
}

#[test]
fn c09_branch_count_direction() {
    let env = BranchEnv::default();
    let counts = [1usize, 2, 4];
    let base = TrainConfig {
        updates: 1000,
        ..TrainConfig::default()
    };
    let medians = |m: Method| -> Vec<f64> {
        let reports = sweep(
            &env,
            &base.with_method(m),
            SweepAxis::BranchCount,
            &counts,
            &SEEDS,
        )
        .unwrap();
        reports
            .chunks(SEEDS.len())
            .map(median_updates_to_threshold)
            .collect()
    };
    let tempo = medians(Method::Tempo);
    let grpo = medians(Method::Grpo);
    let gaps: Vec<f64> = grpo.iter().zip(&tempo).map(|(g, t)| g - t).collect();
    let gaps_ok = gaps.windows(2).all(|w| w[1] >= w[0]);

    let flat = BranchEnv::new(12, 8, &[])
        .unwrap()
        .with_rule(RewardRule::Probabilistic { base_rate: 0.5 })
        .unwrap();
    let flat_cfg = TrainConfig {
        updates: 50,
        filler_bias: 60.0,
        ..TrainConfig::default()
    };
    let mut identical = 0usize;
    let mut branch_free = true;
    for &s in &SEEDS {
        let t = train(&flat, &flat_cfg.with_method(Method::Tempo).with_seed(s)).unwrap();
        let g = train(&flat, &flat_cfg.with_method(Method::Grpo).with_seed(s)).unwrap();
        branch_free &= t.mean_branch_count.iter().all(|&k| k == 0.0);
        let same = t.success.len() == g.success.len()
            && t.success
                .iter()
                .zip(&g.success)
                .all(|(a, b)| a.to_bits() == b.to_bits())
            && t.batch_success
                .iter()
                .zip(&g.batch_success)
                .all(|(a, b)| a.to_bits() == b.to_bits());
        identical += usize::from(same);
    }
    report(
        9,
        "branch-count direction",
        gaps_ok && branch_free && identical == SEEDS.len(),
        format!(
            "decisions 1,2,4: tempo {tempo:?}, grpo {grpo:?}, gaps {gaps:?}; zero-decision runs identical {identical}/{}",
            SEEDS.len()
        ),
    );
}

fn fixture_1000() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut text = String::new();
    let mut written = 0;
    let mut prompt = 0;
    while written < 1000 {
        let size = rng.gen_range(1..=8).min(1000 - written);
        let stem: Vec<u32> = (0..rng.gen_range(0..4))
            .map(|_| rng.gen_range(0..6))
            .collect();
        for _ in 0..size {
            let mut tokens = stem.clone();
            tokens.extend((0..rng.gen_range(1..10)).map(|_| rng.gen_range(0..6)));
            let reward = u8::from(rng.gen_bool(0.4));
            text.push_str(&format!(
                "{{\"prompt_id\":\"q{prompt}\",\"tokens\":{tokens:?},\"reward\":{reward}}}\n"
            ));
        }
        written += size;
        prompt += 1;
    }
    text
}

#[test]
fn c10_cli_determinism_and_round_trip() {
    let input = fixture_1000();
    let opts = AdvOptions::method(Method::Tempo);
    let run = || {
        let mut out = Vec::new();
        cmd_adv(input.as_bytes(), &mut out, &opts, &mut std::io::sink()).unwrap();
        out
    };
    let first = run();
    let second = run();
    let records: Vec<serde_json::Value> = String::from_utf8_lossy(&first)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let order_ok = input.lines().zip(&records).all(|(line, rec)| {
        let src: serde_json::Value = serde_json::from_str(line).unwrap();
        src["prompt_id"] == rec["prompt_id"]
            && src["tokens"].as_array().unwrap().len()
                == rec["advantages"].as_array().unwrap().len()
    });

    let mut child = Command::new(env!("CARGO_BIN_EXE_tempo"))
        .args(["adv", "--method", "tempo"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(input.as_bytes())
        .unwrap();
    let binary = child.wait_with_output().unwrap().stdout;

    let fig2 = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/fig2.jsonl");
    let mut tree_out = Vec::new();
    cmd_tree(
        std::io::BufReader::new(std::fs::File::open(fig2).unwrap()),
        &mut tree_out,
        false,
    )
    .unwrap();
    let fig2_node = String::from_utf8_lossy(&tree_out)
        .lines()
        .map(|l| serde_json::from_str::<TreeNodeRecord>(l).unwrap())
        .any(|n| n.value == 0.5 && n.descendant_count == 2);

    report(
        10,
        "CLI determinism",
        first == second && first == binary && records.len() == 1000 && order_ok && fig2_node,
        format!(
            "{} records, repeat identical {}, binary identical {}, order preserved {order_ok}, fig2 node V=0.5 n=2 {fig2_node}",
            records.len(),
            first == second,
            first == binary
        ),
    );
}

#[test]
fn fig2_tokens_fixture_shape() {
    // guard: the fixture encodes the figure's branching structure
    let fig2 = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/fig2.jsonl");
    let text = std::fs::read_to_string(fig2).unwrap();
    let group = Group::from_sequences(text.lines().map(|l| {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        let toks: Vec<TokenId> = v["tokens"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| TokenId(t.as_u64().unwrap() as u32))
            .collect();
        (toks, v["reward"].as_f64().unwrap())
    }))
    .unwrap();
    let tree = PrefixTree::<f64>::build(&group).unwrap();
    assert_eq!(
        tree.prefix_value(&tempo::tree::tokens(&[10, 11, 12]))
            .unwrap(),
        0.5
    );
}
