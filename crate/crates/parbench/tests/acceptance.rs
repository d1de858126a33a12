//! The acceptance gate: eight numbered criteria, one test each.
//!
//! Every test prints a `[cN] ...` summary line (visible with
//! `--nocapture`) and asserts the criterion's stated tolerances. The tests
//! share a lock so timing-sensitive measurements never run concurrently
//! with other work in this binary.

use std::sync::{Arc, Mutex, PoisonError};
use std::time::{Duration, Instant};

use flows::{
    eval_n, farm, farm_chunk, get, lift, par_eval_n, par_eval_n_lazy, par_map, pipe, put,
    right_rotate, ring, shuffle, stats, take_each, torus, unshuffle, BackendConf, DistConf, Flow,
    FlowError, PoolConf, StreamReceiver, StreamSender, TraceKind, TraceLog, TAG_FUT_PAYLOAD,
    TAG_FUT_REQ, TAG_TASK_IN, TAG_TASK_OUT,
};
use parbench::{
    direct_pool_dispatch, first_primes, gentleman_matmul, mersenne, overhead_pct, rabin_miller,
    rabin_miller_seq, random_matrix, seq_mat_mul, speedup, time_reps, Verdict,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static GATE: Mutex<()> = Mutex::new(());

fn serialized() -> std::sync::MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(PoisonError::into_inner)
}

// ----- c1: oracle equivalence over randomized cases ------------------------------

fn random_op(rng: &mut ChaCha8Rng) -> Flow<i64, i64> {
    match rng.random_range(0..4) {
        0 => {
            let k = rng.random_range(-5i64..=5);
            lift(move |x: i64| x.wrapping_add(k))
        }
        1 => {
            let k = rng.random_range(-3i64..=3);
            lift(move |x: i64| x.wrapping_mul(k))
        }
        2 => lift(|x: i64| x.wrapping_neg()),
        _ => {
            let k = rng.random_range(0..=u32::MAX) as i64;
            lift(move |x: i64| x ^ k)
        }
    }
}

fn random_inputs(rng: &mut ChaCha8Rng, len: usize) -> Vec<i64> {
    (0..len).map(|_| rng.random()).collect()
}

#[test]
fn c1_oracle_equivalence_over_1000_randomized_cases() {
    let _guard = serialized();
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xFEED);
    let confs = [
        BackendConf::sequential(),
        BackendConf::pool(1),
        BackendConf::pool(3),
        BackendConf::dist(1),
        BackendConf::dist(3),
    ];
    let mut cases = 0usize;

    for i in 0..160 {
        let conf = &confs[i % confs.len()];

        // par_eval_n with heterogeneous random ops.
        let m = rng.random_range(0..=10);
        let fs: Vec<Flow<i64, i64>> = (0..m).map(|_| random_op(&mut rng)).collect();
        let len = rng.random_range(0..=14);
        let inputs = random_inputs(&mut rng, len);
        let stage = par_eval_n(conf, fs.clone());
        assert_eq!(
            stage.run(inputs.clone()).unwrap(),
            stage.sequentialize().run(inputs.clone()).unwrap()
        );
        assert_eq!(
            stage.run(inputs.clone()).unwrap(),
            eval_n(fs).run(inputs).unwrap()
        );
        cases += 2;

        // par_map.
        let f = random_op(&mut rng);
        let len = rng.random_range(0..=14);
        let inputs = random_inputs(&mut rng, len);
        let pm = par_map(conf, f);
        assert_eq!(
            pm.run(inputs.clone()).unwrap(),
            pm.sequentialize().run(inputs).unwrap()
        );
        cases += 1;

        // farm and farm_chunk.
        let workers = rng.random_range(1..=4);
        let f = random_op(&mut rng);
        let len = rng.random_range(0..=14);
        let inputs = random_inputs(&mut rng, len);
        let fm = farm(conf, workers, f.clone());
        assert_eq!(
            fm.run(inputs.clone()).unwrap(),
            fm.sequentialize().run(inputs.clone()).unwrap()
        );
        let chunk = rng.random_range(1..=4);
        let fc = farm_chunk(conf, workers, chunk, f);
        assert_eq!(
            fc.run(inputs.clone()).unwrap(),
            fc.sequentialize().run(inputs).unwrap()
        );
        cases += 2;

        // par_eval_n_lazy.
        let m = rng.random_range(1..=8);
        let fs: Vec<Flow<i64, i64>> = (0..m).map(|_| random_op(&mut rng)).collect();
        let chunk = rng.random_range(1..=4);
        let len = rng.random_range(0..=10);
        let inputs = random_inputs(&mut rng, len);
        let lazy = par_eval_n_lazy(conf, fs, chunk);
        assert_eq!(
            lazy.run(inputs.clone()).unwrap(),
            lazy.sequentialize().run(inputs).unwrap()
        );
        cases += 1;

        // pipe.
        let stages: Vec<Flow<i64, i64>> =
            (0..rng.random_range(1..=4)).map(|_| random_op(&mut rng)).collect();
        let x: i64 = rng.random();
        let p = pipe(conf, stages);
        assert_eq!(p.run(x).unwrap(), p.sequentialize().run(x).unwrap());
        cases += 1;

        // Token ring: output is the input rotated right.
        let len = rng.random_range(0..=6);
        let inputs = random_inputs(&mut rng, len);
        let rg = ring(
            conf,
            |x: i64, rx: &StreamReceiver<i64>, tx: &StreamSender<i64>| {
                tx.send(x)?;
                rx.recv()?.ok_or(FlowError::ChannelClosed {
                    context: "ring predecessor closed early",
                })
            },
        );
        assert_eq!(rg.run(inputs.clone()).unwrap(), right_rotate(inputs.clone()));
        assert_eq!(
            rg.sequentialize().run(inputs.clone()).unwrap(),
            right_rotate(inputs)
        );
        cases += 2;

        // Neighbor torus.
        let s = rng.random_range(1..=2);
        let grid: Vec<Vec<i64>> = (0..s).map(|_| random_inputs(&mut rng, s)).collect();
        let tr = torus(
            conf,
            |x: i64,
             left: &StreamReceiver<i64>,
             above: &StreamReceiver<i64>,
             right: &StreamSender<i64>,
             below: &StreamSender<i64>| {
                right.send(x)?;
                below.send(x)?;
                let closed = |context| FlowError::ChannelClosed { context };
                let l = left.recv()?.ok_or(closed("left"))?;
                let a = above.recv()?.ok_or(closed("above"))?;
                Ok(x.wrapping_add(l).wrapping_mul(31).wrapping_add(a))
            },
        );
        assert_eq!(
            tr.run(grid.clone()).unwrap(),
            tr.sequentialize().run(grid).unwrap()
        );
        cases += 1;
    }

    let elapsed = started.elapsed();
    assert!(cases >= 1000, "only {cases} cases were exercised");
    assert!(
        elapsed < Duration::from_secs(60),
        "criterion allows 60 s, took {elapsed:?}"
    );
    println!(
        "[c1] PASS: {cases} randomized skeleton/backend cases matched the sequential oracle in {elapsed:.2?}"
    );
}

// ----- c2: speedup of the Rabin-Miller farm ---------------------------------------

#[test]
fn c2_rabin_miller_speedup_on_a_multicore_machine() {
    let _guard = serialized();
    let started = Instant::now();
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);

    let n = mersenne(2203);
    let bases = first_primes(64);
    let seq_conf = BackendConf::sequential();
    let pool_conf = BackendConf::pool(4);

    let seq_t = time_reps(5, || rabin_miller(&n, &bases, &seq_conf).unwrap()).unwrap();
    let pool_t = time_reps(5, || rabin_miller(&n, &bases, &pool_conf).unwrap()).unwrap();
    let sp = speedup(&seq_t, &pool_t);

    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(300),
        "criterion allows 5 min, took {elapsed:?}"
    );

    if cores >= 4 {
        assert!(
            sp >= 2.5,
            "speedup {sp:.2} < 2.5 on a {cores}-core machine \
             (seq {:.3} s, pool(4) {:.3} s)",
            seq_t.mean_s,
            pool_t.mean_s
        );
        println!(
            "[c2] PASS: speedup {sp:.2}x on {cores} cores (seq {:.3} s, pool(4) {:.3} s, 5 reps, {elapsed:.2?})",
            seq_t.mean_s, pool_t.mean_s
        );
    } else {
        // The criterion is stated for a >= 4-core machine; on fewer cores
        // the measurement is reported but the threshold cannot apply.
        println!(
            "[c2] SKIP: requires >= 4 cores, this machine has {cores}; measured speedup {sp:.2}x \
             (seq {:.3} s, pool(4) {:.3} s, 5 reps, {elapsed:.2?})",
            seq_t.mean_s, pool_t.mean_s
        );
    }
}

// ----- c3: combinator overhead against direct dispatch ----------------------------

/// Spins for roughly `ms` milliseconds of wall time and returns the number
/// of loop iterations, so the work cannot be optimized away.
fn spin_task(ms: u64) -> u64 {
    let deadline = Instant::now() + Duration::from_millis(ms);
    let mut spins = 0u64;
    while Instant::now() < deadline {
        spins = spins.wrapping_add(1);
        std::hint::spin_loop();
    }
    spins
}

#[test]
fn c3_par_map_overhead_stays_within_fifteen_percent() {
    let _guard = serialized();
    let conf = BackendConf::pool(4);
    let tasks = 16usize;

    let flow = par_map(&conf, lift(|_: i64| spin_task(10)));
    let flow_t = time_reps(10, || flow.run(vec![0i64; tasks]).unwrap()).unwrap();

    let directs: Vec<_> = (0..tasks).map(|_| || spin_task(10)).collect();
    let direct_t = time_reps(10, || direct_pool_dispatch(4, &directs)).unwrap();

    let (ovh, err) = overhead_pct(&flow_t, &direct_t);
    assert!(
        ovh <= 15.0,
        "overhead {ovh:.2}% +/- {err:.2}% exceeds 15% \
         (flow {:.4} s, direct {:.4} s)",
        flow_t.mean_s,
        direct_t.mean_s
    );
    println!(
        "[c3] PASS: par_map overhead {ovh:+.2}% +/- {err:.2}% vs direct dispatch \
         (flow {:.4} s, direct {:.4} s, 16 x ~10 ms tasks, 10 reps)",
        flow_t.mean_s, direct_t.mean_s
    );
}

// ----- c4: futures keep inter-stage payloads off the master ------------------------

fn stage_fn(k: i64) -> Flow<i64, i64> {
    lift(move |x: i64| x.wrapping_mul(3).wrapping_add(k))
}

fn four_stage_plain(conf: &BackendConf) -> Flow<Vec<i64>, Vec<i64>> {
    let stage = |k: i64| par_eval_n(conf, vec![stage_fn(k); 8]);
    stage(0)
        .then(lift(right_rotate))
        .then(stage(1))
        .then(lift(right_rotate))
        .then(stage(2))
        .then(lift(right_rotate))
        .then(stage(3))
}

fn four_stage_with_futures(conf: &BackendConf) -> Flow<Vec<i64>, Vec<i64>> {
    let first = par_eval_n(conf, vec![stage_fn(0).then(put(conf)); 8]);
    let mid = |k: i64| par_eval_n(conf, vec![get().then(stage_fn(k)).then(put(conf)); 8]);
    let last = par_eval_n(conf, vec![get::<i64>().then(stage_fn(3)); 8]);
    first
        .then(lift(right_rotate))
        .then(mid(1))
        .then(lift(right_rotate))
        .then(mid(2))
        .then(lift(right_rotate))
        .then(last)
}

#[test]
fn c4_futures_route_interstage_payloads_directly_between_workers() {
    let _guard = serialized();
    let inputs: Vec<i64> = (0..8).collect();

    // Without futures every inter-stage value returns to the master and is
    // dispatched again: 4 stages x 8 items x (task.in + task.out).
    let plain_log = Arc::new(TraceLog::new());
    let plain_conf = BackendConf::Dist(DistConf::new(8).with_trace(Arc::clone(&plain_log)));
    let plain_out = four_stage_plain(&plain_conf).run(inputs.clone()).unwrap();

    let plain_events = plain_log.snapshot();
    let ps = stats(&plain_events);
    assert_eq!(ps.messages_total, 64);
    assert_eq!(ps.messages_via_master, 64, "every message touches the master");
    assert!(!ps.per_tag_counts.contains_key(TAG_FUT_REQ));
    assert!(!ps.per_tag_counts.contains_key(TAG_FUT_PAYLOAD));
    let all_bytes: u64 = plain_events
        .iter()
        .filter(|e| e.kind == TraceKind::MessageSent)
        .map(|e| e.bytes.unwrap() as u64)
        .sum();
    assert_eq!(
        ps.bytes_via_master, all_bytes,
        "100% of payload bytes traverse the master"
    );

    // With futures, only constant-size handles ride the task channel; the
    // rotation forces every redemption cross-worker, and none of that
    // traffic touches pid 0.
    let fut_log = Arc::new(TraceLog::new());
    let fut_conf = BackendConf::Dist(DistConf::new(8).with_trace(Arc::clone(&fut_log)));
    let fut_out = four_stage_with_futures(&fut_conf).run(inputs.clone()).unwrap();
    assert_eq!(fut_out, plain_out, "both variants compute the same pipeline");
    assert_eq!(
        fut_out,
        four_stage_plain(&plain_conf).sequentialize().run(inputs).unwrap()
    );

    let fut_events = fut_log.snapshot();
    let fs = stats(&fut_events);
    assert_eq!(fs.per_tag_counts[TAG_TASK_IN], 32);
    assert_eq!(fs.per_tag_counts[TAG_TASK_OUT], 32);
    assert_eq!(fs.per_tag_counts[TAG_FUT_REQ], 24, "3 boundaries x 8 items");
    assert_eq!(fs.per_tag_counts[TAG_FUT_PAYLOAD], 24);
    assert_eq!(fs.messages_total, 112);
    assert_eq!(fs.messages_via_master, 64, "only task dispatch touches pid 0");
    let master_fut_msgs = fut_events
        .iter()
        .filter(|e| {
            matches!(e.tag.as_deref(), Some(TAG_FUT_REQ) | Some(TAG_FUT_PAYLOAD))
                && (e.src == Some(0) || e.dst == Some(0))
        })
        .count();
    assert_eq!(master_fut_msgs, 0, "no future traffic has the master as an endpoint");

    println!(
        "[c4] PASS: plain pipe 64/64 messages via master; futures pipe 112 messages, \
         24 fut.req + 24 fut.payload all worker-to-worker, 0 via master"
    );
}

// ----- c5: torus matmul at size -----------------------------------------------------

#[test]
fn c5_torus_matmul_256_matches_the_oracle_bit_exactly() {
    let _guard = serialized();
    let started = Instant::now();
    let a = random_matrix(256, 1001);
    let b = random_matrix(256, 1002);
    let oracle = seq_mat_mul(&a, &b).unwrap();
    let got = gentleman_matmul(&a, &b, 4, &BackendConf::dist(4)).unwrap();
    assert_eq!(got, oracle, "torus product differs from the O(n^3) oracle");
    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(60),
        "criterion allows 60 s, took {elapsed:?}"
    );
    println!(
        "[c5] PASS: 256x256 product on a 2x2 simulated-distributed torus is bit-exact ({elapsed:.2?})"
    );
}

// ----- c6: Rabin-Miller correctness fixtures ----------------------------------------

#[test]
fn c6_rabin_miller_fixtures_and_verdict_parity() {
    let _guard = serialized();
    use num_bigint::BigUint;

    // 2047 = 23 * 89 is a strong pseudoprime to base 2 but not base 3.
    let n2047 = BigUint::from(2047u32);
    assert_eq!(
        rabin_miller_seq(&n2047, &[2]).unwrap(),
        Verdict::ProbablePrime
    );
    assert_eq!(
        rabin_miller_seq(&n2047, &[2, 3]).unwrap(),
        Verdict::Composite { index: 1, base: 3 }
    );
    // 8191 = 2^13 - 1 is prime.
    assert_eq!(
        rabin_miller_seq(&mersenne(13), &first_primes(20)).unwrap(),
        Verdict::ProbablePrime
    );

    // Parallel verdict equals sequential for 100 random odd 64-bit inputs,
    // on both parallel backends.
    let mut rng = ChaCha8Rng::seed_from_u64(0xC6);
    let pool = BackendConf::pool(4);
    let dist = BackendConf::dist(2);
    for _ in 0..100 {
        let n: u64 = rng.random_range(5..u64::MAX) | 1;
        let bases: Vec<u64> = (0..8).map(|_| rng.random_range(2..=n - 2)).collect();
        let big = BigUint::from(n);
        let expected = rabin_miller_seq(&big, &bases).unwrap();
        assert_eq!(
            rabin_miller(&big, &bases, &pool).unwrap(),
            expected,
            "pool disagrees at n={n}"
        );
        assert_eq!(
            rabin_miller(&big, &bases, &dist).unwrap(),
            expected,
            "dist disagrees at n={n}"
        );
    }
    println!(
        "[c6] PASS: 2047/8191 fixtures hold; parallel == sequential verdicts for 100 random odd u64"
    );
}

// ----- c7: ring and torus progress ---------------------------------------------------

#[test]
fn c7_ring_and_torus_progress_and_deadlock_detection() {
    let _guard = serialized();
    let confs = [
        BackendConf::sequential(),
        BackendConf::pool(2),
        BackendConf::dist(2),
    ];

    // Token rings of every size 1..=8 match the hand-derived rotation.
    for conf in &confs {
        for n in 1..=8usize {
            let inputs: Vec<i64> = (1..=n as i64).collect();
            let rg = ring(
                conf,
                |x: i64, rx: &StreamReceiver<i64>, tx: &StreamSender<i64>| {
                    tx.send(x)?;
                    rx.recv()?.ok_or(FlowError::ChannelClosed {
                        context: "ring predecessor closed early",
                    })
                },
            );
            assert_eq!(rg.run(inputs.clone()).unwrap(), right_rotate(inputs));
        }
    }

    // Neighbor tori of sizes 1..=3 match the hand-derived wrapped grid.
    for conf in &confs {
        for s in 1..=3usize {
            let grid: Vec<Vec<i64>> = (0..s)
                .map(|r| (0..s).map(|c| (r * s + c) as i64).collect())
                .collect();
            let expected: Vec<Vec<(i64, i64, i64)>> = (0..s)
                .map(|r| {
                    (0..s)
                        .map(|c| {
                            (
                                grid[r][c],
                                grid[r][(c + s - 1) % s],
                                grid[(r + s - 1) % s][c],
                            )
                        })
                        .collect()
                })
                .collect();
            let tr = torus(
                conf,
                |x: i64,
                 left: &StreamReceiver<i64>,
                 above: &StreamReceiver<i64>,
                 right: &StreamSender<i64>,
                 below: &StreamSender<i64>| {
                    right.send(x)?;
                    below.send(x)?;
                    let closed = |context| FlowError::ChannelClosed { context };
                    Ok((
                        x,
                        left.recv()?.ok_or(closed("left"))?,
                        above.recv()?.ok_or(closed("above"))?,
                    ))
                },
            );
            assert_eq!(tr.run(grid.clone()).unwrap(), expected, "torus size {s}");
        }
    }

    // A node that receives before anyone sends violates the progress rule.
    // On a self-ring the outcome is deterministic: its own edge stays open,
    // so the receive must time out — an error, not a hang.
    let mut pool = PoolConf::new(2);
    pool.recv_timeout = Duration::from_millis(100);
    let mut dist = DistConf::new(2);
    dist.recv_timeout = Duration::from_millis(100);
    for conf in [BackendConf::Pool(pool), BackendConf::Dist(dist)] {
        let violating = ring(
            &conf,
            |_: i64, rx: &StreamReceiver<i64>, _tx: &StreamSender<i64>| {
                rx.recv()?.ok_or(FlowError::ChannelClosed {
                    context: "nothing was ever sent",
                })
            },
        );
        let started = Instant::now();
        let err = violating.run(vec![1]).unwrap_err();
        assert!(
            matches!(err, FlowError::DeadlockTimeout { .. }),
            "expected DeadlockTimeout, got {err:?}"
        );
        assert!(started.elapsed() < Duration::from_secs(5), "not a hang");

        // Multi-node wedges also fail fast; the surfaced error may be the
        // timeout itself or a neighbor observing the timed-out node's edge.
        let started = Instant::now();
        let err = violating.run(vec![1, 2, 3]).unwrap_err();
        assert!(
            matches!(
                err,
                FlowError::DeadlockTimeout { .. } | FlowError::ChannelClosed { .. }
            ),
            "expected fast failure, got {err:?}"
        );
        assert!(started.elapsed() < Duration::from_secs(5), "not a hang");
    }

    println!(
        "[c7] PASS: rings 1..=8 and tori 1..=3 match hand-derived outputs on all backends; \
         a contract-violating node times out instead of hanging"
    );
}

// ----- c8: list operations against their reference definitions -----------------------

/// Reference `takeEach`: first element, then every n-th after it.
fn oracle_take_each(n: usize, xs: &[i64]) -> Vec<i64> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < xs.len() {
        out.push(xs[i]);
        i += n;
    }
    out
}

/// Reference `unshuffle`: slice `i` takes every n-th element starting at
/// offset `i`.
fn oracle_unshuffle(n: usize, xs: &[i64]) -> Vec<Vec<i64>> {
    (0..n)
        .map(|i| {
            if i <= xs.len() {
                oracle_take_each(n, &xs[i..])
            } else {
                Vec::new()
            }
        })
        .collect()
}

/// Reference `shuffle`: concatenation of the ragged transpose.
fn oracle_shuffle(slices: &[Vec<i64>]) -> Vec<i64> {
    let mut out = Vec::new();
    let mut k = 0;
    loop {
        let mut any = false;
        for slice in slices {
            if let Some(&v) = slice.get(k) {
                out.push(v);
                any = true;
            }
        }
        if !any {
            return out;
        }
        k += 1;
    }
}

/// Reference `rightRotate`: last element to the front.
fn oracle_right_rotate(xs: &[i64]) -> Vec<i64> {
    match xs.split_last() {
        Some((last, init)) => std::iter::once(*last).chain(init.iter().copied()).collect(),
        None => Vec::new(),
    }
}

#[test]
fn c8_list_operations_match_reference_definitions_exhaustively() {
    let _guard = serialized();
    let mut checked = 0usize;
    for len in 0..=8usize {
        let xs: Vec<i64> = (0..len as i64).collect();
        assert_eq!(right_rotate(xs.clone()), oracle_right_rotate(&xs));
        checked += 1;
        for n in 1..=4usize {
            assert_eq!(take_each(n, &xs), oracle_take_each(n, &xs), "takeEach {n} {xs:?}");
            let slices = unshuffle(n, xs.clone());
            assert_eq!(slices, oracle_unshuffle(n, &xs), "unshuffle {n} {xs:?}");
            assert_eq!(slices.len(), n, "unshuffle yields exactly n slices");
            assert_eq!(shuffle(slices.clone()), oracle_shuffle(&slices));
            assert_eq!(shuffle(slices), xs, "shuffle inverts unshuffle");
            checked += 4;
        }
    }
    println!(
        "[c8] PASS: {checked} exhaustive list-op cases (lists <= 8, n <= 4) match the reference definitions"
    );
}
