//! Semantics of the algorithmic skeletons.
//!
//! Every skeleton carries its own executable specification: strip the
//! parallelism with `sequentialize()` and the result must be the same. The
//! tests here run each skeleton against that oracle on all three backends,
//! then pin the topology-specific behavior — what a ring node actually
//! receives, which neighbors feed a torus node, how a pipe orders its
//! stages — with hand-computed expectations.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use flows::{
    farm, farm_chunk, lift, par_both, par_compose, par_eval_2, par_eval_n, par_eval_n_lazy,
    par_fanout, par_map, par_map_stream, pipe, pipe2, ring, stream, torus, BackendConf, DistConf,
    FlowError, PoolConf, StreamReceiver, StreamSender,
};

fn all_confs() -> Vec<(&'static str, BackendConf)> {
    vec![
        ("sequential", BackendConf::sequential()),
        ("pool(2)", BackendConf::pool(2)),
        ("dist(2)", BackendConf::dist(2)),
    ]
}

// ----- data-parallel skeletons --------------------------------------------------

#[test]
fn par_map_is_map() {
    let inputs: Vec<i64> = (-3..9).collect();
    let oracle: Vec<i64> = inputs.iter().map(|x| x * x).collect();
    for (name, conf) in all_confs() {
        let flow = par_map(&conf, lift(|x: i64| x * x));
        assert_eq!(flow.run(inputs.clone()).unwrap(), oracle, "on {name}");
        assert_eq!(
            flow.sequentialize().run(inputs.clone()).unwrap(),
            oracle,
            "sequentialized on {name}"
        );
        assert!(flow.run(vec![]).unwrap().is_empty(), "empty map on {name}");
    }
}

#[test]
fn farm_reassembles_original_order_for_any_worker_count() {
    let inputs: Vec<i64> = (0..11).collect();
    let oracle: Vec<i64> = inputs.iter().map(|x| x * 10).collect();
    for (name, conf) in all_confs() {
        for workers in 1..=5 {
            let flow = farm(&conf, workers, lift(|x: i64| x * 10));
            assert_eq!(
                flow.run(inputs.clone()).unwrap(),
                oracle,
                "farm({workers}) on {name}"
            );
        }
        // More workers than elements: the extra mappers get empty slices.
        let wide = farm(&conf, 7, lift(|x: i64| x * 10));
        assert_eq!(wide.run(vec![1, 2, 3]).unwrap(), vec![10, 20, 30], "on {name}");
        assert!(wide.run(vec![]).unwrap().is_empty(), "empty farm on {name}");
    }
}

#[test]
fn farm_chunk_is_farm_with_bounded_residency() {
    let inputs: Vec<i64> = (0..13).collect();
    let oracle: Vec<i64> = inputs.iter().map(|x| x + 100).collect();
    for (name, conf) in all_confs() {
        for chunk_size in [1, 2, 3, 64] {
            let flow = farm_chunk(&conf, 4, chunk_size, lift(|x: i64| x + 100));
            assert_eq!(
                flow.run(inputs.clone()).unwrap(),
                oracle,
                "farm_chunk(4, {chunk_size}) on {name}"
            );
        }
    }
}

#[test]
fn par_eval_n_lazy_matches_the_eager_stage() {
    let fs = |n: usize| -> Vec<flows::Flow<i64, i64>> {
        (0..n).map(|i| lift(move |x: i64| x + i as i64)).collect()
    };
    let inputs: Vec<i64> = (0..7).map(|x| x * 2).collect();
    let oracle = par_eval_n(&BackendConf::sequential(), fs(7))
        .run(inputs.clone())
        .unwrap();
    for (name, conf) in all_confs() {
        for chunk_size in [1, 2, 3, 7, 100] {
            let got = par_eval_n_lazy(&conf, fs(7), chunk_size)
                .run(inputs.clone())
                .unwrap();
            assert_eq!(got, oracle, "chunk size {chunk_size} on {name}");
        }
    }
}

#[test]
fn par_eval_2_runs_two_types_side_by_side() {
    for (name, conf) in all_confs() {
        let flow = par_eval_2(
            &conf,
            lift(|x: i64| x.to_string()),
            lift(|s: String| s.len() as u64),
        );
        let (rendered, len) = flow.run((-1234, "hello".to_string())).unwrap();
        assert_eq!((rendered.as_str(), len), ("-1234", 5), "on {name}");
    }
}

#[test]
fn par_both_and_par_fanout_use_the_default_conf() {
    let (a, b) = par_both(lift(|x: i64| x + 1), lift(|s: String| s + "!"))
        .run((4, "hi".to_string()))
        .unwrap();
    assert_eq!((a, b.as_str()), (5, "hi!"));

    let (sq, neg) = par_fanout(lift(|x: i64| x * x), lift(|x: i64| -x))
        .run(6)
        .unwrap();
    assert_eq!((sq, neg), (36, -6));
}

// ----- pipelines -----------------------------------------------------------------

#[test]
fn pipe_applies_stages_left_to_right() {
    let stages = || {
        vec![
            lift(|x: i64| x + 1),
            lift(|x: i64| x * 3),
            lift(|x: i64| x - 5),
        ]
    };
    for (name, conf) in all_confs() {
        let flow = pipe(&conf, stages());
        assert_eq!(flow.run(10).unwrap(), (10 + 1) * 3 - 5, "on {name}");
        // Rerunnable: the stage streams are rebuilt per run.
        assert_eq!(flow.run(0).unwrap(), -2, "second run on {name}");
        // The sequentialization is the plain composition.
        assert_eq!(flow.sequentialize().run(10).unwrap(), 28, "oracle on {name}");
        // A one-stage pipe is just that stage.
        assert_eq!(pipe(&conf, vec![lift(|x: i64| x * 2)]).run(8).unwrap(), 16);
    }
}

#[test]
fn pipe2_carries_a_value_across_two_types() {
    for (name, conf) in all_confs() {
        let flow = pipe2(
            &conf,
            lift(|x: i64| x.to_string()),
            lift(|s: String| s.len() as u64),
        );
        assert_eq!(flow.run(-31337).unwrap(), 6, "on {name}");
        assert_eq!(flow.run(0).unwrap(), 1, "second run on {name}");
    }
}

#[test]
fn par_compose_is_composition() {
    let flow = par_compose(lift(|x: i64| x + 7), lift(|x: i64| x * x));
    assert_eq!(flow.run(3).unwrap(), 100);
}

// ----- cyclic topologies -----------------------------------------------------------

#[test]
fn ring_nodes_hear_their_predecessor() {
    // Each node sends its own input clockwise and reports what arrived:
    // the result is the input list rotated right.
    let node = |input: i64, rx: &StreamReceiver<i64>, tx: &StreamSender<i64>| {
        tx.send(input)?;
        rx.recv()?.ok_or(FlowError::ChannelClosed {
            context: "ring predecessor closed early",
        })
    };
    for (name, conf) in all_confs() {
        let flow = ring(&conf, node);
        assert_eq!(flow.run(vec![1, 2, 3]).unwrap(), vec![3, 1, 2], "on {name}");
        assert_eq!(
            flow.run(vec![10, 20, 30, 40]).unwrap(),
            vec![40, 10, 20, 30],
            "on {name}"
        );
        // A singleton ring is its own neighbor.
        assert_eq!(flow.run(vec![9]).unwrap(), vec![9], "singleton on {name}");
        // An empty ring has nothing to do.
        assert!(flow.run(vec![]).unwrap().is_empty(), "empty ring on {name}");
        // The oracle agrees.
        assert_eq!(
            flow.sequentialize().run(vec![1, 2, 3]).unwrap(),
            vec![3, 1, 2],
            "oracle on {name}"
        );
    }
}

#[test]
fn ring_traffic_can_circulate_multiple_rounds() {
    // All-reduce: every value visits every node, so each node ends with the
    // total. Exercises repeated sends/receives per edge in one run.
    for (name, conf) in all_confs() {
        for n in 1..=5usize {
            let node = move |input: i64, rx: &StreamReceiver<i64>, tx: &StreamSender<i64>| {
                if n > 1 {
                    tx.send(input)?;
                }
                let mut acc = input;
                for round in 1..n {
                    let v = rx.recv()?.ok_or(FlowError::ChannelClosed {
                        context: "ring round cut short",
                    })?;
                    acc += v;
                    if round < n - 1 {
                        tx.send(v)?;
                    }
                }
                Ok(acc)
            };
            let inputs: Vec<i64> = (1..=n as i64).collect();
            let total: i64 = inputs.iter().sum();
            let got = ring(&conf, node).run(inputs).unwrap();
            assert_eq!(got, vec![total; n], "all-reduce over {n} nodes on {name}");
        }
    }
}

#[test]
fn torus_nodes_hear_their_left_and_upper_neighbors() {
    // Each node sends its input right and down, then reports
    // (own, from-left, from-above). Every neighbor index is mod s, so the
    // expectations below are the wrapped grid neighbors.
    let node = |input: i64,
                from_left: &StreamReceiver<i64>,
                from_above: &StreamReceiver<i64>,
                to_right: &StreamSender<i64>,
                to_below: &StreamSender<i64>| {
        to_right.send(input)?;
        to_below.send(input)?;
        let closed = |context| FlowError::ChannelClosed { context };
        let left = from_left.recv()?.ok_or(closed("left neighbor"))?;
        let above = from_above.recv()?.ok_or(closed("upper neighbor"))?;
        Ok((input, left, above))
    };
    for (name, conf) in all_confs() {
        let flow = torus(&conf, node);
        let got = flow.run(vec![vec![1, 2], vec![3, 4]]).unwrap();
        assert_eq!(
            got,
            vec![
                vec![(1, 2, 3), (2, 1, 4)],
                vec![(3, 4, 1), (4, 3, 2)],
            ],
            "2x2 torus on {name}"
        );
        // A 1x1 torus wraps onto itself on both axes.
        assert_eq!(
            flow.run(vec![vec![5]]).unwrap(),
            vec![vec![(5, 5, 5)]],
            "1x1 torus on {name}"
        );
        assert_eq!(
            flow.sequentialize().run(vec![vec![1, 2], vec![3, 4]]).unwrap(),
            vec![
                vec![(1, 2, 3), (2, 1, 4)],
                vec![(3, 4, 1), (4, 3, 2)],
            ],
            "oracle on {name}"
        );
    }
}

#[test]
fn torus_rejects_non_square_grids() {
    let flow = torus(
        &BackendConf::sequential(),
        |x: i64, _: &StreamReceiver<i64>, _: &StreamReceiver<i64>, _, _| Ok(x),
    );
    assert_eq!(
        flow.run(vec![vec![1, 2], vec![3]]).unwrap_err(),
        FlowError::NonSquareInput {
            rows: 2,
            bad_row: 1,
            bad_len: 1,
        }
    );
    assert_eq!(
        flow.run(vec![vec![1, 2, 3], vec![4, 5, 6]]).unwrap_err(),
        FlowError::NonSquareInput {
            rows: 2,
            bad_row: 0,
            bad_len: 3,
        }
    );
}

#[test]
fn a_node_that_breaks_the_progress_rule_times_out() {
    // Receiving before any send violates the progress rule; every node
    // blocks on its predecessor and the timeout fires instead of a hang.
    let node = |_: i64, rx: &StreamReceiver<i64>, _tx: &StreamSender<i64>| {
        rx.recv()?.ok_or(FlowError::ChannelClosed {
            context: "nothing was ever sent",
        })
    };
    let mut pool = PoolConf::new(2);
    pool.recv_timeout = Duration::from_millis(80);
    let mut dist = DistConf::new(2);
    dist.recv_timeout = Duration::from_millis(80);
    for conf in [BackendConf::Pool(pool), BackendConf::Dist(dist)] {
        // A self-ring is deterministic: the node's own outbound edge stays
        // open (it holds the sender itself), so the only possible outcome
        // is its receive timing out.
        let err = ring(&conf, node).run(vec![1]).unwrap_err();
        match err {
            FlowError::DeadlockTimeout { waited_ms, .. } => assert!(waited_ms >= 80),
            other => panic!("expected a deadlock timeout, got {other:?}"),
        }

        // With two stuck nodes, whichever times out first tears its
        // outbound edge down, so the other may observe a closed channel
        // instead; the guarantee is failing fast, not which node reports.
        let err = ring(&conf, node).run(vec![1, 2]).unwrap_err();
        assert!(
            matches!(
                err,
                FlowError::DeadlockTimeout { .. } | FlowError::ChannelClosed { .. }
            ),
            "expected fast failure, got {err:?}"
        );
    }
}

// ----- streaming -------------------------------------------------------------------

#[test]
fn par_map_stream_chunking_is_invisible_downstream() {
    let items: Vec<i64> = (0..10).collect();
    let oracle: Vec<i64> = items.iter().map(|x| x * 7).collect();
    for (name, conf) in all_confs() {
        for chunk_size in [1, 3, 10, 100] {
            let (tx_in, rx_in) = stream::<i64>(&conf);
            let (tx_out, rx_out) = stream::<i64>(&conf);
            for &x in &items {
                tx_in.send(x).unwrap();
            }
            tx_in.close();
            par_map_stream(&conf, lift(|x: i64| x * 7), chunk_size, &rx_in, &tx_out).unwrap();
            assert_eq!(
                rx_out.drain().unwrap(),
                oracle,
                "chunk size {chunk_size} on {name}"
            );
        }
    }
}

#[test]
fn par_map_stream_closes_its_output_even_on_failure() {
    let conf = BackendConf::pool(2);
    let (tx_in, rx_in) = stream::<i64>(&conf);
    let (tx_out, rx_out) = stream::<i64>(&conf);
    for x in 0..6 {
        tx_in.send(x).unwrap();
    }
    tx_in.close();
    let failing = lift(|x: i64| {
        if x == 4 {
            panic!("poison element");
        }
        x
    });
    let err = par_map_stream(&conf, failing, 2, &rx_in, &tx_out).unwrap_err();
    assert!(matches!(err, FlowError::TaskPanicked { index: 0, .. }));
    // The chunks before the poison went through, and the stream then ended
    // cleanly — a reader sees EOS, not a hang.
    assert_eq!(rx_out.drain().unwrap(), vec![0, 1, 2, 3]);
}

// ----- the parallel structure is unobservable in the results ------------------------

type NamedSkeletons = Vec<(&'static str, flows::Flow<Vec<i64>, Vec<i64>>)>;

#[test]
fn skeletons_agree_with_their_sequentialization_under_dist() {
    let conf = BackendConf::dist(3);
    let inputs: Vec<i64> = (0..12).collect();

    let skeletons: NamedSkeletons = vec![
        ("par_map", par_map(&conf, lift(|x: i64| x * 31 + 1))),
        ("farm", farm(&conf, 3, lift(|x: i64| x * 31 + 1))),
        ("farm_chunk", farm_chunk(&conf, 3, 2, lift(|x: i64| x * 31 + 1))),
        (
            "ring",
            ring(&conf, |x: i64, rx: &StreamReceiver<i64>, tx: &StreamSender<i64>| {
                tx.send(x * 31 + 1)?;
                rx.recv()?.ok_or(FlowError::ChannelClosed {
                    context: "ring predecessor closed early",
                })
            }),
        ),
    ];
    for (name, flow) in skeletons {
        assert_eq!(
            flow.run(inputs.clone()).unwrap(),
            flow.sequentialize().run(inputs.clone()).unwrap(),
            "{name} diverges from its own sequentialization"
        );
    }
}

#[test]
fn composed_skeletons_only_build_once_run_many() {
    // A skeleton graph performs no work at construction and is reusable.
    let calls = Arc::new(AtomicUsize::new(0));
    let seen = Arc::clone(&calls);
    let conf = BackendConf::pool(2);
    let flow = par_map(
        &conf,
        lift(move |x: i64| {
            seen.fetch_add(1, Ordering::SeqCst);
            x + 1
        }),
    )
    .then(farm(&conf, 2, lift(|x: i64| x * 2)));
    assert_eq!(calls.load(Ordering::SeqCst), 0);
    assert_eq!(flow.run(vec![1, 2, 3]).unwrap(), vec![4, 6, 8]);
    assert_eq!(calls.load(Ordering::SeqCst), 3);
    assert_eq!(flow.run(vec![1, 2, 3]).unwrap(), vec![4, 6, 8]);
    assert_eq!(calls.load(Ordering::SeqCst), 6);
}
