use adcr_core::metrics::{CreativeRanker, RankContext};
use adcr_core::pipeline::*;
use adcr_core::simworld::{
    generate_world, NoisyOracleRanker, OracleRanker, RandomRanker, World, WorldConfig,
};
use adcr_core::{AdId, CreativeId};
use proptest::prelude::*;

fn world() -> World {
    generate_world(&WorldConfig {
        num_users: 200,
        num_ads: 200,
        warmup_impressions_per_user: 50,
        ..WorldConfig::default()
    })
    .unwrap()
}

fn costs(fixed_ms: f64, per_us: f64) -> StageCosts {
    StageCosts {
        retrieval_ms: 0.0,
        ar_ms: 90.0,
        cr_fixed_ms: fixed_ms,
        cr_per_candidate_us: per_us,
        overhead_ms: 0.0,
    }
}

fn arm<'a>(name: &'a str, a: Architecture, models: Models<'a>) -> Arm<'a> {
    Arm {
        name,
        plan: ArchitecturePlan::new(a, costs(3.0, 5.0)),
        models,
    }
}

fn opts(slots: usize) -> ServeOptions {
    ServeOptions {
        slots,
        seed: 5,
        latency_candidates: None,
    }
}

#[test]
fn calibrated_costs_reproduce_the_response_times() {
    let rt = |a, fixed, per| plan_latency(&ArchitecturePlan::new(a, costs(fixed, per)), 1000, 5, 4).unwrap();
    // creative stage on all 5000 creatives: 3 ms + 25 ms
    assert_eq!(rt(Architecture::PeriCr, 3.0, 5.0), Nanos(90_000_000));
    // 20 survivor creatives: 3 ms + 1 ms
    assert_eq!(rt(Architecture::PostCr, 3.0, 50.0), Nanos(94_000_000));
    // serial 2 ms + 15 ms
    assert_eq!(rt(Architecture::PreCr, 2.0, 3.0), Nanos(107_000_000));
    assert_eq!(rt(Architecture::NoCr, 0.0, 0.0).ms(), 90.0);
}

#[test]
fn request_stream_is_shared_and_deterministic() {
    let w = world();
    let a = make_request(&w, 3, 17, 50).unwrap();
    assert_eq!(a, make_request(&w, 3, 17, 50).unwrap());
    assert_eq!(a.candidates.len(), 50);
    let mut d = a.candidates.clone();
    d.dedup();
    assert_eq!(d.len(), 50);
    assert_ne!(a, make_request(&w, 3, 18, 50).unwrap());
    assert_eq!(make_request(&w, 3, 1, 10_000).unwrap().candidates.len(), w.num_ads());
    assert!(make_request(&w, 3, 1, 0).is_err());
}

#[test]
fn post_and_peri_serve_the_same_page() {
    let w = world();
    let oracle = OracleRanker(&w);
    let models = Models {
        ad: Some(&OracleAdScorer),
        creative_aware_ad: None,
        creative: Some(&oracle),
    };
    let post = arm("post", Architecture::PostCr, models);
    let peri = arm("peri", Architecture::PeriCr, models);
    for r in 0..200 {
        let req = make_request(&w, 1, r, 60).unwrap();
        let a = run_request(&post, &w, &req, &opts(4)).unwrap();
        let b = run_request(&peri, &w, &req, &opts(4)).unwrap();
        assert_eq!(a.slots, b.slots);
        assert!(a.rt != b.rt);
    }
}

#[test]
fn pages_are_ordered_by_ecpm() {
    let w = world();
    let models = Models {
        ad: Some(&OracleAdScorer),
        ..Models::default()
    };
    let a = arm("no", Architecture::NoCr, models);
    let req = make_request(&w, 1, 9, 80).unwrap();
    let page = run_request(&a, &w, &req, &opts(6)).unwrap();
    let ecpm = |s: &ServedSlot| s.pctr * w.ads[s.ad.index()].cpc;
    assert!(page.slots.windows(2).all(|p| ecpm(&p[0]) >= ecpm(&p[1])));
    let best = req
        .candidates
        .iter()
        .map(|&ad| OracleAdScorer.score_ad(&w, req.user, ad).unwrap() * w.ads[ad.index()].cpc)
        .fold(f64::MIN, f64::max);
    assert_eq!(ecpm(&page.slots[0]), best);
}

#[test]
fn no_cr_picks_creatives_uniformly() {
    let w = world();
    let models = Models {
        ad: Some(&OracleAdScorer),
        ..Models::default()
    };
    let a = arm("no", Architecture::NoCr, models);
    let ad = w.ads.iter().find(|a| a.creatives.len() == 4).unwrap().id;
    // force the ad into every candidate set
    let mut counts = [0usize; 4];
    let n = 8000;
    for r in 0..n {
        let req = Request {
            id: r,
            user: adcr_core::UserId((r % 200) as u32),
            candidates: vec![ad],
        };
        let page = run_request(&a, &w, &req, &opts(1)).unwrap();
        let k = w.ads[ad.index()].creatives.iter().position(|&c| c == page.slots[0].creative).unwrap();
        counts[k] += 1;
    }
    // chi-square with 3 dof; 16.27 is the 0.1% critical value
    let e = n as f64 / 4.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    assert!(chi2 < 16.27, "{counts:?}");
}

#[test]
fn creative_aware_ranking_can_reorder_ads() {
    let w = generate_world(&reorder_world_config()).unwrap();
    let oracle = OracleRanker(&w);
    let post = arm(
        "post",
        Architecture::PostCr,
        Models {
            ad: Some(&OracleAdScorer),
            creative_aware_ad: None,
            creative: Some(&oracle),
        },
    );
    let pre = arm(
        "pre",
        Architecture::PreCr,
        Models {
            ad: None,
            creative_aware_ad: Some(&OracleAdScorer),
            creative: Some(&oracle),
        },
    );
    let req = make_request(&w, 1, 0, 10).unwrap();
    let a = run_request(&post, &w, &req, &opts(1)).unwrap();
    let b = run_request(&pre, &w, &req, &opts(1)).unwrap();
    assert_eq!(a.slots[0].ad, AdId(0));
    assert_eq!(b.slots[0].ad, AdId(1));
    assert_eq!(w.true_ctr(req.user, AdId(1), b.slots[0].creative).unwrap(), 0.08);
}

#[test]
fn missing_models_are_rejected() {
    let w = world();
    let req = make_request(&w, 1, 0, 10).unwrap();
    let only_ad = Models {
        ad: Some(&OracleAdScorer),
        ..Models::default()
    };
    for a in [Architecture::PostCr, Architecture::PeriCr, Architecture::PreCr] {
        assert!(run_request(&arm("x", a, only_ad), &w, &req, &opts(2)).is_err());
    }
    let empty = Request {
        candidates: vec![],
        ..req
    };
    assert!(run_request(&arm("x", Architecture::NoCr, only_ad), &w, &empty, &opts(2)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn served_pages_are_valid(seed in 0u64..1000, m in 1usize..120, l in 1usize..10, arch in 0usize..4, tau in 0.0f64..3.0) {
        let w = world();
        let ranker = NoisyOracleRanker::new(&w, tau, seed);
        let models = Models {
            ad: Some(&OracleAdScorer),
            creative_aware_ad: Some(&OracleAdScorer),
            creative: Some(&ranker),
        };
        let a = arm("x", Architecture::ALL[arch], models);
        let req = make_request(&w, seed, seed * 7, m).unwrap();
        let page = run_request(&a, &w, &req, &opts(l)).unwrap();
        prop_assert!(page.validate(&w, l).is_ok());
        prop_assert_eq!(page.slots.len(), l.min(m));
    }
}

#[test]
fn page_validation_catches_violations() {
    let w = world();
    let c0 = w.ads[0].creatives[0];
    let slot = |ad: u32, c: CreativeId| ServedSlot { ad: AdId(ad), creative: c, pctr: 0.1 };
    let page = |slots| ServedPage { slots, rt: Nanos(0) };
    assert!(page(vec![slot(0, c0)]).validate(&w, 1).is_ok());
    assert!(page(vec![slot(0, c0), slot(0, c0)]).validate(&w, 4).is_err());
    assert!(page(vec![slot(1, c0)]).validate(&w, 4).is_err());
    assert!(page(vec![slot(0, c0)]).validate(&w, 0).is_err());
}

fn cfg(n: u64) -> ExperimentConfig {
    ExperimentConfig {
        num_requests: n,
        seed: 11,
        ..ExperimentConfig::default()
    }
}

#[test]
fn aa_arms_are_identical() {
    let w = world();
    let r = RandomRanker { seed: 4 };
    let m = Models {
        ad: Some(&OracleAdScorer),
        creative_aware_ad: None,
        creative: Some(&r),
    };
    let out = run_experiment(&[arm("a", Architecture::PeriCr, m), arm("b", Architecture::PeriCr, m)], &w, &cfg(5000)).unwrap();
    let (a, b) = (&out.reports[0], &out.reports[1]);
    assert_eq!(a.ctr, b.ctr);
    assert_eq!(a.clicks, b.clicks);
    assert_eq!(a.rpm, b.rpm);
    let l = b.lifts.as_ref().unwrap();
    assert_eq!((l.ctr, l.ctr_z), (0.0, 0.0));
}

#[test]
fn experiments_are_deterministic_and_count_exactly() {
    let w = world();
    let r = NoisyOracleRanker::new(&w, 1.0, 2);
    let m = Models {
        ad: Some(&OracleAdScorer),
        creative_aware_ad: None,
        creative: Some(&r),
    };
    let arms = [
        arm("no", Architecture::NoCr, m),
        arm("post", Architecture::PostCr, m),
    ];
    let c = ExperimentConfig {
        traces: true,
        keep_logs: true,
        ..cfg(3000)
    };
    let x = run_experiment(&arms, &w, &c).unwrap();
    let y = run_experiment(&arms, &w, &c).unwrap();
    assert_eq!(x.reports, y.reports);
    assert_eq!(x.traces, y.traces);
    for (i, rep) in x.reports.iter().enumerate() {
        assert_eq!(rep.ctr, rep.clicks as f64 / rep.impressions as f64);
        assert_eq!(rep.impressions, 3000 * 4);
        assert_eq!(x.logs[i].len() as u64, rep.impressions);
        assert_eq!(x.logs[i].iter().map(|r| r.click as u64).sum::<u64>(), rep.clicks);
        let revenue: f64 = x.logs[i].iter().filter(|r| r.click == 1).map(|r| r.cpc_bid).sum();
        assert!((rep.rpm - revenue / 3000.0 * 1000.0).abs() < 1e-9);
    }
    assert_eq!(x.traces.len(), 2 * 3000 * 4);
    assert_eq!(x.reports[0].lifts.as_ref().unwrap().baseline, "no");
}

#[test]
fn oracle_creatives_beat_random_ones() {
    let w = generate_world(&WorldConfig {
        creative_effect_scale: 0.5,
        ..WorldConfig::default()
    })
    .unwrap();
    let oracle = OracleRanker(&w);
    let m = Models {
        ad: Some(&OracleAdScorer),
        creative_aware_ad: None,
        creative: Some(&oracle),
    };
    let arms = [arm("random", Architecture::NoCr, m), arm("oracle", Architecture::PeriCr, m)];
    let out = run_experiment(&arms, &w, &cfg(200_000)).unwrap();
    let l = out.reports[1].lifts.as_ref().unwrap();
    assert!(l.ctr > 0.05, "{l:?}");
    assert!(l.ctr_z >= 3.0, "{l:?}");
}

#[test]
fn response_time_ordering_under_calibrated_costs() {
    let w = world();
    let oracle = OracleRanker(&w);
    let m = Models {
        ad: Some(&OracleAdScorer),
        creative_aware_ad: Some(&OracleAdScorer),
        creative: Some(&oracle),
    };
    let plan = |a, fixed, per| ArchitecturePlan::new(a, costs(fixed, per));
    let arms = [
        Arm { name: "no", plan: plan(Architecture::NoCr, 0.0, 0.0), models: m },
        Arm { name: "post", plan: plan(Architecture::PostCr, 3.0, 50.0), models: m },
        Arm { name: "pre", plan: plan(Architecture::PreCr, 2.0, 3.0), models: m },
        Arm { name: "peri", plan: plan(Architecture::PeriCr, 3.0, 5.0), models: m },
    ];
    let out = run_experiment(&arms, &w, &cfg(2000)).unwrap();
    let rt: Vec<f64> = out.reports.iter().map(|r| r.rt_mean_ms).collect();
    assert!(rt[2] > rt[1] && rt[1] > rt[3], "{rt:?}");
    assert_eq!(rt[3], rt[0]);
    assert_eq!(rt[0], 90.0);
}

#[test]
fn experiment_config_errors() {
    let w = world();
    let m = Models {
        ad: Some(&OracleAdScorer),
        ..Models::default()
    };
    let a = arm("a", Architecture::NoCr, m);
    assert!(run_experiment(&[], &w, &cfg(10)).is_err());
    assert!(run_experiment(&[a], &w, &cfg(0)).is_err());
    assert!(run_experiment(&[a, a], &w, &cfg(10)).is_err());
    let bad = ExperimentConfig {
        baseline: Some("nope".into()),
        ..cfg(10)
    };
    assert!(run_experiment(&[a], &w, &bad).unwrap_err().is_config());
}

#[test]
fn reports_write_json_and_csv() {
    let w = world();
    let m = Models {
        ad: Some(&OracleAdScorer),
        ..Models::default()
    };
    let out = run_experiment(
        &[arm("a", Architecture::NoCr, m)],
        &w,
        &ExperimentConfig {
            traces: true,
            ..cfg(50)
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let j = dir.path().join("r.json");
    let c = dir.path().join("r.csv");
    let t = dir.path().join("t.csv");
    write_reports_json(&j, &out.reports).unwrap();
    write_reports_csv(&c, &out.reports).unwrap();
    write_traces_csv(&t, &out.traces).unwrap();
    let back: Vec<ExperimentReport> = serde_json::from_str(&std::fs::read_to_string(&j).unwrap()).unwrap();
    assert_eq!(back, out.reports);
    let csv = std::fs::read_to_string(&c).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("arm,architecture,requests"));
    assert_eq!(std::fs::read_to_string(&t).unwrap().lines().count(), 1 + 50 * 4);
}

/// A ranker that always picks the first creative, whatever the context.
fn first(_: &RankContext, c: CreativeId) -> f64 {
    1.0 / (1.0 + c.0 as f64)
}

#[test]
fn correlation_table_with_perfect_oracle_on_top() {
    let w = world();
    let log = {
        let r = RandomRanker { seed: 1 };
        let m = Models {
            ad: Some(&OracleAdScorer),
            creative_aware_ad: None,
            creative: Some(&r),
        };
        run_experiment(
            &[arm("no", Architecture::NoCr, m)],
            &w,
            &ExperimentConfig {
                keep_logs: true,
                seed: 99,
                ..cfg(20_000)
            },
        )
        .unwrap()
        .logs
        .remove(0)
    };
    let rankers: Vec<NoisyOracleRanker> = [f64::INFINITY, 2.0, 1.0, 0.5, 0.25, 0.0]
        .iter()
        .map(|&t| NoisyOracleRanker::new(&w, t, 3))
        .collect();
    let named: Vec<NamedRanker> = rankers
        .iter()
        .zip(["inf", "2", "1", "0.5", "0.25", "0"])
        .map(|(r, n)| NamedRanker::new(n, r))
        .collect();
    let base = RandomRanker { seed: 8 };
    let table = correlate_offline_online(
        &named,
        &NamedRanker::new("random", &base),
        &w,
        &log,
        &OracleAdScorer,
        &CorrelateConfig {
            experiment: cfg(20_000),
            ..CorrelateConfig::default()
        },
    )
    .unwrap();
    assert_eq!(table.rows.len(), 6);
    let best = |f: fn(&CorrelationRow) -> f64| {
        table.rows.iter().enumerate().max_by(|a, b| f(a.1).total_cmp(&f(b.1))).unwrap().0
    };
    assert_eq!(best(|r| r.online_lift), 5);
    assert_eq!(best(|r| r.nsctr_lift.unwrap()), 5);
    for m in ["sctr", "nsctr", "auc", "gauc"] {
        let p = table.pearson(m).unwrap();
        assert!((-1.0..=1.0).contains(&p));
    }
    let dir = tempfile::tempdir().unwrap();
    table.write_csv(&dir.path().join("c.csv")).unwrap();

    let one: [&dyn CreativeRanker; 1] = [&first];
    let err = correlate_offline_online(
        &[NamedRanker::new("first", one[0])],
        &NamedRanker::new("random", &base),
        &w,
        &log,
        &OracleAdScorer,
        &CorrelateConfig::default(),
    );
    assert!(err.is_err());
}
