use std::collections::HashMap;

use decomp_core::config::{ExperimentConfig, Strategy};
use decomp_core::domain::ImageId;
use decomp_core::simulator::{cycles_to_target, generate_dataset, Benchmark, CycleRecord, Dataset, DatasetMode};

const ALL: [Strategy; 6] = [
    Strategy::RAND,
    Strategy::UNCERT,
    Strategy::DIVERS_CLUSTER,
    Strategy::DIVERS_CORESET,
    Strategy::BADGE,
    Strategy::DECOMP,
];

fn small() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.dataset.n_train = 12;
    c.dataset.n_test = 4;
    c.dataset.height = 32;
    c.dataset.width = 32;
    c.dataset.voronoi_seeds = 24;
    c.dataset.depth = 3;
    c.dataset.roi_count = 20;
    c.region_size = 8;
    c.n_image = 3;
    c.n_region = 2;
    c.max_cycles = 4;
    c.model.epochs = 15;
    c.strategies = ALL.to_vec();
    c.seed = 11;
    c
}

fn by_run(records: &[CycleRecord]) -> HashMap<(Strategy, u32), Vec<&CycleRecord>> {
    let mut out: HashMap<_, Vec<_>> = HashMap::new();
    for r in records {
        out.entry((r.strategy, r.repeat)).or_default().push(r);
    }
    out
}

#[test]
fn first_cycle_is_strategy_independent() {
    let mut c = small();
    c.max_cycles = 1;
    let records = Benchmark::new(c).unwrap().run_all().unwrap();
    assert_eq!(records.len(), ALL.len());
    for r in &records[1..] {
        assert_eq!(r.selected, records[0].selected);
        assert_eq!(r.metric, records[0].metric);
        assert_eq!(r.per_class_annotated, records[0].per_class_annotated);
        assert!(r.sigma.is_none() && r.weights.is_none());
    }
}

#[test]
fn annotated_fraction_grows_by_the_cycle_budget() {
    let c = small();
    let bench = Benchmark::new(c.clone()).unwrap();
    let per_cycle = (c.n_image * c.n_region * c.region_size * c.region_size) as u64;
    for r in bench.run_all().unwrap() {
        let units = per_cycle * u64::from(r.cycle);
        assert_eq!(r.annotated_units, units, "{} cycle {}", r.strategy, r.cycle);
        assert_eq!(r.annotated_fraction, units as f64 / bench.dataset().pool_units() as f64);
        assert_eq!(r.per_class_annotated.iter().sum::<u64>(), units);
        assert_eq!(r.selected.len(), c.n_image * c.n_region);
    }
}

#[test]
fn reruns_are_identical() {
    let c = small();
    let a = Benchmark::new(c.clone()).unwrap().run_all().unwrap();
    let b = Benchmark::new(c).unwrap().run_all().unwrap();
    assert_eq!(a, b);
}

#[test]
fn thread_count_does_not_change_results() {
    let c = small();
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| Benchmark::new(c.clone()).unwrap().run_all().unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn regions_never_overlap_within_an_image() {
    let mut c = small();
    c.n_region = 4;
    c.max_cycles = 6;
    for (_, run) in by_run(&Benchmark::new(c).unwrap().run_all().unwrap()) {
        let last = run.last().unwrap();
        let mut all: Vec<_> = run.iter().flat_map(|r| r.selected.iter().copied()).collect();
        assert_eq!(all.len() as u64 * 64, last.annotated_units);
        all.sort_by_key(|r| r.order_key());
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                if a.image_id == b.image_id {
                    assert!(!a.as_square().unwrap().overlaps(b.as_square().unwrap()), "{a:?} {b:?}");
                }
            }
        }
    }
}

#[test]
fn weights_are_refreshed_every_cycle() {
    let records = Benchmark::new(small()).unwrap().run(Strategy::DECOMP, 0).unwrap();
    for r in &records[1..] {
        let w = r.weights.as_ref().unwrap();
        let s = r.sigma.as_ref().unwrap();
        assert_eq!(w.len(), 5);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
        // Least confident class carries the largest weight.
        let lo = (0..5).min_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
        let hi = (0..5).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
        assert_eq!(s[lo], s[hi]);
    }
    assert_ne!(records[1].weights, records[2].weights);
}

#[test]
fn image_selection_restarts_after_a_full_pass() {
    let mut c = small();
    c.max_cycles = 6; // 18 picks over 12 images
    for s in [Strategy::RAND, Strategy::UNCERT, Strategy::DECOMP] {
        let run = Benchmark::new(c.clone()).unwrap().run(s, 0).unwrap();
        let images = |r: &CycleRecord| {
            let mut v: Vec<ImageId> = r.selected.iter().map(|g| g.image_id).collect();
            v.dedup();
            v
        };
        let first: Vec<ImageId> = run[..4].iter().flat_map(images).collect();
        let mut seen = first.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 12, "{s}: the first pass visits every image once");
    }
}

#[test]
fn noiseless_data_gives_a_near_perfect_reference() {
    let mut c = small();
    c.dataset.noise = 0.0;
    c.model.epochs = 100;
    let bench = Benchmark::new(c).unwrap();
    assert!(bench.reference() > 0.99, "{}", bench.reference());
    assert!((bench.target() - 0.95 * bench.reference()).abs() < 1e-15);
}

#[test]
fn cycles_to_target_reads_the_first_hit() {
    let mut c = small();
    c.strategies = vec![Strategy::RAND];
    let bench = Benchmark::new(c).unwrap();
    let run = bench.run(Strategy::RAND, 0).unwrap();
    let first = run.iter().find(|r| r.metric >= bench.target()).map(|r| r.cycle);
    assert_eq!(cycles_to_target(&run), first);
}

#[test]
fn stop_at_target_truncates() {
    let mut c = small();
    c.dataset.noise = 0.0;
    c.model.epochs = 100;
    c.max_cycles = 10;
    c.target_fraction = 0.5;
    c.stop_at_target = true;
    c.strategies = vec![Strategy::RAND];
    let run = Benchmark::new(c).unwrap().run(Strategy::RAND, 0).unwrap();
    assert!(run.last().unwrap().target_reached);
    assert!(run.len() < 10);
    assert!(run[..run.len() - 1].iter().all(|r| !r.target_reached));
}

#[test]
fn volume_mode_runs_every_strategy() {
    let mut c = small();
    c.dataset.mode = DatasetMode::Segmentation3d;
    c.max_cycles = 3;
    let bench = Benchmark::new(c.clone()).unwrap();
    let records = bench.run_all().unwrap();
    assert_eq!(records.len(), ALL.len() * 3);
    for r in &records {
        assert!(r.selected.iter().all(|g| g.as_square().unwrap().slice.is_some()));
        assert_eq!(r.annotated_units, 3 * 2 * 64 * u64::from(r.cycle));
        assert!((0.0..=1.0).contains(&r.metric));
    }
}

#[test]
fn roi_mode_runs_every_strategy() {
    let mut c = small();
    c.dataset.mode = DatasetMode::Roi;
    c.n_region = 5;
    let bench = Benchmark::new(c).unwrap();
    for (_, run) in by_run(&bench.run_all().unwrap()) {
        let mut rois: Vec<_> = run.iter().flat_map(|r| r.selected.iter().map(|g| (g.image_id, g.roi_index().unwrap()))).collect();
        let n = rois.len();
        rois.sort();
        rois.dedup();
        assert_eq!(rois.len(), n, "an ROI was annotated twice");
        assert_eq!(run.last().unwrap().annotated_units, n as u64);
    }
}

#[test]
fn dataset_round_trips_through_disk() {
    let spec = small().dataset;
    let data = generate_dataset(&spec).unwrap();
    let dir = std::env::temp_dir().join(format!("decomp-sim-{}", std::process::id()));
    data.save(&dir).unwrap();
    let back = Dataset::load(&dir).unwrap();
    std::fs::remove_dir_all(&dir).unwrap();
    assert_eq!(back.num_classes, data.num_classes);
    assert_eq!(back.train.len(), data.train.len());
    for (a, b) in back.train.iter().zip(&data.train).chain(back.test.iter().zip(&data.test)) {
        assert_eq!(a.hidden_labels(), b.hidden_labels());
        assert_eq!(a.features(), b.features());
    }
    let c = small();
    let direct = Benchmark::new(c.clone()).unwrap().run(Strategy::DECOMP, 0).unwrap();
    let loaded = Benchmark::from_dataset(c, back.into()).unwrap().run(Strategy::DECOMP, 0).unwrap();
    assert_eq!(direct, loaded);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = small();
    c.n_image = 13;
    assert!(Benchmark::new(c).is_err());
    let mut c = small();
    c.region_size = 33;
    assert!(Benchmark::new(c).is_err());
    let mut c = small();
    c.class_weight_mask = Some(vec![1.0; 3]);
    assert!(Benchmark::new(c).is_err());
}
