use loramix_core::continual::RegMode;
use loramix_core::experiments::{
    prepare_tasks, pretrain, rank_sweep, run_forgetting, ForgettingConfig, RankSweepConfig,
};
use loramix_core::train::{Scope, TrainConfig};
use loramix_core::Error;

fn quick(scope: Scope) -> TrainConfig {
    TrainConfig {
        scope,
        lr: 3e-3,
        warmup_steps: 5,
        max_steps: 20,
        eval_every: 10,
        ..TrainConfig::default()
    }
}

fn tiny_rank_config() -> RankSweepConfig {
    let mut cfg = RankSweepConfig::toy();
    for t in [&mut cfg.base_task, &mut cfg.domain_task] {
        t.vocab_size = 12;
        t.sizes.train = 64;
        t.sizes.valid = 16;
        t.sizes.test = 16;
    }
    cfg.domain_task.remap.as_mut().unwrap().range.count = 12;
    cfg.model.d_model = 16;
    cfg.model.d_ff = 32;
    cfg.model.layers = 1;
    cfg.pretrain = quick(Scope::Full);
    cfg.adapt = quick(Scope::Adapter);
    cfg.finetune = quick(Scope::Full);
    cfg.ranks = vec![1, 2, 4];
    cfg.seeds = vec![5, 6];
    cfg
}

#[test]
fn rank_sweep_rows_and_param_counts() {
    let cfg = tiny_rank_config();
    let (vocab, tasks) = prepare_tasks(&[cfg.base_task.clone(), cfg.domain_task.clone()], cfg.max_len).unwrap();
    let base = pretrain(&cfg.model, &vocab, &tasks[0], &cfg.pretrain).unwrap().model;
    let mut seen = 0;
    let report = rank_sweep(
        &base,
        &tasks[1],
        &cfg.targets,
        &cfg.ranks,
        &cfg.seeds,
        &cfg.adapt,
        &cfg.finetune,
        |_| seen += 1,
    )
    .unwrap();
    assert_eq!(report.rows.len(), cfg.ranks.len() * cfg.seeds.len() + cfg.seeds.len());
    assert_eq!(seen, report.rows.len());

    // Σ r(p+q) over the selected matrices, from the raw parameter shapes.
    let per_rank: usize = base
        .params()
        .iter()
        .filter(|(name, t)| cfg.targets.selects(name, t.shape()))
        .map(|(_, t)| t.shape()[0] + t.shape()[1])
        .sum();
    assert!(per_rank > 0);
    for row in &report.rows {
        match row.rank {
            Some(r) => assert_eq!(row.params, r * per_rank),
            None => assert_eq!(row.params, base.count_params(None)),
        }
        assert!((0.0..=1.0).contains(&row.val_acc));
    }
    assert_eq!(report.summary.len(), cfg.ranks.len());

    let csv = report.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,rank,seed,params,val_acc,val_loss,steps,best_step");
    assert_eq!(lines.len(), report.rows.len() + 1);
    assert!(lines.iter().skip(1).all(|l| l.split(',').count() == 8));
}

#[test]
fn forgetting_run_enumerates_every_cell_and_seed() {
    let mut cfg = ForgettingConfig::toy();
    for t in [&mut cfg.base_task, &mut cfg.task_a, &mut cfg.task_b] {
        t.sizes.train = 80;
        t.sizes.valid = 20;
        t.sizes.test = 20;
    }
    cfg.model.d_model = 16;
    cfg.model.d_ff = 32;
    cfg.rank = 2;
    cfg.importance_m = 10;
    cfg.pretrain = quick(Scope::Full);
    cfg.adapt_a = quick(Scope::Adapter);
    cfg.adapt_b = quick(Scope::Adapter);
    cfg.lambdas = vec![0.1, 1.0];
    cfg.gammas = vec![1.0, 2.0];
    cfg.seeds = vec![1, 2];

    let mut streamed = 0;
    let (_, report) = run_forgetting(&cfg, |_| streamed += 1).unwrap();
    // none: one control cell; l2: one γ per λ; grad: the full λ×γ grid.
    let cells = 1 + cfg.lambdas.len() + cfg.lambdas.len() * cfg.gammas.len();
    assert_eq!(report.runs.len(), cells * cfg.seeds.len());
    assert_eq!(streamed, report.runs.len());
    assert_eq!(report.grids.len(), 3);
    assert_eq!(report.a_after_a.len(), cfg.seeds.len());
    for mode in [RegMode::None, RegMode::L2, RegMode::Gradient] {
        let s = report.mode(mode).unwrap();
        assert_eq!(s.selected.mode, mode);
        assert!((0.0..=1.0).contains(&s.test_old) && (0.0..=1.0).contains(&s.test_new));
    }
    assert!(report.runs.iter().filter(|r| r.mode == RegMode::None).all(|r| r.lambda_reg == 0.0));
    assert!(report.runs.iter().filter(|r| r.mode == RegMode::L2).all(|r| r.gamma == 2.0));
    assert_eq!(report.to_csv().lines().count(), report.runs.len() + 1);
}

#[test]
fn configs_round_trip_and_check_version() {
    let rank = RankSweepConfig::toy();
    let back: RankSweepConfig = serde_json::from_str(&serde_json::to_string(&rank).unwrap()).unwrap();
    assert_eq!(back, rank);
    let forget = ForgettingConfig::toy();
    let back: ForgettingConfig = serde_json::from_str(&serde_json::to_string(&forget).unwrap()).unwrap();
    assert_eq!(back, forget);

    let mut v2 = forget;
    v2.version = 2;
    assert!(matches!(v2.validate(), Err(Error::Config(_))));
    let mut wrong_scope = rank;
    wrong_scope.adapt.scope = Scope::Full;
    assert!(matches!(wrong_scope.validate(), Err(Error::Config(_))));
}
